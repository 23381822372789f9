"""Command-line workflows: generate targets, attack layers, evaluate, report.

Exit codes: 0 success, 2 configuration/input error, 3 extraction failure.
Per-layer mode (prefix from the known target) is the primary workflow;
`--end-to-end` chains recovered prefixes instead and is explicitly marked as
accumulating floating-point error layer over layer.
"""

from __future__ import annotations

import math
import sys

import click
import numpy as np

from .attack import AttackError, LayerAttackResult, attack_last_layer, attack_layer
from .completion import RECOVERED
from .config import AttackConfig, ConfigError, apply_overrides, load_config
from .evaluation import (
    ExtractionReport,
    activation_tests,
    classify_unrecovered,
    coverage,
    epsilon_delta,
    missing_weights_of,
    queries_log2,
    recovery_rate,
    write_metrics,
)
from .geometry import GeometryError, enumerate_cells_2d, write_cells_csv
from .network import (
    ModelFormatError,
    NetworkModel,
    generate_random,
    load_model,
    save_model,
)
from .oracle import Oracle
from .prefix import ExtractedPrefix
from .signature import RecoveryError

CONFIG_ERROR = 2
EXTRACTION_ERROR = 3


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_arch(text):
    try:
        widths = [int(t) for t in text.split("-")]
    except ValueError:
        raise ConfigError(f"bad architecture {text!r}; expected e.g. 784-8-8-1")
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"bad architecture {text!r}")
    return widths


def _build_config(config_path, overrides):
    config = load_config(config_path) if config_path else AttackConfig()
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        pairs.append(tuple(item.split("=", 1)))
    return apply_overrides(config, pairs)


def _load_model_or_fail(path):
    try:
        return load_model(path)
    except (OSError, ModelFormatError) as exc:
        _fail(CONFIG_ERROR, str(exc))


def _layer_model_path(out_dir, layer):
    return f"{out_dir}/layer-{layer}.model"


def _pairs_path(out_dir, layer):
    return f"{out_dir}/pairs-layer-{layer}.tsv"


def _write_pairs(path, xs, ys):
    import struct

    def hexes(row):
        return " ".join(struct.pack(">d", float(v)).hex() for v in row)

    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{hexes(x)}\t{hexes(y)}\n")


def _read_pairs(path):
    import struct

    xs, ys = [], []
    with open(path) as fh:
        for line in fh:
            xpart, ypart = line.rstrip("\n").split("\t")
            xs.append([struct.unpack(">d", bytes.fromhex(t))[0] for t in xpart.split()])
            ys.append([struct.unpack(">d", bytes.fromhex(t))[0] for t in ypart.split()])
    return np.array(xs), np.array(ys)


def _save_layer(out_dir, layer, rows, biases, masks, statuses):
    model = NetworkModel((np.atleast_2d(rows),), (np.atleast_1d(biases),))
    save_model(model, _layer_model_path(out_dir, layer))
    with open(f"{out_dir}/layer-{layer}.masks.tsv", "w") as fh:
        for j in range(len(statuses)):
            bits = "".join("1" if b else "0" for b in np.atleast_2d(masks)[j])
            fh.write(f"{j}\t{statuses[j]}\t{bits}\n")


def _load_masks(run_dir, layer):
    statuses, masks = [], []
    with open(f"{run_dir}/layer-{layer}.masks.tsv") as fh:
        for line in fh:
            _, status, bits = line.rstrip("\n").split("\t")
            statuses.append(status)
            masks.append([c == "1" for c in bits])
    return statuses, np.array(masks, dtype=bool)


def _prefix_from_run(run_dir, layer, input_dim):
    weights, biases = [], []
    for j in range(1, layer):
        path = _layer_model_path(run_dir, j)
        try:
            fragment = load_model(path)
        except OSError:
            raise ConfigError(f"missing prefix layer file {path}")
        weights.append(fragment.weights[0])
        biases.append(fragment.biases[0])
    return ExtractedPrefix(weights, biases, input_dim)


def _report_fragment(path, layer, config, oracle_counts, extra):
    """Key-value fragment holding everything needed to reproduce the run."""
    with open(path, "w") as fh:
        fh.write(f"layer = {layer}\n")
        for key, value in sorted(config.to_dict().items()):
            fh.write(f"config.{key} = {value}\n")
        for phase, n in sorted(oracle_counts.items()):
            fh.write(f"queries.{phase} = {n}\n")
        total = sum(oracle_counts.values())
        fh.write(f"queries.total = {total}\n")
        fh.write(f"queries.total.log2 = {queries_log2(total):.2f}\n")
        for key, value in extra.items():
            fh.write(f"{key} = {value}\n")


def _run_layer_attack(oracle, model, prefix, layer, config, out_dir, witness):
    counts_before = oracle.phase_counts()
    result = attack_layer(
        oracle,
        prefix,
        config,
        layer_width=model.widths[layer],
        truth=model if config.signs_mode == "ground-truth" else None,
        witness=witness,
    )
    recovered = result.recovered
    _save_layer(
        out_dir, layer, recovered.rows, recovered.biases, recovered.masks, recovered.statuses
    )
    _write_pairs(_pairs_path(out_dir, layer), *result.stored_pairs)
    counts = oracle.phase_counts()
    delta_counts = {
        k: counts.get(k, 0) - counts_before.get(k, 0)
        for k in counts
        if counts.get(k, 0) != counts_before.get(k, 0)
    }
    extra = {
        "components.kept": len(result.components),
        "components.discarded": len(result.discarded),
        "neurons.recovered": recovered.statuses.count(RECOVERED),
        "neurons.total": recovered.width,
        "wall.seconds": f"{result.wall_time:.2f}",
    }
    if config.signs_mode == "ground-truth":
        extra["signs.note"] = "ground-truth alignment (evaluation-only)"
    _report_fragment(f"{out_dir}/layer-{layer}.report.txt", layer, config, delta_counts, extra)
    assert result.queries == sum(delta_counts.values())
    return result


def _run_output_layer(oracle, model, prefix, out_dir, config):
    import glob as globmod

    xs_all, ys_all = [], []
    for path in sorted(globmod.glob(f"{out_dir}/pairs-layer-*.tsv")):
        xs, ys = _read_pairs(path)
        if len(xs):
            xs_all.append(xs)
            ys_all.append(ys)
    if not xs_all:
        raise ConfigError(f"no stored query pairs in {out_dir}; attack a hidden layer first")
    before = oracle.total_queries
    w, b = attack_last_layer((np.vstack(xs_all), np.vstack(ys_all)), prefix)
    layer = model.depth + 1
    _save_layer(
        out_dir, layer, w, b, np.ones_like(w, dtype=bool), [RECOVERED] * w.shape[0]
    )
    _report_fragment(
        f"{out_dir}/layer-{layer}.report.txt",
        layer,
        config,
        {},
        {"queries.new": oracle.total_queries - before, "note": "linear layer from stored pairs"},
    )


@click.group()
def main():
    """Parameter extraction toolkit for fully connected ReLU networks."""


@main.command()
@click.argument("architecture")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def generate(architecture, seed, out_path):
    """Write a random target model, e.g. `generate 784-8-8-1 --seed 7`."""
    try:
        widths = _parse_arch(architecture)
    except ConfigError as exc:
        _fail(CONFIG_ERROR, str(exc))
    save_model(generate_random(widths, seed=seed), out_path)
    click.echo(f"wrote {out_path} ({architecture}, seed {seed})")


@main.command()
@click.argument("target", type=click.Path(exists=True, dir_okay=False))
@click.option("--layer", "layer_spec", default=None, help="Layer index to attack (1-based).")
@click.option(
    "--prefix-source",
    type=click.Choice(["truth", "previous-run"]),
    default="truth",
    show_default=True,
    help="Earlier layers: the known target (per-layer mode) or recovered files.",
)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, help="Config override key=value.")
@click.option("--witness", default=None, help="All-inactive input for zero-query signs, comma-separated.")
@click.option(
    "--end-to-end",
    is_flag=True,
    help="Chain all layers on recovered prefixes (accumulates float error).",
)
@click.option("--workers", type=int, default=1, show_default=True)
def attack(target, layer_spec, prefix_source, out_dir, config_path, overrides, witness, end_to_end, workers):
    """Extract one layer of TARGET (or all layers with --end-to-end)."""
    try:
        config = _build_config(config_path, overrides)
    except (OSError, ConfigError) as exc:
        _fail(CONFIG_ERROR, str(exc))
    model = _load_model_or_fail(target)
    oracle = Oracle(model)
    witness_x = None
    if witness is not None:
        witness_x = np.array([float(t) for t in witness.split(",")])

    if end_to_end:
        click.echo(
            "warning: end-to-end mode feeds each layer the previous recovered "
            "layers; floating-point error accumulates and deep layers may fail",
            err=True,
        )
        layers = list(range(1, model.depth + 2))
    else:
        if layer_spec is None:
            _fail(CONFIG_ERROR, "--layer is required without --end-to-end")
        try:
            layers = [int(layer_spec)]
        except ValueError:
            _fail(CONFIG_ERROR, f"bad layer {layer_spec!r}")
        if not 1 <= layers[0] <= model.depth + 1:
            _fail(CONFIG_ERROR, f"layer {layers[0]} out of range 1..{model.depth + 1}")

    for layer in layers:
        try:
            if prefix_source == "truth" and not end_to_end:
                prefix = ExtractedPrefix.from_truth(model, layer)
            else:
                prefix = _prefix_from_run(out_dir, layer, model.input_dim)
        except ConfigError as exc:
            _fail(CONFIG_ERROR, str(exc))
        try:
            if layer == model.depth + 1:
                _run_output_layer(oracle, model, prefix, out_dir, config)
                click.echo(f"layer {layer}: linear, recovered from stored pairs (0 new queries)")
            else:
                result = _run_layer_attack(oracle, model, prefix, layer, config, out_dir, witness_x)
                n = result.recovered.statuses.count(RECOVERED)
                click.echo(
                    f"layer {layer}: {n}/{result.recovered.width} neurons, "
                    f"{result.queries} queries, {result.wall_time:.1f}s"
                )
        except ConfigError as exc:
            _fail(CONFIG_ERROR, str(exc))
        except (AttackError, RecoveryError) as exc:
            _fail(EXTRACTION_ERROR, str(exc))


def _missing_from_models(truth, extracted, run_dir):
    """(missing weights, missing components) from mask files when available,
    otherwise from all-zero rows of the extracted model."""
    missing_weights, missing_components = [], []
    for layer in range(1, truth.depth + 1):
        masks = None
        if run_dir is not None:
            try:
                statuses, masks = _load_masks(run_dir, layer)
            except OSError:
                masks = None
        if masks is None:
            rows = extracted.weights[layer - 1]
            biases = extracted.biases[layer - 1]
            statuses = [
                "missed" if not rows[j].any() and biases[j] == 0.0 else RECOVERED
                for j in range(rows.shape[0])
            ]
            masks = np.ones_like(rows, dtype=bool)
            for j, s in enumerate(statuses):
                if s == "missed":
                    masks[j] = False
        for j, status in enumerate(statuses):
            if status != RECOVERED:
                missing_components.append((layer, j))
        missing_weights.extend(
            (layer, j, k)
            for layer, j, k in missing_weights_of(masks, layer)
            if (layer, j) not in missing_components
        )
    return missing_weights, missing_components


@main.command()
@click.argument("target", type=click.Path(exists=True, dir_okay=False))
@click.argument("extracted", type=click.Path(exists=True, dir_okay=False))
@click.option("--run-dir", type=click.Path(file_okay=False), default=None,
              help="Attack output directory; its mask files refine the metrics.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def evaluate(target, extracted, run_dir, config_path, overrides, out_path):
    """Compare EXTRACTED against TARGET: recovery, coverage, (eps, delta), taxonomy."""
    try:
        config = _build_config(config_path, overrides)
    except (OSError, ConfigError) as exc:
        _fail(CONFIG_ERROR, str(exc))
    truth = _load_model_or_fail(target)
    guess = _load_model_or_fail(extracted)
    if truth.widths != guess.widths:
        _fail(CONFIG_ERROR, f"architecture mismatch: {truth.widths} vs {guess.widths}")

    missing_w, missing_c = _missing_from_models(truth, guess, run_dir)
    low, high = config.domain_low, config.domain_high
    fractions = activation_tests(
        truth, samples=config.eval_activation_samples, seed=config.seed_eval, low=low, high=high
    )
    taxonomy = classify_unrecovered(missing_w, fractions)
    tax_counts = {}
    for entry in taxonomy:
        tax_counts[entry.klass] = tax_counts.get(entry.klass, 0) + 1

    per_layer = {}
    for layer in range(1, truth.depth + 1):
        if run_dir is not None:
            try:
                _, masks = _load_masks(run_dir, layer)
            except OSError:
                masks = np.array(
                    [[not ((layer, j, k) in missing_w or (layer, j) in missing_c)
                      for k in range(truth.widths[layer - 1])]
                     for j in range(truth.widths[layer])]
                )
        else:
            masks = np.array(
                [[not ((layer, j, k) in missing_w or (layer, j) in missing_c)
                  for k in range(truth.widths[layer - 1])]
                 for j in range(truth.widths[layer])]
            )
        per_layer[layer] = {
            "recovery_rate": recovery_rate(masks),
            "coverage": coverage(
                truth, missing_w, missing_c,
                samples=config.eval_coverage_samples, scope=layer,
                seed=config.seed_eval, low=low, high=high,
            ),
        }
    model_cov = coverage(
        truth, missing_w, missing_c,
        samples=config.eval_coverage_samples, scope="model",
        seed=config.seed_eval, low=low, high=high,
    )
    delta, _, _ = epsilon_delta(
        truth, guess, missing_w, missing_c,
        samples=config.eval_coverage_samples, epsilon=config.eval_epsilon,
        seed=config.seed_eval, low=low, high=high,
    )
    report = ExtractionReport(
        per_layer=per_layer,
        model_coverage=model_cov,
        epsilon=config.eval_epsilon,
        delta=delta,
        taxonomy_counts=tax_counts,
        config=config.to_dict(),
    )
    click.echo(report.summary())
    if out_path:
        write_metrics(out_path, report)
        click.echo(f"wrote {out_path}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Aggregate the per-layer report fragments of an attack run directory."""
    import glob as globmod

    fragments = sorted(
        globmod.glob(f"{run_dir}/layer-*.report.txt"),
        key=lambda p: int(p.rsplit("-", 1)[1].split(".")[0]),
    )
    if not fragments:
        _fail(CONFIG_ERROR, f"no report fragments in {run_dir}")
    total = 0
    click.echo("layer  queries  log2  recovered  seconds")
    for path in fragments:
        values = {}
        with open(path) as fh:
            for line in fh:
                key, _, val = line.partition(" = ")
                values[key.strip()] = val.strip()
        layer = values.get("layer", "?")
        q = int(values.get("queries.total", 0))
        total += q
        rec = values.get("neurons.recovered", "-")
        width = values.get("neurons.total", "-")
        secs = values.get("wall.seconds", "-")
        click.echo(f"{layer:>5}  {q:>7}  {queries_log2(q):4.1f}  {rec:>4}/{width:<4}  {secs:>7}")
    click.echo(f"total  {total:>7}  {queries_log2(total):4.1f}")


@main.group()
def demo():
    """Didactic demonstrations on small networks."""


@demo.command()
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--domain", nargs=2, type=float, default=(-25.0, 25.0), show_default=True)
@click.option("--resolution", type=int, default=80, show_default=True)
def polytopes(model_path, out_path, domain, resolution):
    """Enumerate the 2-D activation-pattern cells of MODEL_PATH."""
    model = _load_model_or_fail(model_path)
    try:
        cells = enumerate_cells_2d(model, domain=domain, resolution=resolution)
    except GeometryError as exc:
        _fail(CONFIG_ERROR, str(exc))
    write_cells_csv(out_path, cells)
    click.echo(f"{len(cells)} cells -> {out_path}")


if __name__ == "__main__":
    main()
