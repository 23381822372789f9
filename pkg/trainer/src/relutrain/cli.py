"""`train_export` command line entry point."""

from __future__ import annotations

import click

from .train import TrainSpec, train_and_export


@click.command()
@click.option("--dataset", required=True, help="mnist, cifar10, or digits (offline)")
@click.option("--architecture", required=True, help="widths joined by '-', e.g. 784-8-8-1")
@click.option("--epochs", default=240, show_default=True, type=int)
@click.option(
    "--schedule",
    default="step:0.003:0.5:60",
    show_default=True,
    help="constant:LR or step:LR:GAMMA:EVERY",
)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--output", default="model.reluxt", show_default=True, type=click.Path())
@click.option("--batch-size", default=64, show_default=True, type=int)
@click.option(
    "--liveness-weight",
    default=0.3,
    show_default=True,
    type=float,
    help="strength of the uniform-noise liveness regularizer (0 disables)",
)
def main(dataset, architecture, epochs, schedule, seed, output, batch_size, liveness_weight):
    """Train a scalar-output ReLU network and export it bit-exactly."""
    spec = TrainSpec(
        dataset=dataset,
        architecture=architecture,
        epochs=epochs,
        schedule=schedule,
        seed=seed,
        output=output,
        batch_size=batch_size,
        liveness_weight=liveness_weight,
    )
    metrics = train_and_export(spec)
    for key in sorted(metrics):
        click.echo(f"{key}\t{metrics[key]}")
    click.echo(f"wrote {output} and {output}.metrics")


if __name__ == "__main__":
    main()
