"""Attack configuration: defaults, key-value config files, seeds."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class AttackConfig:
    # critical point harvest
    critical_points_count: int = 3000
    critical_points_count_layer1: int = 500
    critical_points_line_budget: int = 200000
    domain_low: float = 0.0
    domain_high: float = 1.0
    search_tolerance: float = 1e-8
    # partial signature recovery
    signature_direction_oversample: int = 8
    signature_eps_initial: float = 1e-4  # times the domain diagonal
    signature_rank_threshold: float = 1e-8
    signature_residual_tol: float = 1e-5
    # merging
    merge_proportional_tol: float = 1e-5
    merge_min_shared: int = 2
    merge_allow_threeway: bool = False
    # deeper-layer filtering
    filter_probes: int = 100
    filter_tau_threshold: float = 0.1  # 0.2 is the documented choice for width >= 16
    filter_size_fraction: float = 0.1
    filter_unknown_half_rule: bool = True
    filter_verify_samples: int = 24
    filter_verify_min_ok: int = 8
    filter_verify_max_bad: int = 1
    filter_scan_query_cap: int = 600
    # targeted search
    targeted_step_budget: int = 50  # times d_{i-1}, per missing entry
    # signs
    signs_mode: str = "ground-truth"  # ground-truth | zero-query | none
    # seeds
    seed_lines: int = 1
    seed_directions: int = 2
    seed_eval: int = 3
    # evaluation sampling
    eval_activation_samples: int = 200000
    eval_coverage_samples: int = 1000000
    eval_epsilon: float = 0.05

    _KEYMAP = None  # class-level cache, set below

    def domain(self, dim):
        import numpy as np

        low = np.full(dim, self.domain_low)
        high = np.full(dim, self.domain_high)
        return low, high

    def tau_threshold_for_width(self, width):
        """Documented thresholds: 0.1 for width <= 8, 0.2 for width >= 16."""
        if self.filter_tau_threshold != type(self).filter_tau_threshold:
            return self.filter_tau_threshold  # explicit override wins
        return 0.2 if width >= 16 else 0.1

    def cp_count_for_layer(self, layer):
        return self.critical_points_count_layer1 if layer == 1 else self.critical_points_count

    def to_dict(self):
        return {_field_to_key(f.name): getattr(self, f.name) for f in fields(self)}


def _field_to_key(name):
    return name.replace("_", ".", 1)


def _coerce(current, raw):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_overrides(config, pairs):
    """Apply `section.key = value` overrides (config-file keys) in place."""
    keymap = {_field_to_key(f.name): f.name for f in fields(config)}
    for key, raw in pairs:
        key = key.strip()
        if key not in keymap:
            raise ConfigError(f"unknown config key {key!r}")
        name = keymap[key]
        try:
            value = _coerce(getattr(config, name), raw.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
        if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
            if name not in ("domain_low", "domain_high", "seed_lines", "seed_directions", "seed_eval"):
                raise ConfigError(f"{key} must be positive, got {value}")
        setattr(config, name, value)
    return config


def load_config(path, base=None):
    """Parse a flat `key = value` text file into an AttackConfig."""
    config = base or AttackConfig()
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            pairs.append((key, raw))
    return apply_overrides(config, pairs)
