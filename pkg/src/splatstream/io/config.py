"""Plain-text key=value configuration for training runs.

Every tunable of PhaseConfig (including the nested learning-rate
schedule, loss weights, and densification thresholds) has one flat key.
Unknown keys are hard errors so typos cannot silently fall back to
defaults.
"""

from pathlib import Path

from ..errors import ConfigError
from ..field import DensifyOptions
from ..losses import LossWeights
from ..pipeline import PhaseConfig
from ..scheduler import LrSchedule

_INT_KEYS = {
    "n0",
    "initial_iters",
    "t_i",
    "n_m",
    "final_iters",
    "t_a",
    "densify_interval",
    "novelty_refresh",
    "sh_degree",
    "workers",
    "seed",
}
_FLOAT_KEYS = {
    "eta0",
    "etaf",
    "lambda_l1",
    "lambda_ssim",
    "lambda_load",
    "grad_threshold",
    "percent_dense",
    "prune_opacity",
    "split_scale_shrink",
    "densify_stop_fraction",
    "novelty_threshold",
    "init_opacity",
}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS


def parse_config_text(text: str) -> PhaseConfig:
    """Build a PhaseConfig from key=value lines ('#' starts a comment)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = int(value) if key in _INT_KEYS else float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return build_config(values)


def parse_config_file(path) -> PhaseConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def build_config(values: dict) -> PhaseConfig:
    """Assemble PhaseConfig and its nested pieces from a flat dict."""
    unknown = set(values) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    vals = dict(values)

    lr_kwargs = {}
    for src, dst in (("eta0", "eta0"), ("etaf", "etaf"), ("t_a", "t_a")):
        if src in vals:
            lr_kwargs[dst] = vals.pop(src)
    loss_kwargs = {}
    for src, dst in (
        ("lambda_l1", "l1"),
        ("lambda_ssim", "ssim"),
        ("lambda_load", "load"),
    ):
        if src in vals:
            loss_kwargs[dst] = vals.pop(src)
    densify_kwargs = {}
    for src in ("grad_threshold", "percent_dense", "prune_opacity", "split_scale_shrink"):
        if src in vals:
            densify_kwargs[src] = vals.pop(src)

    try:
        return PhaseConfig(
            lr=LrSchedule(**lr_kwargs),
            loss_weights=LossWeights(**loss_kwargs),
            densify=DensifyOptions(**densify_kwargs),
            **vals,
        )
    except Exception as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
