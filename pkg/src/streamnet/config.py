"""Flat key = value run configuration.

One knob per line, ``#`` starts a comment, unknown keys are rejected up
front. ``resolve`` produces the effective config (defaults applied) which the
CLI echoes into every output directory, so a run can always be reproduced
from its artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .networks import NetworkSpec
from .slicing import make_slice_spec


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_choice(options):
    def parse(key, raw):
        if raw not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {raw!r}")
        return raw
    return parse


def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_str(key, raw):
    return raw


def _parse_floats(key, raw):
    return tuple(_parse_float(key, tok) for tok in _split_list(raw))


def _parse_ints(key, raw):
    return tuple(_parse_int(key, tok) for tok in _split_list(raw))


def _parse_tokens(key, raw):
    return tuple(_split_list(raw))


def _split_list(raw: str) -> list:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


# key -> (parser, default)
SCHEMA = {
    # dataset
    "dataset": (_parse_choice(("synthetic", "cifar10", "raw")), "synthetic"),
    "data_dir": (_parse_str, "."),
    "raw_train_path": (_parse_str, ""),
    "raw_test_path": (_parse_str, ""),
    "subset_train": (_parse_int, 0),  # 0 = use everything
    "subset_test": (_parse_int, 0),
    "subset_seed": (_parse_int, 0),
    "synthetic_classes": (_parse_int, 10),
    "synthetic_train_per_class": (_parse_int, 150),
    "synthetic_test_per_class": (_parse_int, 50),
    "synthetic_channels": (_parse_int, 3),
    "synthetic_size": (_parse_int, 16),
    "synthetic_seed": (_parse_int, 7),
    # network
    "vertex": (_parse_choice(("V1", "V5", "V6", "V7", "V8")), "V1"),
    "n_streams": (_parse_int, 1),
    "width_multiplier": (_parse_int, 1),
    "n_slices": (_parse_int, 5),
    "conv5_filters": (_parse_int, 0),  # 0 = one per class
    "fc_hidden": (_parse_int, 64),
    "filter_divisor": (_parse_int, 4),  # 1 = full-size filter counts
    "slice_membership": (_parse_choice(("per_channel", "luminance")), "per_channel"),
    # training
    "noise_ratio": (_parse_float, 0.5),
    "train_noise": (_parse_choice(("clean", "noisy")), "clean"),
    "epochs": (_parse_int, 30),
    "batch_size": (_parse_int, 32),
    "eval_every": (_parse_int, 1),
    "seed": (_parse_int, 1),
    "lr": (_parse_float, 1e-4),
    "beta1": (_parse_float, 0.99),
    "beta2": (_parse_float, 0.9),
    "epsilon": (_parse_float, 1e-8),
    "adam_conventional_betas": (_parse_bool, False),
    "noise_per_channel": (_parse_bool, False),
    # sweep
    "sweep_architectures": (_parse_tokens, ("V1", "V8-5")),
    "sweep_noise_ratios": (_parse_floats, (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)),
    "sweep_seeds": (_parse_ints, (1, 2, 3)),
    "workers": (_parse_int, 0),  # 0 = STREAMNET_THREADS or logical cores
    # analysis
    "kl_bins": (_parse_int, 50),
    "kl_alpha": (_parse_float, 1.0),
    # output
    "out_dir": (_parse_str, "runs"),
}

BASE_FILTERS = (32, 64, 128, 256)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def render(self) -> str:
        """Effective configuration as key = value lines."""
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key = value lines; returns only the keys that were set."""
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {raw_line.strip()!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        values[key] = parser(key, raw)
    return values


def resolve(file_text: str | None = None, overrides: list | None = None,
            source: str = "<config>") -> RunConfig:
    """Merge defaults, an optional config file, and key=value overrides."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if file_text is not None:
        values.update(parse_config_text(file_text, source))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"override: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        values[key] = parser(key, raw)
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    for key in ("epochs", "subset_train", "subset_test"):
        if cfg[key] < 0:
            raise ConfigError(f"{key}: must be >= 0")
    for key in ("batch_size", "eval_every", "n_streams", "width_multiplier",
                "n_slices", "fc_hidden", "filter_divisor", "kl_bins"):
        if cfg[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if not 0.0 <= cfg["noise_ratio"] <= 1.0:
        raise ConfigError("noise_ratio: must be in [0, 1]")
    if cfg["kl_alpha"] <= 0:
        raise ConfigError("kl_alpha: must be positive")
    if BASE_FILTERS[0] % cfg["filter_divisor"] != 0:
        raise ConfigError(f"filter_divisor: must divide {BASE_FILTERS[0]}")
    if cfg["dataset"] == "raw" and not (cfg["raw_train_path"] and cfg["raw_test_path"]):
        raise ConfigError("raw_train_path: raw datasets need raw_train_path "
                          "and raw_test_path")


def base_filters(cfg: RunConfig) -> tuple:
    d = cfg["filter_divisor"]
    return tuple(f // d for f in BASE_FILTERS)


def network_spec(cfg: RunConfig, n_classes: int, input_shape: tuple,
                 vertex: str | None = None, scale: int | None = None,
                 seed: int | None = None) -> NetworkSpec:
    """Build the NetworkSpec for one run.

    ``vertex`` plus optional ``scale`` override the config's single-run keys
    (used by sweep tokens like "V8-5"): the scale sets the stream count for
    V6/V8, the width multiplier for V5, and both slice count and multiplier
    for V7.
    """
    vertex = vertex or cfg["vertex"]
    n_streams = cfg["n_streams"]
    mult = cfg["width_multiplier"]
    n_slices = cfg["n_slices"]
    if scale is not None:
        if vertex in ("V6", "V8"):
            n_streams = scale
        if vertex in ("V5", "V7"):
            mult = scale
        if vertex == "V7":
            n_slices = scale
        if vertex == "V8":
            n_slices = scale
    if vertex in ("V1", "V5", "V7"):
        n_streams = 1
    if vertex in ("V1", "V6"):
        mult = 1
    if vertex == "V8" and n_streams != n_slices:
        raise ConfigError(f"n_streams: V8 needs n_streams == n_slices, "
                          f"got {n_streams} vs {n_slices}")
    slice_spec = make_slice_spec(n_slices) if vertex in ("V7", "V8") else None
    return NetworkSpec(
        vertex=vertex,
        input_shape=input_shape,
        n_classes=n_classes,
        n_streams=n_streams,
        width_multiplier=mult,
        slice_spec=slice_spec,
        conv5_filters=cfg["conv5_filters"] or None,
        fc_hidden=cfg["fc_hidden"],
        base_filters=base_filters(cfg),
        slice_membership=cfg["slice_membership"],
        seed=cfg["seed"] if seed is None else seed,
    )


def parse_architecture_token(token: str) -> tuple:
    """Split a sweep entry like "V8-5" into (vertex, scale-or-None)."""
    parts = token.split("-")
    vertex = parts[0]
    if vertex not in ("V1", "V5", "V6", "V7", "V8"):
        raise ConfigError(f"sweep_architectures: unknown vertex in {token!r}")
    if len(parts) == 1:
        return vertex, None
    if len(parts) == 2:
        try:
            return vertex, int(parts[1])
        except ValueError:
            pass
    raise ConfigError(f"sweep_architectures: bad token {token!r}, "
                      "expected e.g. V1 or V8-5")
