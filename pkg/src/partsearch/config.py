"""Flat ``key = value`` run configuration.

Every hyperparameter is a flat key. File values are overridden by CLI
flags, and the fully resolved config is echoed verbatim into the run
directory. Unknown keys are rejected. Defaults are desk-scale; the
reference full-scale settings (d=768, K=10, batch 64, text length 100,
50 epochs) stay reachable through the same keys.
"""

from __future__ import annotations

import os

from .errors import ConfigError

# key -> (type, default)
_SCHEMA: dict[str, tuple[type, object]] = {
    "d": (int, 32),
    "layers": (int, 2),
    "attn_heads": (int, 4),
    "mlp_ratio": (float, 4.0),
    "dropout": (float, 0.0),
    "patch_size": (int, 8),
    "max_len": (int, 24),
    "K": (int, 4),
    "lambda": (float, 0.2),
    "eps": (float, 1e-8),
    "lr": (float, 1e-3),
    "batch_size": (int, 32),
    "epochs": (int, 50),
    "seed": (int, 0),
    "mode": (str, "both"),
    "data": (str, ""),
    "out": (str, "run"),
    "checkpoint": (str, ""),
    # synthetic dataset keys
    "num_ids": (int, 20),
    "images_per_id": (int, 5),
    "captions_per_image": (int, 2),
    "image_size": (int, 32),
    "vocab_words_per_id": (int, 4),
    "noise_std": (float, 0.05),
}


class RunConfig:
    """Resolved configuration; attribute access plus dict-style iteration."""

    def __init__(self, values: dict[str, object]):
        self._values = dict(values)

    def __getattr__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key)

    @property
    def lam(self) -> float:
        return self._values["lambda"]

    def get(self, key: str):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def items(self):
        return self._values.items()

    def replaced(self, **overrides) -> "RunConfig":
        values = dict(self._values)
        for key, val in overrides.items():
            key = "lambda" if key == "lam" else key
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _SCHEMA[key][0](val)
        return RunConfig(values)


def _convert(key: str, raw: str):
    typ, _ = _SCHEMA[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config_file(path) -> dict[str, object]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _convert(key, raw)
    return values


def resolve_config(config_path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then file values, then CLI overrides, in that order."""
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    if config_path:
        values.update(parse_config_file(config_path))
    for key, raw in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, str(raw))
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.d < 1 or cfg.layers < 1 or cfg.K < 1 or cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError("d, layers, K, batch_size must be >= 1 and epochs >= 0")
    if cfg.d % cfg.attn_heads:
        raise ConfigError(f"d={cfg.d} not divisible by attn_heads={cfg.attn_heads}")
    if cfg.lam < 0 or cfg.eps <= 0 or cfg.lr <= 0:
        raise ConfigError("lambda must be >= 0 and eps, lr positive")
    if cfg.K < 2 and cfg.lam > 0:
        raise ConfigError("K=1 with lambda > 0: the diversity term needs at least 2 heads")
    if cfg.mode not in ("global", "part", "both"):
        raise ConfigError(f"mode must be global/part/both, got {cfg.mode!r}")


def echo_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in _SCHEMA:
            fh.write(f"{key} = {cfg.get(key)}\n")
