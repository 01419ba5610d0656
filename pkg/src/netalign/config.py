"""
Configuration helpers and defaults.

Centralize tunables to avoid magic numbers in code/tests.
"""

from __future__ import annotations

import os
import tomllib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Literal, NamedTuple

import numpy as np

from .errors import ConfigError

Mode = Literal["full", "fixed-cost", "collapse", "noise"]
MODES: tuple[str, ...] = ("full", "fixed-cost", "collapse", "noise")
# what the test anchors are ranked by: the transport plan or the raw embedding similarity
Readout = Literal["plan", "embedding"]
READOUTS: tuple[str, ...] = ("plan", "embedding")

# (alpha, beta, gamma_p) per benchmark pair
PRESETS: dict[str, tuple[float, float, float]] = {
    "foursquare-twitter": (0.50, 0.15, 1e-3),
    "acm-dblp": (0.90, 0.15, 5e-3),
    "phone-email": (0.75, 0.15, 1e-2),
    "acm-dblp-attr": (0.90, 0.15, 1e-2),
    "cora1-cora2": (0.30, 0.15, 5e-4),
    "douban": (0.50, 0.15, 1e-3),
}

REQUIRED_KEYS = ("edges1", "edges2", "anchors", "alpha", "beta", "gamma_p", "output_dir")
PRESET_KEYS = ("alpha", "beta", "gamma_p")

# TOML key -> TrainConfig field, where they differ
_KEY_FIELDS = {"T": "prox_iters", "N": "sinkhorn_iters", "lambda": "fixed_lambda"}
_PATH_KEYS = ("edges1", "edges2", "attrs1", "attrs2", "anchors", "output_dir")


def _env(name: str, default: str | None = None) -> str | None:
    v = os.getenv(name)
    return v if v is not None else default


def data_root() -> Path | None:
    root = _env("NETALIGN_DATA")
    return Path(root) if root else None


class SeedPlan(NamedTuple):
    split: int
    init: int
    noise: int
    batch: int


def split_seed(seed: int) -> SeedPlan:
    """Root seed -> one child seed per stochastic stage (SeedSequence.spawn order)."""
    children = np.random.SeedSequence(seed).spawn(4)
    return SeedPlan(*(int(c.generate_state(1)[0]) for c in children))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.75
    beta: float = 0.15
    gamma_p: float = 1e-2
    lr: float = 1e-4
    epochs: int = 50
    inner_steps: int = 20
    prox_iters: int = 10
    sinkhorn_iters: int = 50
    tol: float = 1e-6
    rwr_tol: float = 1e-8
    rwr_max_iter: int = 1000
    hidden: int = 128
    batch_size: int | None = None
    seed: int = 0
    mode: Mode = "full"
    readout: Readout = "plan"
    fixed_lambda: float | None = None
    train_ratio: float = 0.2
    strict: bool = False
    threads: int = 1
    # dataset / output
    edges1: str = ""
    edges2: str = ""
    attrs1: str | None = None
    attrs2: str | None = None
    anchors: str = ""
    n1: int | None = None
    n2: int | None = None
    output_dir: str = "runs"
    noise_kind: Literal["structural", "attribute"] = "structural"
    noise_p: float = 0.0
    ks: tuple[int, ...] = (1, 10)
    trace: bool = False
    export_features: bool = False
    preset: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", "alpha")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}", "beta")
        if self.gamma_p <= 0:
            raise ConfigError(f"gamma_p must be positive, got {self.gamma_p}", "gamma_p")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}", "lr")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}", "epochs")
        for key in ("inner_steps", "prox_iters"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0", key)
        if self.sinkhorn_iters < 1:
            raise ConfigError("N must be >= 1", "sinkhorn_iters")
        if self.tol <= 0 or self.rwr_tol <= 0:
            raise ConfigError("tolerances must be positive", "tol")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", "mode")
        if self.readout not in READOUTS:
            raise ConfigError(
                f"readout must be one of {READOUTS}, got {self.readout!r}", "readout"
            )
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError("train_ratio must lie in (0, 1)", "train_ratio")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1", "hidden")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", "threads")
        if self.noise_kind not in ("structural", "attribute"):
            raise ConfigError(f"unknown noise_kind {self.noise_kind!r}", "noise_kind")
        if not 0.0 <= self.noise_p <= 100.0:
            raise ConfigError("noise_p must lie in [0, 100]", "noise_p")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be a non-empty list of positive integers", "ks")

    @property
    def seeds(self) -> SeedPlan:
        return split_seed(self.seed)

    def snapshot(self) -> dict[str, Any]:
        out = asdict(self)
        out["ks"] = list(self.ks)
        return out


_FIELD_NAMES = {f.name for f in fields(TrainConfig)}
ALLOWED_KEYS = frozenset((_FIELD_NAMES - set(_KEY_FIELDS.values())) | set(_KEY_FIELDS))


def config_from_mapping(raw: dict[str, Any], base_dir: Path | None = None) -> TrainConfig:
    """Validate a raw key/value mapping; unknown keys and missing required keys are errors."""
    unknown = sorted(set(raw) - ALLOWED_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}", unknown[0])
    values = dict(raw)
    preset = values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}", "preset")
        for key, val in zip(PRESET_KEYS, PRESETS[preset], strict=True):
            values.setdefault(key, val)
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing required config key: {key}", key)
    kwargs: dict[str, Any] = {}
    for key, val in values.items():
        name = _KEY_FIELDS.get(key, key)
        if name == "ks":
            val = tuple(int(k) for k in val)
        if base_dir is not None and name in _PATH_KEYS:
            p = Path(val)
            val = str(p if p.is_absolute() else base_dir / p)
        kwargs[name] = val
    try:
        return TrainConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid config value: {e}") from e


def load_config(path: str | Path) -> TrainConfig:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from e
    return config_from_mapping(raw, p.parent)
