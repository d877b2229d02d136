"""Run configuration: every tunable in one dataclass, plus file parsing.

Config files are plain ``key=value`` lines (``#`` comments allowed); CLI
flags override file values.  A master seed fans out to per-stage seeds, so
each stage is independently reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .seeding import child_seed


@dataclass
class RunConfig:
    # embedding / profile dimensions
    p: int = 32                  # latent factor dimension
    k: int = 16                  # gap vector dimension
    d_w: int = 32                # word embedding dimension
    d_h: int = 32                # recurrent hidden dimension

    # profiling thresholds
    alpha_g: float = 3.5         # sentiment gap threshold
    theta_mu: float = 0.7        # large-gap fraction threshold

    # metric learning
    metric_form: str = "R"       # one of E, D, F, R
    attention: bool = True
    lam: float = 0.6             # triplet mix weight
    c: float = 1.0               # distance scale / hinge margin
    mlc_lr: float = 0.05
    mlc_epochs: int = 100
    mlc_l2: float = 1e-4
    per_anchor: int = 5
    project_every: int = 50

    # factor model; the pipeline trains on every interaction (detection
    # runs before any filtering), so no holdout by default
    lfm_lr: float = 0.01
    lfm_epochs: int = 200
    lfm_l2: float = 1e-4
    lfm_holdout: float = 0.0

    # sentiment model
    sent_lr: float = 0.05
    sent_epochs: int = 50
    sent_batch: int = 64
    min_count: int = 1
    max_sentences: int = 16
    max_words: int = 32

    # clustering
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-9

    # evaluation
    sod_theta: float = 0.8
    neighbors: int = 20
    n_list: tuple[int, ...] = (5, 15)
    negatives_per_positive: int = 99
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)

    # reproducibility / execution
    seed: int = 0                # master seed
    threads: int = 1

    def stage_seed(self, stage: str) -> int:
        return child_seed(self.seed, stage)

    def validate(self):
        if self.p < 1 or self.k < 1 or self.d_w < 1 or self.d_h < 1:
            raise ConfigError("dimensions must be positive")
        if self.metric_form not in ("E", "D", "F", "R"):
            raise ConfigError(f"metric_form must be E, D, F or R, got {self.metric_form!r}")
        if not (0.0 < self.lam < 1.0):
            raise ConfigError("lam must lie in (0, 1)")
        if self.alpha_g < 0 or not (0.0 < self.theta_mu <= 1.0):
            raise ConfigError("invalid profiling thresholds")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must sum to 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.per_anchor < 1:
            raise ConfigError("per_anchor must be >= 1")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for f in fields(cls):
            if f.name in data:
                setattr(cfg, f.name, _coerce(f.name, getattr(cfg, f.name), data[f.name]))
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.validate()
        return cfg


def _coerce(name: str, default, raw):
    """Coerce a raw string/list value to the type of the default."""
    if isinstance(default, bool):
        if isinstance(raw, str):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        if isinstance(raw, str):
            raw = [x for x in raw.replace(",", " ").split() if x]
        parts = [float(x) for x in raw]
        if all(float(x).is_integer() for x in parts) and all(
                isinstance(d, int) for d in default):
            return tuple(int(x) for x in parts)
        return tuple(parts)
    return str(raw)


def load_config(path) -> RunConfig:
    """Parse a key=value config file."""
    data = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            data[key.strip()] = value.strip()
    return RunConfig.from_dict(data)
