"""Run configuration: one flat key=value text file drives every command.

Every field has a default, so an empty file is a valid config; an unknown key
is a hard error (callers surface it as CLI exit code 2). All randomness in a
run funnels through the single `seed` key.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError, MissingArtifact
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # corpus / ingest
    input: str = ""
    fmt: str = "bgl_style"
    dataset_id: str = "synthetic"
    d: int = 64
    # bagging
    bag_mode: str = "sliding"  # "sliding" or "block"
    W: int = 20
    s: int = 20
    block: int = 10
    per_bag: int = 20
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2
    shuffled: bool = False
    # model
    d_h: int = 64
    N_p: int = 8
    K: int = 4
    d_a: int | None = None
    heads_enc: int = 4
    h_c: int = 32
    # training
    lambda_p: float = 0.1
    lambda_a: float = 0.01
    lambda_c: float = 0.5
    delta_p: float = 0.7
    delta_e: float = 0.5
    w_ent: float = 1.0
    delta_c: float = 0.3
    eps: float = 1e-8
    gamma: float = 2.0
    alpha: float = 0.25
    use_consistency: bool = True
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    # evaluation
    k: int = 3
    delta_sr: float = 0.1
    # outputs
    checkpoint: str = ""
    metrics: str = ""
    figures: bool = True
    # reproducibility
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.fmt not in ("bgl_style", "csv_labeled"):
            raise ConfigError(f"fmt must be bgl_style or csv_labeled, got {self.fmt!r}")
        if self.bag_mode not in ("sliding", "block"):
            raise ConfigError(f"bag_mode must be sliding or block, got {self.bag_mode!r}")
        total = self.train_ratio + self.val_ratio + self.test_ratio
        if min(self.train_ratio, self.val_ratio, self.test_ratio) <= 0 or abs(total - 1.0) > 1e-9:
            raise ConfigError(
                f"split ratios must be positive and sum to 1, got "
                f"({self.train_ratio}, {self.val_ratio}, {self.test_ratio})"
            )
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.delta_sr <= 1.0:
            raise ConfigError(f"delta_sr must be in [0,1], got {self.delta_sr}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, d_h=self.d_h, N_p=self.N_p, K=self.K, d_a=self.d_a,
            heads_enc=self.heads_enc, h_c=self.h_c, seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_p=self.lambda_p, lambda_a=self.lambda_a, lambda_c=self.lambda_c,
            delta_p=self.delta_p, delta_e=self.delta_e, w_ent=self.w_ent,
            delta_c=self.delta_c, eps=self.eps, gamma=self.gamma, alpha=self.alpha,
            use_consistency=self.use_consistency, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, patience=self.patience,
            seed=self.seed,
        )


_HINTS = get_type_hints(RunConfig)
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        # the only remaining hint is int | None (d_a)
        if raw.lower() in ("", "none"):
            return None
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for config key '{key}': {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """key=value lines; '#' starts a comment; blank lines ignored."""
    pairs: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {line_no}: expected key=value, got {raw!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def from_pairs(pairs: dict[str, str]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = [k for k in pairs if k not in known]
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs = {key: _coerce(key, value) for key, value in pairs.items()}
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"config file not found: {path}")
    return from_pairs(parse_config_text(path.read_text(encoding="utf-8")))


def override(cfg: RunConfig, updates: dict[str, str]) -> RunConfig:
    """New config with string overrides applied on top (CLI flags win)."""
    current = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    known = set(current)
    for key, raw in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        current[key] = _coerce(key, raw)
    return RunConfig(**current)


def dump_config(cfg: RunConfig) -> str:
    """Effective config as key=value lines, in declaration order."""
    out = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{f.name}={value}")
    return "\n".join(out) + "\n"
