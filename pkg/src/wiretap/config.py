"""Run configuration and its flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

OBJECTIVES = ("mimi", "mice", "aece")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    alpha: float = 0.7
    M: int = 16
    n: int = 1
    embed_dim: int = 16
    encoder_hidden: int = 128
    decoder_hidden: int = 128
    mine_hidden: int = 100
    k_mine: int = 64
    k_decoder: int = 500
    lr: float = 0.001
    train_snr_db_main: float = 7.0
    train_snr_db_eve: float = 7.0
    phase1_epochs: int = 5
    phase1_iterations: int = 500
    phase2_rounds: int = 2000
    phase2_estimator_steps: int = 10
    phase2_encoder_steps: int = 1
    phase3_epochs: int = 5
    phase3_iterations: int = 500
    mine_ema_denominator: bool = False
    smoothing_window: int = 50
    objective: str = "mimi"
    seed: int = 0
    sweep_snr_start: float = 0.0
    sweep_snr_stop: float = 21.0
    sweep_snr_step: float = 3.0
    sweep_samples: int = 100_000
    sweep_eve_snr_db: float = 7.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("M", "n", "embed_dim", "encoder_hidden", "decoder_hidden", "mine_hidden",
                     "smoothing_window", "sweep_samples", "k_decoder"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.M < 2 or self.k_mine < 2:
            raise ConfigError("M and k_mine must be >= 2")
        # schedule counts may be zero (no-op phases)
        for name in ("phase1_epochs", "phase1_iterations", "phase2_rounds", "phase2_estimator_steps",
                     "phase2_encoder_steps", "phase3_epochs", "phase3_iterations"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.sweep_snr_step <= 0 or self.sweep_snr_stop < self.sweep_snr_start:
            raise ConfigError("bad sweep grid")

    @property
    def rate_bits(self) -> float:
        """Rate R = log2(M) / n bits per channel use."""
        return math.log2(self.M) / self.n

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def snr_grid(self) -> list[float]:
        out, i = [], 0
        while True:
            v = self.sweep_snr_start + i * self.sweep_snr_step
            if v > self.sweep_snr_stop + 1e-9:
                return out
            out.append(float(v))
            i += 1

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw.replace("_", ""))
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are rejected."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, types[key], raw)
    base = base or RunConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
