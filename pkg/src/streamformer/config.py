"""Model architecture configuration and its JSON form."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from .numerics import Activation


class Norm(str, Enum):
    LAYERNORM = "layernorm"
    REZERO = "rezero"


class FeedForward(str, Enum):
    GELU = "gelu"       # two projections with a GELU in between
    LINEAR = "linear"   # no activation; the block is a single linear map


class Mode(str, Enum):
    CONTINUAL = "continual"
    ORACLE_BIDIRECTIONAL = "oracle_bidirectional"
    ORACLE_CAUSAL_BANDED = "oracle_causal_banded"


# Positional embedding kinds. "none" and the two circular kinds are the only
# ones the engine executes; anything else is kept verbatim by the parser so
# the conversion rule can reject it with a diagnostic.
POSITIONAL_KINDS = ("none", "rope", "recycling")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    depth: int
    window: int
    dim: int
    heads: int
    d_ff: int = 0                      # 0 -> defaulted to 4*dim in validate()
    activation: Activation = Activation.SOFTMAX
    norm: Norm = Norm.LAYERNORM
    ff: FeedForward = FeedForward.GELU
    positional: str = "none"
    rope_base: float = 10000.0
    recycling_period: int = 0          # 0 -> defaulted to window in validate()
    rezero_mode: str = "constant"      # "constant" | "learned"
    rezero_scale: float | None = None  # constant value; None -> 1/depth
    mode: Mode = Mode.CONTINUAL
    precision: int = 32

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.norm = Norm(self.norm)
        self.ff = FeedForward(self.ff)
        self.mode = Mode(self.mode)
        if self.d_ff == 0:
            self.d_ff = 4 * self.dim
        if self.recycling_period == 0:
            self.recycling_period = self.window

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def effective_rezero_scale(self, learned_value: float) -> float:
        """Residual-branch scale for one layer under ReZero."""
        if self.rezero_mode == "learned":
            return learned_value
        if self.rezero_scale is not None:
            return self.rezero_scale
        return 1.0 / self.depth

    @property
    def is_decoupled(self) -> bool:
        """True for the profile where token mixing is fully linear in K/V."""
        return (
            self.activation is Activation.SOFT
            and self.norm is Norm.REZERO
            and self.ff is FeedForward.LINEAR
        )

    def validate(self) -> "ModelConfig":
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.positional not in POSITIONAL_KINDS:
            raise ConfigError(f"unknown positional embedding kind {self.positional!r}")
        if self.positional == "rope" and self.head_dim % 2 != 0:
            raise ConfigError("rotary embedding needs an even head dimension")
        if self.positional == "recycling" and self.recycling_period < self.window:
            raise ConfigError("recycling period must be >= window")
        if self.rezero_mode not in ("constant", "learned"):
            raise ConfigError(f"unknown rezero mode {self.rezero_mode!r}")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        d["norm"] = self.norm.value
        d["ff"] = self.ff.value
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg
