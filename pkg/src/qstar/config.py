"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .qcr import ASPECTS, PROMPT_MODES
from .qgmc import VARIANT_ALIASES, VARIANTS

STAGES = ("beginning", "middle", "final")
N_ANSWERS = 7  # zero..four, yes, no
MIN_TOKENS = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # dimensions
    t: int = 8
    d: int = 32
    m_prime: int = 4
    n: int = 6
    f: int = 8
    heads: int = 4
    h: int = 0  # TFI hidden width; 0 means "same as d"
    v: int = 8
    classes: int = 4
    noise_sigma: float = 0.05
    # optimiser
    learning_rate: float = 1e-3
    decay_factor: float = 0.1
    decay_period: int = 10
    batch_size: int = 32
    epochs: int = 20
    weight_decay: float = 1e-2
    # ablations
    disable_qgmc: bool = False
    disable_sti: bool = False
    disable_tfi: bool = False
    disable_qcr: bool = False
    qgmc_variant: str = "qgmc"
    prompt_mode: str = "keywords"
    prompt_keywords: tuple[str, ...] = ASPECTS
    query_guidance_removed: frozenset[str] = field(default_factory=frozenset)
    # bookkeeping
    seed: int = 0
    n_train: int = 2000
    n_val: int = 500
    output_path: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "qgmc_variant", VARIANT_ALIASES.get(self.qgmc_variant, self.qgmc_variant))
        object.__setattr__(self, "prompt_keywords", tuple(self.prompt_keywords))
        object.__setattr__(self, "query_guidance_removed", frozenset(self.query_guidance_removed))
        self.validate()

    @property
    def hidden(self) -> int:
        return self.h or self.d

    def validate(self) -> None:
        for name in ("t", "d", "m_prime", "n", "f", "heads", "v", "classes", "decay_period", "batch_size", "epochs", "n_train", "n_val"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.h < 0:
            raise ConfigError("h must be >= 0")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.noise_sigma < 0:
            raise ConfigError("learning_rate must be positive; weight_decay and noise_sigma non-negative")
        if self.v < N_ANSWERS:
            raise ConfigError(f"v must be at least {N_ANSWERS} to hold every answer, got {self.v}")
        if self.n < MIN_TOKENS:
            raise ConfigError(f"n must be at least {MIN_TOKENS} question tokens, got {self.n}")
        if not 3 <= self.classes <= self.f:
            raise ConfigError(f"classes must lie in [3, f={self.f}] so every class owns a band, got {self.classes}")
        if self.qgmc_variant not in VARIANTS:
            raise ConfigError(f"unknown qgmc_variant {self.qgmc_variant!r}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"unknown prompt_mode {self.prompt_mode!r}")
        bad = set(self.prompt_keywords) - set(ASPECTS)
        if bad or not self.prompt_keywords:
            raise ConfigError(f"prompt_keywords must be a non-empty subset of {ASPECTS}")
        bad = self.query_guidance_removed - set(STAGES)
        if bad:
            raise ConfigError(f"query_guidance_removed has unknown stages {sorted(bad)}")
        if self.disable_qcr and (self.prompt_mode != "keywords" or "final" in self.query_guidance_removed):
            raise ConfigError("prompt ablations are meaningless when the QCR block is disabled")
        early = self.disable_qgmc or "beginning" in self.query_guidance_removed
        if early and self.qgmc_variant != "qgmc":
            raise ConfigError("qgmc_variant cannot be combined with removing QGMC or its query guidance")
        if self.disable_qgmc and "beginning" in self.query_guidance_removed:
            raise ConfigError("disable_qgmc already removes beginning-stage query guidance")
        if self.disable_tfi and "middle" in self.query_guidance_removed:
            raise ConfigError("disable_tfi already removes middle-stage query guidance")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- text format --------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, frozenset):
                val = sorted(val)
            elif isinstance(val, tuple):
                val = list(val)
            out[f.name] = val
        return out


def _format(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, frozenset):
        return ",".join(s for s in STAGES if s in val)
    if isinstance(val, tuple):
        return ",".join(val)
    return repr(val) if isinstance(val, float) else str(val)


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple") or kind.startswith("frozenset"):
            items = tuple(s.strip() for s in raw.split(",") if s.strip())
            return frozenset(items) if kind.startswith("frozenset") else items
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    base = base or RunConfig()
    try:
        return dataclasses.replace(base, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)
