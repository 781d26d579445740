"""Typed flat ``key = value`` experiment configuration and run manifests."""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from ..cells import CELL_KINDS
from ..ode.models import FAMILIES as ODE_FAMILIES, MOMENTUM_ACTIVATIONS
from ..ode.solvers import METHODS
from ..transformer import VARIANTS as TRANSFORMER_VARIANTS

TASKS = {
    "point_cloud": "ode",
    "adding": "rnn",
    "copy_rnn": "rnn",
    "copy_transformer": "transformer",
}
VARIANTS = {"ode": ODE_FAMILIES, "rnn": CELL_KINDS, "transformer": TRANSFORMER_VARIANTS}
OPTIMIZERS = ("adam", "sgd", "heavy-ball")
RUN_PREFIX = "run."


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    task: str = "point_cloud"
    family: str = "ode"
    variant: str = "hbnode"
    # sizes
    hidden: int = 20
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    seq_len: int = 100
    max_len: int = 32
    t_blank: int = 100
    n_symbols: int = 8
    copy_len: int = 10
    full_loss: bool = False
    # momentum cells
    mu: float = 0.6
    s: float = 1.0
    schedule: str = "constant"
    restart: int = 0
    parameterization: str = "v-form"
    cell_beta: float = 0.9
    cell_eps: float = 1e-8
    forget_gate: bool = False
    activation: str = "tanh"
    # damping
    omega: float = -3.0
    eps_cap: float = 1.0
    chi: float = 0.0
    momentum_act: str = "identity"
    augment: int = 0
    m0: str = "zero"
    adjoint_clip: float = 100.0
    # attention
    attn_gamma: float = 1.0
    attn_beta: float = 0.6
    beta_conn: float = 0.6
    delta: float = 1e-3
    # optimisation
    optimizer: str = "adam"
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay_at: int = 0
    lr_decay_to: float = 0.0
    batch_size: int = 50
    epochs: int = 200
    iterations: int = 0
    clip: float = 1.0
    init: str = "uniform-fan-in"
    # solver
    solver: str = "dopri45"
    rtol: float = 1e-7
    atol: float = 1e-7
    t_end: float = 1.0
    # logging
    eval_every: int = 10
    grad_norm_at: list[int] = field(default_factory=list)
    adjoint_checkpoints: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.task not in TASKS:
            bad("task", f"must be one of {sorted(TASKS)}")
        if self.family != TASKS[self.task]:
            bad("family", f"task {self.task!r} needs family {TASKS[self.task]!r}")
        if self.variant not in VARIANTS[self.family]:
            bad("variant", f"must be one of {VARIANTS[self.family]} for family {self.family!r}")
        for name in ("hidden", "n_layers", "n_heads", "d_model", "d_ff", "batch_size", "n_symbols", "copy_len"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        for name in ("epochs", "iterations", "t_blank", "restart", "lr_decay_at", "eval_every", "augment"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        if self.seq_len < 2:
            bad("seq_len", "must be >= 2")
        if self.max_len < 4 or self.max_len % 2:
            bad("max_len", "must be an even number >= 4")
        if self.d_model % self.n_heads:
            bad("d_model", "must be divisible by n_heads")
        if not self.lr > 0:
            bad("lr", "must be > 0")
        if self.lr_decay_at and not self.lr_decay_to > 0:
            bad("lr_decay_to", "must be > 0 when lr_decay_at is set")
        if self.optimizer not in OPTIMIZERS:
            bad("optimizer", f"must be one of {OPTIMIZERS}")
        if not 0.0 <= self.momentum < 1.0:
            bad("momentum", "must lie in [0, 1)")
        if self.clip < 0:
            bad("clip", "must be >= 0 (0 disables clipping)")
        if self.adjoint_clip < 0:
            bad("adjoint_clip", "must be >= 0 (0 disables clipping)")
        if self.m0 not in ("zero", "trainable"):
            bad("m0", "must be zero or trainable")
        if self.m0 == "trainable" and self.variant == "node":
            bad("m0", "a trainable initial momentum needs hbnode or ghbnode")
        if self.init != "uniform-fan-in":
            bad("init", "only uniform-fan-in is available")
        if self.schedule not in ("constant", "nag", "restart"):
            bad("schedule", "must be constant, nag or restart")
        if self.parameterization not in ("v-form", "u-form"):
            bad("parameterization", "must be v-form or u-form")
        if self.activation not in ("tanh", "sigmoid"):
            bad("activation", "must be tanh or sigmoid")
        if self.momentum_act not in MOMENTUM_ACTIVATIONS:
            bad("momentum_act", f"must be one of {MOMENTUM_ACTIVATIONS}")
        if not self.s > 0:
            bad("s", "must be > 0")
        if not self.eps_cap > 0:
            bad("eps_cap", "must be > 0")
        if not self.attn_gamma > 0:
            bad("attn_gamma", "must be > 0")
        for name in ("attn_beta", "beta_conn"):
            if not 0.0 <= getattr(self, name) < 1.0:
                bad(name, "must lie in [0, 1)")
        if not 0.0 < self.delta < 1.0:
            bad("delta", "must lie in (0, 1)")
        if self.solver not in METHODS:
            bad("solver", f"must be one of {METHODS}")
        if not (self.rtol > 0 and self.atol > 0):
            bad("rtol" if not self.rtol > 0 else "atol", "must be > 0")
        if not self.t_end > 0:
            bad("t_end", "must be > 0")
        if not self.seeds:
            bad("seeds", "must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            bad("seeds", "must not repeat")
        if any(c <= 0 or c >= self.t_end for c in self.adjoint_checkpoints):
            bad("adjoint_checkpoints", "must lie strictly inside (0, t_end)")
        if not self.out_dir:
            bad("out_dir", "must be non-empty")
        return self

    @property
    def budget(self) -> int:
        """Epochs for the point cloud, iterations otherwise."""
        return self.epochs if self.family == "ode" else self.iterations


_HINTS = get_type_hints(ExperimentConfig)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(name: str, text: str):
    hint = _HINTS[name]
    text = text.strip()
    try:
        if hint is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        inner = hint.__args__[0]
        if not text:
            return []
        if inner is int:
            return parse_seed_list(text)
        return [inner(part) for part in text.split(",")]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {getattr(hint, '__name__', hint)}") from None


def parse_seed_list(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or ``"0-9"`` (inclusive range)."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        span = re.fullmatch(r"(\d+)-(\d+)", part)
        if span:
            lo, hi = int(span[1]), int(span[2])
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return out


def parse_config_text(text: str, validate: bool = True) -> ExperimentConfig:
    values = {}
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith(RUN_PREFIX):
            continue
        if key not in known:
            raise ConfigError(f"{key}: unknown config field (line {lineno})")
        if key in values:
            raise ConfigError(f"{key}: given twice (line {lineno})")
        values[key] = _parse(key, value)
    cfg = ExperimentConfig(**values)
    return cfg.validate() if validate else cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def config_to_text(cfg: ExperimentConfig, extra: dict | None = None) -> str:
    lines = [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(cfg)]
    for key, value in (extra or {}).items():
        lines.append(f"{RUN_PREFIX}{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> tuple[ExperimentConfig, dict[str, str]]:
    """Return the resolved config and the ``run.*`` annotations."""
    extra = {}
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith(RUN_PREFIX) and "=" in line:
            key, value = line.split("=", 1)
            extra[key.strip()[len(RUN_PREFIX):]] = value.strip()
    return parse_config_text(text, validate=False), extra


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes).validate()
