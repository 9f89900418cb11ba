"""Training configuration: INI text with ``[train]``, ``[problem]`` and
``[solver]`` sections.

Example::

    [train]
    method = alq
    workers = 4
    steps = 2000
    lr = 0.05
    bits = 3
    bucket_size = 8192
    schedule = 100, 2000
    period = 10000
    seed = 0

    [problem]
    kind = least-squares
    dim = 50
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field

from .levels import NormKind, levels_for_bits

METHODS = (
    "alq", "alq-n", "amq", "amq-n", "alq-gd",
    "uniform", "exponential", "ternary", "full-precision",
)
ADAPTIVE = ("alq", "alq-n", "amq", "amq-n", "alq-gd")

_PROBLEM_KEYS = {
    "least-squares": {"n": int, "dim": int, "noise": float, "batch": int},
    "logistic": {"n": int, "dim": int, "noise": float, "batch": int, "l2": float},
    "mlp": {"n": int, "dim": int, "hidden": int, "noise": float, "batch": int},
    "drift": {
        "dim": int, "fast_fraction": float, "drops": "ints", "factor": float,
        "base_scale": float, "slow_scale": float, "l2": float,
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


def _ints(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "alq"
    workers: int = 4
    steps: int = 1000
    lr: float = 0.05
    lr_decay_steps: tuple = ()
    lr_decay: float = 0.1
    momentum: float = 0.0
    nesterov: bool = False
    bits: int = 3
    bucket_size: int = 8192
    norm: str = "auto"
    symmetric: str = "auto"
    clip: float = 0.0
    schedule: tuple = (100, 2000)
    period: int = 10000
    sample_count: int = 20
    log_every: int = 1
    seed: int = 0
    exp_p: float = 0.5
    max_sweeps: int = 50
    gd_steps: int = 500
    gd_rate: float = 0.1
    problem: str = "least-squares"
    problem_args: tuple = field(default_factory=tuple)  # sorted (key, value) pairs

    @property
    def problem_kwargs(self) -> dict:
        return dict(self.problem_args)

    @property
    def is_symmetric(self) -> bool:
        if self.symmetric == "auto":
            return self.method in ("amq", "amq-n")
        return self.symmetric == "true"

    @property
    def norm_text(self) -> str:
        if self.norm == "auto":
            return "inf" if self.method == "ternary" else "2"
        return self.norm

    def canonical(self) -> str:
        items = asdict(self)
        return "\n".join(f"{k}={items[k]!r}" for k in sorted(items))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


_TRAIN_TYPES = {
    "method": str, "workers": int, "steps": int, "lr": float, "lr_decay_steps": "ints",
    "lr_decay": float, "momentum": float, "nesterov": "bool", "bits": int,
    "bucket_size": int, "norm": str, "symmetric": str, "clip": float, "schedule": "ints",
    "period": int, "sample_count": int, "log_every": int, "seed": int, "exp_p": float,
}
_SOLVER_TYPES = {"max_sweeps": int, "gd_steps": int, "gd_rate": float}


def _convert(kind, raw):
    if kind == "ints":
        return _ints(raw)
    if kind == "bool":
        return _bool(raw)
    return kind(raw.strip())


def parse_config(text: str) -> TrainConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    errors: list[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    values: dict = {}
    for name in cp.sections():
        if name not in ("train", "problem", "solver"):
            errors.append(f"[{name}]: unknown section")
    for section, types in (("train", _TRAIN_TYPES), ("solver", _SOLVER_TYPES)):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in types:
                errors.append(f"{section}.{key}: unknown field")
                continue
            try:
                values[key] = _convert(types[key], raw)
            except ValueError as exc:
                errors.append(f"{section}.{key}: {exc}")
    kind = "least-squares"
    args = {}
    if cp.has_section("problem"):
        sect = dict(cp.items("problem"))
        kind = sect.pop("kind", kind).strip()
        if kind not in _PROBLEM_KEYS:
            errors.append(f"problem.kind: unknown problem {kind!r}; expected one of {sorted(_PROBLEM_KEYS)}")
        else:
            for key, raw in sect.items():
                types = _PROBLEM_KEYS[kind]
                if key not in types:
                    errors.append(f"problem.{key}: unknown field for {kind}")
                    continue
                try:
                    args[key] = _convert(types[key], raw)
                except ValueError as exc:
                    errors.append(f"problem.{key}: {exc}")
    values["problem"] = kind
    values["problem_args"] = tuple(sorted(args.items()))
    if errors:
        raise ConfigError(errors)
    cfg = TrainConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: TrainConfig):
    errors = []
    if cfg.method not in METHODS:
        errors.append(f"train.method: unknown method {cfg.method!r}; expected one of {', '.join(METHODS)}")
    for name in ("workers", "steps", "bucket_size", "sample_count", "log_every", "period", "max_sweeps"):
        if getattr(cfg, name) < 1:
            errors.append(f"{name}: must be >= 1")
    if not cfg.lr > 0:
        errors.append("train.lr: must be positive")
    if not 0 <= cfg.momentum < 1:
        errors.append("train.momentum: must lie in [0, 1)")
    if cfg.bits < 1 or cfg.bits > 8:
        errors.append("train.bits: must lie in 1..8")
    elif cfg.method not in ("ternary", "full-precision"):
        try:
            levels_for_bits(cfg.bits, cfg.is_symmetric)
        except ValueError as exc:
            errors.append(f"train.bits: {exc}")
    if cfg.norm != "auto":
        try:
            NormKind.parse(cfg.norm)
        except ValueError as exc:
            errors.append(f"train.norm: {exc}")
    if cfg.symmetric not in ("auto", "true", "false"):
        errors.append("train.symmetric: must be auto, true or false")
    if cfg.clip < 0:
        errors.append("train.clip: must be >= 0 (0 disables clipping)")
    if any(t < 0 for t in cfg.schedule) or list(cfg.schedule) != sorted(cfg.schedule):
        errors.append("train.schedule: must be sorted nonnegative steps")
    if not 0 < cfg.exp_p < 1:
        errors.append("train.exp_p: must lie in (0, 1)")
    if not cfg.gd_rate > 0 or cfg.gd_steps < 0:
        errors.append("solver: gd_rate must be positive and gd_steps >= 0")
    if errors:
        raise ConfigError(errors)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
