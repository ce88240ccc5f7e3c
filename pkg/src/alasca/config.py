"""Flat ``key=value`` run configuration.

One assignment per line; ``#`` starts a comment.  Keys are dotted
(``train.lambda=2.0``).  Unknown or repeated keys are rejected, and the
``data.*`` keys listed in ``REQUIRED`` must be present.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ContractError
from .noise import NOISE_KINDS
from .trainer import TrainConfig

REQUIRED = ("data.n", "data.dim", "data.classes", "data.noise", "data.eps")

# config key -> TrainConfig field
TRAIN_KEYS = {
    "train.lambda": "lam",
    "train.warmup": "warmup_epochs",
    "train.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "train.momentum": "momentum",
    "train.weight_decay": "weight_decay",
    "train.lr_milestones": "lr_milestones",
    "train.lr_decay": "lr_decay",
    "train.grad_clip": "grad_clip",
    "train.seed": "seed",
    "alpha.initial": "alpha_initial",
    "alpha.final": "alpha_final",
    "alpha.ramp": "alpha_ramp",
    "ema.weight": "w_ema",
    "ema.tau": "tau",
    "ema.head": "ema_head",
    "loss.kind": "lnl_loss",
    "loss.gce_q": "gce_q",
    "loss.sce_w1": "sce_w1",
    "loss.sce_w2": "sce_w2",
    "loss.keep_fraction": "keep_fraction",
    "lca.enabled": "lca",
    "lca.all_heads": "lca_all_heads",
    "net.width": "width",
    "net.stages": "stages",
    "net.activation": "activation",
    "probe.every": "probe_every",
    "probe.size": "probe_size",
    "probe.stage": "probe_stage",
}

DATA_DEFAULTS = {"data.sep": 3.0, "data.seed": 0, "data.test_n": 2000, "data.file": ""}
DATA_TYPES = {
    "data.n": int, "data.dim": int, "data.classes": int, "data.noise": str, "data.eps": float,
    "data.sep": float, "data.seed": int, "data.test_n": int, "data.file": str,
}


class ConfigError(ContractError):
    """Bad configuration; ``key`` names the offending entry when there is one."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _field_types() -> dict[str, type]:
    defaults = TrainConfig()
    out = {}
    for f in fields(TrainConfig):
        val = getattr(defaults, f.name)
        out[f.name] = tuple if isinstance(val, tuple) else type(val)
    return out


_PARSERS = {bool: _bool, int: int, float: float, str: str, tuple: _floats}


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    raw: dict = field(default_factory=dict)

    def canonical(self) -> str:
        """Sorted, fully resolved ``key=value`` text; the digest is taken over this."""
        lines = [f"{k}={_fmt(v)}" for k, v in sorted(self.data.items())]
        for key, attr in sorted(TRAIN_KEYS.items()):
            lines.append(f"{key}={_fmt(getattr(self.train, attr))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: key {key!r} given twice", key)
        raw[key] = value
    raw.update(overrides or {})
    return resolve(raw)


def resolve(raw: dict[str, str]) -> RunConfig:
    for key in raw:
        if key not in TRAIN_KEYS and key not in DATA_TYPES:
            raise ConfigError(f"unknown config key {key!r}", key)
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}", key)

    data = dict(DATA_DEFAULTS)
    for key, kind in DATA_TYPES.items():
        if key in raw:
            data[key] = _convert(key, raw[key], kind)
    if data["data.noise"] not in NOISE_KINDS:
        raise ConfigError(f"data.noise must be one of {NOISE_KINDS}, got {data['data.noise']!r}", "data.noise")
    if not 0.0 <= data["data.eps"] <= 1.0:
        raise ConfigError(f"data.eps must lie in [0, 1], got {data['data.eps']}", "data.eps")
    for key in ("data.n", "data.dim", "data.classes"):
        if data[key] < (2 if key != "data.n" else 1):
            raise ConfigError(f"{key} is too small: {data[key]}", key)

    types = _field_types()
    kwargs = {}
    for key, attr in TRAIN_KEYS.items():
        if key in raw:
            kwargs[attr] = _convert(key, raw[key], types[attr])
    try:
        train = TrainConfig(**kwargs)
    except ContractError as exc:
        key = next((k for k, a in TRAIN_KEYS.items() if a in str(exc) or k.split(".")[1] in str(exc)), None)
        raise ConfigError(str(exc), key) from exc
    return RunConfig(data, train, dict(raw))


def _convert(key: str, text: str, kind: type):
    try:
        return _PARSERS[kind](text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}", key) from exc


def load(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text, overrides)


def schema() -> list[tuple[str, str, str]]:
    """(key, type, default) rows for documentation."""
    types = _field_types()
    defaults = TrainConfig()
    rows = [(k, DATA_TYPES[k].__name__, "required") for k in REQUIRED]
    rows += [(k, DATA_TYPES[k].__name__, _fmt(v)) for k, v in DATA_DEFAULTS.items()]
    rows += [(k, types[a].__name__, _fmt(getattr(defaults, a))) for k, a in TRAIN_KEYS.items()]
    return rows
