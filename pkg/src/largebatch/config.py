"""Flat ``key=value`` experiment configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

OUT_DIR_ENV = "LARGEBATCH_OUT_DIR"


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _layers(text):
    sizes = tuple(int(s) for s in text.split(",") if s.strip())
    if len(sizes) < 3:
        raise ValueError("model.layers needs input, >=1 hidden and output sizes")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    return sizes


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    return parse


# config key -> (attribute name, parser)
_KEYS = {
    "seed": ("seed", int),
    "workers": ("workers", int),
    "b_local": ("b_local", int),
    "epochs": ("epochs", int),
    "iterations_per_epoch": ("iterations_per_epoch", int),
    "model.layers": ("layers", _layers),
    "model.batchnorm": ("batchnorm", _bool),
    "model.init_scale": ("init_scale", float),
    "schedule": ("schedule", _choice("slow_start", "goyal")),
    "schedule.scale_beta": ("scale_beta", _bool),
    "eta_base_scale": ("eta_base_scale", float),
    "optimizer": ("optimizer", _choice("hybrid", "sgd", "rmsprop")),
    "mu1": ("mu1", float),
    "mu2": ("mu2", float),
    "epsilon": ("epsilon", float),
    "weight_decay": ("weight_decay", float),
    "comm.precision": ("precision", _choice("full64", "half16")),
    "comm.alpha": ("comm_alpha", float),
    "comm.beta": ("comm_beta", float),
    "comm.gamma": ("comm_gamma", float),
    "beta_center": ("beta_center", float),
    "beta_period": ("beta_period", float),
    "eta_rmsprop": ("eta_rmsprop", float),
    "bn.eps": ("eps_bn", float),
    "bn.var_combine": ("bn_var_combine", _choice("simple", "pooled")),
    "dataset": ("dataset", str),
    "dataset.examples": ("dataset_examples", int),
    "dataset.separation": ("dataset_separation", float),
    "threads": ("threads", int),
    "out_dir": ("out_dir", str),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _) in _KEYS.items()}


@dataclass(frozen=True)
class Config:
    seed: int = 0
    workers: int = 8
    b_local: int = 32
    epochs: int = 30
    iterations_per_epoch: int = 0  # 0: derive from shard size
    layers: tuple = (64, 128, 64, 10)
    batchnorm: bool = True
    init_scale: float = 1.0
    schedule: str = "slow_start"
    scale_beta: bool = True
    eta_base_scale: float = 1.0
    optimizer: str = "hybrid"
    mu1: float = 0.9
    mu2: float = 0.99
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    precision: str = "full64"
    comm_alpha: float = 5e-6
    comm_beta: float = 1.0 / 6.8e9
    comm_gamma: float = 0.1
    beta_center: float = 10.0
    beta_period: float = 5.0
    eta_rmsprop: float = 0.0003
    eps_bn: float = 1e-5
    bn_var_combine: str = "simple"
    dataset: str = "synthetic"
    dataset_examples: int = 51200
    dataset_separation: float = 6.0
    threads: int = 1
    out_dir: str = ""

    def __post_init__(self):
        problems = []
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.b_local < 1:
            problems.append("b_local must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if 0 < self.epochs < 4:
            problems.append("epochs must be 0 or >= 4 (four schedule phases)")
        if self.iterations_per_epoch < 0:
            problems.append("iterations_per_epoch must be >= 0")
        if self.layers[-1] < 2:
            problems.append("need at least 2 classes")
        if self.batchnorm and self.b_local < 2:
            problems.append("batch norm needs b_local >= 2")
        if self.eta_base_scale <= 0:
            problems.append("eta_base_scale must be > 0")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if not (self.dataset == "synthetic" or self.dataset.startswith("file:")):
            problems.append("dataset must be 'synthetic' or 'file:<path>'")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def b_total(self) -> int:
        return self.workers * self.b_local

    @property
    def classes(self) -> int:
        return self.layers[-1]

    def with_overrides(self, pairs) -> "Config":
        return apply_overrides(self, pairs)

    def to_dict(self) -> dict:
        return {_ATTR_TO_KEY[f.name]: _fmt(getattr(self, f.name)) for f in fields(self) if f.name in _ATTR_TO_KEY}

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(s) for s in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_pairs(pairs, source):
    values = {}
    for lineno, raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, text = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        attr, parse = _KEYS[key]
        try:
            values[attr] = parse(text)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def parse_config(text: str, source="<config>", base: Config | None = None) -> Config:
    values = _parse_pairs(enumerate(text.splitlines(), 1), source)
    return replace(base or Config(), **values)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, source=str(path))
    if not cfg.out_dir and os.environ.get(OUT_DIR_ENV):
        cfg = replace(cfg, out_dir=os.environ[OUT_DIR_ENV])
    return cfg


def apply_overrides(cfg: Config, pairs) -> Config:
    values = _parse_pairs(((i, p) for i, p in enumerate(pairs, 1)), "override")
    return replace(cfg, **values)
