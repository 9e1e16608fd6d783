"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    data_path: str = ""
    kb_path: str = ""
    n_posts: int = 800
    comments_per_post: int = 16
    vocab_size: int = 120
    n_classes: int = 2
    class_separation: float = 0.5
    kb_entity_rate: float = 0.4
    data_seed: int = 0
    # scenario: originals available at train / test time and the balanced total
    m_train: int = 16
    m_test: int = 2
    balance: bool = True
    target_total: int = 16
    # generator
    d: int = 32
    rank: int = 4
    n_experts: int = 10
    epsilon: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    gen_epochs: int = 5
    gen_batch_size: int = 8
    gen_lr: float = 3e-3
    gen_weight_decay: float = 0.01
    disc_lr_scale: float = 1.0
    grl_weight: float = 0.1
    grl_ramp: bool = True
    gen_comments_per_post: int = 4
    pretrain_steps: int = 1500
    temperature: float = 0.8
    gen_max_len: int = 12
    # detector
    det_lr: float = 5e-3
    det_batch_size: int = 64
    patience: int = 10
    max_epochs: int = 80
    tau: str = "median"
    # harness
    seeds: tuple = (1, 2, 3, 4, 5)
    sweep_counts: tuple = (0, 1, 2, 4, 8, 16)
    quality_k: int = 8
    no_cgt: bool = False
    no_sa: bool = False
    no_dk: bool = False
    no_hcr: bool = False
    no_mcf: bool = False
    out_dir: str = "runs"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.n_experts < 2:
            raise ConfigError("n_experts must be >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.balance and self.target_total < max(self.m_train, self.m_test):
            raise ConfigError("target_total must be >= m_train and m_test when balancing")
        if self.tau != "median":
            try:
                float(self.tau)
            except ValueError as exc:
                raise ConfigError("tau must be 'median' or a number") from exc

    @property
    def tau_value(self):
        return None if self.tau == "median" else float(self.tau)

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["sweep_counts"] = list(self.sweep_counts)
        return d

    def digest(self, keys=None):
        """Stable hash of the (selected) fields; used as a cache key."""
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_(self, **changes):
        return replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _coerce(key, raw):
    default = getattr(_DEFAULTS, key)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip("\"'")


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict of typed values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, **overrides):
    """RunConfig from an optional file, then keyword overrides (``None`` values ignored)."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def dump_config(cfg):
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
