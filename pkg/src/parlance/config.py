"""Run configuration: one plain-text file plus command-line overrides.

The file format is flat `key = value` lines with dotted sections, e.g.

    seed = 7
    mode = open
    model.n_layers = 4
    train.lr = 0.002
    decode.top_k = 20

Lines starting with '#' are comments. Values are coerced to int, float,
bool, or string. The merged configuration is embedded verbatim into every
checkpoint and report so a run can be reproduced from its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decoding import DecodeConfig
from .model import ModelConfig
from .training import TrainConfig


def _coerce(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text):
    """key=value lines -> nested dict keyed by dotted sections."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _coerce(value)
    return out


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "open"  # open | knowledge | task
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    decode: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=()):
        data = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = parse_config_text(fh.read())
        for item in overrides:
            data_update = parse_config_text(item)
            _deep_update(data, data_update)
        known = {"seed", "mode", "model", "train", "decode"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            seed=data.get("seed", 0),
            mode=data.get("mode", "open"),
            model=data.get("model", {}),
            train=data.get("train", {}),
            decode=data.get("decode", {}),
        )

    def to_dict(self):
        return {
            "seed": self.seed,
            "mode": self.mode,
            "model": dict(self.model),
            "train": dict(self.train),
            "decode": dict(self.decode),
        }

    def model_config(self, vocab_size):
        return ModelConfig(vocab_size=vocab_size, **self.model)

    def train_config(self):
        kwargs = dict(self.train)
        kwargs.setdefault("seed", self.seed)
        return TrainConfig(**kwargs)

    def decode_config(self, **defaults):
        kwargs = {**defaults, **self.decode}
        kwargs.setdefault("seed", self.seed)
        return DecodeConfig(**kwargs)


def _deep_update(base, update):
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
