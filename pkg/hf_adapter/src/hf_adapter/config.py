"""Adapter configuration.

The adapter talks to the benchmark harness exclusively through files: plain-text
training corpora (one serialized list per line), the dataset JSON, and the
line-delimited prediction interchange format. Checkpoint selection shells out to
the harness CLI evaluator rather than importing its metrics.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path


class AdapterConfigError(ValueError):
    pass


DEFAULT_PHASE_ORDER = ("unordered", "ordered")


@dataclass
class AdapterConfig:
    # "" means a freshly initialized small GPT-2-style model; otherwise a local
    # directory loadable by transformers' from_pretrained.
    base_model: str = ""
    dataset_path: str = ""
    # phase name -> corpus file; trained in phase_order
    corpora: dict[str, str] = field(default_factory=dict)
    phase_order: tuple[str, ...] = DEFAULT_PHASE_ORDER
    beam: int = 5
    max_new_tokens: int = 48
    seed: int = 0
    batch_size: int = 56
    epochs: int = 3
    lr: float = 5e-4
    # architecture of the fresh model when base_model is ""
    n_embd: int = 64
    n_layer: int = 2
    n_head: int = 2
    n_positions: int = 256
    output_dir: str = "adapter_out"
    # command prefix for the harness evaluator CLI
    evaluator: tuple[str, ...] = (sys.executable, "-m", "ccgen.cli")

    def validate(self) -> None:
        if self.beam < 1:
            raise AdapterConfigError(f"beam must be >= 1, got {self.beam}")
        if self.max_new_tokens < 1:
            raise AdapterConfigError("max_new_tokens must be positive")
        if not self.corpora:
            raise AdapterConfigError("no training corpora configured")
        for phase in self.phase_order:
            if phase not in self.corpora:
                raise AdapterConfigError(f"phase {phase!r} has no corpus entry")
            if not Path(self.corpora[phase]).exists():
                raise AdapterConfigError(f"corpus for phase {phase!r} missing: {self.corpora[phase]}")
        if not self.dataset_path or not Path(self.dataset_path).exists():
            raise AdapterConfigError(f"dataset file missing: {self.dataset_path!r}")
        if self.base_model and not Path(self.base_model).exists():
            raise AdapterConfigError(f"base model path missing: {self.base_model}")

    def to_json(self) -> dict:
        return {
            "base_model": self.base_model,
            "dataset_path": self.dataset_path,
            "corpora": dict(self.corpora),
            "phase_order": list(self.phase_order),
            "beam": self.beam,
            "max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr": self.lr,
            "n_embd": self.n_embd,
            "n_layer": self.n_layer,
            "n_head": self.n_head,
            "n_positions": self.n_positions,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AdapterConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise AdapterConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "phase_order" in kwargs:
            kwargs["phase_order"] = tuple(kwargs["phase_order"])
        if "evaluator" in kwargs:
            kwargs["evaluator"] = tuple(kwargs["evaluator"])
        return cls(**kwargs)


def load_config(path) -> AdapterConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise AdapterConfigError(f"config file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise AdapterConfigError(f"config file {path}: expected a JSON object")
    return AdapterConfig.from_json(obj)
