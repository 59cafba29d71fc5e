"""Textual checkpoints: JSON header plus decimal parameters (bit-exact via repr)."""

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from dpcert.errors import DataError
from dpcert.nn import MlpModel

FORMAT_VERSION = 1


def atomic_write(path, text):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Checkpoint:
    model: MlpModel
    config: dict                 # serialized experiment config echo
    epsilon: float
    delta: float
    noise_multiplier: float
    steps: int
    seed: int
    best_order: Optional[float] = None

    def to_json(self):
        m = self.model
        doc = {
            "format_version": FORMAT_VERSION,
            "model": {
                "input_dim": m.input_dim,
                "hidden": list(m.hidden_widths),
                "classes": m.class_count,
                "activation": m.activation,
            },
            # float repr is the shortest string that round-trips exactly
            "params": [float(v) for v in m.flat()],
            "config": self.config,
            "accountant": {
                "epsilon": self.epsilon if np.isfinite(self.epsilon) else None,
                "delta": self.delta,
                "best_order": self.best_order,
                "noise_multiplier": self.noise_multiplier,
                "steps": self.steps,
            },
            "seed": self.seed,
        }
        return json.dumps(doc, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text, source="<checkpoint>"):
        try:
            doc = json.loads(text)
            if doc.get("format_version") != FORMAT_VERSION:
                raise DataError(f"{source}: unsupported format_version {doc.get('format_version')!r}")
            spec = doc["model"]
            shell = MlpModel.init(spec["input_dim"], tuple(spec["hidden"]), spec["classes"],
                                  spec["activation"], rng=np.random.default_rng(0))
            theta = np.array(doc["params"], dtype=np.float64)
            if theta.shape != (shell.n_params,):
                raise DataError(f"{source}: expected {shell.n_params} parameters, found {theta.size}")
            acc = doc["accountant"]
            eps = acc["epsilon"]
            return cls(
                model=shell.with_flat(theta),
                config=doc["config"],
                epsilon=float("inf") if eps is None else eps,
                delta=acc["delta"],
                noise_multiplier=acc["noise_multiplier"],
                steps=acc["steps"],
                seed=doc["seed"],
                best_order=acc["best_order"],
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{source}: malformed checkpoint ({exc!r})") from None


def save(ckpt, path):
    atomic_write(path, ckpt.to_json())


def load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return Checkpoint.from_json(text, str(path))
