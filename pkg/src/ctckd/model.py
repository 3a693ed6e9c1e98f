"""One-hidden-layer frame classifier with spliced context and hand-written backprop."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .lattice import log_softmax

MAGIC = b"CTKDNN"
VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")


def splice(features: np.ndarray, radius: int) -> np.ndarray:
    """Stack each frame with ``radius`` neighbours on each side (zero padded)."""
    T, D = features.shape
    padded = np.zeros((T + 2 * radius, D))
    padded[radius:radius + T] = features
    return np.hstack([padded[k:k + T] for k in range(2 * radius + 1)])


class TinyEncoder:
    """``logits = W2 tanh(W1 splice(x) + b1) + b2`` with ``V + 1`` outputs (blank last)."""

    def __init__(self, feature_dim: int, vocab_size: int, hidden: int = 64, context_radius: int = 1,
                 seed: int = 0):
        self.feature_dim = feature_dim
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.context_radius = context_radius
        rng = np.random.default_rng(seed)
        d_in = feature_dim * (2 * context_radius + 1)
        self.params = {
            "W1": rng.normal(scale=1.0 / np.sqrt(d_in), size=(hidden, d_in)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(scale=1.0 / np.sqrt(hidden), size=(vocab_size + 1, hidden)),
            "b2": np.zeros(vocab_size + 1),
        }

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, tuple]:
        x = splice(np.asarray(features, dtype=np.float64), self.context_radius)
        h = np.tanh(x @ self.params["W1"].T + self.params["b1"])
        logits = h @ self.params["W2"].T + self.params["b2"]
        return logits, (x, h)

    def backward(self, dlogits: np.ndarray, cache: tuple) -> dict[str, np.ndarray]:
        x, h = cache
        dh = (dlogits @ self.params["W2"]) * (1.0 - h * h)
        return {
            "W1": dh.T @ x,
            "b1": dh.sum(axis=0),
            "W2": dlogits.T @ h,
            "b2": dlogits.sum(axis=0),
        }

    def log_posteriors(self, features: np.ndarray) -> np.ndarray:
        return log_softmax(self.forward(features)[0])

    def copy(self) -> "TinyEncoder":
        other = TinyEncoder.__new__(TinyEncoder)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # checkpoint: magic, version, feature_dim, vocab_size, hidden, radius, then each
    # array as ndim, shape..., little-endian float64 data
    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<5I", VERSION, self.feature_dim, self.vocab_size, self.hidden,
                                 self.context_radius))
            for name in PARAM_NAMES:
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "TinyEncoder":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path}: not a model checkpoint")
        pos = len(MAGIC)
        version, feature_dim, vocab_size, hidden, radius = struct.unpack_from("<5I", data, pos)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        pos += 20
        model = cls.__new__(cls)
        model.feature_dim, model.vocab_size = feature_dim, vocab_size
        model.hidden, model.context_radius = hidden, radius
        model.params = {}
        for name in PARAM_NAMES:
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape))
            model.params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
        return model
