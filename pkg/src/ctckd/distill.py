"""Token-to-frame knowledge distillation for CTC.

Teacher distributions are defined per target token; the forced-alignment
path decides which frames each token's distribution supervises.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .ctc import AlignmentVariant, alignment_map, ctc_loss_and_grad, forced_align
from .lattice import LabelSequence, PosteriorLattice, as_log_probs
from .lm import MaskedScorer

TEACHERS = ("masked", "causal", "onehot")


class IndexMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    K: int = 8
    temperature: float = 3.0
    alpha: float = 0.5
    variant: AlignmentVariant = AlignmentVariant.ALL
    teacher: str = "masked"

    def __post_init__(self):
        object.__setattr__(self, "variant", AlignmentVariant(self.variant))
        if self.K < 1:
            raise ValueError("K must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.teacher not in TEACHERS:
            raise ValueError(f"teacher must be one of {TEACHERS}")


@dataclass(frozen=True)
class SoftLabelSet:
    """Sparse teacher distributions, one ``((token, prob), ...)`` tuple per position."""

    utt_id: str
    positions: tuple[tuple[tuple[int, float], ...], ...]

    def __len__(self) -> int:
        return len(self.positions)

    def dense(self, vocab_size: int) -> np.ndarray:
        """``(L, V + 1)`` matrix with zero mass on every other column, blank included."""
        out = np.zeros((len(self.positions), vocab_size + 1))
        for i, pos in enumerate(self.positions):
            for tok, p in pos:
                out[i, tok] = p
        return out

    def to_json(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "positions": [[[int(t), float(f"{p:.12g}")] for t, p in pos] for pos in self.positions],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SoftLabelSet":
        return cls(data["utt_id"], tuple(tuple((int(t), float(p)) for t, p in pos) for pos in data["positions"]))


def smooth_top_k(log_probs: np.ndarray, K: int, temperature: float) -> tuple[tuple[int, float], ...]:
    """Keep the K most probable tokens, renormalise, sharpen/flatten by ``p ** (1/T)``, renormalise.

    Ties in probability go to the lower token id. Zero-probability entries are dropped.
    """
    p = np.exp(np.asarray(log_probs, dtype=np.float64))
    order = np.argsort(-p, kind="stable")[:K]
    top = p[order]
    top = top / top.sum()
    with np.errstate(divide="ignore"):
        q = np.exp(np.log(top) / temperature)
    q = q / q.sum()
    return tuple((int(v), float(w)) for v, w in zip(order, q) if w > 0.0)


def make_soft_labels(teacher: MaskedScorer, y: LabelSequence, pre: Sequence[int] = (),
                     suc: Sequence[int] = (), cfg: DistillConfig = DistillConfig()) -> SoftLabelSet:
    if cfg.K > teacher.vocab_size:
        raise ValueError(f"K={cfg.K} exceeds vocabulary size {teacher.vocab_size}")
    positions = tuple(
        smooth_top_k(teacher.score_masked(y.tokens, i, tuple(pre), tuple(suc)), cfg.K, cfg.temperature)
        for i in range(len(y.tokens))
    )
    return SoftLabelSet(y.utt_id, positions)


def one_hot_labels(y: LabelSequence) -> SoftLabelSet:
    return SoftLabelSet(y.utt_id, tuple(((int(t), 1.0),) for t in y.tokens))


def _check(lp: np.ndarray, labels: SoftLabelSet, amap: Sequence[Sequence[int]]) -> int:
    if len(labels.positions) != len(amap):
        raise IndexMismatch(f"{len(labels.positions)} soft-label positions but {len(amap)} aligned tokens")
    T = lp.shape[0]
    n = 0
    for frames in amap:
        for t in frames:
            if not 0 <= t < T:
                raise IndexMismatch(f"frame {t} outside lattice of {T} frames")
        n += len(frames)
    if n == 0:
        raise IndexMismatch("alignment covers no frames")
    return n


def kd_loss(lattice: PosteriorLattice | np.ndarray, labels: SoftLabelSet,
            amap: Sequence[Sequence[int]]) -> float:
    """Frame-averaged cross-entropy between aligned frame posteriors and token soft labels."""
    lp = as_log_probs(lattice)
    n = _check(lp, labels, amap)
    total = 0.0
    for pos, frames in zip(labels.positions, amap):
        if not pos:
            continue
        toks = np.fromiter((t for t, _ in pos), dtype=np.int64, count=len(pos))
        w = np.fromiter((p for _, p in pos), dtype=np.float64, count=len(pos))
        for t in frames:
            total -= float(w @ lp[t, toks])
    return total / n


def kd_grad(lattice: PosteriorLattice | np.ndarray, labels: SoftLabelSet,
            amap: Sequence[Sequence[int]]) -> np.ndarray:
    """Gradient of :func:`kd_loss` w.r.t. the logits behind ``lattice``.

    Aligned rows get ``(softmax - teacher) / N``; every other row is zero.
    """
    lp = as_log_probs(lattice)
    n = _check(lp, labels, amap)
    grad = np.zeros_like(lp)
    for pos, frames in zip(labels.positions, amap):
        mass = sum(p for _, p in pos)
        for t in frames:
            grad[t] = np.exp(lp[t]) * mass
            for tok, p in pos:
                grad[t, tok] -= p
    return grad / n


def combined_loss(lattice: PosteriorLattice | np.ndarray, y: LabelSequence, labels: SoftLabelSet | None,
                  cfg: DistillConfig, amap: Sequence[Sequence[int]] | None = None
                  ) -> tuple[float, np.ndarray]:
    """``(1 - alpha) * CTC + alpha * KD`` and its logit gradient.

    The alignment is recomputed from ``lattice`` unless ``amap`` is given.
    ``alpha == 0`` and ``alpha == 1`` return the pure terms untouched.
    """
    lp = as_log_probs(lattice)
    alpha = cfg.alpha
    if alpha == 0.0:
        return ctc_loss_and_grad(lp, y)
    if labels is None:
        raise ValueError("soft labels are required when alpha > 0")
    if amap is None:
        path = forced_align(lp, y)
        amap = alignment_map(path, y, cfg.variant, blank_id=lp.shape[1] - 1)
    kd_l = kd_loss(lp, labels, amap)
    kd_g = kd_grad(lp, labels, amap)
    if alpha == 1.0:
        return kd_l, kd_g
    ctc_l, ctc_g = ctc_loss_and_grad(lp, y)
    return (1.0 - alpha) * ctc_l + alpha * kd_l, (1.0 - alpha) * ctc_g + alpha * kd_g


# ---------------------------------------------------------------------------
# soft-label files: JSON lines {"utt_id": ..., "positions": [[[tok, p], ...], ...]}

def write_soft_labels(sets: Iterable[SoftLabelSet], fh: IO[str]) -> None:
    for s in sets:
        fh.write(json.dumps(s.to_json()) + "\n")


def iter_soft_labels(fh: IO[str]) -> Iterator[SoftLabelSet]:
    for line in fh:
        if line.strip():
            yield SoftLabelSet.from_json(json.loads(line))


def save_soft_labels(sets: Iterable[SoftLabelSet], path: str | Path) -> None:
    with open(path, "w") as fh:
        write_soft_labels(sets, fh)


def load_soft_labels(path: str | Path) -> dict[str, SoftLabelSet]:
    with open(path) as fh:
        return {s.utt_id: s for s in iter_soft_labels(fh)}
