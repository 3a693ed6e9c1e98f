"""Forward-backward CTC: exact loss, logit gradient and forced alignment.

Trellis layout follows Graves et al.: states are the blank-extended label
sequence ``(blank, y1, blank, ..., yL, blank)`` and both ``alpha[s, t]`` and
``beta[s, t]`` include the emission at frame ``t``, so that

    alpha[s, t] + beta[s, t] - log_probs[t, ext[s]]

is the log mass of all valid paths passing through state ``s`` at frame ``t``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .lattice import NEG_INF, LabelSequence, PosteriorLattice, as_log_probs, collapse, extend_with_blanks


class InfeasibleAlignment(ValueError):
    """No CTC path of the lattice's length collapses to the target."""


class PathMismatch(ValueError):
    """A frame path does not collapse to the given label sequence."""


class AlignmentVariant(str, enum.Enum):
    ALL = "all"
    LEFTMOST = "leftmost"
    RIGHTMOST = "rightmost"


@njit(cache=True)
def _lse(a, b):
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return max(a, NEG_INF)
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _forward(lp, ext):
    T = lp.shape[0]
    S = ext.shape[0]
    alpha = np.full((S, T), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[1, 0] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[s, t - 1]
            if s >= 1:
                a = _lse(a, alpha[s - 1, t - 1])
            if s % 2 == 1 and s >= 2 and ext[s] != ext[s - 2]:
                a = _lse(a, alpha[s - 2, t - 1])
            alpha[s, t] = max(a + lp[t, ext[s]], NEG_INF)
    return alpha


@njit(cache=True)
def _backward(lp, ext):
    T = lp.shape[0]
    S = ext.shape[0]
    beta = np.full((S, T), NEG_INF)
    beta[S - 1, T - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        beta[S - 2, T - 1] = lp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[s, t + 1]
            if s + 1 < S:
                b = _lse(b, beta[s + 1, t + 1])
            if s + 2 < S and (s + 2) % 2 == 1 and ext[s + 2] != ext[s]:
                b = _lse(b, beta[s + 2, t + 1])
            beta[s, t] = max(b + lp[t, ext[s]], NEG_INF)
    return beta


@njit(cache=True)
def _occupancy(lp, ext, alpha, beta):
    T, C = lp.shape
    S = ext.shape[0]
    gamma = np.zeros((T, C))
    totals = np.empty(T)
    occ = np.empty(S)
    for t in range(T):
        tot = NEG_INF
        for s in range(S):
            occ[s] = alpha[s, t] + beta[s, t] - lp[t, ext[s]]
            tot = _lse(tot, occ[s])
        totals[t] = tot
        for s in range(S):
            if occ[s] > NEG_INF:
                gamma[t, ext[s]] += np.exp(occ[s] - tot)
    return gamma, totals


@njit(cache=True)
def _viterbi(lp, ext):
    T = lp.shape[0]
    S = ext.shape[0]
    delta = np.full((S, T), NEG_INF)
    back = np.zeros((S, T), dtype=np.int64)
    delta[0, 0] = lp[0, ext[0]]
    if S > 1:
        delta[1, 0] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            # candidates scanned lowest index first; only a strict improvement
            # replaces, so ties resolve to the lower predecessor state
            best = NEG_INF
            arg = s
            if s % 2 == 1 and s >= 2 and ext[s] != ext[s - 2]:
                if delta[s - 2, t - 1] > best:
                    best = delta[s - 2, t - 1]
                    arg = s - 2
            if s >= 1 and delta[s - 1, t - 1] > best:
                best = delta[s - 1, t - 1]
                arg = s - 1
            if delta[s, t - 1] > best:
                best = delta[s, t - 1]
                arg = s
            delta[s, t] = max(best + lp[t, ext[s]], NEG_INF)
            back[s, t] = arg
    s = S - 1
    if S > 1 and delta[S - 2, T - 1] >= delta[S - 1, T - 1]:
        s = S - 2
    score = delta[s, T - 1]
    states = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        states[t] = s
        s = back[s, t]
    return states, score


def _tokens(y: LabelSequence | Sequence[int]) -> tuple[int, ...]:
    return y.tokens if isinstance(y, LabelSequence) else tuple(int(t) for t in y)


def min_frames(y: LabelSequence | Sequence[int]) -> int:
    """Shortest path length able to emit ``y``: L plus one blank per adjacent repeat."""
    toks = _tokens(y)
    return len(toks) + sum(1 for a, b in zip(toks, toks[1:]) if a == b)


def _prepare(lattice, y) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    lp = np.ascontiguousarray(as_log_probs(lattice))
    toks = _tokens(y)
    blank = lp.shape[1] - 1
    if any(not 0 <= t < blank for t in toks):
        raise ValueError(f"label ids must lie in [0, {blank}); got {toks}")
    need = min_frames(toks)
    if lp.shape[0] < need:
        name = getattr(lattice, "utt_id", None) or getattr(y, "utt_id", "")
        raise InfeasibleAlignment(
            f"{name}: {lp.shape[0]} frames cannot emit {len(toks)} labels (need >= {need})"
        )
    ext = np.asarray(extend_with_blanks(toks, blank), dtype=np.int64)
    return lp, ext, toks


@dataclass(frozen=True)
class TrellisMatrices:
    alpha: np.ndarray
    beta: np.ndarray
    ext: np.ndarray
    log_likelihood: float

    def frame_totals(self, lattice: PosteriorLattice | np.ndarray) -> np.ndarray:
        """Per-frame ``log sum_s alpha*beta/y``; every entry equals ``log_likelihood``."""
        lp = as_log_probs(lattice)
        occ = self.alpha + self.beta - lp[:, self.ext].T
        m = occ.max(axis=0)
        return m + np.log(np.exp(occ - m).sum(axis=0))


def trellis(lattice: PosteriorLattice | np.ndarray, y: LabelSequence | Sequence[int]) -> TrellisMatrices:
    lp, ext, _ = _prepare(lattice, y)
    alpha = _forward(lp, ext)
    beta = _backward(lp, ext)
    S = ext.shape[0]
    ll = alpha[S - 1, -1] if S == 1 else _lse(alpha[S - 1, -1], alpha[S - 2, -1])
    if ll <= NEG_INF / 2:
        raise InfeasibleAlignment("every valid path has zero probability")
    return TrellisMatrices(alpha, beta, ext, float(ll))


def ctc_loss(lattice: PosteriorLattice | np.ndarray, y: LabelSequence | Sequence[int]) -> float:
    """Negative log-likelihood ``-log sum_{pi in B^-1(y)} prod_t p(pi_t | X)``."""
    lp, ext, _ = _prepare(lattice, y)
    alpha = _forward(lp, ext)
    S = ext.shape[0]
    ll = alpha[S - 1, -1] if S == 1 else _lse(alpha[S - 1, -1], alpha[S - 2, -1])
    if ll <= NEG_INF / 2:
        raise InfeasibleAlignment("every valid path has zero probability")
    return float(-ll)


def ctc_loss_and_grad(lattice: PosteriorLattice | np.ndarray,
                      y: LabelSequence | Sequence[int]) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the pre-softmax logits that produced ``lattice``.

    ``grad[t, v] = softmax[t, v] - gamma[t, v]`` where ``gamma`` is the state
    occupancy collected per output symbol and renormalised per frame.
    """
    tm = trellis(lattice, y)
    lp = as_log_probs(lattice)
    gamma, _ = _occupancy(np.ascontiguousarray(lp), tm.ext, tm.alpha, tm.beta)
    return -tm.log_likelihood, np.exp(lp) - gamma


def ctc_grad(lattice: PosteriorLattice | np.ndarray, y: LabelSequence | Sequence[int]) -> np.ndarray:
    return ctc_loss_and_grad(lattice, y)[1]


def occupancy(lattice: PosteriorLattice | np.ndarray, y: LabelSequence | Sequence[int]) -> np.ndarray:
    """Per-frame posterior ``gamma[t, v]`` of emitting symbol ``v`` (rows sum to 1)."""
    tm = trellis(lattice, y)
    gamma, _ = _occupancy(np.ascontiguousarray(as_log_probs(lattice)), tm.ext, tm.alpha, tm.beta)
    return gamma


def viterbi(lattice: PosteriorLattice | np.ndarray,
            y: LabelSequence | Sequence[int]) -> tuple[tuple[int, ...], float]:
    """Most probable path in ``B^-1(y)`` and its log-probability.

    Ties between equally scored predecessors go to the lower extended-label
    index, which delays token emission.
    """
    lp, ext, _ = _prepare(lattice, y)
    states, score = _viterbi(lp, ext)
    if score <= NEG_INF / 2:
        raise InfeasibleAlignment("every valid path has zero probability")
    return tuple(int(ext[s]) for s in states), float(score)


def forced_align(lattice: PosteriorLattice | np.ndarray, y: LabelSequence | Sequence[int]) -> tuple[int, ...]:
    return viterbi(lattice, y)[0]


def path_logprob(lattice: PosteriorLattice | np.ndarray, path: Sequence[int]) -> float:
    lp = as_log_probs(lattice)
    return float(sum(lp[t, v] for t, v in enumerate(path)))


def alignment_map(path: Sequence[int], y: LabelSequence | Sequence[int],
                  variant: AlignmentVariant | str = AlignmentVariant.ALL,
                  *, blank_id: int) -> tuple[tuple[int, ...], ...]:
    """Map each token index to the (0-based) frames carrying it in ``path``.

    Blank frames belong to no token. ``LEFTMOST``/``RIGHTMOST`` keep only the
    first/last frame of each token's run.
    """
    variant = AlignmentVariant(variant)
    toks = _tokens(y)
    if collapse(path, blank_id) != toks:
        raise PathMismatch(f"path collapses to {collapse(path, blank_id)}, expected {toks}")
    runs: list[list[int]] = []
    prev = None
    for t, sym in enumerate(path):
        sym = int(sym)
        if sym != blank_id:
            if sym != prev:
                runs.append([])
            runs[-1].append(t)
        prev = sym
    if variant is AlignmentVariant.LEFTMOST:
        return tuple((r[0],) for r in runs)
    if variant is AlignmentVariant.RIGHTMOST:
        return tuple((r[-1],) for r in runs)
    return tuple(tuple(r) for r in runs)


def format_alignment(utt_id: str, amap: Sequence[Sequence[int]]) -> str:
    """Dump line ``utt_id 1:t1,t2 2:...`` with 1-based token and frame indices."""
    groups = [f"{i}:" + ",".join(str(t + 1) for t in frames) for i, frames in enumerate(amap, 1)]
    return " ".join([utt_id, *groups])


def parse_alignment(line: str) -> tuple[str, tuple[tuple[int, ...], ...]]:
    parts = line.split()
    if not parts:
        raise ValueError("empty alignment line")
    amap = []
    for expected, group in enumerate(parts[1:], 1):
        idx, _, frames = group.partition(":")
        if int(idx) != expected or not frames:
            raise ValueError(f"bad alignment group {group!r}")
        amap.append(tuple(int(t) - 1 for t in frames.split(",")))
    return parts[0], tuple(amap)
