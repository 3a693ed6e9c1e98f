"""Count-based language models used as teachers, fusion scorers and rescorers.

Two scoring interfaces are supported:

``CausalScorer``
    ``score_next(context)`` returns log p(v | context) over the V tokens.
``MaskedScorer``
    ``score_masked(sequence, position, left_context, right_context)`` returns
    log p(v | everything but ``sequence[position]``).

The built-in bigram tables implement both exactly, which keeps every soft
label recomputable by hand. Rows of the conditional table are indexed by the
previous token; the extra row ``V`` is the "no context" sentinel and holds the
smoothed unigram distribution.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .lattice import LabelSequence, log_softmax, safe_log

FORMAT_VERSION = 1


class EmptyCorpus(ValueError):
    pass


@runtime_checkable
class CausalScorer(Protocol):
    vocab_size: int

    def score_next(self, context: Sequence[int]) -> np.ndarray: ...


@runtime_checkable
class MaskedScorer(Protocol):
    vocab_size: int

    def score_masked(self, sequence: Sequence[int], position: int,
                     left_context: Sequence[int] = (), right_context: Sequence[int] = ()) -> np.ndarray: ...


def _seq(y: LabelSequence | Sequence[int]) -> tuple[int, ...]:
    return y.tokens if isinstance(y, LabelSequence) else tuple(int(t) for t in y)


@dataclass(frozen=True, eq=False)
class NgramTableLM:
    """Add-k smoothed bigram model.

    ``p(v | u) = (c(u, v) + k) / (c(u) + k V)`` where ``c(u)`` counts ``u`` as a
    bigram context. The first token of a sequence is scored by the smoothed
    unigram ``(c(v) + k) / (N + k V)``.
    """

    unigram_counts: np.ndarray
    bigram_counts: np.ndarray
    smoothing_k: float = 0.1
    order: int = 2

    def __post_init__(self):
        V = self.unigram_counts.shape[0]
        if self.bigram_counts.shape != (V, V):
            raise ValueError("bigram table must be V x V")
        if self.order != 2:
            raise ValueError("only bigram tables are supported")
        k = float(self.smoothing_k)
        if k < 0:
            raise ValueError("smoothing_k must be non-negative")
        table = np.empty((V + 1, V))
        with np.errstate(invalid="ignore", divide="ignore"):
            ctx = self.bigram_counts.sum(axis=1, keepdims=True)
            table[:V] = (self.bigram_counts + k) / (ctx + k * V)
            table[V] = (self.unigram_counts + k) / (self.unigram_counts.sum() + k * V)
        # unseen context with k = 0 backs off to the unigram row
        unseen = ~np.isfinite(table[:V]).all(axis=1)
        table[:V][unseen] = table[V]
        table.setflags(write=False)
        object.__setattr__(self, "probs", table)
        object.__setattr__(self, "log_probs", safe_log(table))

    @property
    def vocab_size(self) -> int:
        return self.unigram_counts.shape[0]

    @property
    def sentinel(self) -> int:
        return self.vocab_size

    def cond(self, prev: int | None) -> np.ndarray:
        """Probability vector ``p(. | prev)``; ``None`` selects the unigram row."""
        return self.probs[self.sentinel if prev is None else prev]

    def score_next(self, context: Sequence[int]) -> np.ndarray:
        return self.log_probs[context[-1] if len(context) else self.sentinel]

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "vocab_size": self.vocab_size,
            "order": self.order,
            "smoothing_k": self.smoothing_k,
            "unigram_counts": self.unigram_counts.tolist(),
            "bigram_counts": self.bigram_counts.tolist(),
        }

    def save(self, path: str | Path, vocab: Sequence[str] | None = None) -> None:
        data = self.to_json()
        if vocab is not None:
            data["vocab"] = list(vocab)
        Path(path).write_text(json.dumps(data) + "\n")

    @classmethod
    def from_json(cls, data: dict) -> "NgramTableLM":
        if data.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported LM table format {data.get('format')!r}")
        uni = np.asarray(data["unigram_counts"], dtype=np.float64)
        big = np.asarray(data["bigram_counts"], dtype=np.float64)
        if uni.shape[0] != data["vocab_size"]:
            raise ValueError("vocab_size does not match count tables")
        return cls(uni, big, float(data["smoothing_k"]), int(data["order"]))

    @classmethod
    def load(cls, path: str | Path) -> "NgramTableLM":
        return cls.from_json(json.loads(Path(path).read_text()))


def train_ngram(corpus: Iterable[LabelSequence | Sequence[int]], vocab_size: int,
                smoothing_k: float = 0.1) -> NgramTableLM:
    uni = np.zeros(vocab_size)
    big = np.zeros((vocab_size, vocab_size))
    n = 0
    for y in corpus:
        toks = np.asarray(_seq(y), dtype=np.int64)
        n += 1
        if toks.size == 0:
            continue
        if toks.min() < 0 or toks.max() >= vocab_size:
            raise ValueError(f"token id outside [0, {vocab_size})")
        np.add.at(uni, toks, 1)
        np.add.at(big, (toks[:-1], toks[1:]), 1)
    if n == 0 or uni.sum() == 0:
        raise EmptyCorpus("cannot train a language model on an empty corpus")
    return NgramTableLM(uni, big, smoothing_k)


class BigramMaskedLM:
    """Masked predictor built from bigram tables.

    ``p(v | l, r) ∝ p(v | l) p(r | v)``; a missing left neighbour uses the
    unigram ``p(v)``, a missing right neighbour drops the second factor.
    """

    def __init__(self, lm: NgramTableLM):
        self.lm = lm

    @property
    def vocab_size(self) -> int:
        return self.lm.vocab_size

    def predict(self, left: int | None, right: int | None) -> np.ndarray:
        p = self.lm.cond(left).copy()
        if right is not None:
            p = p * self.lm.probs[: self.vocab_size, right]
        z = p.sum()
        if z <= 0.0:
            # k = 0 and no token bridges left -> right
            p, z = self.lm.cond(left).copy(), 1.0
        return safe_log(p / z)

    def score_masked(self, sequence: Sequence[int], position: int,
                     left_context: Sequence[int] = (), right_context: Sequence[int] = ()) -> np.ndarray:
        sequence = _seq(sequence)
        if not 0 <= position < len(sequence):
            raise IndexError(f"position {position} outside sequence of length {len(sequence)}")
        if position > 0:
            left = sequence[position - 1]
        else:
            left = left_context[-1] if len(left_context) else None
        if position < len(sequence) - 1:
            right = sequence[position + 1]
        else:
            right = right_context[0] if len(right_context) else None
        return self.predict(left, right)


class CausalAsMasked:
    """Expose a causal LM through the masked interface using left context only.

    Lets a unidirectional LM stand in as the distillation teacher.
    """

    def __init__(self, lm: CausalScorer):
        self.lm = lm

    @property
    def vocab_size(self) -> int:
        return self.lm.vocab_size

    def score_masked(self, sequence, position, left_context=(), right_context=()):
        sequence = _seq(sequence)
        return self.lm.score_next(tuple(left_context) + tuple(sequence[:position]))


class UniformLM:
    """Uniform distribution over V tokens; satisfies both interfaces."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -np.log(vocab_size))

    def score_next(self, context):
        return self._row

    def score_masked(self, sequence, position, left_context=(), right_context=()):
        return self._row


class TableMaskedScorer:
    """Masked scorer backed by an explicit ``(L, V)`` logit table; for tests and plug-ins."""

    def __init__(self, logits: np.ndarray):
        self.log_probs = log_softmax(np.asarray(logits, dtype=np.float64))
        self.vocab_size = self.log_probs.shape[1]

    def score_masked(self, sequence, position, left_context=(), right_context=()):
        return self.log_probs[position]


def masked_predict(lm: MaskedScorer, y: LabelSequence | Sequence[int], i: int,
                   pre: Sequence[int] = (), suc: Sequence[int] = ()) -> np.ndarray:
    """Log distribution of the 0-based position ``i`` with that token masked.

    ``pre``/``suc`` are tokens of the neighbouring utterances concatenated
    around ``y``.
    """
    toks = _seq(y)
    if not 0 <= i < len(toks):
        raise IndexError(f"position {i} outside sequence of length {len(toks)}")
    return lm.score_masked(toks, i, tuple(pre), tuple(suc))


def sequence_logprob(lm: CausalScorer, y: LabelSequence | Sequence[int]) -> float:
    """``sum_i log p(y_i | y_<i)``; the first token is scored with empty context."""
    toks = _seq(y)
    return float(sum(lm.score_next(toks[:i])[tok] for i, tok in enumerate(toks)))


def pseudo_log_likelihood(lm: MaskedScorer, y: LabelSequence | Sequence[int],
                          pre: Sequence[int] = (), suc: Sequence[int] = ()) -> float:
    """``sum_i log p(y_i | y with position i masked)``."""
    toks = _seq(y)
    return float(sum(lm.score_masked(toks, i, tuple(pre), tuple(suc))[tok] for i, tok in enumerate(toks)))
