"""Edit distance, token error rate and pseudo-perplexity."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

from .lattice import LabelSequence
from .lm import MaskedScorer, pseudo_log_likelihood


class EditCounts(NamedTuple):
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def _seq(y) -> tuple:
    return y.tokens if isinstance(y, LabelSequence) else tuple(y)


def edit_distance(hyp: LabelSequence | Sequence, ref: LabelSequence | Sequence) -> EditCounts:
    """Unit-cost Levenshtein distance with an S/I/D breakdown.

    The backtrace prefers substitution (or match), then insertion, then
    deletion when several moves are optimal.
    """
    hyp, ref = _seq(hyp), _seq(ref)
    n, m = len(hyp), len(ref)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j - 1] + (hyp[i - 1] != ref[j - 1]), d[i - 1][j] + 1, d[i][j - 1] + 1)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (hyp[i - 1] != ref[j - 1]):
            s += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            ins += 1
            i -= 1
        else:
            dels += 1
            j -= 1
    return EditCounts(d[n][m], s, ins, dels)


def pseudo_ppl(scorer: MaskedScorer, y: LabelSequence | Sequence[int],
               pre: Sequence[int] = (), suc: Sequence[int] = ()) -> float:
    """Mean over positions of ``-log p(y_i | y with position i masked)``.

    This is the average negative log-likelihood itself; it is not exponentiated.
    """
    toks = _seq(y)
    if not toks:
        raise ValueError("pseudo-perplexity of an empty sequence is undefined")
    return -pseudo_log_likelihood(scorer, toks, pre, suc) / len(toks)


@dataclass
class EvalReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int
    wer: float
    ppl: float | None
    utterance_count: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        ppl = "-" if self.ppl is None else f"{self.ppl:.4f}"
        rows = [
            ("utterances", str(self.utterance_count)),
            ("ref tokens", str(self.reference_length)),
            ("sub/ins/del", f"{self.substitutions}/{self.insertions}/{self.deletions}"),
            ("TER %", f"{100 * self.wer:.2f}"),
            ("pseudo-PPL", ppl),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def corpus_pseudo_ppl(scorer: MaskedScorer, hyps: Sequence[LabelSequence | Sequence[int]]) -> float:
    """Length-weighted pseudo-PPL over a set of hypotheses; empty ones contribute nothing."""
    nll = 0.0
    count = 0
    for h in hyps:
        toks = _seq(h)
        if toks:
            nll -= pseudo_log_likelihood(scorer, toks)
            count += len(toks)
    return nll / count if count else math.nan


def evaluate(hyps: Sequence[LabelSequence | Sequence[int]], refs: Sequence[LabelSequence | Sequence[int]],
             scorer: MaskedScorer | None = None) -> EvalReport:
    """Corpus token error rate ``sum(S+I+D) / sum(len(ref))`` and optional pseudo-PPL of ``hyps``."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    s = i = d = n = 0
    for h, r in zip(hyps, refs):
        c = edit_distance(h, r)
        s, i, d = s + c.substitutions, i + c.insertions, d + c.deletions
        n += len(_seq(r))
    wer = (s + i + d) / n if n else (0.0 if s + i + d == 0 else math.inf)
    ppl = corpus_pseudo_ppl(scorer, hyps) if scorer is not None else None
    return EvalReport(s, i, d, n, wer, ppl, len(refs))
