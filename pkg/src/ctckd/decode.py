"""Greedy and prefix beam-search decoding, shallow fusion, n-best rescoring and oracle selection.

Nothing here depends on the distillation module: a model trained with or
without distillation is decoded by exactly the same code.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .lattice import NEG_INF, PosteriorLattice, as_log_probs, log_add
from .lm import CausalScorer, MaskedScorer, pseudo_log_likelihood, sequence_logprob
from .metrics import edit_distance

MAX_NBEST = 1000
_DEAD = NEG_INF / 2


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 5
    fusion_weight: float = 0.0
    nbest: int = 5
    length_bonus: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.fusion_weight < 0:
            raise ValueError("fusion_weight must be >= 0")
        if not 1 <= self.nbest <= MAX_NBEST:
            raise ValueError(f"nbest must lie in [1, {MAX_NBEST}]")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    asr_logprob: float
    lm_logprob: float | None
    fused_score: float

    def to_json(self, utt_id: str, rank: int) -> dict:
        return {
            "utt_id": utt_id,
            "rank": rank,
            "tokens": list(self.tokens),
            "asr_logprob": self.asr_logprob,
            "lm_logprob": self.lm_logprob,
            "fused_score": self.fused_score,
        }


def greedy_decode(lattice: PosteriorLattice | np.ndarray) -> tuple[int, ...]:
    # vectorised collapse: the work done does not depend on what is decoded
    lp = as_log_probs(lattice)
    best = lp.argmax(axis=1)
    keep = (best != lp.shape[1] - 1) & np.concatenate(([True], best[1:] != best[:-1]))
    return tuple(best[keep].tolist())


def prefix_beam(lattice: PosteriorLattice | np.ndarray, cfg: DecodeConfig,
                lm: CausalScorer | None = None) -> dict[tuple[int, ...], tuple[float, float]]:
    """Run CTC prefix beam search; return ``prefix -> (log p_blank, log p_nonblank)``.

    ``p_blank``/``p_nonblank`` are the masses of surviving frame paths that
    collapse to the prefix and end in blank / in its last token. Pruning ranks
    prefixes by acoustic score plus ``fusion_weight`` times the LM log-prob of
    the prefix (added once per emitted token) plus ``length_bonus`` per token.
    """
    lp = as_log_probs(lattice)
    T, C = lp.shape
    blank = C - 1
    lm_scores: dict[tuple[int, ...], float] = {(): 0.0}
    beams: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, NEG_INF)}

    def lm_score(prefix):
        if prefix not in lm_scores:
            parent = prefix[:-1]
            lm_scores[prefix] = lm_score(parent) + float(lm.score_next(parent)[prefix[-1]])
        return lm_scores[prefix]

    def rank_key(item):
        prefix, (pb, pnb) = item
        return (-_fused(log_add(pb, pnb), lm_score(prefix) if lm is not None else None, len(prefix), cfg), prefix)

    for t in range(T):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            e = nxt.get(prefix)
            if e is None:
                e = nxt[prefix] = [NEG_INF, NEG_INF]
            return e

        for prefix, (pb, pnb) in beams.items():
            total = log_add(pb, pnb)
            e = slot(prefix)
            e[0] = log_add(e[0], total + row[blank])
            last = prefix[-1] if prefix else None
            for v in range(blank):
                p = row[v]
                ext = slot(prefix + (v,))
                if v == last:
                    e[1] = log_add(e[1], pnb + p)
                    ext[1] = log_add(ext[1], pb + p)
                else:
                    ext[1] = log_add(ext[1], total + p)
        # extending a repeat from a prefix with no blank-ending mass yields nothing
        live = [(k, (v[0], v[1])) for k, v in nxt.items() if max(v) > _DEAD]
        ranked = sorted(live or [(k, (v[0], v[1])) for k, v in nxt.items()], key=rank_key)
        beams = dict(ranked[: cfg.beam_width])
    return beams


def _fused(asr: float, lm: float | None, length: int, cfg: DecodeConfig) -> float:
    score = asr
    if lm is not None:
        score = score + cfg.fusion_weight * lm
    return score + cfg.length_bonus * length


def beam_search(lattice: PosteriorLattice | np.ndarray, cfg: DecodeConfig = DecodeConfig(),
                lm: CausalScorer | None = None) -> list[Hypothesis]:
    """Prefix beam search with optional shallow fusion; returns up to ``cfg.nbest`` ranked hypotheses."""
    beams = prefix_beam(lattice, cfg, lm)
    hyps = []
    for prefix, (pb, pnb) in beams.items():
        asr = log_add(pb, pnb)
        lm_lp = sequence_logprob(lm, prefix) if lm is not None else None
        hyps.append(Hypothesis(prefix, asr, lm_lp, _fused(asr, lm_lp, len(prefix), cfg)))
    hyps.sort(key=lambda h: (-h.fused_score, h.tokens))
    return hyps[: cfg.nbest]


def lm_sequence_score(scorer: CausalScorer | MaskedScorer, tokens: Sequence[int]) -> float:
    """Causal log-likelihood, or pseudo-log-likelihood for masked scorers."""
    if isinstance(scorer, MaskedScorer):
        return pseudo_log_likelihood(scorer, tokens)
    return sequence_logprob(scorer, tokens)


def rescore(nbest: Sequence[Hypothesis], scorer: CausalScorer | MaskedScorer,
            weight: float) -> list[Hypothesis]:
    """Re-rank by ``asr_logprob + weight * LM score`` (stable for equal scores)."""
    if not nbest:
        raise ValueError("cannot rescore an empty n-best list")
    out = []
    for h in nbest:
        lm_lp = lm_sequence_score(scorer, h.tokens)
        out.append(Hypothesis(h.tokens, h.asr_logprob, lm_lp, h.asr_logprob + weight * lm_lp))
    return sorted(out, key=lambda h: -h.fused_score)


def oracle_select(nbest: Sequence[Hypothesis], ref: Sequence[int]) -> Hypothesis:
    """Hypothesis closest to ``ref`` in edit distance; ties go to higher ``asr_logprob``, then rank."""
    if not nbest:
        raise ValueError("cannot select from an empty n-best list")
    ref = tuple(getattr(ref, "tokens", ref))
    best = min(range(len(nbest)),
               key=lambda i: (edit_distance(nbest[i].tokens, ref).distance, -nbest[i].asr_logprob, i))
    return nbest[best]


def write_nbest(fh: IO[str], utt_id: str, hyps: Sequence[Hypothesis]) -> None:
    for rank, h in enumerate(hyps, 1):
        fh.write(json.dumps(h.to_json(utt_id, rank)) + "\n")


def read_nbest(fh: IO[str]) -> dict[str, list[Hypothesis]]:
    out: dict[str, list[Hypothesis]] = {}
    for line in fh:
        if not line.strip():
            continue
        d = json.loads(line)
        out.setdefault(d["utt_id"], []).append(
            Hypothesis(tuple(d["tokens"]), d["asr_logprob"], d["lm_logprob"], d["fused_score"]))
    return out
