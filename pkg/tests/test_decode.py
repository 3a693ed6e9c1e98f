import ast
import io
import math
from pathlib import Path

import numpy as np
import pytest

import ctckd.decode as decode_mod
from ctckd.ctc import ctc_loss
from ctckd.decode import (
    DecodeConfig,
    Hypothesis,
    beam_search,
    greedy_decode,
    oracle_select,
    prefix_beam,
    read_nbest,
    rescore,
    write_nbest,
)
from ctckd.lattice import PosteriorLattice
from ctckd.lm import BigramMaskedLM, NgramTableLM, UniformLM, pseudo_log_likelihood, sequence_logprob, train_ngram

from oracles import levenshtein, path_scores, path_table, random_lattice, sequence_posteriors

A, B, BLANK = 0, 1, 2


def onehot_lattice(path, C, hi=0.9):
    probs = np.full((len(path), C), (1 - hi) / (C - 1))
    for t, s in enumerate(path):
        probs[t, s] = hi
    return PosteriorLattice.from_probs("u", probs)


def test_greedy_examples():
    assert greedy_decode(onehot_lattice((A, A, BLANK, B, B), 3)) == (A, B)
    assert greedy_decode(onehot_lattice((BLANK, BLANK), 3)) == ()


def test_greedy_matches_rowwise_argmax():
    rng = np.random.default_rng(0)
    for _ in range(50):
        lp = random_lattice(rng, int(rng.integers(1, 12)), 4)
        path = [int(np.argmax(r)) for r in lp]
        expected = []
        prev = None
        for s in path:
            if s != 3 and s != prev:
                expected.append(s)
            prev = s
        assert greedy_decode(lp) == tuple(expected)


def test_exhaustive_beam_equals_enumeration_argmax():
    rng = np.random.default_rng(1)
    for _ in range(100):
        T, C = int(rng.integers(1, 7)), int(rng.integers(2, 4))
        lp = random_lattice(rng, T, C, scale=2.0)
        post = sequence_posteriors(lp)
        best = max(post.values())
        winners = {y for y, p in post.items() if p >= best * (1 - 1e-12)}
        hyps = beam_search(lp, DecodeConfig(beam_width=len(post) + 1, nbest=1))
        assert hyps[0].tokens in winners
        assert hyps[0].asr_logprob == pytest.approx(math.log(post[hyps[0].tokens]), abs=1e-9)


def test_prefix_masses_match_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(40):
        T, C = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        lp = random_lattice(rng, T, C)
        blank = C - 1
        paths = path_table(T, C)
        scores = np.exp(path_scores(lp, paths))
        masses = {}
        for row, s in zip(paths, scores):
            y = []
            prev = None
            for sym in row:
                if sym != blank and sym != prev:
                    y.append(int(sym))
                prev = sym
            key = tuple(y)
            pb, pnb = masses.get(key, (0.0, 0.0))
            if row[-1] == blank:
                pb += s
            else:
                pnb += s
            masses[key] = (pb, pnb)
        beams = prefix_beam(lp, DecodeConfig(beam_width=10_000))
        assert set(beams) == set(masses)
        for prefix, (pb, pnb) in beams.items():
            for got, want in ((pb, masses[prefix][0]), (pnb, masses[prefix][1])):
                if want == 0.0:
                    assert got < -1e20
                else:
                    assert got == pytest.approx(math.log(want), abs=1e-9)


def test_zero_fusion_weight_is_bit_identical_to_no_lm():
    rng = np.random.default_rng(3)
    lm = train_ngram([tuple(rng.integers(0, 3, size=6)) for _ in range(20)], 3)
    for _ in range(30):
        lp = random_lattice(rng, int(rng.integers(2, 12)), 4)
        cfg = DecodeConfig(beam_width=4, nbest=4)
        plain = beam_search(lp, cfg)
        fused = beam_search(lp, cfg, lm)
        assert [h.tokens for h in plain] == [h.tokens for h in fused]
        assert [h.asr_logprob for h in plain] == [h.asr_logprob for h in fused]
        assert [h.fused_score for h in plain] == [h.fused_score for h in fused]


def test_hypothesis_score_invariant():
    rng = np.random.default_rng(4)
    lm = train_ngram([tuple(rng.integers(0, 3, size=6)) for _ in range(20)], 3)
    lp = random_lattice(rng, 8, 4)
    cfg = DecodeConfig(beam_width=6, nbest=6, fusion_weight=0.7, length_bonus=0.3)
    hyps = beam_search(lp, cfg, lm)
    assert len({h.tokens for h in hyps}) == len(hyps)
    for h in hyps:
        assert h.lm_logprob == pytest.approx(sequence_logprob(lm, h.tokens), abs=1e-12)
        assert h.fused_score == pytest.approx(h.asr_logprob + 0.7 * h.lm_logprob + 0.3 * len(h.tokens), abs=1e-12)
    assert [h.fused_score for h in hyps] == sorted((h.fused_score for h in hyps), reverse=True)


NOT_MONOTONE = (
    "pruned prefix search can keep a competitor at a wider beam that starves a prefix "
    "feeding the final winner, so neither property holds on every instance"
)


@pytest.mark.xfail(strict=True, reason=NOT_MONOTONE)
def test_beam_not_worse_than_greedy_under_exact_scoring():
    rng = np.random.default_rng(5)
    for _ in range(100):
        lp = random_lattice(rng, int(rng.integers(1, 12)), int(rng.integers(2, 5)))
        top = beam_search(lp, DecodeConfig(beam_width=5, nbest=1))[0]
        greedy = greedy_decode(lp)
        assert -ctc_loss(lp, top.tokens) >= -ctc_loss(lp, greedy) - 1e-12


@pytest.mark.xfail(strict=True, reason=NOT_MONOTONE)
def test_beam_monotone_in_width():
    rng = np.random.default_rng(5)
    for _ in range(2000):
        lp = random_lattice(rng, int(rng.integers(1, 12)), int(rng.integers(2, 5)))
        scores = [beam_search(lp, DecodeConfig(beam_width=b, nbest=1))[0].fused_score for b in (1, 2, 5, 20)]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_beam_width_counterexample():
    # same winning sequence, lower mass at width 2 than at width 1
    probs = np.array([
        [0.024, 0.51, 0.466],
        [0.639, 0.318, 0.043],
        [0.123, 0.556, 0.321],
        [0.152, 0.773, 0.075],
        [0.311, 0.464, 0.225],
        [0.046, 0.197, 0.757],
    ])
    lat = PosteriorLattice.from_probs("u", probs)
    narrow = beam_search(lat, DecodeConfig(beam_width=1, nbest=1))[0]
    wider = beam_search(lat, DecodeConfig(beam_width=2, nbest=1))[0]
    assert narrow.tokens == wider.tokens == (1, 0, 1)
    assert wider.fused_score < narrow.fused_score


def test_beam_usually_beats_greedy():
    rng = np.random.default_rng(6)
    wins = 0
    for _ in range(200):
        lp = random_lattice(rng, int(rng.integers(1, 12)), int(rng.integers(2, 5)))
        top = beam_search(lp, DecodeConfig(beam_width=5, nbest=1))[0]
        wins += -ctc_loss(lp, top.tokens) >= -ctc_loss(lp, greedy_decode(lp)) - 1e-12
    assert wins >= 190


def test_fusion_breaks_acoustic_tie():
    # frame 1 is a or b with equal probability, frame 2 is c; blank is impossible
    lat = PosteriorLattice.from_probs("u", [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    plain = beam_search(lat, DecodeConfig(beam_width=8, nbest=2))
    assert {h.tokens for h in plain} == {(0, 2), (1, 2)}
    assert plain[0].asr_logprob == plain[1].asr_logprob
    a_then_c = train_ngram([(0, 2), (1, 1)], 3, smoothing_k=0.01)
    b_then_c = train_ngram([(1, 2), (0, 0)], 3, smoothing_k=0.01)
    cfg = DecodeConfig(beam_width=8, fusion_weight=10.0, nbest=2)
    assert beam_search(lat, cfg, a_then_c)[0].tokens == (0, 2)
    assert beam_search(lat, cfg, b_then_c)[0].tokens == (1, 2)


def _hyps(*specs):
    return [Hypothesis(tuple(t), a, None, a) for t, a in specs]


def test_rescore_weight_zero_keeps_order():
    hyps = _hyps(((0, 1), -1.0), ((1,), -1.0), ((0,), -2.0), ((2, 2), -2.0))
    out = rescore(hyps, UniformLM(3), 0.0)
    assert [h.tokens for h in out] == [h.tokens for h in hyps]


def test_rescore_prefers_lm_on_asr_tie():
    lm = train_ngram([(0, 1)] * 5 + [(1, 0)], 2, smoothing_k=0.1)
    hyps = _hyps(((1, 0), -3.0), ((0, 1), -3.0))
    for w in (0.01, 1.0, 10.0):
        assert rescore(hyps, lm, w)[0].tokens == (0, 1)


def test_rescore_matches_direct_scores():
    rng = np.random.default_rng(7)
    lm = train_ngram([tuple(rng.integers(0, 4, size=6)) for _ in range(30)], 4)
    masked = BigramMaskedLM(lm)
    hyps = _hyps(*[(tuple(int(v) for v in rng.integers(0, 4, size=rng.integers(1, 6))), float(rng.normal()))
                   for _ in range(8)])
    for scorer, fn in ((lm, sequence_logprob), (masked, pseudo_log_likelihood)):
        out = rescore(hyps, scorer, 0.4)
        expected = sorted((h.asr_logprob + 0.4 * fn(scorer, h.tokens) for h in hyps), reverse=True)
        assert [h.fused_score for h in out] == pytest.approx(expected, abs=1e-12)


def test_rescore_empty_rejected():
    with pytest.raises(ValueError):
        rescore([], UniformLM(2), 1.0)
    with pytest.raises(ValueError):
        oracle_select([], (0,))


def test_oracle_select():
    hyps = _hyps(((0, 1, 2), -1.0), ((0, 2), -2.0), ((1, 1), -0.5))
    assert oracle_select(hyps, (0, 2)).tokens == (0, 2)
    assert oracle_select(hyps[:1], (2, 2, 2, 2)) is hyps[0]
    tie = _hyps(((0,), -3.0), ((1,), -1.0))
    assert oracle_select(tie, (2,)).tokens == (1,)


def test_oracle_select_matches_exhaustive_min():
    rng = np.random.default_rng(8)
    for _ in range(50):
        hyps = _hyps(*[(tuple(int(v) for v in rng.integers(0, 3, size=rng.integers(0, 5))), float(rng.normal()))
                       for _ in range(int(rng.integers(1, 6)))])
        ref = tuple(int(v) for v in rng.integers(0, 3, size=rng.integers(0, 5)))
        got = oracle_select(hyps, ref)
        assert levenshtein(got.tokens, ref) == min(levenshtein(h.tokens, ref) for h in hyps)


def test_nbest_roundtrip():
    rng = np.random.default_rng(9)
    hyps = beam_search(random_lattice(rng, 6, 3), DecodeConfig(beam_width=3, nbest=3),
                       train_ngram([(0, 1, 0)], 2))
    buf = io.StringIO()
    write_nbest(buf, "u9", hyps)
    assert read_nbest(io.StringIO(buf.getvalue())) == {"u9": hyps}
    first = buf.getvalue().splitlines()[0]
    assert first.startswith('{"utt_id": "u9", "rank": 1, "tokens": [')


def test_config_validation():
    for bad in (dict(beam_width=0), dict(fusion_weight=-1.0), dict(nbest=0), dict(nbest=1001)):
        with pytest.raises(ValueError):
            DecodeConfig(**bad)


def test_decode_module_does_not_import_distillation():
    tree = ast.parse(Path(decode_mod.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    assert not any("distill" in m or "trainer" in m for m in imported)
    # nor do the modules decode itself pulls in
    for dep in ("lattice", "lm", "metrics"):
        tree = ast.parse(Path(decode_mod.__file__).with_name(dep + ".py").read_text())
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom):
                assert "distill" not in (node.module or "") and "trainer" not in (node.module or "")
