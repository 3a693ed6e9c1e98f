import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctckd.lattice import LabelSequence
from ctckd.lm import (
    BigramMaskedLM,
    CausalAsMasked,
    CausalScorer,
    EmptyCorpus,
    MaskedScorer,
    NgramTableLM,
    UniformLM,
    masked_predict,
    sequence_logprob,
    train_ngram,
)

A, B, C, D = 0, 1, 2, 3


def seqs(*token_lists):
    return [LabelSequence(f"u{i}", t) for i, t in enumerate(token_lists)]


def test_bigram_closed_form_examples():
    lm = train_ngram(seqs((A, B), (A, B)), vocab_size=3, smoothing_k=0.0)
    assert lm.cond(A)[B] == 1.0
    lm = train_ngram(seqs((A, B), (A, C)), vocab_size=3, smoothing_k=0.0)
    assert lm.cond(A)[B] == 0.5


def _recount(corpus, V, k):
    """Independent count-based reference for p(v | u) and the unigram."""
    big = {}
    ctx = {}
    uni = {}
    n = 0
    for y in corpus:
        for tok in y:
            uni[tok] = uni.get(tok, 0) + 1
            n += 1
        for u, v in zip(y, y[1:]):
            big[(u, v)] = big.get((u, v), 0) + 1
            ctx[u] = ctx.get(u, 0) + 1
    cond = lambda u, v: (big.get((u, v), 0) + k) / (ctx.get(u, 0) + k * V)
    unig = lambda v: (uni.get(v, 0) + k) / (n + k * V)
    return cond, unig


@settings(max_examples=40)
@given(
    st.lists(st.lists(st.integers(0, 4), min_size=2, max_size=8), min_size=1, max_size=12),
    st.floats(0.01, 2.0),
)
def test_tables_match_recount(corpus, k):
    V = 5
    lm = train_ngram(corpus, V, k)
    cond, unig = _recount(corpus, V, k)
    for u in range(V):
        for v in range(V):
            assert lm.cond(u)[v] == pytest.approx(cond(u, v), abs=1e-12)
    for v in range(V):
        assert lm.cond(None)[v] == pytest.approx(unig(v), abs=1e-12)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train_ngram([], 3)
    with pytest.raises(EmptyCorpus):
        train_ngram([()], 3)


def test_masked_predict_uses_both_neighbours():
    # b always follows a and precedes c; d follows a only when the next token is d
    corpus = seqs((A, B, C), (A, B, C), (A, D, D), (D, B, C))
    teacher = BigramMaskedLM(train_ngram(corpus, 4, smoothing_k=0.0))
    y = (A, D, C)  # the middle token is masked, so its value is irrelevant
    logp = masked_predict(teacher, y, 1)
    assert int(np.argmax(logp)) == B
    # hand computation: p(v|a) p(c|v) is non-zero only for v = b
    assert math.exp(logp[B]) == pytest.approx(1.0)


def test_masked_predict_uniform_corpus():
    corpus = [(u, v) for u in range(4) for v in range(4)]
    teacher = BigramMaskedLM(train_ngram(corpus, 4, smoothing_k=0.0))
    for i in range(3):
        assert np.allclose(masked_predict(teacher, (0, 2, 3), i), math.log(0.25), atol=1e-12)


def test_masked_predict_cross_utterance_context():
    corpus = seqs((A, B, C, D), (D, A, B), (C, D, A))
    teacher = BigramMaskedLM(train_ngram(corpus, 4, smoothing_k=0.1))
    pre, y, suc = (C, D), (A, B), (C,)
    joined = pre + y + suc
    assert np.array_equal(masked_predict(teacher, y, 0, pre, suc), masked_predict(teacher, joined, len(pre)))
    assert np.array_equal(masked_predict(teacher, y, 1, pre, suc), masked_predict(teacher, joined, len(pre) + 1))


def test_masked_predict_boundaries_fall_back_to_unigram():
    lm = train_ngram(seqs((A, B, C), (B, C, A)), 4, smoothing_k=0.5)
    teacher = BigramMaskedLM(lm)
    only = masked_predict(teacher, (A,), 0)
    assert np.allclose(np.exp(only), lm.cond(None))
    first = np.exp(masked_predict(teacher, (A, C), 0))
    expected = lm.cond(None) * lm.probs[:4, C]
    assert np.allclose(first, expected / expected.sum())
    last = np.exp(masked_predict(teacher, (A, C), 1))
    assert np.allclose(last, lm.cond(A))


def test_sequence_logprob_examples():
    chain = seqs((A, B, C), (A, B, C))
    lm = train_ngram(chain, 3, smoothing_k=0.0)
    assert sequence_logprob(lm, (A, B, C)) == pytest.approx(math.log(lm.cond(None)[A]))
    assert sequence_logprob(lm, (A, B, C)) == pytest.approx(math.log(1 / 3))
    deterministic = train_ngram(seqs((A, A, A, A)), 1, smoothing_k=0.0)
    assert sequence_logprob(deterministic, (A, A, A)) == 0.0
    assert sequence_logprob(UniformLM(4), (0, 1, 2)) == pytest.approx(3 * math.log(0.25), abs=1e-15)


def test_sequence_logprob_term_by_term():
    rng = np.random.default_rng(0)
    corpus = [tuple(rng.integers(0, 6, size=rng.integers(2, 9))) for _ in range(40)]
    lm = train_ngram(corpus, 6, smoothing_k=0.3)
    cond, unig = _recount(corpus, 6, 0.3)
    for _ in range(20):
        y = tuple(int(v) for v in rng.integers(0, 6, size=5))
        expected = math.log(unig(y[0])) + sum(math.log(cond(u, v)) for u, v in zip(y, y[1:]))
        assert sequence_logprob(lm, y) == pytest.approx(expected, abs=1e-12)


def test_all_scorers_normalised():
    rng = np.random.default_rng(1)
    corpus = [tuple(rng.integers(0, 5, size=6)) for _ in range(10)]
    for k in (0.0, 0.1):
        lm = train_ngram(corpus, 5, k)
        masked = BigramMaskedLM(lm)
        causal_teacher = CausalAsMasked(lm)
        for _ in range(20):
            y = tuple(int(v) for v in rng.integers(0, 5, size=4))
            i = int(rng.integers(0, 4))
            for vec in (lm.score_next(y[:i]), masked.score_masked(y, i), causal_teacher.score_masked(y, i)):
                assert np.exp(vec).sum() == pytest.approx(1.0, abs=1e-6)


def test_interfaces():
    lm = train_ngram([(0, 1)], 2)
    assert isinstance(lm, CausalScorer)
    assert isinstance(BigramMaskedLM(lm), MaskedScorer)
    assert not isinstance(lm, MaskedScorer)


def test_masked_ignores_masked_token():
    lm = train_ngram([(0, 1, 2, 3), (3, 2, 1, 0)], 4)
    teacher = BigramMaskedLM(lm)
    assert np.array_equal(teacher.score_masked((0, 1, 2), 1), teacher.score_masked((0, 3, 2), 1))


def test_json_roundtrip(tmp_path):
    lm = train_ngram([(0, 1, 2), (2, 1)], 3, 0.25)
    path = tmp_path / "lm.json"
    lm.save(path, vocab=["a", "b", "c"])
    back = NgramTableLM.load(path)
    assert np.array_equal(back.probs, lm.probs)
    assert back.smoothing_k == 0.25


def test_deterministic_tables():
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    ca = [tuple(rng_a.integers(0, 4, size=5)) for _ in range(30)]
    cb = [tuple(rng_b.integers(0, 4, size=5)) for _ in range(30)]
    assert np.array_equal(train_ngram(ca, 4).probs, train_ngram(cb, 4).probs)


def test_masked_converges_to_true_conditional():
    rng = np.random.default_rng(0)
    V = 5
    P = rng.dirichlet(np.ones(V), size=V)
    n_tokens = 100_000
    seq = np.empty(n_tokens, dtype=np.int64)
    seq[0] = 0
    u = rng.random(n_tokens)
    cum = np.cumsum(P, axis=1)
    for t in range(1, n_tokens):
        seq[t] = min(int(np.searchsorted(cum[seq[t - 1]], u[t])), V - 1)
    teacher = BigramMaskedLM(train_ngram([seq], V, smoothing_k=0.1))
    worst = 0.0
    for left in range(V):
        for right in range(V):
            true = P[left] * P[:, right]
            true /= true.sum()
            est = np.exp(teacher.predict(left, right))
            worst = max(worst, float(np.sum(true * np.log(true / est))))
    assert worst < 0.01
