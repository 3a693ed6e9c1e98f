import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctckd.lattice import (
    NEG_INF,
    LabelSequence,
    LatticeFormatError,
    PosteriorLattice,
    Vocabulary,
    collapse,
    extend_with_blanks,
    iter_lattices,
    log_add,
    read_transcripts,
    write_lattices,
)

A, B, BLANK = 0, 1, 2


@pytest.mark.parametrize(
    "path, expected",
    [
        ((A, A, BLANK, B), (A, B)),
        ((BLANK, BLANK, BLANK), ()),
        ((A, BLANK, A), (A, A)),
    ],
)
def test_collapse_examples(path, expected):
    assert collapse(path, BLANK) == expected


@pytest.mark.parametrize(
    "y, expected",
    [
        ((A,), (BLANK, A, BLANK)),
        ((A, B), (BLANK, A, BLANK, B, BLANK)),
        ((A, A), (BLANK, A, BLANK, A, BLANK)),
    ],
)
def test_extend_with_blanks_examples(y, expected):
    assert extend_with_blanks(y, BLANK) == expected


def test_log_add_examples():
    assert log_add(math.log(0.25), math.log(0.25)) == pytest.approx(math.log(0.5), abs=1e-15)
    assert log_add(-3.7, NEG_INF) == -3.7
    assert log_add(NEG_INF, -3.7) == -3.7
    assert abs(log_add(math.log(0.9), math.log(0.1))) < 1e-12
    assert log_add(NEG_INF, NEG_INF) == NEG_INF


logprobs = st.floats(min_value=-50, max_value=0, allow_nan=False) | st.just(NEG_INF)


@given(logprobs, logprobs, logprobs)
def test_log_add_commutative_associative(a, b, c):
    assert log_add(a, b) == log_add(b, a)
    left = log_add(log_add(a, b), c)
    right = log_add(a, log_add(b, c))
    assert left == pytest.approx(right, rel=1e-12, abs=1e-300)


@st.composite
def label_and_path(draw):
    V = draw(st.integers(1, 5))
    y = draw(st.lists(st.integers(0, V - 1), min_size=0, max_size=6))
    blank = V
    path = [blank] * draw(st.integers(0, 2))
    for i, tok in enumerate(y):
        gap = draw(st.integers(0, 2))
        if i > 0 and y[i - 1] == tok:
            gap = max(gap, 1)
        path += [blank] * gap + [tok] * draw(st.integers(1, 3))
    path += [blank] * draw(st.integers(0, 2))
    return tuple(y), tuple(path), blank


@given(label_and_path())
def test_collapse_inverts_any_expansion(case):
    y, path, blank = case
    out = collapse(path, blank)
    assert out == y
    assert blank not in out
    assert collapse(path, blank) == out


@given(st.lists(st.integers(0, 6), min_size=0, max_size=10))
def test_extend_with_blanks_shape(y):
    ext = extend_with_blanks(y, 7)
    assert len(ext) == 2 * len(y) + 1
    assert ext[1::2] == tuple(y)
    assert set(ext[0::2]) == {7}


def test_lattice_validation():
    good = np.log(np.array([[0.5, 0.5], [0.9, 0.1]]))
    lat = PosteriorLattice("u", good)
    assert (lat.T, lat.V, lat.blank_id) == (2, 1, 1)
    with pytest.raises(ValueError):
        lat.rows[0, 0] = 0.0
    with pytest.raises(ValueError, match="sums"):
        PosteriorLattice("u", np.log(np.array([[0.5, 0.4]])))
    with pytest.raises(ValueError, match="positive"):
        PosteriorLattice("u", np.array([[0.1, -3.0]]))
    with pytest.raises(ValueError):
        PosteriorLattice("u", np.zeros((0, 3)))


def test_lattice_accepts_log_floor_padding():
    lat = PosteriorLattice.from_probs("u", np.array([[1.0, 0.0, 0.0]]))
    assert lat.rows[0, 1] == NEG_INF


def test_lattice_text_roundtrip_bit_exact():
    rng = np.random.default_rng(3)
    lats = []
    for n in range(3):
        z = rng.normal(size=(4 + n, 5))
        lats.append(PosteriorLattice.from_logits(f"utt{n}", z))
    buf = io.StringIO()
    write_lattices(lats, buf)
    back = list(iter_lattices(io.StringIO(buf.getvalue())))
    assert [b.utt_id for b in back] == [a.utt_id for a in lats]
    for a, b in zip(lats, back):
        assert np.array_equal(a.rows, b.rows)
    buf2 = io.StringIO()
    write_lattices(back, buf2)
    assert buf2.getvalue() == buf.getvalue()


@pytest.mark.parametrize(
    "text, line",
    [
        ("u1 2\n", 1),
        ("u1 1 1\n-0.5\n", 2),
        ("u1 2 1\n-0.6931471805599453 -0.6931471805599453\n", 2),
        ("u1 1 1\nabc -0.1\n", 2),
    ],
)
def test_lattice_format_errors_carry_line_numbers(text, line):
    with pytest.raises(LatticeFormatError) as info:
        list(iter_lattices(io.StringIO(text)))
    assert info.value.line == line


def test_vocabulary(tmp_path):
    vocab = Vocabulary(("a", "b", "c"))
    assert vocab.size == 3 and vocab.blank_id == 3
    assert vocab.encode(["c", "a"]) == (2, 0)
    path = tmp_path / "vocab.json"
    vocab.save(path)
    assert Vocabulary.load(path) == vocab
    for bad in [(), ("a", "a"), ("a", "")]:
        with pytest.raises(ValueError):
            Vocabulary(bad)


def test_transcripts(tmp_path):
    vocab = Vocabulary(("a", "b"))
    p = tmp_path / "tr.txt"
    p.write_text("u1 a b a\n\nu2 b\n")
    seqs = read_transcripts(p, vocab)
    assert seqs == [LabelSequence("u1", (0, 1, 0)), LabelSequence("u2", (1,))]
    p.write_text("u1 a z\n")
    with pytest.raises(LatticeFormatError):
        read_transcripts(p, vocab)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_row_stochastic_after_construction(T, C, seed):
    z = np.random.default_rng(seed).normal(scale=4, size=(T, C))
    lat = PosteriorLattice.from_logits("u", z)
    assert np.allclose(np.exp(lat.rows).sum(axis=1), 1.0, atol=1e-12)
    assert (lat.rows <= 0).all()
