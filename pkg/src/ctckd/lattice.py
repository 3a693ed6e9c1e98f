"""Core lattice types, log-space helpers and the CTC collapse mapping.

Conventions used throughout the package:

* all scores are natural logs; probabilities only appear at I/O boundaries
* the blank symbol is always the last column, i.e. ``blank_id == V``
* "impossible" is the finite sentinel :data:`NEG_INF` rather than ``-inf`` so
  that trellis arithmetic saturates instead of producing NaN
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

NEG_INF = -1e30

ROW_SUM_TOL = 1e-6


class LatticeFormatError(ValueError):
    """Malformed lattice / vocabulary / transcript input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("vocabulary must contain at least one token")
        if any(not t for t in self.tokens):
            raise ValueError("empty token string in vocabulary")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token strings in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(t) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)

    @classmethod
    def default(cls, size: int) -> "Vocabulary":
        return cls(tuple(f"t{i}" for i in range(size)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(list(self.tokens), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"vocabulary is not valid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(data, list) or not all(isinstance(t, str) for t in data):
            raise LatticeFormatError("vocabulary must be a JSON array of strings")
        try:
            return cls(tuple(data))
        except ValueError as exc:
            raise LatticeFormatError(str(exc)) from None


@dataclass(frozen=True)
class LabelSequence:
    """Target token sequence ``y`` of one utterance (blank never included)."""

    utt_id: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, vocab_size: int) -> None:
        for t in self.tokens:
            if not 0 <= t < vocab_size:
                raise ValueError(f"{self.utt_id}: token index {t} outside [0, {vocab_size})")


@dataclass(frozen=True, eq=False)
class PosteriorLattice:
    """Per-frame log posteriors of shape ``(T, V + 1)``, blank in the last column.

    Rows are validated on construction: every entry must be ``<= 0`` (entries at
    or below ``log_floor`` count as padding) and every row must exponentiate to
    a distribution summing to one within ``1e-6``.
    """

    utt_id: str
    rows: np.ndarray
    log_floor: float = field(default=NEG_INF, repr=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 2:
            raise ValueError(f"{self.utt_id}: lattice must be T x (V+1) with T >= 1, V >= 1")
        if np.isnan(rows).any():
            raise ValueError(f"{self.utt_id}: NaN in lattice")
        rows = np.maximum(rows, NEG_INF)
        if (rows > 1e-12).any():
            raise ValueError(f"{self.utt_id}: positive log-probability in lattice")
        sums = np.exp(rows).sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            t = int(bad[0])
            raise ValueError(f"{self.utt_id}: row {t} sums to {sums[t]!r}, not 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def T(self) -> int:
        return self.rows.shape[0]

    @property
    def V(self) -> int:
        return self.rows.shape[1] - 1

    @property
    def blank_id(self) -> int:
        return self.rows.shape[1] - 1

    @classmethod
    def from_probs(cls, utt_id: str, probs: np.ndarray) -> "PosteriorLattice":
        with np.errstate(divide="ignore"):
            return cls(utt_id, np.log(np.asarray(probs, dtype=np.float64)))

    @classmethod
    def from_logits(cls, utt_id: str, logits: np.ndarray) -> "PosteriorLattice":
        return cls(utt_id, log_softmax(np.asarray(logits, dtype=np.float64)))


def as_log_probs(lattice: PosteriorLattice | np.ndarray) -> np.ndarray:
    """Return the ``(T, V+1)`` log-prob matrix of a lattice or raw array."""
    if isinstance(lattice, PosteriorLattice):
        return lattice.rows
    return np.asarray(lattice, dtype=np.float64)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_add(a: float, b: float) -> float:
    """``log(exp(a) + exp(b))`` saturating at :data:`NEG_INF`."""
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return max(a, NEG_INF)
    return a + math.log1p(math.exp(b - a))


def log_sum(values: Iterable[float]) -> float:
    total = NEG_INF
    for v in values:
        total = log_add(total, v)
    return total


def safe_log(x: np.ndarray | float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(x), NEG_INF)


def collapse(path: Sequence[int], blank_id: int) -> tuple[int, ...]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for sym in path:
        sym = int(sym)
        if sym != prev and sym != blank_id:
            out.append(sym)
        prev = sym
    return tuple(out)


def extend_with_blanks(tokens: Sequence[int], blank_id: int) -> tuple[int, ...]:
    """``(y1, ..., yL)`` -> ``(blank, y1, blank, ..., yL, blank)``."""
    ext = [blank_id] * (2 * len(tokens) + 1)
    ext[1::2] = [int(t) for t in tokens]
    return tuple(ext)


# ---------------------------------------------------------------------------
# text I/O

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_lattices(lattices: Iterable[PosteriorLattice], fh: IO[str]) -> None:
    """Write lattices as ``utt_id T V`` followed by T rows of V+1 floats."""
    for lat in lattices:
        fh.write(f"{lat.utt_id} {lat.T} {lat.V}\n")
        for row in lat.rows:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def iter_lattices(fh: IO[str]) -> Iterator[PosteriorLattice]:
    lineno = 0
    lines = iter(fh)
    for header in lines:
        lineno += 1
        if not header.strip():
            continue
        parts = header.split()
        if len(parts) != 3:
            raise LatticeFormatError("expected header 'utt_id T V'", lineno)
        utt_id = parts[0]
        try:
            T, V = int(parts[1]), int(parts[2])
        except ValueError:
            raise LatticeFormatError("T and V must be integers", lineno) from None
        if T < 1 or V < 1:
            raise LatticeFormatError("T and V must be positive", lineno)
        rows = np.empty((T, V + 1))
        for t in range(T):
            try:
                line = next(lines)
            except StopIteration:
                raise LatticeFormatError(f"{utt_id}: truncated lattice, expected {T} rows", lineno) from None
            lineno += 1
            fields = line.split()
            if len(fields) != V + 1:
                raise LatticeFormatError(f"{utt_id}: expected {V + 1} values, got {len(fields)}", lineno)
            try:
                rows[t] = [float(x) for x in fields]
            except ValueError:
                raise LatticeFormatError(f"{utt_id}: non-numeric value", lineno) from None
        try:
            yield PosteriorLattice(utt_id, rows)
        except ValueError as exc:
            raise LatticeFormatError(str(exc), lineno) from None


def read_lattices(path: str | Path) -> list[PosteriorLattice]:
    with open(path) as fh:
        return list(iter_lattices(fh))


def save_lattices(lattices: Iterable[PosteriorLattice], path: str | Path) -> None:
    with open(path, "w") as fh:
        write_lattices(lattices, fh)


def read_transcripts(path: str | Path, vocab: Vocabulary | None = None) -> list[LabelSequence]:
    """Read ``utt_id tok tok ...`` lines.

    Tokens are vocabulary strings when ``vocab`` is given, integer ids otherwise.
    """
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            utt_id, toks = parts[0], parts[1:]
            try:
                ids = vocab.encode(toks) if vocab is not None else tuple(int(t) for t in toks)
            except (KeyError, ValueError) as exc:
                raise LatticeFormatError(f"{utt_id}: {exc}", lineno) from None
            if any(t < 0 for t in ids):
                raise LatticeFormatError(f"{utt_id}: negative token id", lineno)
            out.append(LabelSequence(utt_id, ids))
    return out


def write_transcripts(seqs: Iterable[LabelSequence], path: str | Path,
                      vocab: Vocabulary | None = None) -> None:
    with open(path, "w") as fh:
        for seq in seqs:
            toks = vocab.decode(seq.tokens) if vocab is not None else [str(t) for t in seq.tokens]
            fh.write(" ".join([seq.utt_id, *toks]) + "\n")
