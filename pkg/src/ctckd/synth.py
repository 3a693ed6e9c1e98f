"""Synthetic speech-like corpora: bigram-chain transcripts with Gaussian frame emissions.

Each token emits 1-3 frames around its mean vector; silence frames (zero mean)
are sprinkled between tokens and always separate two tokens that sound the
same, so every transcript stays recoverable by CTC. Tokens listed in a
confusable pair share one mean vector and can only be told apart from context.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import LabelSequence


@dataclass(frozen=True, eq=False)
class SyntheticCorpusSpec:
    transition: np.ndarray
    initial: np.ndarray
    means: np.ndarray
    confusable_pairs: tuple[tuple[int, int], ...]
    noise_sigma: float = 1.0
    frames_per_token: tuple[int, int] = (1, 3)
    silence_frames: tuple[int, int] = (0, 1)
    edge_silence: tuple[int, int] = (0, 2)
    utterance_length: tuple[int, int] = (4, 10)
    seed: int = 0

    def __post_init__(self):
        V = self.transition.shape[0]
        if self.transition.shape != (V, V) or self.initial.shape != (V,) or self.means.shape[0] != V:
            raise ValueError("transition must be V x V, initial length V, means V x D")
        if not np.allclose(self.transition.sum(axis=1), 1.0) or (self.transition < 0).any():
            raise ValueError("transition rows must be probability distributions")
        if not np.isclose(self.initial.sum(), 1.0) or (self.initial < 0).any():
            raise ValueError("initial distribution must sum to one")
        if not self.confusable_pairs:
            raise ValueError("at least one confusable pair is required")
        for a, b in self.confusable_pairs:
            if not np.array_equal(self.means[a], self.means[b]):
                raise ValueError(f"confusable tokens {a} and {b} must share a mean vector")
        for lo, hi in (self.frames_per_token, self.silence_frames, self.edge_silence, self.utterance_length):
            if lo > hi or lo < 0:
                raise ValueError("ranges must satisfy 0 <= lo <= hi")
        if self.frames_per_token[0] < 1 or self.utterance_length[0] < 1:
            raise ValueError("tokens need at least one frame and utterances at least one token")

    @property
    def vocab_size(self) -> int:
        return self.transition.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def to_json(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
            "means": self.means.tolist(),
            "confusable_pairs": [list(p) for p in self.confusable_pairs],
            "noise_sigma": self.noise_sigma,
            "frames_per_token": list(self.frames_per_token),
            "silence_frames": list(self.silence_frames),
            "edge_silence": list(self.edge_silence),
            "utterance_length": list(self.utterance_length),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticCorpusSpec":
        return cls(
            transition=np.asarray(d["transition"], dtype=np.float64),
            initial=np.asarray(d["initial"], dtype=np.float64),
            means=np.asarray(d["means"], dtype=np.float64),
            confusable_pairs=tuple(tuple(p) for p in d["confusable_pairs"]),
            noise_sigma=d["noise_sigma"],
            frames_per_token=tuple(d["frames_per_token"]),
            silence_frames=tuple(d["silence_frames"]),
            edge_silence=tuple(d["edge_silence"]),
            utterance_length=tuple(d["utterance_length"]),
            seed=d["seed"],
        )


def standard_spec(seed: int = 0, vocab_size: int = 20, feature_dim: int = 8, successors: int = 4,
                  noise_sigma: float = 0.8) -> SyntheticCorpusSpec:
    """The reference corpus: V=20, token pair (0, 1) acoustically identical.

    Every token has ``successors`` possible followers (no self loops) and never
    both members of the confusable pair, so the left neighbour decides which
    of the pair comes next.
    """
    rng = np.random.default_rng(seed)
    V = vocab_size
    means = rng.normal(size=(V, feature_dim))
    means[1] = means[0]
    transition = np.zeros((V, V))
    for u in range(V):
        choices = [v for v in range(V) if v != u]
        picked = list(rng.choice(choices, size=successors, replace=False))
        if 0 in picked and 1 in picked:
            picked.remove(int(rng.choice([0, 1])))
        transition[u, picked] = rng.dirichlet(np.full(len(picked), 2.0))
    initial = np.full(V, 1.0 / V)
    return SyntheticCorpusSpec(transition, initial, means, ((0, 1),), noise_sigma=noise_sigma, seed=seed)


@dataclass(frozen=True, eq=False)
class Utterance:
    utt_id: str
    features: np.ndarray
    tokens: tuple[int, ...]
    frame_labels: np.ndarray = field(repr=False, default=None)

    @property
    def labels(self) -> LabelSequence:
        return LabelSequence(self.utt_id, self.tokens)


def sample_transcript(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> tuple[int, ...]:
    lo, hi = spec.utterance_length
    n = int(rng.integers(lo, hi + 1))
    toks = [int(rng.choice(spec.vocab_size, p=spec.initial))]
    for _ in range(n - 1):
        toks.append(int(rng.choice(spec.vocab_size, p=spec.transition[toks[-1]])))
    return tuple(toks)


def _same_sound(spec: SyntheticCorpusSpec, a: int, b: int) -> bool:
    return a == b or (a, b) in spec.confusable_pairs or (b, a) in spec.confusable_pairs


def render(spec: SyntheticCorpusSpec, tokens: tuple[int, ...], rng: np.random.Generator
           ) -> tuple[np.ndarray, np.ndarray]:
    """Frame features and the generating frame labels (blank id ``V`` on silence)."""
    blank = spec.vocab_size
    labels: list[int] = []
    labels += [blank] * int(rng.integers(spec.edge_silence[0], spec.edge_silence[1] + 1))
    for i, tok in enumerate(tokens):
        if i > 0:
            n_sil = int(rng.integers(spec.silence_frames[0], spec.silence_frames[1] + 1))
            if _same_sound(spec, tok, tokens[i - 1]):
                n_sil = max(n_sil, 1)
            labels += [blank] * n_sil
        labels += [tok] * int(rng.integers(spec.frames_per_token[0], spec.frames_per_token[1] + 1))
    labels += [blank] * int(rng.integers(spec.edge_silence[0], spec.edge_silence[1] + 1))
    frame_labels = np.asarray(labels, dtype=np.int64)
    means = np.vstack([spec.means, np.zeros((1, spec.feature_dim))])
    feats = means[frame_labels] + spec.noise_sigma * rng.normal(size=(len(labels), spec.feature_dim))
    return feats, frame_labels


def generate_corpus(spec: SyntheticCorpusSpec, n_utts: int, seed: int | None = None,
                    prefix: str = "utt") -> list[Utterance]:
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    width = max(5, len(str(n_utts - 1)))
    out = []
    for n in range(n_utts):
        toks = sample_transcript(spec, rng)
        feats, frame_labels = render(spec, toks, rng)
        out.append(Utterance(f"{prefix}{n:0{width}d}", feats, toks, frame_labels))
    return out


def generate_text(spec: SyntheticCorpusSpec, n_utts: int, seed: int) -> list[LabelSequence]:
    """Transcripts only, e.g. for training a teacher LM on more text than the acoustic data."""
    rng = np.random.default_rng(seed)
    return [LabelSequence(f"txt{n:06d}", sample_transcript(spec, rng)) for n in range(n_utts)]


def save_corpus(utts: list[Utterance], directory: str | Path) -> None:
    """Write ``features.bin`` (little-endian float64 frames), ``index.tsv`` and ``transcripts.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "features.bin", "wb") as fh, open(d / "index.tsv", "w") as idx, \
            open(d / "transcripts.txt", "w") as tr:
        offset = 0
        for u in utts:
            data = np.ascontiguousarray(u.features, dtype="<f8")
            fh.write(data.tobytes())
            idx.write(f"{u.utt_id}\t{offset}\t{data.shape[0]}\t{data.shape[1]}\n")
            offset += data.nbytes
            tr.write(" ".join([u.utt_id, *map(str, u.tokens)]) + "\n")


def load_corpus(directory: str | Path) -> list[Utterance]:
    d = Path(directory)
    raw = (d / "features.bin").read_bytes()
    tokens = {}
    for line in (d / "transcripts.txt").read_text().splitlines():
        parts = line.split()
        if parts:
            tokens[parts[0]] = tuple(int(t) for t in parts[1:])
    out = []
    for line in (d / "index.tsv").read_text().splitlines():
        utt_id, offset, T, D = line.split("\t")
        feats = np.frombuffer(raw, dtype="<f8", count=int(T) * int(D), offset=int(offset)).reshape(int(T), int(D))
        out.append(Utterance(utt_id, feats.astype(np.float64), tokens[utt_id]))
    return out


def save_spec(spec: SyntheticCorpusSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_json()) + "\n")


def load_spec(path: str | Path) -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec.from_json(json.loads(Path(path).read_text()))
