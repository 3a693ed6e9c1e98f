"""The baseline / distilled / distilled-from-scratch comparison on the standard synthetic corpus."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

from .distill import DistillConfig, make_soft_labels
from .lm import BigramMaskedLM, train_ngram
from .model import TinyEncoder
from .synth import generate_corpus, generate_text, standard_spec
from .trainer import TrainConfig, train

RUNS = ("baseline", "kd", "scratch")


@dataclass(frozen=True)
class ProtocolConfig:
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 200
    n_text: int = 20000
    noise_sigma: float | None = None
    smoothing_k: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class RunResult:
    name: str
    dev_ter: float
    dev_ppl: float
    seconds: float
    history: list[dict]
    model: TinyEncoder = field(repr=False)


def run_protocol(cfg: ProtocolConfig = ProtocolConfig()) -> dict[str, RunResult]:
    """Train the three models on one seed's data and report their final dev metrics.

    All three see the same corpus, teacher and epoch budget; the baseline
    keeps training with CTC alone where the others switch on distillation.
    """
    kw = {} if cfg.noise_sigma is None else {"noise_sigma": cfg.noise_sigma}
    spec = standard_spec(cfg.seed, **kw)
    train_set = generate_corpus(spec, cfg.n_train, seed=cfg.seed * 10 + 1, prefix="tr")
    dev = generate_corpus(spec, cfg.n_dev, seed=cfg.seed * 10 + 2, prefix="dv")
    text = generate_text(spec, cfg.n_text, seed=cfg.seed * 10 + 3)
    teacher = BigramMaskedLM(train_ngram(text, spec.vocab_size, cfg.smoothing_k))
    base = dataclasses.replace(cfg.train, seed=cfg.seed)
    dcfg = DistillConfig(base.K, base.temperature, teacher=base.teacher)
    labels = {u.utt_id: make_soft_labels(teacher, u.labels, cfg=dcfg) for u in train_set}
    configs = {
        "baseline": dataclasses.replace(base, alpha=0.0),
        "kd": base,
        "scratch": dataclasses.replace(base, from_scratch=True),
    }
    out = {}
    for name in RUNS:
        start = time.perf_counter()
        res = train(configs[name], train_set, labels, dev, teacher, vocab_size=spec.vocab_size)
        hist = res.history
        out[name] = RunResult(name, hist[-1]["dev_ter"], hist[-1]["dev_ppl"], time.perf_counter() - start, hist,
                              res.model)
    return out
