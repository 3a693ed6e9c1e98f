"""Miniature training loop: CTC pre-training followed by CTC + distillation fine-tuning."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ctc import AlignmentVariant, InfeasibleAlignment, alignment_map, forced_align
from .decode import greedy_decode
from .distill import DistillConfig, SoftLabelSet, combined_loss, one_hot_labels
from .lattice import log_softmax
from .lm import MaskedScorer
from .metrics import evaluate
from .model import TinyEncoder
from .synth import Utterance

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "phase", "train_loss", "dev_ter", "dev_ppl")


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 30
    kd_epochs: int = 30
    alpha: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0
    from_scratch: bool = False
    K: int = 8
    temperature: float = 3.0
    variant: str = "all"
    teacher: str = "masked"
    hidden: int = 64
    context_radius: int = 1
    grad_clip: float = 10.0
    freeze_alignment_epochs: int = 0
    max_skip_fraction: float = 0.01

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.kd_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        AlignmentVariant(self.variant)

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.kd_epochs

    def distill_config(self, alpha: float | None = None) -> DistillConfig:
        return DistillConfig(self.K, self.temperature, self.alpha if alpha is None else alpha,
                             AlignmentVariant(self.variant), self.teacher)

    def phase(self, epoch: int) -> tuple[str, float]:
        """Phase name and interpolation weight for a 1-based epoch."""
        if self.from_scratch:
            return ("kd" if self.alpha > 0 else "ctc"), self.alpha
        if epoch <= self.pretrain_epochs:
            return "pretrain", 0.0
        return ("kd" if self.alpha > 0 else "ctc"), self.alpha


@dataclass
class TrainResult:
    model: TinyEncoder
    history: list[dict] = field(default_factory=list)
    skipped: int = 0


def decode_corpus(model: TinyEncoder, utts: Sequence[Utterance]) -> list[tuple[int, ...]]:
    return [greedy_decode(model.log_posteriors(u.features)) for u in utts]


def dev_metrics(model: TinyEncoder, dev: Sequence[Utterance], scorer: MaskedScorer | None) -> tuple[float, float]:
    hyps = decode_corpus(model, dev)
    report = evaluate(hyps, [u.tokens for u in dev], scorer)
    return report.wer, (report.ppl if report.ppl is not None else float("nan"))


def _labels_for(utt: Utterance, cfg: TrainConfig, soft_labels: Mapping[str, SoftLabelSet] | None) -> SoftLabelSet:
    if cfg.teacher == "onehot":
        return one_hot_labels(utt.labels)
    if soft_labels is None or utt.utt_id not in soft_labels:
        raise KeyError(f"no soft labels for {utt.utt_id}")
    return soft_labels[utt.utt_id]


def train(cfg: TrainConfig, corpus: Sequence[Utterance], soft_labels: Mapping[str, SoftLabelSet] | None = None,
          dev: Sequence[Utterance] = (), dev_scorer: MaskedScorer | None = None,
          model: TinyEncoder | None = None, vocab_size: int | None = None) -> TrainResult:
    """SGD with momentum on the interpolated objective.

    Iteration order, initialisation and therefore the whole history are a
    function of ``cfg.seed``.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    needs_labels = cfg.alpha > 0 and (cfg.kd_epochs > 0 or cfg.from_scratch) and cfg.teacher != "onehot"
    if needs_labels and soft_labels is None:
        raise ValueError("soft labels are required for distillation with a masked or causal teacher")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        if vocab_size is None:
            vocab_size = 1 + max(max(u.tokens) for u in corpus if u.tokens)
        model = TinyEncoder(corpus[0].features.shape[1], vocab_size, cfg.hidden, cfg.context_radius,
                            seed=cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    result = TrainResult(model)
    align_cache: dict[str, tuple[int, tuple]] = {}
    order = np.arange(len(corpus))

    for epoch in range(1, cfg.total_epochs + 1):
        phase, alpha = cfg.phase(epoch)
        dcfg = cfg.distill_config(alpha)
        rng.shuffle(order)
        total_loss = 0.0
        used = 0
        skipped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [corpus[i] for i in order[start:start + cfg.batch_size]]
            xs, hs, dls = [], [], []
            n_ok = 0
            for utt in batch:
                logits, (x, h) = model.forward(utt.features)
                lp = log_softmax(logits)
                labels = _labels_for(utt, cfg, soft_labels) if alpha > 0 else None
                try:
                    amap = None
                    if alpha > 0 and cfg.freeze_alignment_epochs > 0:
                        amap = _cached_alignment(align_cache, utt, lp, dcfg, epoch, cfg.freeze_alignment_epochs)
                    loss, dlogits = combined_loss(lp, utt.labels, labels, dcfg, amap)
                except InfeasibleAlignment:
                    skipped += 1
                    continue
                total_loss += loss
                n_ok += 1
                xs.append(x)
                hs.append(h)
                dls.append(dlogits)
            if not n_ok:
                continue
            used += n_ok
            grads = model.backward(np.vstack(dls) / n_ok, (np.vstack(xs), np.vstack(hs)))
            _sgd_step(model, grads, velocity, cfg)
        if skipped > cfg.max_skip_fraction * len(corpus):
            raise TrainingAborted(f"epoch {epoch}: {skipped} of {len(corpus)} utterances infeasible")
        result.skipped += skipped
        dev_ter, dev_ppl = dev_metrics(model, dev, dev_scorer) if dev else (float("nan"), float("nan"))
        row = {"epoch": epoch, "phase": phase, "train_loss": total_loss / max(used, 1),
               "dev_ter": dev_ter, "dev_ppl": dev_ppl}
        result.history.append(row)
        log.info("epoch %d %s loss=%.4f dev_ter=%.4f dev_ppl=%.4f", epoch, phase, row["train_loss"],
                 dev_ter, dev_ppl)
    return result


def _cached_alignment(cache, utt, lp, dcfg, epoch, every):
    hit = cache.get(utt.utt_id)
    if hit is None or epoch - hit[0] >= every:
        path = forced_align(lp, utt.labels)
        hit = (epoch, alignment_map(path, utt.labels, dcfg.variant, blank_id=lp.shape[1] - 1))
        cache[utt.utt_id] = hit
    return hit[1]


def _sgd_step(model: TinyEncoder, grads: dict, velocity: dict, cfg: TrainConfig) -> None:
    if cfg.grad_clip:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
    for k, g in grads.items():
        velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * g
        model.params[k] += velocity[k]


def grad_check(model: TinyEncoder, utt: Utterance, cfg: DistillConfig, labels: SoftLabelSet | None = None,
               amap=None, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences over every parameter.

    The alignment is computed once from the current model and held fixed, as
    it is within a training step.
    """
    lp = model.log_posteriors(utt.features)
    if cfg.alpha > 0:
        if labels is None:
            labels = one_hot_labels(utt.labels)
        if amap is None:
            amap = alignment_map(forced_align(lp, utt.labels), utt.labels, cfg.variant, blank_id=lp.shape[1] - 1)

    def objective() -> float:
        return combined_loss(model.log_posteriors(utt.features), utt.labels, labels, cfg, amap)[0]

    logits, cache = model.forward(utt.features)
    _, dlogits = combined_loss(log_softmax(logits), utt.labels, labels, cfg, amap)
    analytic = model.backward(dlogits, cache)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            num = (up - down) / (2 * step)
            worst = max(worst, relative_error(an[i], num))
    return worst


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero entries from dominating."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
