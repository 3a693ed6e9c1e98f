"""``ctckd``: one binary, one subcommand per pipeline stage.

Exit status: 0 ok, 2 bad input (with a line number when there is one),
3 infeasible data (offending utterance ids on stderr), 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ctc import InfeasibleAlignment, alignment_map, ctc_loss, forced_align, format_alignment
from .decode import MAX_NBEST, DecodeConfig, Hypothesis, beam_search, greedy_decode, oracle_select, read_nbest, \
    rescore, write_nbest
from .experiment import ProtocolConfig, run_protocol
from .distill import TEACHERS, DistillConfig, load_soft_labels, make_soft_labels, one_hot_labels, write_soft_labels
from .lattice import LabelSequence, LatticeFormatError, PosteriorLattice, Vocabulary, read_lattices, \
    read_transcripts, save_lattices, write_transcripts
from .lm import BigramMaskedLM, CausalAsMasked, NgramTableLM, train_ngram
from .metrics import evaluate
from .model import TinyEncoder
from .synth import generate_corpus, generate_text, load_corpus, save_corpus, save_spec, standard_spec
from .trainer import TrainConfig, TrainingAborted, config_dict, train, write_history

log = logging.getLogger("ctckd")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    pass


class Infeasible(Exception):
    def __init__(self, utt_ids: Sequence[str]):
        self.utt_ids = list(utt_ids)
        super().__init__("infeasible alignment: " + " ".join(self.utt_ids))


FORMATS = """file formats:
  lattice      utt_id T V            header, then T lines of V+1 log-probs
               lp_0 ... lp_V         (blank is the last column; rows sum to 1)
  transcript   utt_id tok tok ...    token strings with --vocab, integer ids otherwise
  vocab        ["a", "b", ...]       JSON array; blank is implicit (id = size)
  alignment    utt_id 1:1 2:4,5      token index:frame list, both 1-based
  soft labels  {"utt_id": ..., "positions": [[[tok, p], ...], ...]}   one JSON object per line
  n-best       {"utt_id", "rank", "tokens", "asr_logprob", "lm_logprob", "fused_score"}   per line
  lm table     {"format": 1, "order": 2, "vocab_size", "smoothing_k", "unigram_counts", "bigram_counts"}
  corpus dir   features.bin (little-endian float64), index.tsv (utt_id offset T D), transcripts.txt
"""


# option tables: (flag, type, default, help); the dest doubles as the config-file key
COMMON = [
    ("--seed", int, 0, "global seed"),
    ("--jobs", int, 1, "utterance-level worker processes (results do not depend on this)"),
]

OPTIONS: dict[str, list[tuple]] = {
    "generate": [
        ("--n-train", int, 2000, "training utterances"),
        ("--n-dev", int, 200, "dev utterances"),
        ("--n-text", int, 20000, "extra text-only utterances for the teacher LM"),
        ("--noise-sigma", float, None, "emission noise (default: the standard corpus value)"),
        ("--vocab-size", int, 20, "vocabulary size"),
    ],
    "train-lm": [
        ("--vocab-size", int, None, "vocabulary size (default: taken from --vocab)"),
        ("--smoothing-k", float, 0.1, "add-k smoothing constant"),
    ],
    "loss": [],
    "align": [
        ("--variant", str, "all", "all | leftmost | rightmost"),
    ],
    "make-targets": [
        ("--K", int, 8, "teacher classes kept per position"),
        ("--temperature", float, 3.0, "smoothing temperature"),
        ("--teacher", str, "masked", "masked | causal | onehot"),
        ("--cross-utterance", bool, False, "use neighbouring transcripts (file order) as teacher context"),
    ],
    "posteriors": [],
    "decode": [
        ("--mode", str, "greedy", "greedy | beam"),
        ("--beam-width", int, 5, "beam width"),
        ("--nbest", int, 5, f"hypotheses kept per utterance (at most {MAX_NBEST})"),
        ("--fusion-lm", str, None, "lm table for shallow fusion"),
        ("--fusion-weight", float, 0.0, "fusion weight"),
        ("--length-bonus", float, 0.0, "score added per emitted token"),
        ("--rescore-lm", str, None, "lm table for n-best rescoring"),
        ("--rescore-weight", float, 1.0, "rescoring weight"),
        ("--rescore-masked", bool, False, "rescore with the masked bigram (pseudo-log-likelihood)"),
    ],
    "train": [(("--" + f.name.replace("_", "-")), type(f.default), f.default, f.name.replace("_", " "))
              for f in fields(TrainConfig) if f.name != "seed"],
    "protocol": [
        ("--n-train", int, 2000, "training utterances"),
        ("--n-dev", int, 200, "dev utterances"),
        ("--n-text", int, 20000, "teacher LM text utterances"),
        ("--noise-sigma", float, None, "emission noise (default: the standard corpus value)"),
        ("--pretrain-epochs", int, TrainConfig.pretrain_epochs, "CTC-only epochs before distillation"),
        ("--kd-epochs", int, TrainConfig.kd_epochs, "distillation epochs"),
    ],
    "eval": [
        ("--ppl", str, None, "lm table; report dev pseudo-PPL of the hypotheses under its masked scorer"),
        ("--oracle", bool, False, "pick the closest n-best entry instead of rank 1"),
    ],
}

POSITIONALS: dict[str, list[tuple[str, str]]] = {
    "generate": [("out", "output directory")],
    "train-lm": [("transcripts", "transcript files"), ],
    "loss": [("lattices", "lattice file"), ("transcripts", "transcript file")],
    "align": [("lattices", "lattice file"), ("transcripts", "transcript file")],
    "make-targets": [("transcripts", "transcript file"), ("lm", "lm table")],
    "posteriors": [("checkpoint", "model checkpoint"), ("corpus", "corpus directory")],
    "decode": [("lattices", "lattice file")],
    "train": [("corpus", "training corpus directory")],
    "eval": [("hyp", "n-best file or transcript file"), ("ref", "reference transcript file")],
    "protocol": [],
}

EXTRA_PATHS: dict[str, list[tuple[str, str]]] = {
    "train-lm": [("--out", "where to write the lm table (default: stdout)")],
    "loss": [("--vocab", "vocabulary JSON")],
    "align": [("--vocab", "vocabulary JSON")],
    "make-targets": [("--vocab", "vocabulary JSON"), ("--out", "soft-label file (default: stdout)")],
    "posteriors": [("--out", "lattice file (default: stdout)")],
    "decode": [("--out", "n-best file (default: stdout)")],
    "train": [("--vocab", "vocabulary JSON (sets the output size)"), ("--dev", "dev corpus directory"), ("--soft-labels", "soft-label file"),
              ("--teacher-lm", "lm table used to score dev pseudo-PPL"), ("--out-dir", "checkpoint and CSV directory")],
    "eval": [("--vocab", "vocabulary JSON")],
}

HELP = {
    "generate": "write the standard synthetic corpus (train/, dev/, text.txt, spec.json)",
    "train-lm": "fit the add-k bigram table from transcripts",
    "loss": "per-utterance CTC loss",
    "align": "forced alignment, dumped as token-to-frame maps",
    "make-targets": "precompute teacher soft labels",
    "posteriors": "run a checkpoint over a corpus and write its lattices",
    "decode": "greedy or prefix beam search with optional fusion and rescoring",
    "train": "pre-train with CTC, then fine-tune with CTC + distillation",
    "eval": "token error rate and pseudo-PPL",
    "protocol": "train baseline, distilled and distilled-from-scratch models on the standard corpus",
}

GRAMMAR = {
    "generate": "corpus dir", "train-lm": "transcript, lm table", "loss": "lattice, transcript",
    "align": "lattice, transcript, alignment", "make-targets": "transcript, lm table, soft labels",
    "posteriors": "corpus dir, lattice", "decode": "lattice, n-best, lm table",
    "train": "corpus dir, soft labels, lm table", "eval": "n-best, transcript, lm table",
    "protocol": "",
}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _format_lines(names: list[str]) -> str:
    keep, take = [], False
    for line in FORMATS.splitlines()[1:]:
        head = line[:15].strip()
        if head:
            take = head in names
        if take:
            keep.append(line)
    return "\n".join(keep)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctckd", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=FORMATS)
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per epoch")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        grammar = _format_lines(GRAMMAR[name].split(", "))
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name],
                            formatter_class=argparse.RawDescriptionHelpFormatter,
                            epilog="formats used:\n" + grammar)
        for pos, text in POSITIONALS[name]:
            sp.add_argument(pos, nargs="+" if name == "train-lm" else None, help=text)
        for flag, text in EXTRA_PATHS.get(name, []):
            sp.add_argument(flag, help=text)
        for flag, typ, default, text in COMMON + opts:
            if default is not None:
                text = f"{text} (default {default})"
            if typ is bool:
                sp.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, help=text)
            else:
                sp.add_argument(flag, type=typ, default=None, help=text)
        sp.add_argument("--config", help="JSON object of option values; flags override it")
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    return p


def _has_type(v, typ) -> bool:
    if typ is bool or isinstance(v, bool):
        return typ is bool and isinstance(v, bool)
    if typ is float:
        return isinstance(v, (int, float))
    return isinstance(v, typ)


def effective_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags; reject unknown config keys."""
    table = COMMON + OPTIONS[args.command]
    values = {_dest(flag): default for flag, _, default, _ in table}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
        unknown = sorted(set(data) - set(values))
        if unknown:
            raise InputError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
        for flag, typ, _, _ in table:
            key = _dest(flag)
            if key in data:
                v = data[key]
                if not (v is None or _has_type(v, typ)):
                    raise InputError(f"config key {key!r} must be {typ.__name__}")
                values[key] = float(v) if typ is float and v is not None else v
    for flag, *_ in table:
        key = _dest(flag)
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    if values["jobs"] < 1:
        raise InputError("--jobs must be >= 1")
    return values


def _pmap(fn: Callable, items: list, jobs: int) -> list:
    """Order-preserving map; identical results for any ``jobs``."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _read_vocab(path: str | None) -> Vocabulary | None:
    return Vocabulary.load(path) if path else None


def _paired(lattices: list[PosteriorLattice], transcripts: list[LabelSequence]):
    refs = {t.utt_id: t for t in transcripts}
    missing = [lat.utt_id for lat in lattices if lat.utt_id not in refs]
    if missing:
        raise InputError("no transcript for: " + " ".join(missing))
    for lat in lattices:
        y = refs[lat.utt_id]
        if any(t >= lat.V for t in y.tokens):
            raise InputError(f"{lat.utt_id}: token id out of range for V={lat.V}")
    return [(lat, refs[lat.utt_id]) for lat in lattices]


def _loss_one(pair):
    lat, y = pair
    try:
        return lat.utt_id, ctc_loss(lat, y)
    except InfeasibleAlignment:
        return lat.utt_id, None


def _align_one(job):
    (lat, y), variant = job
    try:
        path = forced_align(lat, y)
    except InfeasibleAlignment:
        return lat.utt_id, None
    return lat.utt_id, alignment_map(path, y, variant, blank_id=lat.blank_id)


def _raise_infeasible(results):
    bad = [u for u, r in results if r is None]
    if bad:
        raise Infeasible(bad)


def cmd_generate(args, cfg, out):
    kw = {} if cfg["noise_sigma"] is None else {"noise_sigma": cfg["noise_sigma"]}
    spec = standard_spec(cfg["seed"], vocab_size=cfg["vocab_size"], **kw)
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    save_spec(spec, d / "spec.json")
    Vocabulary.default(spec.vocab_size).save(d / "vocab.json")
    seed = cfg["seed"]
    save_corpus(generate_corpus(spec, cfg["n_train"], seed=seed * 10 + 1, prefix="tr"), d / "train")
    save_corpus(generate_corpus(spec, cfg["n_dev"], seed=seed * 10 + 2, prefix="dv"), d / "dev")
    write_transcripts(generate_text(spec, cfg["n_text"], seed=seed * 10 + 3), d / "text.txt")
    out({"out": str(d), "train": cfg["n_train"], "dev": cfg["n_dev"], "text": cfg["n_text"]},
        f"wrote {cfg['n_train']} train, {cfg['n_dev']} dev, {cfg['n_text']} text utterances to {d}")


def _read_many_transcripts(paths):
    seqs = []
    for p in paths:
        seqs.extend(read_transcripts(p))
    return seqs


def cmd_train_lm(args, cfg, out):
    seqs = _read_many_transcripts(args.transcripts)
    V = cfg["vocab_size"]
    if V is None:
        raise InputError("--vocab-size is required")
    if any(t >= V for s in seqs for t in s.tokens):
        raise InputError(f"token id out of range for vocab size {V}")
    lm = train_ngram(seqs, V, cfg["smoothing_k"])
    text = json.dumps(lm.to_json())
    if args.out:
        Path(args.out).write_text(text + "\n")
        out({"out": args.out, "utterances": len(seqs)}, f"wrote {args.out} from {len(seqs)} utterances")
    else:
        sys.stdout.write(text + "\n")


def cmd_loss(args, cfg, out):
    pairs = _paired(read_lattices(args.lattices), read_transcripts(args.transcripts, _read_vocab(args.vocab)))
    results = _pmap(_loss_one, pairs, cfg["jobs"])
    _raise_infeasible(results)
    mean = float(np.mean([r for _, r in results])) if results else None
    lines = [f"{u} {r:.6f}" for u, r in results]
    if mean is not None:
        lines.append(f"mean {mean:.6f}")
    out({"utterances": [{"utt_id": u, "loss": r} for u, r in results], "mean": mean}, "\n".join(lines))


def cmd_align(args, cfg, out):
    pairs = _paired(read_lattices(args.lattices), read_transcripts(args.transcripts, _read_vocab(args.vocab)))
    variant = cfg["variant"]
    if variant not in ("all", "leftmost", "rightmost"):
        raise InputError(f"unknown variant {variant!r}")
    results = _pmap(_align_one, [(p, variant) for p in pairs], cfg["jobs"])
    _raise_infeasible(results)
    out({"alignments": [{"utt_id": u, "frames": [[t + 1 for t in f] for f in a]} for u, a in results]},
        "\n".join(format_alignment(u, a) for u, a in results))


def _teacher(kind: str, lm: NgramTableLM):
    return BigramMaskedLM(lm) if kind == "masked" else CausalAsMasked(lm)


def _targets_one(job):
    kind, lm_json, y, pre, suc, dcfg = job
    if kind == "onehot":
        return one_hot_labels(y)
    return make_soft_labels(_teacher(kind, NgramTableLM.from_json(lm_json)), y, pre, suc, dcfg)


def cmd_make_targets(args, cfg, out):
    if cfg["teacher"] not in TEACHERS:
        raise InputError(f"teacher must be one of {TEACHERS}")
    seqs = read_transcripts(args.transcripts, _read_vocab(args.vocab))
    lm = NgramTableLM.load(args.lm)
    if any(t >= lm.vocab_size for s in seqs for t in s.tokens):
        raise InputError("transcript token outside the lm vocabulary")
    dcfg = DistillConfig(K=cfg["K"], temperature=cfg["temperature"], teacher=cfg["teacher"])
    jobs = []
    for n, y in enumerate(seqs):
        pre = seqs[n - 1].tokens if cfg["cross_utterance"] and n > 0 else ()
        suc = seqs[n + 1].tokens if cfg["cross_utterance"] and n + 1 < len(seqs) else ()
        jobs.append((cfg["teacher"], lm.to_json(), y, pre, suc, dcfg))
    sets = _pmap(_targets_one, jobs, cfg["jobs"])
    if args.out:
        with open(args.out, "w") as fh:
            write_soft_labels(sets, fh)
        out({"out": args.out, "utterances": len(sets)}, f"wrote soft labels for {len(sets)} utterances to {args.out}")
    else:
        write_soft_labels(sets, sys.stdout)


def cmd_posteriors(args, cfg, out):
    model = TinyEncoder.load(args.checkpoint)
    lats = [PosteriorLattice(u.utt_id, model.log_posteriors(u.features)) for u in load_corpus(args.corpus)]
    if args.out:
        save_lattices(lats, args.out)
        out({"out": args.out, "utterances": len(lats)}, f"wrote {len(lats)} lattices to {args.out}")
    else:
        from .lattice import write_lattices
        write_lattices(lats, sys.stdout)


def _decode_one(job):
    lat, cfg, fusion_json, rescore_json = job
    if cfg["mode"] == "greedy":
        toks = greedy_decode(lat)
        asr = -ctc_loss(lat, toks)
        hyps = [Hypothesis(toks, asr, None, asr)]
    else:
        dcfg = DecodeConfig(cfg["beam_width"], cfg["fusion_weight"], cfg["nbest"], cfg["length_bonus"])
        fusion = NgramTableLM.from_json(fusion_json) if fusion_json else None
        hyps = beam_search(lat, dcfg, fusion)
    if rescore_json:
        lm = NgramTableLM.from_json(rescore_json)
        hyps = rescore(hyps, BigramMaskedLM(lm) if cfg["rescore_masked"] else lm, cfg["rescore_weight"])
    return lat.utt_id, hyps


def cmd_decode(args, cfg, out):
    if cfg["mode"] not in ("greedy", "beam"):
        raise InputError("--mode must be greedy or beam")
    DecodeConfig(cfg["beam_width"], cfg["fusion_weight"], cfg["nbest"], cfg["length_bonus"])
    if cfg["fusion_lm"] and cfg["mode"] != "beam":
        raise InputError("shallow fusion needs --mode beam")
    lats = read_lattices(args.lattices)
    fusion = NgramTableLM.load(cfg["fusion_lm"]).to_json() if cfg["fusion_lm"] else None
    resc = NgramTableLM.load(cfg["rescore_lm"]).to_json() if cfg["rescore_lm"] else None
    for path, lm in ((cfg["fusion_lm"], fusion), (cfg["rescore_lm"], resc)):
        if lm is not None and any(lat.V != lm["vocab_size"] for lat in lats):
            raise InputError(f"{path}: vocabulary size does not match the lattices")
    results = _pmap(_decode_one, [(lat, cfg, fusion, resc) for lat in lats], cfg["jobs"])
    if args.json:
        out({"hypotheses": [h.to_json(u, r) for u, hyps in results for r, h in enumerate(hyps, 1)]}, "")
        return
    fh = open(args.out, "w") if args.out else sys.stdout
    try:
        for u, hyps in results:
            write_nbest(fh, u, hyps)
    finally:
        if args.out:
            fh.close()


def cmd_train(args, cfg, out):
    tcfg = TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in config_dict(TrainConfig()) if k != "seed"})
    corpus = load_corpus(args.corpus)
    dev = load_corpus(args.dev) if args.dev else []
    soft = load_soft_labels(args.soft_labels) if args.soft_labels else None
    lm = NgramTableLM.load(args.teacher_lm) if args.teacher_lm else None
    vocab = _read_vocab(args.vocab)
    vocab_size = vocab.size if vocab is not None else lm.vocab_size if lm is not None else None
    if vocab is not None and lm is not None and vocab.size != lm.vocab_size:
        raise InputError("vocabulary and lm table disagree on the vocabulary size")
    result = train(tcfg, corpus, soft, dev, BigramMaskedLM(lm) if lm is not None else None, vocab_size=vocab_size)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        result.model.save(d / "model.ckpt")
        write_history(result.history, d / "history.csv")
        (d / "config.json").write_text(json.dumps(config_dict(tcfg), sort_keys=True) + "\n")
    last = result.history[-1] if result.history else {}
    out({"history": result.history, "skipped": result.skipped, "out_dir": args.out_dir},
        "\n".join(f"{r['epoch']:3d} {r['phase']:<8} loss {r['train_loss']:.4f} "
                  f"dev TER {r['dev_ter']:.4f} dev PPL {r['dev_ppl']:.4f}" for r in result.history)
        or f"nothing to do {last}")


def _read_hyps(path: str, refs: list[LabelSequence], oracle: bool, vocab) -> list[tuple[int, ...]]:
    with open(path) as fh:
        first = next((line for line in fh if line.strip()), "")
    by_id = {r.utt_id: r for r in refs}
    if first.lstrip().startswith("{"):
        with open(path) as fh:
            try:
                nbest = read_nbest(fh)
            except (json.JSONDecodeError, KeyError) as exc:
                raise InputError(f"{path}: malformed n-best file ({exc})") from None
        out = []
        for r in refs:
            hyps = nbest.get(r.utt_id)
            if not hyps:
                raise InputError(f"no hypothesis for {r.utt_id}")
            out.append(oracle_select(hyps, r.tokens).tokens if oracle else hyps[0].tokens)
        return out
    if oracle:
        raise InputError("--oracle needs an n-best file")
    hyps = {h.utt_id: h.tokens for h in read_transcripts(path, vocab)}
    missing = [u for u in by_id if u not in hyps]
    if missing:
        raise InputError("no hypothesis for: " + " ".join(missing))
    return [hyps[r.utt_id] for r in refs]


def cmd_eval(args, cfg, out):
    vocab = _read_vocab(args.vocab)
    refs = read_transcripts(args.ref, vocab)
    hyps = _read_hyps(args.hyp, refs, cfg["oracle"], vocab)
    scorer = BigramMaskedLM(NgramTableLM.load(cfg["ppl"])) if cfg["ppl"] else None
    report = evaluate(hyps, refs, scorer)
    out({"report": report.to_json()}, report.table())


def cmd_protocol(args, cfg, out):
    tcfg = TrainConfig(pretrain_epochs=cfg["pretrain_epochs"], kd_epochs=cfg["kd_epochs"])
    pcfg = ProtocolConfig(cfg["seed"], cfg["n_train"], cfg["n_dev"], cfg["n_text"], cfg["noise_sigma"],
                          train=tcfg)
    results = run_protocol(pcfg)
    rows = [f"{'run':<10} {'dev TER':>8} {'dev PPL':>8} {'seconds':>8}"]
    rows += [f"{r.name:<10} {r.dev_ter:8.4f} {r.dev_ppl:8.4f} {r.seconds:8.1f}" for r in results.values()]
    out({"runs": {k: {"dev_ter": r.dev_ter, "dev_ppl": r.dev_ppl, "history": r.history}
                  for k, r in results.items()}}, "\n".join(rows))


COMMANDS = {
    "generate": cmd_generate, "train-lm": cmd_train_lm, "loss": cmd_loss, "align": cmd_align,
    "make-targets": cmd_make_targets, "posteriors": cmd_posteriors, "decode": cmd_decode,
    "train": cmd_train, "eval": cmd_eval, "protocol": cmd_protocol,
}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = effective_config(args)

        def out(payload: dict, text: str) -> None:
            if args.json:
                doc = {"command": args.command, "config": cfg, **payload}
                sys.stdout.write(json.dumps(doc, sort_keys=True, default=_json_default) + "\n")
            else:
                print("# config " + json.dumps(cfg, sort_keys=True), file=sys.stderr)
                if text:
                    print(text)

        COMMANDS[args.command](args, cfg, out)
    except Infeasible as exc:
        print(f"ctckd: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InfeasibleAlignment, TrainingAborted) as exc:
        print(f"ctckd: infeasible data: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, LatticeFormatError, OSError, KeyError, ValueError) as exc:
        print(f"ctckd: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"ctckd: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
