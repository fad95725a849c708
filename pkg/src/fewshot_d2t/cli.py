"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import metrics
from .augmentation import (
    AugmentedPair,
    LmAugConfig,
    info_augment_all,
    lm_augment,
    random_augment,
    read_jsonl,
    write_jsonl,
)
from .corpus import (
    CorpusError,
    Vocabulary,
    build_value_inventory,
    build_vocab,
    corpus_from_manifest,
    detokenize,
    few_shot_split,
    load_pairs,
    save_manifest,
    write_e2e_csv,
)
from .matching import ModelEncoder, mine_pairs, write_pseudo_pairs
from .neural import CheckpointError, load_checkpoint, save_checkpoint
from .runner import AugmentSwitches, ExperimentSpec, make_generator, run_experiment
from .synthetic import make_synthetic
from .trainer import DIRECTIONS, CycleTrainer, TrainConfig, TrainingDiverged

logger = logging.getLogger("fewshot_d2t")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- config helpers -----------------------------------------------------------------


def load_config(path) -> dict:
    """Read a JSON or YAML mapping (YAML is a superset of JSON)."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return cfg


def apply_overrides(cfg: dict, pairs) -> dict:
    """``key=value`` overrides; dotted keys reach into nested mappings, values parse as YAML."""
    cfg = json.loads(json.dumps(cfg))
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = cfg
        *parents, leaf = key.split(".")
        for k in parents:
            node = node.setdefault(k, {})
        node[leaf] = yaml.safe_load(raw)
    return cfg


def _train_config(d: dict) -> TrainConfig:
    try:
        return TrainConfig.from_json(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _load_split(data_path, split_path):
    pairs = load_pairs(data_path)
    return pairs, corpus_from_manifest(pairs, split_path)


def _add_augmented(corpus, paths) -> None:
    for path in paths or []:
        for rec in read_jsonl(path):
            if isinstance(rec, AugmentedPair):
                corpus.labeled.append((rec.mr, rec.text))
            else:
                corpus.t_augmented.append(rec)


# -- commands -------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    pairs = load_pairs(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for mr, text in pairs:
            fh.write(json.dumps({"mr": mr.to_json(), "text": text.raw if text else None}, ensure_ascii=False) + "\n")
    n_paired = sum(1 for _, t in pairs if t is not None)
    print(f"{len(pairs)} instances ({n_paired} with text) -> {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    pairs = load_pairs(args.data)
    n = sum(1 for _, t in pairs if t is not None)
    if (args.k is None) == (args.fraction is None):
        raise ConfigError("give exactly one of --k and --fraction")
    k = args.k if args.k is not None else max(1, round(args.fraction * n))
    corpus = few_shot_split(pairs, k, args.seed, stratify=args.stratify)
    save_manifest(corpus, args.out)
    print(f"k={k}: {len(corpus.labeled)} labeled, {len(corpus.d_unlabeled)} unlabeled -> {args.out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    pairs, corpus = _load_split(args.data, args.split)
    seeds_texts = [t for _, t in corpus.labeled]
    if args.kind == "info":
        inv = build_value_inventory(corpus)
        records = info_augment_all(corpus.labeled, inv, cap=args.cap, seed=args.seed, ids=corpus.labeled_ids)
    elif args.kind == "lm":
        if args.seed_texts:
            seeds_texts += [r.text if hasattr(r, "text") else r for r in read_jsonl(args.seed_texts)]
        sw = AugmentSwitches(generator=args.generator,
                             generator_config={"base_model": args.base_model} if args.base_model else {})
        gen = make_generator(sw, seeds_texts, args.seed, run_dir=str(Path(args.out).parent))
        cfg = LmAugConfig(top_k=args.top_k, min_words=args.min_words, max_iterations=args.max_iter, seed=args.seed)
        records = lm_augment(seeds_texts, gen, cfg)
    else:
        if not args.generic_text:
            raise ConfigError("augment random needs --generic-text")
        records = random_augment(seeds_texts, args.generic_text, args.n, args.seed)
    write_jsonl(records, args.out)
    print(f"{len(records)} {args.kind} records -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.ablate:
        dirs = set(cfg.get("directions", DIRECTIONS))
        for name in args.ablate.split(","):
            name = name.strip()
            if name == "rm":
                cfg["rm_enabled"] = False
            elif name in DIRECTIONS:
                dirs.discard(name)
            else:
                raise ConfigError(f"unknown ablation {name!r}")
        cfg["directions"] = sorted(dirs)
    if args.share:
        cfg["sharing"] = args.share
    cfg["run_dir"] = args.run_dir
    tcfg = _train_config(cfg)
    pairs, corpus = _load_split(args.data, args.split)
    _add_augmented(corpus, args.augmented)
    dev = []
    if args.dev:
        dev_pairs = [p for p in load_pairs(args.dev) if p[1] is not None]
        mrs, refs = metrics.group_references([p[0] for p in dev_pairs], [p[1].raw for p in dev_pairs])
        dev = list(zip(mrs, refs))
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(corpus, work_dir=run / "vocab")
    (run / "vocab.json").write_text(json.dumps(vocab.to_json()))
    trainer = CycleTrainer(corpus, vocab, tcfg, dev=dev).fit()
    save_checkpoint(run / "model.pt", trainer.model, vocab.hash(),
                    extra={"max_len": trainer.max_len, "best_step": trainer.best_step})
    print(f"trained {trainer.step} updates; best dev BLEU {trainer.best_bleu:.2f} at step {trainer.best_step}")
    return EXIT_OK


def _load_model(args):
    vocab = Vocabulary.from_json(json.loads(Path(args.vocab).read_text()))
    model, blob = load_checkpoint(args.checkpoint, vocab.hash())
    model.eval()
    return model, vocab, blob


def cmd_generate(args) -> int:
    model, vocab, blob = _load_model(args)
    mrs = list(dict.fromkeys(mr for mr, _ in load_pairs(args.data)))
    max_len = blob["extra"].get("max_len", {}).get("text", vocab.max_len_text)
    ids = model.generate([vocab.encode_data(m) for m in mrs], "data", "text", max_len,
                         mode=args.decode, beam_size=args.beam_size)
    hyps = [detokenize(vocab.decode_tokens(s)) for s in ids]
    Path(args.out).write_text("\n".join(hyps) + "\n", encoding="utf-8")
    print(f"{len(hyps)} hypotheses ({args.decode}) -> {args.out}")
    return EXIT_OK


def read_references(path, multi_ref: bool) -> list:
    """One reference per line, or blank-line separated groups with ``multi_ref``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not multi_ref:
        return [[ln.strip()] for ln in lines if ln.strip()]
    groups, cur = [], []
    for ln in lines:
        if ln.strip():
            cur.append(ln.strip())
        elif cur:
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups


def cmd_evaluate(args) -> int:
    hyps = [ln.rstrip("\n") for ln in Path(args.hyp).read_text(encoding="utf-8").splitlines() if ln.strip()]
    refs = read_references(args.ref, args.multi_ref)
    if len(hyps) != len(refs):
        raise CorpusError(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    report = metrics.evaluate(hyps, refs, decode_mode=args.decode_mode)
    report.save(args.out)
    print(json.dumps(report.to_json()))
    return EXIT_OK


def cmd_match(args) -> int:
    model, vocab, _ = _load_model(args)
    texts = [r.text if hasattr(r, "text") else r for r in read_jsonl(args.texts)]
    pool = list(dict.fromkeys(mr for mr, _ in load_pairs(args.data)))
    pairs = mine_pairs(texts, pool, ModelEncoder(model, vocab), args.threshold)
    write_pseudo_pairs(pairs, args.out)
    print(f"{len(pairs)} of {len(texts)} texts matched above {args.threshold} -> {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.output_dir:
        cfg["output_dir"] = args.output_dir
    try:
        spec = ExperimentSpec(**cfg)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if spec.dataset != "synthetic" and not (spec.train_path and Path(spec.train_path).exists()):
        raise FileNotFoundError(f"training data not found: {spec.train_path!r}")
    out = Path(spec.output_dir) / spec.hash()
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(spec.to_json(), indent=2, default=str))
    record = run_experiment(spec)
    print(json.dumps({"spec_hash": record.spec_hash, "mean": record.mean, "std": record.std,
                      "failed": record.failed}))
    return EXIT_DIVERGED if record.failed and len(record.failed) == len(spec.seeds) else EXIT_OK


def cmd_synth(args) -> int:
    pairs = make_synthetic(args.n, n_slots=args.n_slots, seed=args.seed)
    write_e2e_csv(pairs, args.out)
    print(f"{len(pairs)} synthetic pairs -> {args.out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fewshot-d2t", description="Few-shot data-to-text generation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse an E2E csv or WebNLG xml/jsonl into normalized jsonl")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="draw a seeded few-shot split")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--fraction", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stratify", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("augment", help="information, LM or random augmentation")
    s.add_argument("kind", choices=["info", "lm", "random"])
    s.add_argument("--data", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cap", type=int, default=10)
    s.add_argument("--top-k", type=int, default=2)
    s.add_argument("--min-words", type=int, default=5)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--generic-text")
    s.add_argument("--n", type=int, default=100, help="number of random sentences")
    s.add_argument("--seed-texts", help="extra seed texts for lm (e.g. info-augmented jsonl)")
    s.add_argument("--generator", choices=["ngram", "hf"], default="ngram")
    s.add_argument("--base-model", help="local causal LM directory for --generator hf")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train the shared-encoder model")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    s.add_argument("--ablate", help="comma list of toggles to switch off: " + ",".join(sorted(DIRECTIONS)) + ",rm")
    s.add_argument("--share", choices=["none", "enc", "dec", "both"])
    s.add_argument("--data", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--augmented", action="append")
    s.add_argument("--dev")
    s.add_argument("--run-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="decode texts for the MRs of a data file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--decode", choices=["greedy", "beam"], required=True)
    s.add_argument("--beam-size", type=int, default=3)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="score hypotheses against references")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--multi-ref", action="store_true")
    s.add_argument("--decode-mode", choices=["greedy", "beam"], default="greedy")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("match", help="mine pseudo pairs with a trained encoder")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--texts", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--threshold", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("experiment", help="run a multi-seed experiment spec")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("synth", help="write a synthetic E2E-style csv")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--n-slots", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CorpusError, CheckpointError, FileNotFoundError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
