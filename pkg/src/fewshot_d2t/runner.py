"""Experiment orchestration: split, augment, train and evaluate over several seeds."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch

from . import metrics
from .augmentation import (
    Generator,
    GeneratorTrainConfig,
    LmAugConfig,
    NgramGenerator,
    finetune_generator,
    info_augment_all,
    lm_augment,
    random_augment,
    write_jsonl,
)
from .corpus import (
    Provenance,
    TextSample,
    build_value_inventory,
    build_vocab,
    few_shot_split,
    load_pairs,
    save_manifest,
)
from .synthetic import make_synthetic
from .trainer import CycleTrainer, TrainConfig, TrainingDiverged

logger = logging.getLogger(__name__)

METRIC_NAMES = ("bleu4", "nist", "meteor", "rouge_l")

# desk-scale model and schedule: small enough for a laptop CPU
DESK_TRAIN = dict(
    emb_dim=64, hidden=128, layers=1, dropout=0.1, learning_rate=3e-3, batch_size=16,
    total_updates=600, eval_every=100, rm_warmup=100, rm_refresh_every=100,
)


def set_deterministic(threads: int = 1) -> None:
    """Single-threaded, deterministic kernels so reruns match bit-for-bit."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


@dataclass
class AugmentSwitches:
    info: bool = False
    lm: bool = False
    random: bool = False
    reference_upper_bound: bool = False
    info_cap: int = 10
    lm_config: LmAugConfig = field(default_factory=LmAugConfig)
    generator: str = "ngram"  # "ngram" or "hf"
    generator_config: dict = field(default_factory=dict)
    generic_text: str | None = None
    random_n: int | None = None  # default: as many as the LM produced, else 10 per labeled pair
    reference_n: int | None = None  # default: all held-out gold texts

    def __post_init__(self):
        if isinstance(self.lm_config, dict):
            self.lm_config = LmAugConfig(**self.lm_config)


@dataclass
class ExperimentSpec:
    dataset: str = "synthetic"  # "E2E", "WebNLG" or "synthetic"
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    k: int | None = None
    annotation_fraction: float | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentSwitches = field(default_factory=AugmentSwitches)
    rm_enabled: bool = True
    output_dir: str = "runs"
    stratify: bool = False
    # synthetic corpus
    n_train: int = 600
    n_dev: int = 100
    n_test: int = 0
    n_slots: int = 8
    data_seed: int = 0

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_json(self.train)
        if isinstance(self.augment, dict):
            self.augment = AugmentSwitches(**self.augment)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.k is None and self.annotation_fraction is None:
            raise ValueError("set either k or annotation_fraction")
        if self.k is not None and self.k <= 0:
            raise ValueError("k must be > 0")
        if self.annotation_fraction is not None and not 0 < self.annotation_fraction <= 1:
            raise ValueError("annotation_fraction must be in (0, 1]")
        if self.dataset not in ("E2E", "WebNLG", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_json()
        d["augment"]["lm_config"] = asdict(self.augment.lm_config)
        return d

    def hash(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_json().items() if k != "output_dir"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    spec_hash: str
    reports: dict  # seed -> EvalReport dict, or None for a failed seed
    mean: dict
    std: dict
    failed: list

    @classmethod
    def aggregate(cls, spec_hash: str, reports: dict) -> "RunRecord":
        ok = [r for r in reports.values() if r is not None]
        mean, std = {}, {}
        for m in METRIC_NAMES:
            vals = [r[m] for r in ok]
            mean[m] = statistics.fmean(vals) if vals else float("nan")
            std[m] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        failed = sorted(s for s, r in reports.items() if r is None)
        return cls(spec_hash, reports, mean, std, failed)

    def to_json(self) -> dict:
        return asdict(self)


# -- data -------------------------------------------------------------------------


def load_dataset(spec: ExperimentSpec):
    """Returns (train pairs, dev [(mr, refs)], test [(mr, refs)])."""
    if spec.dataset == "synthetic":
        pairs = make_synthetic(spec.n_train + spec.n_dev + spec.n_test, n_slots=spec.n_slots, seed=spec.data_seed)
        train = pairs[: spec.n_train]
        dev = _grouped(pairs[spec.n_train: spec.n_train + spec.n_dev])
        test = _grouped(pairs[spec.n_train + spec.n_dev:])
        return train, dev, test
    if not spec.train_path or not Path(spec.train_path).exists():
        raise FileNotFoundError(f"training data not found: {spec.train_path!r}")
    train = load_pairs(spec.train_path)
    dev = _grouped(load_pairs(spec.dev_path)) if spec.dev_path else []
    test = _grouped(load_pairs(spec.test_path)) if spec.test_path else []
    return train, dev, test


def _grouped(pairs):
    mrs, refs = metrics.group_references([p[0] for p in pairs if p[1] is not None],
                                         [p[1].raw for p in pairs if p[1] is not None])
    return list(zip(mrs, refs))


def resolve_k(spec: ExperimentSpec, n_labeled: int) -> int:
    if spec.k is not None:
        return spec.k
    return max(1, round(spec.annotation_fraction * n_labeled))


# -- augmentation ------------------------------------------------------------------


def make_generator(sw: AugmentSwitches, texts, seed: int, run_dir=None) -> Generator:
    if sw.generator == "ngram":
        return NgramGenerator([t.raw for t in texts])
    if sw.generator == "hf":
        cfg = GeneratorTrainConfig(**{**sw.generator_config, "seed": seed, "run_dir": run_dir})
        return finetune_generator(texts, cfg)
    raise ValueError(f"unknown generator {sw.generator!r}")


def augment_corpus(corpus, pairs, sw: AugmentSwitches, seed: int, generator: Generator | None = None, run_dir=None):
    """Apply the enabled augmenters in place; returns the list of new records."""
    records = []
    if sw.info:
        inv = build_value_inventory(corpus)
        aug = info_augment_all(corpus.labeled, inv, cap=sw.info_cap, seed=seed, ids=corpus.labeled_ids)
        corpus.labeled.extend((a.mr, a.text) for a in aug)
        records.extend(aug)
    if sw.lm:
        seeds = [t for _, t in corpus.labeled]
        gen = generator or make_generator(sw, seeds, seed, run_dir)
        lm_cfg = replace(sw.lm_config, seed=seed)
        lm_texts = lm_augment(seeds, gen, lm_cfg)
        corpus.t_augmented.extend(lm_texts)
        records.extend(lm_texts)
    if sw.random:
        if not sw.generic_text:
            raise ValueError("random augmentation needs generic_text")
        n = sw.random_n
        if n is None:
            available = sum(1 for ln in Path(sw.generic_text).read_text(encoding="utf-8").splitlines() if ln.strip())
            n = min(10 * len(corpus.labeled_ids), available)
        rand = random_augment([t for _, t in corpus.labeled], sw.generic_text, n, seed)
        corpus.t_augmented.extend(rand)
        records.extend(rand)
    if sw.reference_upper_bound:
        logger.warning("reference augmentation uses held-out gold texts: upper-bound experiment only, "
                       "this violates the few-shot premise")
        gold = [TextSample(pairs[i][1].raw, Provenance.REFERENCE) for i in corpus.unlabeled_ids
                if pairs[i][1] is not None]
        if sw.reference_n is not None:
            gold = random.Random(seed).sample(gold, min(sw.reference_n, len(gold)))
        corpus.t_augmented.extend(gold)
        records.extend(gold)
    return records


# -- experiment ----------------------------------------------------------------------


def run_seed(spec: ExperimentSpec, seed: int, data=None, generator: Generator | None = None, out_dir=None):
    """One full run: split, augment, train, evaluate. Returns (EvalReport, trainer)."""
    train_pairs, dev, test = data or load_dataset(spec)
    n_labeled = sum(1 for p in train_pairs if p[1] is not None)
    corpus = few_shot_split(train_pairs, resolve_k(spec, n_labeled), seed, stratify=spec.stratify)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_manifest(corpus, out_dir / "split.json")
    records = augment_corpus(corpus, train_pairs, spec.augment, seed, generator, run_dir=out_dir)
    if out_dir and records:
        write_jsonl(records, out_dir / "augmented.jsonl")
    vocab = build_vocab(corpus, work_dir=out_dir / "vocab" if out_dir else None)
    tcfg = replace(spec.train, seed=seed, rm_enabled=spec.rm_enabled,
                   run_dir=str(out_dir / "train") if out_dir else None)
    trainer = CycleTrainer(corpus, vocab, tcfg, dev=dev).fit()
    eval_set = test or dev
    hyps = trainer.decode_texts([p[0] for p in eval_set])
    report = metrics.evaluate(hyps, [p[1] for p in eval_set], decode_mode=tcfg.decode_mode,
                              inputs=[p[0] for p in eval_set])
    if out_dir:
        report.save(out_dir / "report.json")
        (out_dir / "hypotheses.txt").write_text("\n".join(hyps) + "\n", encoding="utf-8")
    return report, trainer


def run_experiment(spec: ExperimentSpec, generator: Generator | None = None) -> RunRecord:
    """Run every seed; a diverging seed is recorded as failed and the rest continue."""
    data = load_dataset(spec)
    h = spec.hash()
    root = Path(spec.output_dir) / h
    root.mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(json.dumps(spec.to_json(), indent=2, default=str))
    reports = {}
    for seed in spec.seeds:
        try:
            report, _ = run_seed(spec, seed, data=data, generator=generator, out_dir=root / f"seed_{seed}")
            reports[seed] = report.to_json()
        except TrainingDiverged as e:
            logger.error("seed %d diverged: %s", seed, e)
            reports[seed] = None
    record = RunRecord.aggregate(h, reports)
    (root / "record.json").write_text(json.dumps(record.to_json(), indent=2))
    return record


def load_record(output_dir, spec_hash: str) -> RunRecord:
    d = json.loads((Path(output_dir) / spec_hash / "record.json").read_text())
    d["reports"] = {int(k): v for k, v in d["reports"].items()}
    return RunRecord(**d)
