"""Cycle-consistency, representation-matching and supervised training loop.

One outer iteration runs three phases in order, each with its own optimizer
update and its own batch:

1. cycle: the enabled terms among d->t'->d, t->d'->t and the two denoising
   autoencoders, summed;
2. representation matching on the current pseudo pairs (skipped while empty);
3. supervised on the labeled pairs, including information-augmented ones.

Pseudo samples t' and d' are produced without gradient, so d->t'->d never
reaches the text decoder and t->d'->t never reaches the data decoder. Those
parameters get no gradient at all (not a zero gradient), which keeps Adam
from moving them or touching their moment estimates.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import metrics
from .corpus import Corpus, MeaningRepresentation, Provenance, TextSample, Vocabulary, detokenize
from .matching import DEFAULT_THRESHOLD, ModelEncoder, PseudoPair, mine_pairs, write_pseudo_pairs
from .neural import ModelConfig, NoiseConfig, Seq2Seq, apply_noise, pad_batch

logger = logging.getLogger(__name__)

DIRECTIONS = frozenset({"t2d2t", "d2t2d", "ae_t", "ae_d", "noise_on"})


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 48
    dropout: float = 0.3
    total_updates: int = 8000
    directions: frozenset = DIRECTIONS
    rm_enabled: bool = True
    rm_threshold: float = DEFAULT_THRESHOLD
    rm_refresh_every: int = 500
    rm_warmup: int = 500
    rm_pool: str = "all"  # or "unlabeled"
    seed: int = 0
    # model
    emb_dim: int = 600
    hidden: int = 1024
    layers: int = 3
    sharing: str = "enc"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    # optimization
    adam_eps: float = 1e-6
    adam_betas: tuple = (0.9, 0.98)
    clip_norm: float | None = None
    cycle_sampling: str = "greedy"  # or "sample"
    # evaluation and selection
    eval_every: int = 250
    decode_mode: str = "greedy"
    beam_size: int = 3
    select_best: bool = True
    run_dir: str | None = None

    def __post_init__(self):
        self.directions = frozenset(self.directions)
        unknown = self.directions - DIRECTIONS
        if unknown:
            raise ValueError(f"unknown direction toggles: {sorted(unknown)}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not -1.0 <= self.rm_threshold <= 1.0:
            raise ValueError("rm_threshold must be in [-1, 1]")
        if self.rm_pool not in ("all", "unlabeled"):
            raise ValueError("rm_pool must be 'all' or 'unlabeled'")
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig(**self.noise)
        self.adam_betas = tuple(self.adam_betas)

    def model_config(self, vocab: Vocabulary) -> ModelConfig:
        return ModelConfig(
            vocab_size=len(vocab), emb_dim=self.emb_dim, hidden=self.hidden, layers=self.layers,
            dropout=self.dropout, sharing=self.sharing, pad_id=vocab.pad, bos_id=vocab.bos, eos_id=vocab.eos,
        )

    def to_json(self) -> dict:
        d = asdict(self)
        d["directions"] = sorted(self.directions)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "noise" in d and isinstance(d["noise"], dict):
            d["noise"] = NoiseConfig(**d["noise"])
        return cls(**d)


# sampler(seqs, src_side, tgt_side) -> list of id lists; replaces model decoding in cycle steps
Sampler = Callable[[list, str, str], list]


class CycleTrainer:
    """Owns the model, optimizer and data pools for one training run."""

    def __init__(self, corpus: Corpus, vocab: Vocabulary, cfg: TrainConfig, dev=None, model: Seq2Seq | None = None):
        if not corpus.labeled:
            raise ValueError("training needs k > 0 labeled pairs")
        self.corpus = corpus
        self.vocab = vocab
        self.cfg = cfg
        self.dev = list(dev or [])  # [(mr, [reference strings])]
        torch.manual_seed(cfg.seed)
        self.model = model if model is not None else Seq2Seq(cfg.model_config(vocab))
        self.model.train()
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps
        )
        total = max(cfg.total_updates, 1)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda s: max(0.0, 1.0 - s / total)
        )
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(("cycle", "rm", "sup", "noise"), seeds)}
        self.step = 0
        self.pseudo_pairs: list[PseudoPair] = []
        self.history: list[dict] = []
        self.best_bleu = -math.inf
        self.best_step = 0
        self._best_state = None
        self.sampler: Sampler | None = None

        self.data_mrs = corpus.data_pool()
        self.data_ids = [vocab.encode_data(mr) for mr in self.data_mrs]
        texts = corpus.text_pool()
        self.text_ids = [vocab.encode_text(t) for t in texts]
        self.text_ids = [t for t in self.text_ids if t]
        self.labeled_ids = [(vocab.encode_data(mr), vocab.encode_text(t)) for mr, t in corpus.labeled]
        self.rm_texts = [t for t in texts if t.provenance is not Provenance.ANNOTATED]
        if cfg.rm_pool == "unlabeled":
            self.rm_data = list(corpus.d_unlabeled)
        else:
            self.rm_data = self.data_mrs
        self.max_len = {
            "data": min(vocab.max_len_data, int(1.5 * max(len(s) for s in self.data_ids)) + 5),
            "text": min(vocab.max_len_text, int(1.5 * max(len(s) for s in self.text_ids)) + 5),
        }

    # -- helpers --
    def _batch(self, pool_size: int, rng: np.random.Generator) -> np.ndarray:
        n = min(self.cfg.batch_size, pool_size)
        return rng.choice(pool_size, size=n, replace=False)

    def _nll(self, src: Sequence, src_side: str, tgt: Sequence, tgt_side: str) -> torch.Tensor:
        s, sl = pad_batch(src, self.model.cfg, add_eos=True)
        t, tl = pad_batch(tgt, self.model.cfg)
        return self.model.nll(s, sl, src_side, t, tl, tgt_side)

    def _translate(self, seqs, src_side, tgt_side) -> list:
        """Pseudo targets for a cycle step, computed without gradient."""
        if self.sampler is not None:
            return self.sampler(seqs, src_side, tgt_side)
        was_training = self.model.training
        self.model.eval()
        with torch.no_grad():
            src, sl = pad_batch(seqs, self.model.cfg, add_eos=True)
            enc = self.model.encode(src, sl, src_side)
            if self.cfg.cycle_sampling == "sample":
                out = self._sample(enc, tgt_side)
            else:
                out = self.model.greedy(enc, tgt_side, self.max_len[tgt_side])
        self.model.train(was_training)
        return out

    def _sample(self, enc, side):
        dec = self.model.decoder_for(side)
        sid = ("data", "text").index(side)
        B = enc.states.size(0)
        tok = torch.full((B, 1), self.model.cfg.bos_id, dtype=torch.long)
        state, out, done = enc.final, [[] for _ in range(B)], [False] * B
        for _ in range(self.max_len[side]):
            logits, state = dec(enc, tok, sid, state)
            nxt = torch.multinomial(torch.softmax(logits[:, -1], -1), 1)[:, 0]
            for b in range(B):
                if not done[b]:
                    if int(nxt[b]) == self.model.cfg.eos_id:
                        done[b] = True
                    else:
                        out[b].append(int(nxt[b]))
            if all(done):
                break
            tok = nxt[:, None]
        return out

    def _update(self, loss: torch.Tensor) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {self.step}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.cfg.clip_norm:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.clip_norm)
        self.optimizer.step()
        return value

    def _noised(self, seqs):
        cfg = self.cfg.noise if "noise_on" in self.cfg.directions else NoiseConfig(0.0, 1)
        special = self.vocab.special_ids - self.vocab.marker_ids
        return [apply_noise(s, cfg, self.rngs["noise"], special_ids=special, pad_id=self.vocab.pad) for s in seqs]

    # -- losses --
    def loss_d2t2d(self, data_batch: Sequence) -> torch.Tensor:
        if not data_batch:
            raise ValueError("empty batch")
        t_prime = self._translate(list(data_batch), "data", "text")
        return self._nll(t_prime, "text", data_batch, "data")

    def loss_t2d2t(self, text_batch: Sequence) -> torch.Tensor:
        if not text_batch:
            raise ValueError("empty batch")
        d_prime = self._translate(list(text_batch), "text", "data")
        return self._nll(d_prime, "data", text_batch, "text")

    def loss_autoencode(self, data_batch: Sequence, text_batch: Sequence, ae_d: bool = True, ae_t: bool = True):
        if (ae_d and not data_batch) or (ae_t and not text_batch):
            raise ValueError("empty batch")
        loss = torch.zeros(())
        if ae_d:
            loss = loss + self._nll(self._noised(data_batch), "data", data_batch, "data")
        if ae_t:
            loss = loss + self._nll(self._noised(text_batch), "text", text_batch, "text")
        return loss

    def loss_supervised(self, pairs: Sequence) -> torch.Tensor:
        if not pairs:
            raise ValueError("empty batch")
        d = [p[0] for p in pairs]
        t = [p[1] for p in pairs]
        return self._nll(d, "data", t, "text") + self._nll(t, "text", d, "data")

    # -- single-objective steps --
    def step_d2t2d(self, data_batch: Sequence) -> float:
        return self._update(self.loss_d2t2d(data_batch))

    def step_t2d2t(self, text_batch: Sequence) -> float:
        return self._update(self.loss_t2d2t(text_batch))

    def step_autoencode(self, data_batch, text_batch, ae_d: bool = True, ae_t: bool = True) -> float:
        return self._update(self.loss_autoencode(data_batch, text_batch, ae_d, ae_t))

    def step_supervised(self, pairs: Sequence) -> float:
        return self._update(self.loss_supervised(pairs))

    def step_rm(self, pseudo_pairs: Sequence[PseudoPair]) -> float:
        if not pseudo_pairs:
            return 0.0
        pairs = [(self.vocab.encode_data(p.mr), self.vocab.encode_text(p.text)) for p in pseudo_pairs]
        return self._update(self.loss_supervised([p for p in pairs if p[1]]))

    # -- phases --
    def cycle_phase(self) -> float | None:
        dirs = self.cfg.directions
        if not dirs & {"t2d2t", "d2t2d", "ae_t", "ae_d"}:
            return None
        rng = self.rngs["cycle"]
        d_batch = [self.data_ids[i] for i in self._batch(len(self.data_ids), rng)]
        t_batch = [self.text_ids[i] for i in self._batch(len(self.text_ids), rng)]
        loss = torch.zeros(())
        if "d2t2d" in dirs:
            loss = loss + self.loss_d2t2d(d_batch)
        if "t2d2t" in dirs:
            loss = loss + self.loss_t2d2t(t_batch)
        if "ae_d" in dirs or "ae_t" in dirs:
            loss = loss + self.loss_autoencode(d_batch, t_batch, "ae_d" in dirs, "ae_t" in dirs)
        return self._update(loss)

    def rm_phase(self) -> float | None:
        if not (self.cfg.rm_enabled and self.pseudo_pairs):
            return None
        idx = self._batch(len(self.pseudo_pairs), self.rngs["rm"])
        return self.step_rm([self.pseudo_pairs[i] for i in idx])

    def supervised_phase(self) -> float:
        idx = self._batch(len(self.labeled_ids), self.rngs["sup"])
        return self.step_supervised([self.labeled_ids[i] for i in idx])

    def refresh_pseudo_pairs(self) -> list[PseudoPair]:
        self.pseudo_pairs = mine_pairs(
            self.rm_texts, self.rm_data, ModelEncoder(self.model, self.vocab), self.cfg.rm_threshold, step=self.step
        )
        logger.info("step %d: mined %d pseudo pairs from %d texts", self.step, len(self.pseudo_pairs), len(self.rm_texts))
        if self.cfg.run_dir:
            write_pseudo_pairs(self.pseudo_pairs, Path(self.cfg.run_dir) / "pseudo_pairs" / f"step_{self.step}.jsonl")
        return self.pseudo_pairs

    def _rm_due(self) -> bool:
        c = self.cfg
        if not c.rm_enabled or not self.rm_texts or self.step < c.rm_warmup:
            return False
        return (self.step - c.rm_warmup) % max(c.rm_refresh_every, 1) == 0

    def train_step(self) -> dict:
        """One outer iteration: cycle, then RM, then supervised."""
        if self._rm_due():
            self.refresh_pseudo_pairs()
        losses = {"cycle": self.cycle_phase(), "rm": self.rm_phase(), "supervised": self.supervised_phase()}
        self.scheduler.step()
        self.step += 1
        return losses

    # -- evaluation --
    def decode_texts(self, mrs: Sequence[MeaningRepresentation], mode: str | None = None) -> list[str]:
        was = self.model.training
        self.model.eval()
        try:
            ids = self.model.generate(
                [self.vocab.encode_data(m) for m in mrs], "data", "text", self.max_len["text"],
                mode=mode or self.cfg.decode_mode, beam_size=self.cfg.beam_size,
            )
        finally:
            self.model.train(was)
        return [detokenize(self.vocab.decode_tokens(s)) for s in ids]

    def evaluate(self, pairs=None, mode: str | None = None) -> float:
        """BLEU-4 of generated text against references; ``pairs`` is [(mr, [refs])]."""
        pairs = self.dev if pairs is None else pairs
        if not pairs:
            return float("nan")
        hyps = self.decode_texts([p[0] for p in pairs], mode)
        return metrics.bleu4(
            [metrics.metric_tokenize(h) for h in hyps],
            [[metrics.metric_tokenize(r) for r in p[1]] for p in pairs],
        )

    def _record(self, losses_acc: dict, n: int) -> dict:
        rec = {"step": self.step, "lr": self.scheduler.get_last_lr()[0]}
        for k, (total, count) in losses_acc.items():
            rec[f"loss_{k}"] = total / count if count else None
        rec["n_pseudo_pairs"] = len(self.pseudo_pairs)
        if self.dev:
            rec["dev_bleu"] = self.evaluate()
            if self.cfg.select_best and rec["dev_bleu"] > self.best_bleu:
                self.best_bleu = rec["dev_bleu"]
                self.best_step = self.step
                self._best_state = copy.deepcopy(self.model.state_dict())
        self.history.append(rec)
        if self.cfg.run_dir:
            run = Path(self.cfg.run_dir)
            run.mkdir(parents=True, exist_ok=True)
            with (run / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
            self.save(run / "checkpoints" / f"step_{self.step}")
        return rec

    def fit(self, n_updates: int | None = None) -> "CycleTrainer":
        """Run until ``total_updates`` (or ``n_updates`` more iterations) and restore the best dev model."""
        end = self.cfg.total_updates if n_updates is None else self.step + n_updates
        if self.cfg.run_dir:
            Path(self.cfg.run_dir).mkdir(parents=True, exist_ok=True)
            (Path(self.cfg.run_dir) / "config.json").write_text(json.dumps(self.cfg.to_json(), indent=2))
        acc: dict = {}
        while self.step < end:
            losses = self.train_step()
            for k, v in losses.items():
                if v is not None:
                    t, c = acc.get(k, (0.0, 0))
                    acc[k] = (t + v, c + 1)
            if self.step % self.cfg.eval_every == 0 or self.step == end:
                rec = self._record(acc, self.cfg.eval_every)
                logger.info("step %d %s", self.step, {k: v for k, v in rec.items() if k != "step"})
                acc = {}
        if self.step >= self.cfg.total_updates and self.cfg.select_best and self._best_state is not None:
            self.model.load_state_dict(self._best_state)
        return self

    # -- persistence --
    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "step": self.step,
            "rngs": {k: r.bit_generator.state for k, r in self.rngs.items()},
            "torch_rng": torch.get_rng_state(),
            "pseudo_pairs": self.pseudo_pairs,
            "history": self.history,
            "best": (self.best_bleu, self.best_step, self._best_state),
            "config": self.cfg.to_json(),
            "vocab_hash": self.vocab.hash(),
        }

    def load_state_dict(self, blob: dict) -> None:
        if blob["vocab_hash"] != self.vocab.hash():
            raise ValueError("checkpoint was trained with a different vocabulary")
        self.model.load_state_dict(blob["model"])
        self.optimizer.load_state_dict(blob["optimizer"])
        self.scheduler.load_state_dict(blob["scheduler"])
        self.step = blob["step"]
        for k, st in blob["rngs"].items():
            self.rngs[k].bit_generator.state = st
        torch.set_rng_state(blob["torch_rng"])
        self.pseudo_pairs = list(blob["pseudo_pairs"])
        self.history = list(blob["history"])
        self.best_bleu, self.best_step, self._best_state = blob["best"]

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), path)

    def resume(self, path) -> None:
        self.load_state_dict(torch.load(Path(path), map_location="cpu", weights_only=False))


def train(corpus: Corpus, cfg: TrainConfig, vocab: Vocabulary, dev=None) -> CycleTrainer:
    """Build a trainer and run it for ``cfg.total_updates`` iterations."""
    if not corpus.labeled:
        raise ValueError("training needs k > 0 labeled pairs")
    return CycleTrainer(corpus, vocab, cfg, dev=dev).fit()
