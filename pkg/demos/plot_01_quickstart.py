"""
Few-shot data-to-text in five minutes
=====================================

Generate a synthetic restaurant corpus, keep 10% of the texts as the only
annotations, train the shared-encoder model with the cycle objectives, and
score it on held-out meaning representations.

Run with ``python demos/plot_01_quickstart.py`` (about two minutes on one CPU core).
"""

import torch

from fewshot_d2t import metrics
from fewshot_d2t.corpus import build_vocab, few_shot_split, linearize
from fewshot_d2t.runner import DESK_TRAIN
from fewshot_d2t.synthetic import make_synthetic
from fewshot_d2t.trainer import CycleTrainer, TrainConfig

torch.set_num_threads(1)

###############################################################################
# The data
# --------
# Each item pairs an E2E-style meaning representation with one reference
# sentence. The model never sees an MR as a table: it reads a linearized
# token sequence with one marker per slot.

pairs = make_synthetic(600 + 50, seed=0)
train_pairs, dev_pairs = pairs[:600], pairs[600:]
mr, text = train_pairs[0]
print(mr.to_mr_string())
print(" ".join(linearize(mr)))
print(text.raw)

###############################################################################
# A few-shot split
# ----------------
# ``few_shot_split`` keeps k gold pairs; every other item contributes only its
# MR to the unlabeled data pool.

corpus = few_shot_split(train_pairs, k=60, seed=0)
print(len(corpus.labeled), "labeled pairs,", len(corpus.d_unlabeled), "unlabeled MRs")

###############################################################################
# Training
# --------
# One outer iteration runs a cycle update (d -> t' -> d plus the denoising
# autoencoders here), then representation matching (off in this demo), then
# a supervised update on the 60 gold pairs.

vocab = build_vocab(corpus)
dev = [(m, [t.raw]) for m, t in dev_pairs]
cfg = TrainConfig(**{**DESK_TRAIN, "total_updates": 300}, directions={"d2t2d", "ae_d", "ae_t"}, rm_enabled=False)
trainer = CycleTrainer(corpus, vocab, cfg, dev=dev).fit()
for rec in trainer.history:
    print(rec["step"], "dev BLEU-4 %.2f" % rec["dev_bleu"])

###############################################################################
# Generation and scores
# ---------------------
# ``fit`` restores the checkpoint with the best dev BLEU-4. Greedy decoding is
# the default; beam search is one argument away.

hyps = trainer.decode_texts([m for m, _ in dev[:3]])
for (m, refs), h in zip(dev[:3], hyps):
    print(m.to_mr_string(), "\n  ->", h)

report = metrics.evaluate(trainer.decode_texts([m for m, _ in dev]), [r for _, r in dev],
                          inputs=[m for m, _ in dev])
print(report)
