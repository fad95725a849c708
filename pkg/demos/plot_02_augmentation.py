"""
Growing the training signal: information and LM augmentation
============================================================

Two ways to get more out of k annotated pairs.

* Information augmentation swaps copied slot values in a gold text for other
  values of the same slot, producing new *paired* examples.
* LM augmentation iterates a language model on the gold texts and keeps every
  sentence that survives simple pruning, producing *unpaired* in-domain text.
"""

from fewshot_d2t.augmentation import LmAugConfig, NgramGenerator, info_augment, lm_augment
from fewshot_d2t.corpus import build_value_inventory, few_shot_split
from fewshot_d2t.synthetic import make_synthetic

pairs = make_synthetic(400, seed=1)
corpus = few_shot_split(pairs, k=20, seed=0)

###############################################################################
# Information augmentation
# ------------------------
# The value inventory collects, per slot, every value seen in the MRs.
# Binary slots (familyFriendly yes/no) are never replaced because their
# surface form is not a copy of the value.

inventory = build_value_inventory(corpus)
mr, text = corpus.labeled[0]
print("source:", text.raw)
for aug in info_augment((mr, text), inventory, cap=5, seed=0):
    print("  +", aug.text.raw, "   ", aug.replaced)

###############################################################################
# LM augmentation
# ---------------
# Any object with ``generate(prompt, top_k, seed)`` works as the generator.
# Here a trigram model fitted on the 20 gold texts stands in for a fine-tuned
# causal LM; with the ``lm`` extra installed, ``finetune_generator`` builds
# the real thing from a local GPT-2 checkpoint.

gen = NgramGenerator([t.raw for _, t in corpus.labeled])
result = lm_augment([t for _, t in corpus.labeled], gen, LmAugConfig(max_iterations=20, seed=0),
                    return_result=True)
print(len(result.texts), "sentences kept after", result.calls, "generator calls")
for t in result.texts[:5]:
    print("  *", t.raw)
