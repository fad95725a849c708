"""Few-shot data-to-text generation with augmentation, cycle consistency and representation matching."""

from .corpus import (
    Corpus,
    CorpusError,
    MeaningRepresentation,
    Provenance,
    SlotValue,
    TextSample,
    Vocabulary,
    build_value_inventory,
    build_vocab,
    few_shot_split,
    linearize,
    parse_e2e,
    parse_webnlg,
)
from .augmentation import LmAugConfig, info_augment, lm_augment, random_augment
from .matching import PseudoPair, cosine, mine_pairs
from .metrics import EvalReport, bleu4, meteor, nist, rouge_l
from .neural import ModelConfig, NoiseConfig, Seq2Seq, apply_noise, loss_nll
from .trainer import CycleTrainer, TrainConfig, TrainingDiverged, train
from .runner import ExperimentSpec, RunRecord, run_experiment
from .synthetic import make_synthetic

__version__ = "0.1.0"
