"""Pseudo-pair mining by cosine similarity in the shared encoder space."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import MeaningRepresentation, TextSample, Vocabulary

DEFAULT_THRESHOLD = 0.7

# encoder(items, side) -> (n, dim) array; side is "data" or "text"
EncoderFn = Callable[[Sequence, str], np.ndarray]


@dataclass(frozen=True)
class PseudoPair:
    mr: MeaningRepresentation
    text: TextSample
    similarity: float
    mined_at_step: int = 0
    pool_index: int = -1

    def to_json(self) -> dict:
        return {
            "step": self.mined_at_step,
            "similarity": self.similarity,
            "mr": self.mr.to_json(),
            "text": self.text.raw,
            "text_provenance": self.text.provenance.value,
        }


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero representation vector")
    return m / norms


def mine_pairs(
    texts: Sequence[TextSample],
    data_pool: Sequence[MeaningRepresentation],
    encoder: EncoderFn,
    threshold: float = DEFAULT_THRESHOLD,
    step: int = 0,
    block: int = 1024,
) -> list[PseudoPair]:
    """Match each text to its most similar MR; keep matches with similarity > threshold.

    Ties go to the lowest pool index. Exhaustive search over the pool.
    """
    if not texts or not data_pool:
        return []
    t_rep = _normalize_rows(np.asarray(encoder(list(texts), "text"), dtype=float))
    d_rep = _normalize_rows(np.asarray(encoder(list(data_pool), "data"), dtype=float))
    out = []
    for start in range(0, len(texts), block):
        sims = np.clip(t_rep[start:start + block] @ d_rep.T, -1.0, 1.0)
        best = sims.argmax(axis=1)  # first maximum, i.e. lowest index on ties
        for row, j in enumerate(best):
            s = float(sims[row, j])
            if s > threshold:
                out.append(PseudoPair(data_pool[j], texts[start + row], s, step, int(j)))
    return out


class ModelEncoder:
    """Adapter exposing a :class:`~fewshot_d2t.neural.Seq2Seq` as an :data:`EncoderFn`.

    Call it only on a frozen snapshot: it switches the model to eval mode and
    restores the previous mode afterwards.
    """

    def __init__(self, model, vocab: Vocabulary):
        self.model = model
        self.vocab = vocab

    def __call__(self, items, side):
        was_training = self.model.training
        self.model.eval()
        try:
            if side == "data":
                seqs = [self.vocab.encode_data(mr) for mr in items]
            else:
                seqs = [self.vocab.encode_text(t) or [self.vocab.unk] for t in items]
            return self.model.represent(seqs, side)
        finally:
            self.model.train(was_training)


def write_pseudo_pairs(pairs: Sequence[PseudoPair], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")
