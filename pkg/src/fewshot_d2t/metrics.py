"""Corpus-level BLEU-4, NIST, METEOR (exact + stem), ROUGE-L and output diversity.

All scorers take pre-tokenized input: ``hypotheses`` is a list of token lists
and ``references`` a parallel list whose items are lists of reference token
lists. Use :func:`metric_tokenize` to get the lowercased, punctuation-split
tokens the E2E evaluation convention expects. Duplicate references of one
instance are collapsed before scoring.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from .corpus import MeaningRepresentation, tokenize

NIST_BETA = -math.log(0.5) / math.log(1.5) ** 2


def metric_tokenize(text: str) -> list[str]:
    return tokenize(text.lower())


def _check(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} reference sets")
    for i, refs in enumerate(references):
        if not refs:
            raise ValueError(f"instance {i} has no reference")


def _dedupe(refs):
    seen, out = set(), []
    for r in refs:
        key = tuple(r)
        if key not in seen:
            seen.add(key)
            out.append(list(r))
    return out


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ---------------------------------------------------------------------


def bleu4(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]]) -> float:
    """Corpus BLEU with clipped 1-4-gram precision and closest-reference brevity penalty. 0-100."""
    _check(hypotheses, references)
    match = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        refs = _dedupe(refs)
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            h = _ngrams(hyp, n)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= _ngrams(r, n)
            match[n - 1] += sum(min(c, max_ref[g]) for g, c in h.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if min(match) == 0 or hyp_len == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(match, total)) / 4
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


# -- NIST ---------------------------------------------------------------------


def nist(hypotheses, references, n: int = 5) -> float:
    """NIST with information weights estimated on the reference side of the corpus."""
    _check(hypotheses, references)
    references = [_dedupe(r) for r in references]
    counts: Counter = Counter()
    total_words = 0
    for refs in references:
        for r in refs:
            total_words += len(r)
            for k in range(1, n + 1):
                counts.update(_ngrams(r, k))

    def info(g):
        prefix = counts[g[:-1]] if len(g) > 1 else total_words
        return math.log2(prefix / counts[g])

    score = 0.0
    hyp_len = 0
    ref_len = 0.0
    for k in range(1, n + 1):
        num = 0.0
        den = 0
        for hyp, refs in zip(hypotheses, references):
            h = _ngrams(hyp, k)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= _ngrams(r, k)
            num += sum(info(g) * min(c, max_ref[g]) for g, c in h.items() if g in max_ref)
            den += sum(h.values())
        if den:
            score += num / den
    for hyp, refs in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += sum(len(r) for r in refs) / len(refs)
    ratio = hyp_len / ref_len if ref_len else 0.0
    if 0 < ratio < 1:
        score *= math.exp(-NIST_BETA * math.log(ratio) ** 2)
    elif ratio == 0:
        return 0.0
    return score


# -- METEOR -------------------------------------------------------------------


@lru_cache(maxsize=1)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


def _align(hyp, ref):
    """Greedy two-stage (exact, then stem) alignment that prefers extending chunks."""
    matches: dict[int, int] = {}
    used_ref: set[int] = set()
    stem = _stemmer().stem
    for form in (lambda w: w, stem):
        h_forms = [form(w) if i not in matches else None for i, w in enumerate(hyp)]
        r_forms = [form(w) if j not in used_ref else None for j, w in enumerate(ref)]
        for i, hf in enumerate(h_forms):
            if hf is None:
                continue
            cands = [j for j, rf in enumerate(r_forms) if rf == hf and j not in used_ref]
            if not cands:
                continue
            prev = matches.get(i - 1)
            if prev is not None and prev + 1 in cands:
                j = prev + 1
            else:
                # keep reading order: first candidate after the last match, else the first one
                last = max((matches[k] for k in matches if k < i), default=-1)
                after = [j for j in cands if j > last]
                j = after[0] if after else cands[0]
            matches[i] = j
            used_ref.add(j)
    return sorted(matches.items())


def _chunks(alignment) -> int:
    if not alignment:
        return 0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(alignment, alignment[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    return chunks


def meteor_sentence(hyp, ref, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    hyp = [w.lower() for w in hyp]
    ref = [w.lower() for w in ref]
    al = _align(hyp, ref)
    m = len(al)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (_chunks(al) / m) ** beta
    return fmean * (1 - penalty)


def meteor(hypotheses, references, **kw) -> float:
    """Mean over instances of the best-reference sentence METEOR, 0-100.

    Exact and Porter-stem matching only; no synonym or paraphrase tables.
    """
    _check(hypotheses, references)
    if not hypotheses:
        return 0.0
    scores = [max(meteor_sentence(h, r, **kw) for r in _dedupe(refs)) for h, refs in zip(hypotheses, references)]
    return 100.0 * sum(scores) / len(scores)


# -- ROUGE-L ------------------------------------------------------------------


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp, refs, beta: float = 1.2) -> float:
    if not hyp:
        return 0.0
    precs, recs = [], []
    for r in refs:
        lcs = lcs_length(hyp, r)
        precs.append(lcs / len(hyp))
        recs.append(lcs / len(r) if r else 0.0)
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(hypotheses, references, beta: float = 1.2) -> float:
    """Mean sentence ROUGE-L F-measure (best precision and best recall over references), 0-100."""
    _check(hypotheses, references)
    if not hypotheses:
        return 0.0
    return 100.0 * sum(rouge_l_sentence(h, _dedupe(r), beta) for h, r in zip(hypotheses, references)) / len(hypotheses)


# -- diversity ------------------------------------------------------------------


def _input_value_tokens(mr: MeaningRepresentation) -> set[str]:
    return {t for _, v in mr.slot_values() for t in metric_tokenize(v.replace("_", " "))}


def unique_noncopied_tokens(decoded: Sequence[str], inputs: Sequence[MeaningRepresentation]) -> int:
    """Distinct output token types that are not copies of the instance's own input values."""
    if len(decoded) != len(inputs):
        raise ValueError("decoded outputs and inputs are not aligned")
    types = set()
    for text, mr in zip(decoded, inputs):
        copied = _input_value_tokens(mr)
        types.update(t for t in metric_tokenize(text) if t not in copied)
    return len(types)


def realized_slots(text: str, mr: MeaningRepresentation) -> frozenset:
    from .augmentation import find_value_spans

    found = find_value_spans(text, [v.replace("_", " ") for _, v in mr.slot_values()])
    return frozenset(s for s, v in mr.slot_values() if v.replace("_", " ") in found)


def unique_combinations(decoded: Sequence[str], inputs: Sequence[MeaningRepresentation]) -> int:
    if len(decoded) != len(inputs):
        raise ValueError("decoded outputs and inputs are not aligned")
    return len({realized_slots(t, mr) for t, mr in zip(decoded, inputs)})


def diversity_stats(decoded: Sequence[str], inputs: Sequence[MeaningRepresentation],
                    baseline_decoded: Sequence[str]) -> tuple[int, int]:
    """(extra unique non-copied tokens, extra unique slot combinations) relative to a baseline."""
    if len(baseline_decoded) != len(inputs):
        raise ValueError("baseline outputs and inputs are not aligned")
    return (
        unique_noncopied_tokens(decoded, inputs) - unique_noncopied_tokens(baseline_decoded, inputs),
        unique_combinations(decoded, inputs) - unique_combinations(baseline_decoded, inputs),
    )


# -- reports ----------------------------------------------------------------------


@dataclass
class EvalReport:
    bleu4: float
    nist: float
    meteor: float
    rouge_l: float
    n_instances: int
    decode_mode: str = "greedy"
    unique_noncopied_tokens: int = 0
    unique_combinations: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def group_references(inputs: Sequence, refs: Sequence[str]):
    """Pool references of identical inputs; returns (unique inputs, list of reference lists)."""
    order, pooled = [], {}
    for key, ref in zip(inputs, refs):
        if key not in pooled:
            pooled[key] = []
            order.append(key)
        pooled[key].append(ref)
    return order, [pooled[k] for k in order]


def evaluate(hypotheses: Sequence[str], references: Sequence[Sequence[str]], decode_mode: str = "greedy",
             inputs: Sequence[MeaningRepresentation] | None = None) -> EvalReport:
    """Score raw hypothesis strings against raw reference strings."""
    hyp_toks = [metric_tokenize(h) for h in hypotheses]
    ref_toks = [[metric_tokenize(r) for r in refs] for refs in references]
    return EvalReport(
        bleu4=bleu4(hyp_toks, ref_toks),
        nist=nist(hyp_toks, ref_toks),
        meteor=meteor(hyp_toks, ref_toks),
        rouge_l=rouge_l(hyp_toks, ref_toks),
        n_instances=len(hypotheses),
        decode_mode=decode_mode,
        unique_noncopied_tokens=unique_noncopied_tokens(hypotheses, inputs) if inputs is not None else 0,
        unique_combinations=unique_combinations(hypotheses, inputs) if inputs is not None else 0,
    )
