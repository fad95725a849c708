"""Text augmentation: slot-value replacement, iterative LM generation, random text."""

from __future__ import annotations

import itertools
import json
import logging
import os
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import (
    SPECIAL_TOKENS,
    MeaningRepresentation,
    Provenance,
    TextSample,
    ValueInventory,
    detokenize,
    is_punct,
    tokenize,
)

logger = logging.getLogger(__name__)

BASE_LM_ENV = "FEWSHOT_D2T_BASE_LM"
BINARY_VALUES = frozenset({"yes", "no"})
_ENUMERATION_LIMIT = 20000


# -- information augmentation ----------------------------------------------


@dataclass(frozen=True)
class AugmentedPair:
    mr: MeaningRepresentation
    text: TextSample
    source_pair_id: object = None
    replaced: tuple = ()  # ((slot, old, new), ...)


def _value_pattern(value: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(value) + r"(?!\w)", re.IGNORECASE)


def find_value_spans(text: str, values: Iterable[str]) -> dict[str, list[tuple[int, int]]]:
    """Locate whole-word, case-insensitive occurrences; longer values claim spans first."""
    taken: list[tuple[int, int]] = []
    found: dict[str, list[tuple[int, int]]] = {}
    for value in sorted(set(values), key=lambda v: (-len(v), v)):
        for m in _value_pattern(value).finditer(text):
            s, e = m.span()
            if any(s < te and ts < e for ts, te in taken):
                continue
            taken.append((s, e))
            found.setdefault(value, []).append((s, e))
    return found


def _binary_slots(inventory: ValueInventory) -> set[str]:
    return {s for s, vals in inventory.items() if vals and {v.lower() for v in vals} <= BINARY_VALUES}


def replaceable_slots(mr: MeaningRepresentation, text: str, inventory: ValueInventory) -> list:
    """(slot, value, spans, alternatives) for each MR value copied verbatim into the text."""
    excluded = _binary_slots(inventory)
    pairs = [(s, v) for s, v in mr.slot_values() if s not in excluded]
    spans = find_value_spans(text, [v for _, v in pairs])
    out, used_values = [], set()
    for slot, value in pairs:
        if value in used_values or value not in spans:
            continue
        alts = sorted(v for v in inventory[slot] if v != value and v.lower() != value.lower())
        if alts:
            used_values.add(value)
            out.append((slot, value, spans[value], alts))
    return out


def _apply(text: str, spans_by_value: dict, mapping: dict[str, str]) -> str:
    edits = sorted((s, e, mapping[v]) for v, spans in spans_by_value.items() if v in mapping for s, e in spans)
    out, pos = [], 0
    for s, e, new in edits:
        out.append(text[pos:s])
        out.append(new)
        pos = e
    out.append(text[pos:])
    return "".join(out)


def _combinations(cands: list, cap: int, rng: random.Random) -> list[tuple]:
    """Distinct replacement choices: per slot either keep (None) or an alternative index.

    Single-slot and joint replacements are drawn uniformly from all
    non-identity combinations without replacement.
    """
    sizes = [len(c[3]) + 1 for c in cands]
    total = 1
    for s in sizes:
        total *= s
    total -= 1  # identity
    if total <= 0 or cap <= 0:
        return []
    if total <= _ENUMERATION_LIMIT:
        combos = [c for c in itertools.product(*[range(s) for s in sizes]) if any(c)]
        return rng.sample(combos, min(cap, len(combos)))
    chosen, seen = [], set()
    while len(chosen) < min(cap, total):
        c = tuple(rng.randrange(s) for s in sizes)
        if any(c) and c not in seen:
            seen.add(c)
            chosen.append(c)
    return chosen


def info_augment(pair, inventory: ValueInventory, cap: int = 10, seed: int = 0, pair_id=None) -> list[AugmentedPair]:
    """Create up to ``cap`` new pairs by swapping copied values for same-slot alternatives."""
    mr, text = pair
    if cap < 0:
        raise ValueError("cap must be >= 0")
    cands = replaceable_slots(mr, text.raw, inventory)
    if not cands:
        return []
    spans_by_value = {c[1]: c[2] for c in cands}
    rng = random.Random(seed)
    out, seen_texts = [], {text.raw}
    for combo in _combinations(cands, cap, rng):
        mapping, replaced = {}, []
        for (slot, value, _, alts), choice in zip(cands, combo):
            if choice:
                mapping[value] = alts[choice - 1]
                replaced.append((slot, value, alts[choice - 1]))
        new_raw = _apply(text.raw, spans_by_value, mapping)
        if new_raw in seen_texts:
            continue
        seen_texts.add(new_raw)
        out.append(
            AugmentedPair(
                mr=mr.replace_values(mapping),
                text=TextSample(new_raw, Provenance.INFO_AUG),
                source_pair_id=pair_id,
                replaced=tuple(replaced),
            )
        )
    return out


def info_augment_all(pairs: Sequence, inventory: ValueInventory, cap: int = 10, seed: int = 0, ids=None) -> list[AugmentedPair]:
    ids = list(ids) if ids is not None else list(range(len(pairs)))
    out = []
    for i, (pid, pair) in enumerate(zip(ids, pairs)):
        out.extend(info_augment(pair, inventory, cap=cap, seed=seed * 1_000_003 + i, pair_id=pid))
    return out


# -- generators ---------------------------------------------------------------


class Generator:
    """Produces one sentence conditioned on a prompt.

    ``thread_safe`` tells the harness whether concurrent calls are allowed.
    """

    thread_safe = False

    def generate(self, prompt: str, top_k: int, seed: int) -> str:
        raise NotImplementedError


class ScriptedGenerator(Generator):
    """Test double: replays a fixed list of outputs, or calls a function.

    ``script`` is either a sequence (cycled) or ``f(prompt, call_index) -> str``.
    """

    thread_safe = True

    def __init__(self, script):
        self.script = script
        self.calls: list[str] = []

    def generate(self, prompt, top_k, seed):
        i = len(self.calls)
        self.calls.append(prompt)
        if callable(self.script):
            return self.script(prompt, i)
        return self.script[i % len(self.script)]


class NgramGenerator(Generator):
    """A small trigram LM with top-k sampling, trained on in-domain texts.

    Used as a cheap stand-in for a fine-tuned neural LM at desk scale. The
    prompt's last two words seed the history when they are known to the model,
    so each output continues from the previous sentence.
    """

    thread_safe = True

    def __init__(self, texts: Iterable[str], max_words: int = 40):
        self.max_words = max_words
        self.counts: dict[tuple, Counter] = defaultdict(Counter)
        for raw in texts:
            toks = ["<s>", "<s>"] + tokenize(raw) + ["</s>"]
            for a, b, c in zip(toks, toks[1:], toks[2:]):
                self.counts[(a, b)][c] += 1
        if not self.counts:
            raise ValueError("NgramGenerator needs at least one training text")

    def _sample(self, hist, top_k, rng):
        dist = self.counts.get(hist)
        if not dist:
            return "</s>"
        top = sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        words, weights = zip(*top)
        return rng.choices(words, weights=weights)[0]

    def generate(self, prompt, top_k, seed):
        rng = random.Random(seed)
        toks = tokenize(prompt)
        # start a fresh sentence but bias the opening by the prompt's first word
        hist = ("<s>", "<s>")
        if toks and self.counts.get(("<s>", toks[0])) and rng.random() < 0.5:
            out = [toks[0]]
            hist = ("<s>", toks[0])
        else:
            out = []
        while len(out) < self.max_words:
            w = self._sample(hist, top_k, rng)
            if w == "</s>":
                break
            out.append(w)
            hist = (hist[1], w)
        return detokenize(out)


class HFGenerator(Generator):
    """Causal LM from ``transformers`` sampling one sentence per call."""

    thread_safe = False

    def __init__(self, model, tokenizer, max_new_tokens: int = 60):
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.max_new_tokens = max_new_tokens

    def generate(self, prompt, top_k, seed):
        import torch

        torch.manual_seed(seed)
        eos = self.tokenizer.eos_token or ""
        enc = self.tokenizer(prompt + eos, return_tensors="pt")
        with torch.no_grad():
            out = self.model.generate(
                **enc,
                do_sample=True,
                top_k=top_k,
                max_new_tokens=self.max_new_tokens,
                eos_token_id=self.tokenizer.eos_token_id,
                pad_token_id=self.tokenizer.pad_token_id or self.tokenizer.eos_token_id,
            )
        new = out[0, enc["input_ids"].shape[1]:]
        text = self.tokenizer.decode(new, skip_special_tokens=True)
        return text.strip().split("\n")[0].strip()


@dataclass
class GeneratorTrainConfig:
    base_model: str | None = None  # path or hub id; falls back to $FEWSHOT_D2T_BASE_LM
    epochs: int = 3
    learning_rate: float = 5e-5
    batch_size: int = 8
    max_length: int = 64
    seed: int = 0
    run_dir: str | None = None
    stub: Generator | None = None


def finetune_generator(texts: Sequence[TextSample], config: GeneratorTrainConfig) -> Generator:
    """Fine-tune a causal LM on the few-shot texts and wrap it as a :class:`Generator`."""
    if not texts:
        raise ValueError("finetune_generator needs at least one text")
    if config.stub is not None:
        return config.stub
    base = config.base_model or os.environ.get(BASE_LM_ENV)
    if not base or not Path(base).exists():
        raise FileNotFoundError(
            f"no base language model found (got {base!r}). Download a causal LM such as "
            f"gpt2 with `huggingface-cli download gpt2 --local-dir <dir>` and pass "
            f"base_model=<dir> or set {BASE_LM_ENV}=<dir>."
        )
    import torch
    from transformers import AutoModelForCausalLM, AutoTokenizer

    torch.manual_seed(config.seed)
    tok = AutoTokenizer.from_pretrained(base)
    if tok.pad_token is None:
        tok.pad_token = tok.eos_token
    model = AutoModelForCausalLM.from_pretrained(base)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    raws = [t.raw + (tok.eos_token or "") for t in texts]
    rng = random.Random(config.seed)
    for epoch in range(config.epochs):
        rng.shuffle(raws)
        total = 0.0
        for i in range(0, len(raws), config.batch_size):
            enc = tok(raws[i:i + config.batch_size], return_tensors="pt", padding=True,
                      truncation=True, max_length=config.max_length)
            labels = enc["input_ids"].masked_fill(enc["attention_mask"] == 0, -100)
            loss = model(**enc, labels=labels).loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        logger.info("generator epoch %d: loss %.4f", epoch, total)
    if config.run_dir:
        out = Path(config.run_dir) / "generator"
        out.mkdir(parents=True, exist_ok=True)
        model.save_pretrained(out)
        tok.save_pretrained(out)
    return HFGenerator(model, tok, max_new_tokens=config.max_length)


# -- LM augmentation harness -------------------------------------------------


@dataclass
class LmAugConfig:
    top_k: int = 2
    min_words: int = 5
    max_iterations: int = 100
    seed: int = 0
    chain_mode: str = "per_seed"  # or "global"

    def __post_init__(self):
        if self.top_k < 1 or self.min_words < 1 or self.max_iterations < 1:
            raise ValueError("top_k, min_words and max_iterations must all be >= 1")
        if self.chain_mode not in ("per_seed", "global"):
            raise ValueError(f"unknown chain_mode {self.chain_mode!r}")


_SPECIAL_RE = re.compile(r"<[^<>\s]+>")


def _content_tokens(raw: str) -> list[str]:
    """Tokens that are neither special markup like ``<pad>`` nor punctuation."""
    stripped = _SPECIAL_RE.sub(" ", raw)
    return [t for t in tokenize(stripped) if not is_punct(t)]


def is_pruned(raw: str, min_words: int) -> bool:
    """True for sentences that are too short or carry nothing but special tokens."""
    if len(raw.split()) < min_words:
        return True
    return not _content_tokens(raw)


def coverage_types(raw: str) -> set[str]:
    return {t.lower() for t in _content_tokens(raw) if t not in SPECIAL_TOKENS}


@dataclass
class LmAugResult:
    texts: list
    iterations: int
    calls: int
    covered: bool
    failed_chains: list = field(default_factory=list)


def lm_augment(seeds: Sequence[TextSample], generator: Generator, config: LmAugConfig | None = None,
               return_result: bool = False):
    """Grow unpaired in-domain text by chained conditional generation.

    Every iteration advances each live chain by one call; a chain conditions on
    its latest retained sentence. Generation stops once every seed token type
    has appeared in some retained output, or after ``max_iterations``.
    """
    config = config or LmAugConfig()
    if not seeds:
        raise ValueError("lm_augment needs at least one seed text")
    target = set().union(*(coverage_types(s.raw) for s in seeds))
    covered: set[str] = set()
    if config.chain_mode == "per_seed":
        prompts = [s.raw for s in seeds]
    else:
        prompts = [seeds[0].raw]
    alive = list(range(len(prompts)))
    retained, seen = [], set()
    failed, calls, it = [], 0, 0
    done = target <= covered
    while not done and it < config.max_iterations and alive:
        it += 1
        for c in list(alive):
            call_seed = config.seed * 1_000_003 + c * 10_007 + it
            calls += 1
            try:
                out = generator.generate(prompts[c], config.top_k, call_seed)
            except Exception:
                logger.exception("generator failed on chain %d at iteration %d; chain aborted", c, it)
                alive.remove(c)
                failed.append(c)
                continue
            out = (out or "").strip()
            if is_pruned(out, config.min_words):
                continue
            prompts[c] = out
            if out not in seen:
                seen.add(out)
                retained.append(TextSample(out, Provenance.LM_AUG))
            covered |= coverage_types(out)
            if target <= covered:
                done = True
                break
    logger.info("lm_augment: %d sentences after %d iterations (%d calls), covered=%s",
                len(retained), it, calls, done)
    if return_result:
        return LmAugResult(retained, it, calls, done, failed)
    return retained


# -- random baseline ----------------------------------------------------------


def random_augment(source: Sequence[TextSample], generic_text, n: int, seed: int = 0) -> list[TextSample]:
    """Sample ``n`` out-of-domain lines without replacement.

    ``source`` is unused by the sampler; it is accepted so all augmenters
    share one call shape.
    """
    lines = [ln.strip() for ln in Path(generic_text).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{generic_text}: no sentences")
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > len(lines):
        raise ValueError(f"requested {n} sentences but {generic_text} has {len(lines)}")
    idx = sorted(random.Random(seed).sample(range(len(lines)), n))
    return [TextSample(lines[i], Provenance.RANDOM_AUG) for i in idx]


# -- persistence ----------------------------------------------------------------


def write_jsonl(records: Iterable, path) -> None:
    """Persist augmented pairs or bare texts, one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            if isinstance(r, AugmentedPair):
                rec = {
                    "provenance": r.text.provenance.value,
                    "mr": r.mr.to_json(),
                    "text": r.text.raw,
                    "source_pair_id": r.source_pair_id,
                    "replaced": [list(x) for x in r.replaced],
                }
            else:
                rec = {"provenance": r.provenance.value, "mr": None, "text": r.raw,
                       "source_pair_id": None, "replaced": None}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            text = TextSample(rec["text"], Provenance(rec["provenance"]))
            if rec.get("mr") is None:
                out.append(text)
            else:
                out.append(AugmentedPair(
                    mr=MeaningRepresentation.from_json(rec["mr"]),
                    text=text,
                    source_pair_id=rec.get("source_pair_id"),
                    replaced=tuple(tuple(x) for x in rec.get("replaced") or ()),
                ))
    return out
