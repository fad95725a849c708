"""Dataset ingestion, tokenization, linearization and few-shot splitting.

Two input formats are supported:

* E2E NLG CSV files with an ``mr`` column (``slot[value], slot[value], ...``)
  and an optional ``ref`` column.
* WebNLG, either the benchmark XML release or a flat JSON-lines form with one
  record per lexicalization::

      {"triples": [["Alan_Bean", "occupation", "Test_pilot"]], "text": "..."}

  The ``text`` key may be absent or null for unlabeled entries.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import re
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)

E2E_MIN_UNITS, E2E_MAX_UNITS = 3, 8
WEBNLG_MIN_UNITS, WEBNLG_MAX_UNITS = 1, 7
MAX_LEN_E2E, MAX_LEN_WEBNLG = 100, 200

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_MR_ITEM_RE = re.compile(r"\s*([^\[\],]+?)\s*\[(.*?)\]\s*(?:,|$)")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_NO_SPACE_BEFORE = set(".,!?;:%)]}'")
_NO_SPACE_AFTER = set("([{£$")


class CorpusError(ValueError):
    """Raised on malformed input data or invalid corpus operations."""


class SourceFormat(str, Enum):
    E2E = "E2E"
    WEBNLG = "WebNLG"


class Provenance(str, Enum):
    ANNOTATED = "annotated"
    INFO_AUG = "info_aug"
    LM_AUG = "lm_aug"
    RANDOM_AUG = "random_aug"
    REFERENCE = "reference"


# -- tokenization -----------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Split on whitespace and punctuation, keeping punctuation as tokens."""
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    out: list[str] = []
    for tok in tokens:
        if out and not (tok in _NO_SPACE_BEFORE or out[-1] in _NO_SPACE_AFTER):
            out.append(" ")
        out.append(tok)
    return "".join(out)


def is_punct(token: str) -> bool:
    return not any(ch.isalnum() for ch in token)


def slot_marker(slot: str) -> str:
    """``familyFriendly`` -> ``[family friendly]``."""
    words = _CAMEL_RE.sub(" ", slot.strip()).replace("_", " ").lower().split()
    return "[" + " ".join(words) + "]"


def is_marker(token: str) -> bool:
    return len(token) > 2 and token[0] == "[" and token[-1] == "]"


# -- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class SlotValue:
    slot: str
    value: str

    def __post_init__(self):
        if not self.slot.strip():
            raise CorpusError("slot name must be non-empty")
        if not self.value.strip():
            raise CorpusError(f"empty value for slot {self.slot!r}")


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            if not getattr(self, name).strip():
                raise CorpusError(f"triple has empty {name}: {self}")


@dataclass(frozen=True)
class MeaningRepresentation:
    """One structured input: slot-value pairs (E2E) or RDF triples (WebNLG)."""

    units: tuple
    source_format: SourceFormat = SourceFormat.E2E

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        n = len(self.units)
        if self.source_format is SourceFormat.E2E:
            if not E2E_MIN_UNITS <= n <= E2E_MAX_UNITS:
                raise CorpusError(f"E2E MR must have {E2E_MIN_UNITS}-{E2E_MAX_UNITS} slots, got {n}")
            slots = [u.slot for u in self.units]
            if len(set(slots)) != len(slots):
                raise CorpusError(f"duplicate slot names in MR: {slots}")
        else:
            if not WEBNLG_MIN_UNITS <= n <= WEBNLG_MAX_UNITS:
                raise CorpusError(
                    f"WebNLG MR must have {WEBNLG_MIN_UNITS}-{WEBNLG_MAX_UNITS} triples, got {n}"
                )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "MeaningRepresentation":
        return cls(tuple(SlotValue(s, v) for s, v in pairs), SourceFormat.E2E)

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence[str]]) -> "MeaningRepresentation":
        return cls(tuple(Triple(*t) for t in triples), SourceFormat.WEBNLG)

    def slot_values(self) -> list[tuple[str, str]]:
        """Flatten to (slot, value) pairs; triples yield relation-typed subject/object slots."""
        if self.source_format is SourceFormat.E2E:
            return [(u.slot, u.value) for u in self.units]
        out = []
        for t in self.units:
            out.append((f"{t.relation}.subject", t.subject))
            out.append((f"{t.relation}.object", t.object))
        return out

    def replace_values(self, mapping: dict[str, str]) -> "MeaningRepresentation":
        """Return a copy with every value equal to a key of ``mapping`` substituted."""
        if self.source_format is SourceFormat.E2E:
            units = [SlotValue(u.slot, mapping.get(u.value, u.value)) for u in self.units]
        else:
            units = [
                Triple(mapping.get(t.subject, t.subject), t.relation, mapping.get(t.object, t.object))
                for t in self.units
            ]
        return MeaningRepresentation(tuple(units), self.source_format)

    def to_json(self):
        if self.source_format is SourceFormat.E2E:
            return {"format": "E2E", "units": [[u.slot, u.value] for u in self.units]}
        return {"format": "WebNLG", "units": [[t.subject, t.relation, t.object] for t in self.units]}

    @classmethod
    def from_json(cls, obj) -> "MeaningRepresentation":
        if obj["format"] == "E2E":
            return cls.from_pairs(obj["units"])
        return cls.from_triples(obj["units"])

    def to_mr_string(self) -> str:
        if self.source_format is SourceFormat.E2E:
            return ", ".join(f"{u.slot}[{u.value}]" for u in self.units)
        return " && ".join(f"{t.subject} | {t.relation} | {t.object}" for t in self.units)


@dataclass(frozen=True)
class TextSample:
    raw: str
    provenance: Provenance = Provenance.ANNOTATED
    tokens: tuple = field(default=None)

    def __post_init__(self):
        if self.tokens is None:
            object.__setattr__(self, "tokens", tuple(tokenize(self.raw)))
        else:
            object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "provenance", Provenance(self.provenance))


Pair = tuple  # (MeaningRepresentation, TextSample | None)


@dataclass
class Corpus:
    """The data universe for one few-shot run.

    ``labeled`` holds the k gold pairs and, after information augmentation,
    the augmented pairs as well. ``labeled_ids`` indexes into the pair list
    the split was drawn from (augmented pairs carry ``None``).
    """

    d_unlabeled: list
    labeled: list
    t_augmented: list = field(default_factory=list)
    labeled_ids: list = field(default_factory=list)
    unlabeled_ids: list = field(default_factory=list)
    seed: int | None = None
    k: int | None = None

    @property
    def source_format(self) -> SourceFormat:
        if self.labeled:
            return self.labeled[0][0].source_format
        return self.d_unlabeled[0].source_format

    def data_pool(self) -> list:
        """D = D_L ∪ D_U, labeled first, duplicates by identity kept once."""
        seen, out = set(), []
        for mr in [p[0] for p in self.labeled] + list(self.d_unlabeled):
            if mr not in seen:
                seen.add(mr)
                out.append(mr)
        return out

    def text_pool(self) -> list:
        """T = T_L ∪ T'."""
        return [p[1] for p in self.labeled] + list(self.t_augmented)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "k": self.k,
            "labeled_ids": list(self.labeled_ids),
            "unlabeled_ids": list(self.unlabeled_ids),
        }


# -- parsing ----------------------------------------------------------------


def parse_mr_string(s: str, row: int | None = None) -> MeaningRepresentation:
    where = f" (row {row})" if row is not None else ""
    s = (s or "").strip()
    if not s:
        raise CorpusError(f"empty MR{where}")
    pairs = []
    pos = 0
    while pos < len(s):
        m = _MR_ITEM_RE.match(s, pos)
        if not m or m.end() == pos:
            raise CorpusError(f"malformed MR{where}: {s!r}")
        pairs.append((m.group(1).strip(), m.group(2).strip()))
        pos = m.end()
    try:
        return MeaningRepresentation.from_pairs(pairs)
    except CorpusError as e:
        raise CorpusError(f"{e}{where}") from None


def parse_e2e(path) -> list:
    """Read an E2E CSV; returns (MR, TextSample | None) per row."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "mr" not in reader.fieldnames:
            raise CorpusError(f"{path}: missing 'mr' column")
        for i, row in enumerate(reader, start=1):
            mr = parse_mr_string(row["mr"], row=i)
            ref = (row.get("ref") or "").strip()
            out.append((mr, TextSample(ref) if ref else None))
    return out


def _triple_from_string(s: str) -> tuple[str, str, str]:
    parts = [p.strip() for p in s.split("|")]
    if len(parts) != 3 or not all(parts):
        raise CorpusError(f"malformed triple: {s!r}")
    return parts[0], parts[1], parts[2]


def parse_webnlg(path) -> list:
    """Read WebNLG XML or JSON-lines; one pair per lexicalization."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix in (".jsonl", ".json"):
        return _parse_webnlg_jsonl(path)
    return _parse_webnlg_xml(path)


def _parse_webnlg_jsonl(path: Path) -> list:
    out = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            triples = rec.get("triples") or []
            for t in triples:
                if len(t) != 3 or not all(str(x).strip() for x in t):
                    raise CorpusError(f"line {i}: triple with missing field: {t!r}")
            try:
                mr = MeaningRepresentation.from_triples(triples)
            except CorpusError as e:
                raise CorpusError(f"line {i}: {e}") from None
            text = rec.get("text")
            out.append((mr, TextSample(text) if text else None))
    return out


def _parse_webnlg_xml(path: Path) -> list:
    root = ET.parse(path).getroot()
    out = []
    for entry in root.iter("entry"):
        tripleset = entry.find("modifiedtripleset")
        if tripleset is None:
            tripleset = entry.find("originaltripleset")
        if tripleset is None:
            raise CorpusError(f"entry {entry.get('eid')}: no tripleset")
        triples = [_triple_from_string(t.text or "") for t in tripleset.findall("mtriple") + tripleset.findall("otriple")]
        try:
            mr = MeaningRepresentation.from_triples(triples)
        except CorpusError as e:
            raise CorpusError(f"entry {entry.get('eid')}: {e}") from None
        lexs = [lex.text.strip() for lex in entry.findall("lex") if lex.text and lex.text.strip()]
        if not lexs:
            out.append((mr, None))
        for lex in lexs:
            out.append((mr, TextSample(lex)))
    return out


def write_e2e_csv(pairs: Sequence, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mr", "ref"])
        for mr, text in pairs:
            w.writerow([mr.to_mr_string(), text.raw if text is not None else ""])


def load_pairs(path) -> list:
    path = Path(path)
    if path.suffix == ".csv":
        return parse_e2e(path)
    return parse_webnlg(path)


# -- linearization ----------------------------------------------------------


def _value_tokens(value: str) -> list[str]:
    # WebNLG entities use underscores in place of spaces
    return tokenize(value.replace("_", " "))


def linearize(d: MeaningRepresentation) -> list[str]:
    """Flatten an MR into ``[slot] value tokens ...``."""
    if not d.units:
        raise CorpusError("cannot linearize an empty MR")
    out: list[str] = []
    if d.source_format is SourceFormat.E2E:
        for u in d.units:
            out.append(slot_marker(u.slot))
            out.extend(_value_tokens(u.value))
    else:
        for t in d.units:
            out.append("[subject]")
            out.extend(_value_tokens(t.subject))
            out.append("[relation]")
            out.extend(_value_tokens(t.relation))
            out.append("[object]")
            out.extend(_value_tokens(t.object))
    return out


def delinearize(tokens: Sequence[str], source_format: SourceFormat = SourceFormat.E2E) -> list:
    """Best-effort inverse of :func:`linearize`; returns (marker, value) pairs.

    Used for scoring reconstructed data sequences, so malformed input is
    tolerated rather than rejected.
    """
    out, cur, buf = [], None, []
    for tok in tokens:
        if is_marker(tok):
            if cur is not None and buf:
                out.append((cur, detokenize(buf)))
            cur, buf = tok, []
        elif cur is not None:
            buf.append(tok)
    if cur is not None and buf:
        out.append((cur, detokenize(buf)))
    return out


# -- splitting --------------------------------------------------------------


def few_shot_split(pairs: Sequence, k: int, seed: int, stratify: bool = False) -> Corpus:
    """Draw k labeled pairs; the rest contribute only their MRs.

    With ``stratify=True`` the k pairs are spread across slot-combination
    strata proportionally (largest remainder), which is not a claim about how
    any published subset was sampled.
    """
    labeled_pool = [i for i, p in enumerate(pairs) if p[1] is not None]
    if k <= 0:
        raise CorpusError("k must be positive (at least one labeled pair is required)")
    if k > len(labeled_pool):
        raise CorpusError(f"k={k} exceeds the {len(labeled_pool)} available labeled pairs")
    rng = random.Random(seed)
    if stratify:
        chosen = _stratified_sample(pairs, labeled_pool, k, rng)
    else:
        chosen = sorted(rng.sample(labeled_pool, k))
    chosen_set = set(chosen)
    rest = [i for i in range(len(pairs)) if i not in chosen_set]
    return Corpus(
        d_unlabeled=[pairs[i][0] for i in rest],
        labeled=[pairs[i] for i in chosen],
        labeled_ids=chosen,
        unlabeled_ids=rest,
        seed=seed,
        k=k,
    )


def _combination(mr: MeaningRepresentation) -> tuple:
    if mr.source_format is SourceFormat.E2E:
        return tuple(sorted(u.slot for u in mr.units))
    return tuple(sorted(t.relation for t in mr.units))


def _stratified_sample(pairs, pool, k, rng) -> list[int]:
    strata = defaultdict(list)
    for i in pool:
        strata[_combination(pairs[i][0])].append(i)
    keys = sorted(strata)
    quotas = {key: k * len(strata[key]) / len(pool) for key in keys}
    alloc = {key: int(q) for key, q in quotas.items()}
    by_remainder = sorted(keys, key=lambda key: (-(quotas[key] - alloc[key]), key))
    for key in by_remainder[: k - sum(alloc.values())]:
        alloc[key] += 1
    chosen = []
    for key in keys:
        chosen.extend(rng.sample(strata[key], alloc[key]))
    return sorted(chosen)


def save_manifest(corpus: Corpus, path) -> None:
    Path(path).write_text(json.dumps(corpus.manifest(), indent=2))


def corpus_from_manifest(pairs: Sequence, path) -> Corpus:
    m = json.loads(Path(path).read_text())
    return Corpus(
        d_unlabeled=[pairs[i][0] for i in m["unlabeled_ids"]],
        labeled=[pairs[i] for i in m["labeled_ids"]],
        labeled_ids=list(m["labeled_ids"]),
        unlabeled_ids=list(m["unlabeled_ids"]),
        seed=m["seed"],
        k=m["k"],
    )


# -- value inventory --------------------------------------------------------


class ValueInventory(dict):
    """slot -> set of observed values. Missing slots look up as an empty set."""

    def __missing__(self, key):
        return set()


def build_value_inventory(corpus: Corpus) -> ValueInventory:
    inv = ValueInventory()
    for mr in [p[0] for p in corpus.labeled] + list(corpus.d_unlabeled):
        for slot, value in mr.slot_values():
            inv.setdefault(slot, set()).add(value)
    return inv


# -- vocabulary -------------------------------------------------------------


class Vocabulary:
    """Token/id bijection. Specials and slot markers come first."""

    def __init__(self, tokens: Sequence[str], markers: Sequence[str] = ()):
        itos = list(SPECIAL_TOKENS)
        for m in sorted(set(markers)):
            itos.append(m)
        seen = set(itos)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                itos.append(t)
        self.itos = itos
        self.stoi = {t: i for i, t in enumerate(itos)}
        self.n_special = len(SPECIAL_TOKENS) + len(set(markers))
        self.pad, self.bos, self.eos, self.unk = (self.stoi[t] for t in SPECIAL_TOKENS)
        self.max_len_data = MAX_LEN_E2E
        self.max_len_text = MAX_LEN_E2E
        self.segmenter = None

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def special_ids(self) -> set[int]:
        return set(range(self.n_special))

    @property
    def marker_ids(self) -> set[int]:
        return set(range(len(SPECIAL_TOKENS), self.n_special))

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, self.unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]

    def pieces(self, tokens: Sequence[str]) -> list[str]:
        """Apply subword segmentation if configured (markers stay atomic)."""
        if self.segmenter is None:
            return list(tokens)
        return self.segmenter.segment(tokens)

    def encode_data(self, mr: MeaningRepresentation) -> list[int]:
        """Encode a linearized MR, truncating only at unit boundaries."""
        ids = self.encode(self.pieces(linearize(mr)))
        cap = self.max_len_data - 1  # room for eos
        if len(ids) <= cap:
            return ids
        logger.warning("data sequence of length %d truncated to %d", len(ids), cap)
        markers = self.marker_ids
        cut = cap
        # back off to the last unit start that fits
        starts = [i for i, t in enumerate(ids[: cap + 1]) if t in markers]
        unit_starts = starts if mr.source_format is SourceFormat.E2E else [
            i for i in starts if self.itos[ids[i]] == "[subject]"
        ]
        fitting = [s for s in unit_starts if s > 0]
        if fitting:
            cut = fitting[-1]
        return ids[:cut]

    def encode_text(self, text: TextSample | Sequence[str]) -> list[int]:
        tokens = text.tokens if isinstance(text, TextSample) else text
        ids = self.encode(self.pieces(tokens))
        cap = self.max_len_text - 1
        if len(ids) > cap:
            logger.warning("text sequence of length %d truncated to %d", len(ids), cap)
            ids = ids[:cap]
        return ids

    def decode_tokens(self, ids: Iterable[int]) -> list[str]:
        """ids -> word tokens, dropping specials other than markers."""
        toks = [self.itos[i] for i in ids if i not in (self.pad, self.bos, self.eos)]
        if self.segmenter is not None:
            return self.segmenter.desegment(toks)
        return toks

    def to_json(self) -> dict:
        return {
            "itos": self.itos,
            "n_special": self.n_special,
            "max_len_data": self.max_len_data,
            "max_len_text": self.max_len_text,
            "segmenter": self.segmenter.model_path if self.segmenter is not None else None,
        }

    @classmethod
    def from_json(cls, obj) -> "Vocabulary":
        v = cls.__new__(cls)
        v.itos = list(obj["itos"])
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        v.n_special = obj["n_special"]
        v.pad, v.bos, v.eos, v.unk = (v.stoi[t] for t in SPECIAL_TOKENS)
        v.max_len_data = obj["max_len_data"]
        v.max_len_text = obj["max_len_text"]
        v.segmenter = SubwordSegmenter(obj["segmenter"]) if obj.get("segmenter") else None
        return v


class SubwordSegmenter:
    """Unigram subword model over word tokens; slot markers are user symbols."""

    def __init__(self, model_path):
        import sentencepiece as spm

        self.model_path = str(model_path)
        self.sp = spm.SentencePieceProcessor(model_file=self.model_path)

    @classmethod
    def train(cls, sentences: Iterable[str], markers: Sequence[str], model_prefix, vocab_size: int = 8000):
        import sentencepiece as spm

        spm.SentencePieceTrainer.train(
            sentence_iterator=iter(list(sentences)),
            model_prefix=str(model_prefix),
            vocab_size=vocab_size,
            model_type="unigram",
            user_defined_symbols=sorted(set(markers)),
            hard_vocab_limit=False,
            character_coverage=1.0,
            minloglevel=2,
        )
        return cls(f"{model_prefix}.model")

    def segment(self, tokens: Sequence[str]) -> list[str]:
        out, run = [], []
        for tok in list(tokens) + [None]:
            if tok is None or is_marker(tok):
                if run:
                    out.extend(self.sp.encode(" ".join(run), out_type=str))
                    run = []
                if tok is not None:
                    out.append(tok)
            else:
                run.append(tok)
        return out

    def desegment(self, pieces: Sequence[str]) -> list[str]:
        out, run = [], []
        for p in list(pieces) + [None]:
            if p is None or is_marker(p):
                if run:
                    out.extend(tokenize(self.sp.decode_pieces(run)))
                    run = []
                if p is not None:
                    out.append(p)
            else:
                run.append(p)
        return out


def _corpus_sequences(corpus: Corpus):
    for mr in corpus.data_pool():
        yield linearize(mr)
    for t in corpus.text_pool():
        yield list(t.tokens)


def build_vocab(
    corpus: Corpus,
    max_len_data: int | None = None,
    max_len_text: int | None = None,
    subword: bool | None = None,
    work_dir=None,
    subword_vocab_size: int = 8000,
) -> Vocabulary:
    """Build the shared data/text vocabulary.

    E2E uses word tokens; WebNLG defaults to a unigram subword model trained
    on linearized data plus the labeled text (``work_dir`` receives the model).
    """
    if not corpus.labeled and not corpus.d_unlabeled:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    fmt = corpus.source_format
    if subword is None:
        subword = fmt is SourceFormat.WEBNLG
    default_cap = MAX_LEN_WEBNLG if fmt is SourceFormat.WEBNLG else MAX_LEN_E2E
    seqs = list(_corpus_sequences(corpus))
    markers = sorted({t for s in seqs for t in s if is_marker(t)})
    if subword:
        import tempfile

        work_dir = Path(work_dir or tempfile.mkdtemp(prefix="spm_"))
        work_dir.mkdir(parents=True, exist_ok=True)
        seg = SubwordSegmenter.train(
            (" ".join(s) for s in seqs), markers, work_dir / "subword", subword_vocab_size
        )
        counts = Counter(p for s in seqs for p in seg.segment(s))
        vocab = Vocabulary(sorted(counts, key=lambda t: (-counts[t], t)), markers)
        vocab.segmenter = seg
    else:
        counts = Counter(t for s in seqs for t in s if not is_marker(t))
        vocab = Vocabulary(sorted(counts, key=lambda t: (-counts[t], t)), markers)
    vocab.max_len_data = max_len_data or default_cap
    vocab.max_len_text = max_len_text or default_cap
    return vocab
