import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from fewshot_d2t.corpus import (
    Corpus,
    CorpusError,
    MeaningRepresentation,
    Provenance,
    SourceFormat,
    TextSample,
    build_value_inventory,
    build_vocab,
    corpus_from_manifest,
    detokenize,
    few_shot_split,
    linearize,
    parse_e2e,
    parse_mr_string,
    parse_webnlg,
    save_manifest,
    slot_marker,
    tokenize,
    write_e2e_csv,
)
from fewshot_d2t.synthetic import make_synthetic


BLUE_SPICE = ("name[Blue Spice], eatType[restaurant], food[Chinese], area[city centre], "
              "familyFriendly[no], near[Rainbow Vegetarian Café]")


def test_parse_mr_string_blue_spice():
    mr = parse_mr_string(BLUE_SPICE)
    assert len(mr.units) == 6
    assert (mr.units[0].slot, mr.units[0].value) == ("name", "Blue Spice")
    assert mr.units[-1].value == "Rainbow Vegetarian Café"


@pytest.mark.parametrize("bad", ["", "   ", "name[Blue Spice", "name Blue Spice, food[x]"])
def test_parse_mr_string_rejects(bad):
    with pytest.raises(CorpusError):
        parse_mr_string(bad)


def test_parse_e2e_empty_mr_names_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text('mr,ref\n"name[A], food[B], area[C]",ok\n,missing\n')
    with pytest.raises(CorpusError, match="row 2"):
        parse_e2e(p)


def test_parse_e2e_hundred_rows(tmp_path):
    p = tmp_path / "e2e.csv"
    write_e2e_csv(make_synthetic(100, seed=4), p)
    # independent count: csv module rows minus header
    with p.open(newline="", encoding="utf-8") as fh:
        n_rows = sum(1 for _ in csv.reader(fh)) - 1
    parsed = parse_e2e(p)
    assert len(parsed) == n_rows == 100
    assert all(t.provenance is Provenance.ANNOTATED for _, t in parsed)


def test_parse_e2e_handwritten(fixtures):
    pairs = parse_e2e(fixtures / "e2e_handwritten.csv")
    assert len(pairs) == 24
    assert all(3 <= len(mr.units) <= 8 for mr, _ in pairs)


def test_parse_e2e_without_ref(tmp_path):
    p = tmp_path / "test.csv"
    p.write_text('mr\n"name[A], food[B], area[C]"\n')
    [(mr, text)] = parse_e2e(p)
    assert text is None and len(mr.units) == 3


def test_e2e_slot_count_bounds():
    with pytest.raises(CorpusError):
        MeaningRepresentation.from_pairs([("name", "A"), ("food", "B")])
    with pytest.raises(CorpusError):
        MeaningRepresentation.from_pairs([(f"s{i}", "v") for i in range(9)])
    with pytest.raises(CorpusError):
        MeaningRepresentation.from_pairs([("name", "A"), ("name", "B"), ("food", "C")])


def test_webnlg_xml_fanout(fixtures):
    pairs = parse_webnlg(fixtures / "webnlg_small.xml")
    first = [p for p in pairs if p[0].units[0].subject == "Alan_Bean"]
    assert len(first) == 3
    assert all(p[0] == first[0][0] and len(p[0].units) == 2 for p in first)
    assert len(pairs) == 3 + 1 + 2


def test_webnlg_eight_triples_rejected(fixtures):
    with pytest.raises(CorpusError, match="1-7"):
        parse_webnlg(fixtures / "webnlg_eight_triples.xml")


def test_webnlg_jsonl_ten(fixtures):
    path = fixtures / "webnlg_ten.jsonl"
    expected = sum(1 for line in path.read_text().splitlines() if line.strip())
    pairs = parse_webnlg(path)
    assert len(pairs) == expected == 10
    assert all(p[0].source_format is SourceFormat.WEBNLG for p in pairs)


def test_webnlg_missing_field(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"triples": [["A", "", "B"]], "text": "x"}) + "\n")
    with pytest.raises(CorpusError):
        parse_webnlg(p)


def test_linearize_examples():
    mr = MeaningRepresentation.from_pairs([("name", "Blue Spice"), ("eatType", "restaurant"), ("food", "Chinese")])
    assert " ".join(linearize(mr)).startswith("[name] Blue Spice [eat type] restaurant")
    web = MeaningRepresentation.from_triples([("A", "capitalOf", "B")])
    assert linearize(web) == ["[subject]", "A", "[relation]", "capitalOf", "[object]", "B"]


def test_linearize_single_slot_marker():
    mr = MeaningRepresentation.from_pairs([("food", "Chinese"), ("name", "X"), ("area", "Y")])
    assert linearize(mr)[:2] == ["[food]", "Chinese"]


def test_slot_marker_camel_case():
    assert slot_marker("familyFriendly") == "[family friendly]"
    assert slot_marker("customer rating") == "[customer rating]"
    assert slot_marker("priceRange") == "[price range]"


_values = st.text(alphabet="abcdefgh XYZ", min_size=1, max_size=8).filter(lambda s: s.strip())


@given(st.lists(st.tuples(st.sampled_from(["name", "food", "area", "near", "priceRange"]), _values),
                min_size=3, max_size=5, unique_by=lambda p: p[0]),
       st.integers(0, 4), _values)
def test_linearize_injective(pairs, which, new_value):
    a = MeaningRepresentation.from_pairs(pairs)
    i = which % len(pairs)
    changed = list(pairs)
    changed[i] = (pairs[i][0], new_value)
    b = MeaningRepresentation.from_pairs(changed)
    if tokenize(pairs[i][1]) != tokenize(new_value):
        assert linearize(a) != linearize(b)
    assert linearize(a) == linearize(MeaningRepresentation.from_pairs(pairs))


@given(st.text(alphabet="abc XYZ,.!?£-'()", max_size=40))
def test_tokenize_roundtrip(raw):
    toks = tokenize(raw)
    assert "".join(toks) == "".join(raw.split())
    assert tokenize(detokenize(toks)) == toks


def test_few_shot_split_partition_and_determinism():
    pairs = make_synthetic(1000, seed=2)
    a = few_shot_split(pairs, 100, seed=7)
    b = few_shot_split(pairs, 100, seed=7)
    assert len(a.labeled) == 100 and len(a.d_unlabeled) == 900
    assert set(a.labeled_ids).isdisjoint(a.unlabeled_ids)
    assert sorted(a.labeled_ids + a.unlabeled_ids) == list(range(1000))
    assert json.dumps(a.manifest()) == json.dumps(b.manifest())
    assert few_shot_split(pairs, 100, seed=8).labeled_ids != a.labeled_ids


@pytest.mark.parametrize("k", [0, -1, 1001])
def test_few_shot_split_bad_k(k):
    with pytest.raises(CorpusError):
        few_shot_split(make_synthetic(1000, seed=2), k, seed=0)


def test_stratified_split():
    pairs = make_synthetic(300, seed=2)
    c = few_shot_split(pairs, 30, seed=1, stratify=True)
    assert len(c.labeled) == 30
    assert set(c.labeled_ids).isdisjoint(c.unlabeled_ids)


def test_manifest_roundtrip(tmp_path):
    pairs = make_synthetic(50, seed=2)
    c = few_shot_split(pairs, 5, seed=3)
    save_manifest(c, tmp_path / "split.json")
    m = json.loads((tmp_path / "split.json").read_text())
    assert set(m) == {"seed", "k", "labeled_ids", "unlabeled_ids"}
    c2 = corpus_from_manifest(pairs, tmp_path / "split.json")
    assert c2.labeled == c.labeled and c2.d_unlabeled == c.d_unlabeled


def _mr(name, area, food="Chinese"):
    return MeaningRepresentation.from_pairs([("name", name), ("area", area), ("food", food)])


def test_value_inventory():
    corpus = Corpus(d_unlabeled=[_mr("B", "riverside")], labeled=[(_mr("A", "city centre"), TextSample("x"))])
    inv = build_value_inventory(corpus)
    assert inv["area"] == {"city centre", "riverside"}
    assert inv["food"] == {"Chinese"}
    assert inv["nonexistent"] == set()


def test_value_inventory_single_mr():
    corpus = Corpus(d_unlabeled=[], labeled=[(_mr("A", "city centre"), TextSample("x"))])
    inv = build_value_inventory(corpus)
    assert all(len(v) == 1 for v in inv.values())


def test_build_vocab_counts():
    mr = MeaningRepresentation.from_pairs([("x", "a"), ("y", "b"), ("z", "a b")])
    corpus = Corpus(d_unlabeled=[], labeled=[(mr, TextSample("a b"))])
    v = build_vocab(corpus)
    assert len(v) == 2 + v.n_special
    assert v.n_special == 4 + 3  # pad/bos/eos/unk + three slot markers
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert sorted(v.stoi.values()) == list(range(len(v)))


def test_build_vocab_empty():
    with pytest.raises(CorpusError):
        build_vocab(Corpus(d_unlabeled=[], labeled=[]))


@given(st.lists(st.integers(0, 60), max_size=30))
@settings(max_examples=50)
def test_vocab_encode_decode_roundtrip(ids):
    corpus = few_shot_split(make_synthetic(30, seed=0), 5, seed=0)
    v = build_vocab(corpus)
    ids = [i % len(v) for i in ids if i % len(v) != v.unk]
    assert v.encode(v.decode(ids)) == ids


def test_length_caps():
    long_text = TextSample(" ".join(["word"] * 500))
    mr = MeaningRepresentation.from_pairs([("name", "A " * 60), ("food", "B " * 60), ("area", "C")])
    corpus = Corpus(d_unlabeled=[], labeled=[(mr, long_text)])
    v = build_vocab(corpus)
    assert len(v.encode_text(long_text)) + 1 <= 100
    data = v.encode_data(mr)
    assert len(data) + 1 <= 100
    # truncation backs off to a unit boundary: no trailing marker without value
    assert v.itos[data[-1]][0] != "["
    assert v.itos[data[0]] == "[name]"


def test_webnlg_subword_vocab(fixtures, tmp_path):
    pairs = parse_webnlg(fixtures / "webnlg_small.xml") + parse_webnlg(fixtures / "webnlg_ten.jsonl")
    corpus = few_shot_split(pairs, 8, seed=0)
    v = build_vocab(corpus, work_dir=tmp_path)
    assert v.segmenter is not None
    assert v.max_len_text == 200 and v.max_len_data == 200
    assert "[subject]" in v and "[relation]" in v and "[object]" in v
    long_text = TextSample(" ".join(["Paris is the capital of France ."] * 80))
    assert len(v.encode_text(long_text)) + 1 <= 200
    mr = corpus.labeled[0][0]
    ids = v.encode_data(mr)
    assert v.itos[ids[0]] == "[subject]"
