import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from fewshot_d2t.corpus import MeaningRepresentation
from fewshot_d2t.metrics import (
    EvalReport,
    bleu4,
    diversity_stats,
    evaluate,
    group_references,
    lcs_length,
    meteor,
    meteor_sentence,
    metric_tokenize,
    nist,
    rouge_l,
    unique_combinations,
    unique_noncopied_tokens,
)

# Oracle values in metric_suite.json were produced by make_metric_oracles.py with
# sacrebleu (BLEU), nltk (NIST) and rouge-score (ROUGE-L LCS statistics).


@pytest.fixture(scope="module")
def suite(fixtures):
    return json.loads((fixtures / "metric_suite.json").read_text())


def _tok(rows, indices):
    hyps = [metric_tokenize(rows[i]["hyp"]) for i in indices]
    refs = [[metric_tokenize(r) for r in rows[i]["refs"]] for i in indices]
    return hyps, refs


@pytest.mark.parametrize("name", ["all20", "first3", "single_ref", "multi_ref"])
def test_bleu_and_rouge_against_oracles(suite, name):
    s = suite["suites"][name]
    hyps, refs = _tok(suite["rows"], s["indices"])
    assert abs(bleu4(hyps, refs) - s["oracle"]["bleu4"]) <= 1e-4
    assert abs(rouge_l(hyps, refs) - s["oracle"]["rouge_l"]) <= 1e-3


@pytest.mark.parametrize("name", ["single_ref", "first3"])
def test_nist_against_oracle(suite, name):
    # the oracle clips against the single best reference, so only single-reference
    # instances are expected to agree exactly with the pooled-reference variant
    s = suite["suites"][name]
    hyps, refs = _tok(suite["rows"], s["indices"])
    assert abs(nist(hyps, refs) - s["oracle"]["nist"]) <= 1e-3


def test_trivial_bounds():
    ref = "the blue spice is a pub in the city centre".split()
    assert bleu4([ref], [[ref]]) == pytest.approx(100.0)
    assert rouge_l([ref], [[ref]]) == pytest.approx(100.0)
    assert bleu4([["zzz", "yyy", "xxx", "www"]], [[ref]]) == 0.0
    assert rouge_l([["zzz"]], [[ref]]) == 0.0
    assert meteor([["zzz"]], [[ref]]) == 0.0
    assert nist([["zzz"]], [[ref]]) == 0.0


def test_length_mismatch_and_missing_reference():
    with pytest.raises(ValueError):
        bleu4([["a"]], [])
    with pytest.raises(ValueError):
        rouge_l([["a"]], [[]])


def test_permutation_invariance(suite):
    hyps, refs = _tok(suite["rows"], range(20))
    order = list(range(20))[::-1]
    ph, pr = [hyps[i] for i in order], [refs[i] for i in order]
    for fn in (bleu4, nist, meteor, rouge_l):
        assert fn(ph, pr) == pytest.approx(fn(hyps, refs), abs=1e-12)


def test_duplicate_reference_changes_nothing(suite):
    hyps, refs = _tok(suite["rows"], range(20))
    doubled = [r + [r[0]] for r in refs]
    for fn in (bleu4, nist, meteor, rouge_l):
        assert fn(hyps, doubled) == fn(hyps, refs)


def test_bleu_monotone_when_hypothesis_replaced_by_reference(suite):
    hyps, refs = _tok(suite["rows"], range(20))
    score = bleu4(hyps, refs)
    for i in range(20):
        hyps = hyps[:i] + [refs[i][0]] + hyps[i + 1:]
        new = bleu4(hyps, refs)
        assert new >= score - 1e-9
        score = new
    assert score == pytest.approx(100.0)


# -- METEOR, hand-computed --


def test_meteor_identical_sentence():
    s = "the cat sat on the mat".split()
    assert meteor_sentence(s, s) == pytest.approx(1 - 0.5 * (1 / 6) ** 3)


def test_meteor_stem_match():
    assert meteor_sentence("the cats sat".split(), "the cat sat".split()) == pytest.approx(1 - 0.5 / 27)


def test_meteor_two_chunks():
    assert meteor_sentence("a b c d".split(), "c d a b".split()) == pytest.approx(1 - 0.5 * 0.5 ** 3)


def test_meteor_partial_match():
    p, r = 2 / 3, 1 / 2
    fmean = p * r / (0.9 * p + 0.1 * r)
    expected = fmean * (1 - 0.5 * (1 / 2) ** 3)
    assert meteor_sentence("a b x".split(), "a b c d".split()) == pytest.approx(expected)


def test_meteor_corpus_is_mean_of_best_reference():
    h = ["a b x".split(), "a b c d".split()]
    refs = [["q".split(), "a b c d".split()], ["c d a b".split()]]
    expected = (meteor_sentence(h[0], refs[0][1]) + meteor_sentence(h[1], refs[1][0])) / 2
    assert meteor(h, refs) == pytest.approx(100 * expected)


# -- ROUGE-L pieces --


def test_lcs_length_examples():
    assert lcs_length("abcbdab", "bdcaba") == 4
    assert lcs_length([], [1, 2]) == 0


@given(st.lists(st.integers(0, 3), max_size=12), st.lists(st.integers(0, 3), max_size=12))
@settings(max_examples=100, deadline=None)
def test_lcs_symmetric_and_bounded(a, b):
    n = lcs_length(a, b)
    assert n == lcs_length(b, a)
    assert 0 <= n <= min(len(a), len(b))


def test_rouge_l_hand_computed():
    # lcs("a b c d e", "a c e f") = 3 -> P = 3/5, R = 3/4
    p, r, b2 = 3 / 5, 3 / 4, 1.2 ** 2
    f = (1 + b2) * p * r / (r + b2 * p)
    assert rouge_l(["a b c d e".split()], [["a c e f".split()]]) == pytest.approx(100 * f)


# -- diversity --

MRS = [
    MeaningRepresentation.from_pairs([("name", "Aromi"), ("eatType", "pub"), ("area", "riverside")]),
    MeaningRepresentation.from_pairs([("name", "Zizzi"), ("eatType", "pub"), ("area", "city centre")]),
]


def test_diversity_copies_score_zero():
    decoded = ["Aromi pub riverside", "Zizzi pub city centre"]
    assert unique_noncopied_tokens(decoded, MRS) == 0


def test_diversity_identical_systems_delta_zero():
    decoded = ["Aromi is a pub by the riverside", "Zizzi is a pub in the city centre"]
    assert diversity_stats(decoded, MRS, decoded) == (0, 0)


def test_diversity_five_extra_function_words():
    base = ["Aromi pub riverside", "Zizzi pub city centre"]
    richer = ["Aromi is a pub by the riverside", "Zizzi pub of city centre"]
    assert diversity_stats(richer, MRS, base)[0] == 5  # is, a, by, the, of


def test_unique_combinations():
    decoded = ["Aromi is a pub", "Zizzi is in the city centre"]
    assert unique_combinations(decoded, MRS) == 2
    assert unique_combinations(["Aromi", "Zizzi"], MRS) == 1


def test_diversity_alignment_error():
    with pytest.raises(ValueError):
        unique_noncopied_tokens(["x"], MRS)


# -- end-to-end --


def test_evaluate_report_fields(tmp_path):
    rep = evaluate(["Aromi is a pub by the riverside."], [["Aromi is a pub by the riverside."]],
                   decode_mode="beam", inputs=MRS[:1])
    assert isinstance(rep, EvalReport)
    assert rep.bleu4 == pytest.approx(100.0) and rep.n_instances == 1 and rep.decode_mode == "beam"
    assert rep.unique_noncopied_tokens == 5 and rep.unique_combinations == 1
    rep.save(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == rep.to_json()
    assert not math.isnan(rep.nist) and rep.meteor > 99


def test_group_references():
    keys, refs = group_references(["a", "b", "a"], ["r1", "r2", "r3"])
    assert keys == ["a", "b"] and refs == [["r1", "r3"], ["r2"]]
