import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ontosum.corpus import FormatError
from ontosum.evaluation import (
    betainc,
    compare_systems,
    emit_report,
    evaluate_corpus,
    lcs_length,
    paired_t_test,
    read_report_csv,
    rouge_l,
    rouge_n,
    t_two_sided_p,
)
from ontosum.tensor import ContractError

from oracles import lcs_brute

# frozen from scipy.stats (ttest_rel and t.sf)
REF_TTEST = [
    ([0.61, 0.55, 0.72, 0.48, 0.66, 0.59], [0.58, 0.51, 0.70, 0.49, 0.60, 0.52], 2.9758060566419635, 0.030949159633498088),
    (
        [0.41, 0.37, 0.52, 0.45, 0.39, 0.50, 0.47, 0.44, 0.36, 0.48, 0.43],
        [0.40, 0.38, 0.47, 0.41, 0.40, 0.44, 0.45, 0.42, 0.37, 0.43, 0.41],
        2.824506918947101,
        0.018020872001717456,
    ),
]
REF_TABLE = [
    (2.015, 5, 0.10000617232680625),
    (2.571, 5, 0.049974634683851375),
    (0.5, 5, 0.638298871640929),
    (1.812, 10, 0.10007526206584723),
    (2.228, 10, 0.050011771817111327),
    (3.169, 10, 0.010004633364384848),
]

FIVE_PAIRS = [
    ("the cat sat", "the cat ran"),  # 2/3, 1/2, 2/3
    ("a b c d", "a c b d"),  # 1, 0, 3/4
    ("x y", "x y"),  # 1, 1, 1
    ("a a b", "a b b"),  # 2/3, 1/2, 2/3
    ("p", "q r"),  # 0, 0, 0
]
FIVE_MEANS = {"rg1": 2 / 3, "rg2": 2 / 5, "rgl": 37 / 60}

words = st.lists(st.sampled_from("abc"), max_size=7)


def test_rouge_n_fixtures():
    c, r = "the cat sat".split(), "the cat ran".split()
    s1 = rouge_n(c, r, 1)
    assert (s1.precision, s1.recall, s1.f1) == pytest.approx((2 / 3,) * 3, abs=1e-9)
    assert rouge_n(c, r, 2).f1 == pytest.approx(0.5, abs=1e-9)
    assert rouge_n(c, c, 3).f1 == 1.0


def test_rouge_l_fixture():
    s = rouge_l(list("abcd"), list("acbd"))
    assert lcs_length(list("abcd"), list("acbd")) == 3
    assert (s.precision, s.recall, s.f1) == pytest.approx((0.75,) * 3, abs=1e-9)
    assert rouge_l([], ["a"]).f1 == 0.0


def test_lcs_exhaustive_against_brute_force():
    seqs = [s for n in range(7) for s in itertools.product("abc", repeat=n)]
    rng = np.random.default_rng(0)
    for a in seqs[:364]:  # every sequence up to length 5
        for b in seqs[:364]:
            assert lcs_length(a, b) == lcs_brute(a, b)
    # length-6 sequences against a sample of partners
    for a in seqs[364:]:
        for j in rng.choice(len(seqs), size=4, replace=False):
            assert lcs_length(a, seqs[j]) == lcs_brute(a, seqs[j])


@given(words, words, st.integers(1, 3))
def test_swap_duality_and_bounds(a, b, n):
    ab, ba = rouge_n(a, b, n), rouge_n(b, a, n)
    assert ab.precision == ba.recall and ab.recall == ba.precision
    la, lb = rouge_l(a, b), rouge_l(b, a)
    assert la.precision == lb.recall
    for s in (ab, la):
        assert 0 <= s.f1 <= 1
        if s.precision + s.recall:
            assert s.f1 == pytest.approx(2 * s.precision * s.recall / (s.precision + s.recall))


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=7))
def test_identity_scores_one(x):
    assert rouge_n(x, x, 1).f1 == 1.0 and rouge_l(x, x).f1 == 1.0


def test_corpus_means_fixture():
    scores = evaluate_corpus([(c.split(), r.split()) for c, r in FIVE_PAIRS])
    for m, v in FIVE_MEANS.items():
        assert scores.means[m] == pytest.approx(v, abs=1e-9)
    with pytest.raises(ContractError):
        evaluate_corpus([])


def test_t_test_analytic_df2():
    res = paired_t_test([1.0, 0.0, 2.0], [0.0, 0.0, 0.0])
    assert res.t == pytest.approx(math.sqrt(3), abs=1e-12)
    assert res.df == 2
    # P(T <= t) = (1 + t / sqrt(2 + t^2)) / 2 for df = 2
    analytic = 1 - math.sqrt(3) / math.sqrt(5)
    assert res.p == pytest.approx(analytic, abs=1e-12)
    assert res.p == pytest.approx(0.2254, abs=1e-4)


@pytest.mark.parametrize("a,b,t,p", REF_TTEST)
def test_t_test_reference(a, b, t, p):
    res = paired_t_test(a, b)
    assert res.t == pytest.approx(t, abs=1e-9)
    assert res.p == pytest.approx(p, abs=1e-6)


@pytest.mark.parametrize("t,df,p", REF_TABLE)
def test_t_table(t, df, p):
    assert t_two_sided_p(t, df) == pytest.approx(p, abs=1e-8)


def test_t_test_degenerate_and_antisymmetry():
    same = paired_t_test([0.3, 0.4], [0.3, 0.4])
    assert (same.t, same.p, same.degenerate) == (0.0, 1.0, True)
    const = paired_t_test([1.0, 2.0], [0.5, 1.5])
    assert const.p == 0.0 and const.degenerate
    ab = paired_t_test([0.2, 0.5, 0.9], [0.1, 0.6, 0.4])
    ba = paired_t_test([0.1, 0.6, 0.4], [0.2, 0.5, 0.9])
    assert ab.t == -ba.t and ab.p == ba.p
    with pytest.raises(ContractError):
        paired_t_test([1.0], [1.0])


def test_betainc_endpoints_and_symmetry():
    assert betainc(2.0, 3.0, 0.0) == 0.0 and betainc(2.0, 3.0, 1.0) == 1.0
    assert betainc(2.5, 1.5, 0.3) == pytest.approx(1 - betainc(1.5, 2.5, 0.7), abs=1e-12)
    # I_x(1, 1) = x
    assert betainc(1.0, 1.0, 0.37) == pytest.approx(0.37, abs=1e-12)


def test_t_test_against_live_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(7)
    for n in (3, 6, 11, 40):
        a, b = rng.random(n), rng.random(n)
        ours = paired_t_test(a, b)
        ref = stats.ttest_rel(a, b)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-9)
        assert ours.p == pytest.approx(ref.pvalue, abs=1e-9)


def _two_systems():
    a = evaluate_corpus([(str(i), c.split(), r.split()) for i, (c, r) in enumerate(FIVE_PAIRS)])
    b = evaluate_corpus([(str(i), r.split()[:1], r.split()) for i, (c, r) in reversed(list(enumerate(FIVE_PAIRS)))])
    return a, b


def test_report_round_trip_csv_and_json(tmp_path):
    a, b = _two_systems()
    rep = compare_systems(a, b)
    rows, summary = read_report_csv(emit_report(rep, tmp_path / "r.csv", "csv"))
    assert len(rows) == 5
    for m in FIVE_MEANS:
        assert summary["mean"][m] == pytest.approx(a.means[m], abs=1e-9)
        assert summary["mean_b"][m] == pytest.approx(b.means[m], abs=1e-9)
        assert summary["p"][m] == pytest.approx(rep.comparisons[m].p, abs=1e-12)
    doc = json.loads(emit_report(rep, tmp_path / "r.json", "json").read_text())
    assert [r["rg1"] for r in doc["examples"]] == [r["rg1"] for r in rows]
    assert doc["summary"]["mean"] == summary["mean"]


def test_single_row_report(tmp_path):
    a = evaluate_corpus([("only", ["x"], ["x"])])
    from ontosum.evaluation import EvaluationReport

    text = emit_report(EvaluationReport(a), tmp_path / "one.csv").read_text().splitlines()
    assert text == ["id,rg1,rg2,rgl", "only,1.0,0.0,1.0", "#mean,1.0,0.0,1.0"]


def test_compare_systems_id_mismatch():
    a = evaluate_corpus([("1", ["x"], ["x"]), ("2", ["y"], ["y"])])
    b = evaluate_corpus([("1", ["x"], ["x"]), ("3", ["y"], ["y"])])
    with pytest.raises(FormatError, match="2"):
        compare_systems(a, b)
