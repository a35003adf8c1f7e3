import numpy as np
import pytest
from scipy.stats import pearsonr, spearmanr

from sysca.power import TraceSet, generate_trace_set, random_samples
from sysca.stats import compare_trace_sets, pcc, reduce_traces, scc
from sysca.systolic import WeightMatrix


def test_pcc_scc_against_scipy():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=200)
        y = rng.normal(size=200) + 0.5 * x
        assert pcc(x, y) == pytest.approx(pearsonr(x, y).statistic, abs=1e-12)
        assert scc(x, y) == pytest.approx(spearmanr(x, y).statistic, abs=1e-12)


def test_scc_handles_ties():
    x = np.array([1.0, 1.0, 2.0, 3.0, 3.0, 4.0])
    y = np.array([2.0, 1.0, 2.0, 5.0, 4.0, 4.0])
    assert scc(x, y) == pytest.approx(spearmanr(x, y).statistic, abs=1e-12)


def test_reductions():
    ts = TraceSet(np.array([[1.0, 2.0, 3.0], [4.0, 0.0, 1.0]]))
    assert reduce_traces(ts, "energy").tolist() == [6.0, 5.0]
    assert reduce_traces(ts, "max").tolist() == [3.0, 4.0]
    with pytest.raises(ValueError):
        reduce_traces(ts, "median")


def test_same_inputs_self_comparison_is_exactly_one():
    wm = WeightMatrix.random(3, seed=2)
    ts = generate_trace_set(wm, random_samples(3, 500, 3))
    rep = compare_trace_sets(ts, ts)
    assert rep.pcc == 1.0
    assert rep.scc == 1.0
    assert rep.n_points == 500


def test_distinct_random_inputs_decorrelate():
    wm = WeightMatrix.random(3, seed=4)
    a = generate_trace_set(wm, random_samples(3, 5000, 5))
    b = generate_trace_set(wm, random_samples(3, 5000, 6))
    rep = compare_trace_sets(a, b)
    assert abs(rep.pcc) < 0.1
    assert abs(rep.scc) < 0.1


def test_mismatched_counts_rejected():
    wm = WeightMatrix.random(2, seed=0)
    a = generate_trace_set(wm, random_samples(2, 10, 0))
    b = generate_trace_set(wm, random_samples(2, 11, 0))
    with pytest.raises(ValueError):
        compare_trace_sets(a, b)
