import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sysca.power import (
    ADDER_TABLE,
    InconsistentEventError,
    TraceSet,
    batch_traces,
    batch_traces_per_class,
    column_traces,
    full_adder_expense,
    generate_trace_set,
    multiply_expense,
    multiply_expense_vec,
    pe_cycle_expense,
    popcount,
    register_write_expense,
    ripple_add_expense,
    ripple_add_expense_vec,
    trace_for_sample,
)
from sysca.systolic import ACC_MASK, ActivityEvent, WeightMatrix, load_weights, stream_inference

# (a, b, cin) -> (sum, cout, PM): the binary-adder expense contract.
EXPECTED_ADDER_ROWS = {
    (0, 0, 0): (0, 0, 0),
    (1, 0, 0): (1, 0, 1),
    (0, 1, 0): (1, 0, 1),
    (1, 1, 0): (0, 1, 3),
    (0, 0, 1): (1, 0, 1),
    (1, 0, 1): (0, 1, 1),
    (0, 1, 1): (0, 1, 1),
    (1, 1, 1): (1, 1, 2),
}


def test_adder_table_all_eight_rows():
    assert len(ADDER_TABLE) == 8
    for key, (s, cout, pm) in EXPECTED_ADDER_ROWS.items():
        assert full_adder_expense(*key) == (s, cout, pm)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, ACC_MASK), st.integers(0, ACC_MASK))
def test_ripple_add_sum_matches_native(x, y):
    s, pm = ripple_add_expense(x, y)
    assert s == (x + y) & ACC_MASK
    assert pm >= 0


def test_multiply_expense_exhaustive_products():
    # All 65536 8x8-bit cases, vectorized path against native multiplication.
    a = np.repeat(np.arange(256), 256)
    w = np.tile(np.arange(256), 256)
    prod, pm = multiply_expense_vec(a, w)
    assert np.array_equal(prod, (a * w) & ACC_MASK)
    assert (pm >= 0).all()
    # zero input bits -> zero expense
    assert (pm[a == 0] == 0).all()


def test_vectorized_kernels_match_scalar():
    rng = np.random.default_rng(7)
    xs = rng.integers(0, ACC_MASK + 1, size=50)
    ys = rng.integers(0, ACC_MASK + 1, size=50)
    sv, pv = ripple_add_expense_vec(xs, ys)
    for k in range(50):
        s, p = ripple_add_expense(int(xs[k]), int(ys[k]))
        assert (s, p) == (int(sv[k]), int(pv[k]))
    avs = rng.integers(0, 256, size=50)
    wvs = rng.integers(0, 256, size=50)
    mv, mp = multiply_expense_vec(avs, wvs)
    for k in range(50):
        m, p = multiply_expense(int(avs[k]), int(wvs[k]))
        assert (m, p) == (int(mv[k]), int(mp[k]))


def test_register_write_expense_is_hamming_distance():
    assert register_write_expense(0, 0) == 0
    assert register_write_expense(0b1010, 0b0101) == 4
    assert register_write_expense(ACC_MASK, 0) == 18


def test_pe_cycle_expense_rejects_inconsistent_event():
    e = ActivityEvent(1, (1, 1), input=3, weight=5, acc_in=0, acc_out=999, reg_old=0, reg_new=999)
    with pytest.raises(InconsistentEventError):
        pe_cycle_expense(e)


def test_batch_traces_match_event_path():
    rng = np.random.default_rng(11)
    wm = WeightMatrix(rng.integers(0, 256, size=(3, 3)))
    samples = rng.integers(0, 256, size=(20, 3))
    fast = batch_traces(wm, samples)
    for k in range(20):
        _, events = stream_inference(load_weights(wm), samples[k])
        slow = trace_for_sample(events, 3)
        assert np.array_equal(fast[k], slow)


def test_column_traces_sum_to_batch():
    rng = np.random.default_rng(13)
    n = 3
    samples = rng.integers(0, 256, size=(30, n))
    weights = rng.integers(0, 256, size=(30, n, n))
    total = np.zeros((30, 2 * n - 1))
    for j in range(1, n + 1):
        total += column_traces(samples, weights[:, :, j - 1], j)
    assert np.array_equal(total, batch_traces_per_class(samples, weights))


def test_generate_trace_set_metadata():
    wm = WeightMatrix.random(3, seed=5)
    samples = np.ones((4, 3), dtype=np.int64)
    ts = generate_trace_set(wm, samples, seed=5)
    assert ts.meta["n"] == 3 and ts.meta["N"] == 4 and ts.meta["T"] == 5
    assert ts.meta["weights_digest"] == wm.digest()
    assert "weights" not in ts.meta  # attack sets never carry the secret
    assert np.array_equal(ts.samples(), samples)
    ts2 = generate_trace_set(wm, samples, store_weights=True)
    assert ts2.meta["weights"] == wm.values.tolist()
    with pytest.raises(ValueError):
        generate_trace_set(wm, np.zeros((0, 3)))


def test_traceset_validation_and_popcount():
    with pytest.raises(ValueError):
        TraceSet(np.zeros(5))
    assert popcount(np.array([0, 1, 3, 255])).tolist() == [0, 1, 2, 8]
