import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regbench.errors import NoEvaluablePoints
from regbench.metrics import merge_summaries, success_curve, summarize
from regbench.pipeline import PairResult


def ok(errors, pid="p"):
    return PairResult(pid, "ok", None, 10, 10, list(errors))


def failed(pid="f"):
    return PairResult(pid, "failed", None, 0, 3)


def test_direct_arithmetic():
    s = summarize([ok([1, 4, 6])], [5])
    assert s.success_at[5.0] == pytest.approx(2 / 3)
    assert s.mean_error == pytest.approx(11 / 3)
    assert s.evaluated_point_count == 3 and s.failure_rate == 0


def test_failed_pairs_only_count_as_failures():
    s = summarize([ok([2.0, 4.0]), failed()])
    assert s.failure_rate == 0.5 and s.mean_error == 3.0 and s.pair_count == 2


def test_success_is_strict():
    assert summarize([ok([5.0, 10.0])]).success_at == {5.0: 0.0, 10.0: 0.5}


def test_all_failed_raises_with_summary():
    with pytest.raises(NoEvaluablePoints) as info:
        summarize([failed("a"), failed("b")])
    s = info.value.summary
    assert s.failure_rate == 1.0 and math.isnan(s.mean_error) and s.evaluated_point_count == 0


def test_success_curve_examples():
    assert success_curve([1, 2, 3], [0.5, 2.5, 10]) == [0, pytest.approx(2 / 3), 1]
    assert success_curve([], [1, 2]) == [0.0, 0.0]
    with pytest.raises(ValueError):
        success_curve([1], [2, 1])


errors_st = st.lists(st.floats(0, 50, allow_nan=False), max_size=30)


@given(errors_st, st.lists(st.floats(0.01, 60), min_size=1, max_size=8, unique=True))
def test_curve_matches_counting(errors, taus):
    taus = sorted(taus)
    curve = success_curve(errors, taus)
    brute = [sum(e < t for e in errors) / len(errors) if errors else 0.0 for t in taus]
    assert curve == pytest.approx(brute)
    assert all(a <= b for a, b in zip(curve, curve[1:]))


@given(st.lists(st.tuples(st.booleans(), errors_st), min_size=1, max_size=8), st.randoms())
def test_permutation_invariance(items, rnd):
    results = [ok(e) if good and e else failed() for good, e in items]
    if not any(r.ok for r in results):
        return
    a = summarize(results)
    shuffled = results[:]
    rnd.shuffle(shuffled)
    b = summarize(shuffled)
    assert a.mean_error == pytest.approx(b.mean_error)
    assert a.success_at == pytest.approx(b.success_at) and a.failure_rate == b.failure_rate
    assert a.success_at[5.0] <= a.success_at[10.0]


def test_failure_rate_ignores_error_values():
    a = summarize([ok([1.0]), failed()])
    b = summarize([ok([40.0, 90.0]), failed()])
    assert a.failure_rate == b.failure_rate


def test_merge_matches_concatenation():
    rng = np.random.default_rng(0)
    results = [ok(rng.uniform(0, 20, rng.integers(1, 10))) for _ in range(6)] + [failed()]
    whole = summarize(results)
    merged = merge_summaries(summarize(results[:3]), summarize(results[3:]))
    assert merged.mean_error == pytest.approx(whole.mean_error)
    assert merged.success_at == pytest.approx(whole.success_at)
    assert merged.failure_rate == pytest.approx(whole.failure_rate)
