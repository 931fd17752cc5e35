from fractions import Fraction

import pytest
from hypothesis import given

from conftest import synthetic, traces
from lqdlab.analysis import (
    CompactPeriod, QClass, analyze, check_inequality_1, classify, corollary2_violations,
    inequality1_violations, is_immediate, is_urgent, potential_extra_packets, ratio_r,
    threshold_at, threshold_excess, throughput_ratio, timeline_csv, timeline_summary,
)
from lqdlab.errors import EmptyDenominator, NotAnOverflowTimestep
from lqdlab.trace import make_trace


def test_classify_free_and_dominating():
    assert classify(3, 1, 0) is QClass.FREE
    assert classify(1, 2, 0) is QClass.DOMINATING


def test_classify_established_and_boundary():
    assert classify(0, 2, 0) is QClass.ESTABLISHED
    assert classify(2, 2, 0) is QClass.DOMINATING
    assert classify(2, 2, 1) is QClass.SEMI
    assert classify(0, 0, 0) is QClass.INACTIVE


def test_inequality1_example():
    tl = synthetic([(3, 1)], [(1, 2)])
    assert tl.classes[1][:2] == (QClass.FREE, QClass.DOMINATING)
    res = check_inequality_1(tl, 1)
    assert (res.lhs, res.rhs, res.holds) == (1, 2, True)


def test_inequality1_empty_buffers():
    tl = synthetic([(0, 0)], [(0, 0)])
    res = check_inequality_1(tl, 1)
    assert res.holds and res.equality and (res.lhs, res.rhs) == (0, 0)


def test_ratio_identical_runs():
    tl = synthetic([(2, 1), (1, 0)], [(2, 1), (1, 0)])
    assert ratio_r(tl) == 1


def test_ratio_smallest_case():
    tl = synthetic([(1, 0)], [(0, 1)])
    assert ratio_r(tl) == Fraction(2, 1)


def test_ratio_empty_denominator():
    with pytest.raises(EmptyDenominator):
        ratio_r(synthetic([(0, 0)], [(0, 0)]))


def test_urgent_and_immediate_zero_d():
    tl = synthetic([(2,), (1,)], [(2,), (1,)])
    p = CompactPeriod(0, 1, 2)
    assert is_urgent(tl, p) and is_immediate(tl, p)


def test_immediate_peak_at_start():
    tr = make_trace(3, 3, {(1, 0): 3})
    tl = synthetic([(2, 0, 0), (1, 0, 0)], [(3, 0, 0), (2, 0, 0)], trace=tr)
    p = CompactPeriod(0, 1, 2)
    assert is_immediate(tl, p) and is_urgent(tl, p)


def test_arrivals_after_peak_not_urgent():
    tr = make_trace(3, 3, {(1, 0): 3, (2, 0): 1})
    tl = synthetic([(2, 0, 0), (2, 0, 0), (1, 0, 0)], [(3, 0, 0), (3, 0, 0), (2, 0, 0)], trace=tr)
    p = CompactPeriod(0, 1, 3)
    assert not is_urgent(tl, p) and not is_immediate(tl, p)


def test_potential_extra_positions():
    tl = synthetic([(1, 3)], [(4, 1)])
    assert list(potential_extra_packets(tl, 1, 0)) == [2, 3, 4]
    assert list(potential_extra_packets(tl, 1, 1)) == []


def test_threshold_single_queue():
    tl = synthetic([(3, 1)], [(4, 0)], overflow=[{0}])
    assert threshold_at(tl, 1) == 3


def test_threshold_tie_excess():
    tl = synthetic([(3, 4, 0)], [(4, 4, 0)], overflow=[{0, 1}])
    assert threshold_at(tl, 1) == 3
    assert threshold_excess(tl, 1) == [1]


def test_threshold_not_overflow():
    tl = synthetic([(3, 1)], [(1, 2)])
    with pytest.raises(NotAnOverflowTimestep):
        threshold_at(tl, 1)


def test_summary_of_no_overflow_trace():
    tl = analyze(make_trace(2, 2, {(1, 0): 1, (1, 1): 1}))
    assert throughput_ratio(tl) == 1 and ratio_r(tl) == 1
    doc = timeline_summary(tl)
    assert doc["throughput_ratio"] == "1/1"
    assert timeline_csv(tl).splitlines()[0] == "t,port,p_lqd,p_opt,d,class,overflow"


@given(traces())
def test_inequality1_on_clean_canonical_runs(tr):
    tl = analyze(tr)
    if tl.opt.q1_residuals == 0:
        assert inequality1_violations(tl) == []
        assert corollary2_violations(tl) == []


@given(traces())
def test_ratio_r_is_throughput_ratio_when_clean(tr):
    tl = analyze(tr)
    if tl.lqd_log.throughput and tl.opt.q1_residuals == 0:
        assert ratio_r(tl) == throughput_ratio(tl)
    if tl.lqd_log.throughput:
        assert 1 <= throughput_ratio(tl) <= Fraction(3, 2)
