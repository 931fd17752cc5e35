from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from lqdlab.oracles import reachable_opt_throughput
from lqdlab.switch import run_policy
from lqdlab.trace import parse_trace, serialize_trace, validate_trace
from lqdlab.tracegen import (
    GenSpec, gen_bursty, gen_random, merge_results, search_high_ratio, throughput_ratio_of,
)

# best trace found by search_high_ratio(GenSpec(3, 3, 8, 4, seed=0))
SEARCH_FIXTURE = parse_trace(
    '{"M":3,"N":3,"arrivals":[{"t":1,"port":0,"count":3},{"t":1,"port":2,"count":3},'
    '{"t":2,"port":2,"count":4},{"t":3,"port":1,"count":3},{"t":3,"port":2,"count":1},'
    '{"t":4,"port":0,"count":2},{"t":4,"port":1,"count":2},{"t":5,"port":1,"count":4},'
    '{"t":5,"port":2,"count":4},{"t":6,"port":0,"count":2},{"t":6,"port":2,"count":2},'
    '{"t":7,"port":0,"count":1},{"t":7,"port":1,"count":2}]}')
SEARCH_RATIO = Fraction(17, 14)

specs = st.builds(GenSpec, M=st.integers(1, 5), N=st.just(1), horizon=st.integers(1, 8),
                  max_count=st.integers(1, 6), burst_probability=st.floats(0, 1),
                  seed=st.integers(0, 10**6))


@given(specs)
def test_generators_are_deterministic(spec):
    assert gen_random(spec) == gen_random(spec)
    assert gen_bursty(spec) == gen_bursty(spec)
    assert validate_trace(gen_bursty(spec)) == gen_bursty(spec)


@given(specs)
def test_full_burst_probability(spec):
    tr = gen_bursty(replace(spec, burst_probability=1.0))
    assert all(c >= tr.M for _, _, c in tr.entries)


def test_spec_validation():
    with pytest.raises(ValueError):
        GenSpec(0, 1, 1, 1)
    with pytest.raises(ValueError):
        GenSpec(3, 3, 4, 2, burst_probability=1.5)
    with pytest.raises(ValueError):
        GenSpec(2, 3, 4, 2)


def test_search_fixture():
    res = search_high_ratio(GenSpec(3, 3, 8, 4, seed=0))
    assert res.ratio == SEARCH_RATIO > 1
    assert res.trace == SEARCH_FIXTURE
    assert not res.bound_violation and res.evaluations == 400


def test_search_fixture_against_oracle():
    lqd = run_policy(SEARCH_FIXTURE).throughput
    assert Fraction(reachable_opt_throughput(SEARCH_FIXTURE), lqd) == SEARCH_RATIO
    assert throughput_ratio_of(SEARCH_FIXTURE) == SEARCH_RATIO


def test_merge_is_order_independent():
    runs = [search_high_ratio(GenSpec(3, 3, 5, 4, seed=s, search_budget=60)) for s in range(4)]
    a, b = merge_results(runs), merge_results(reversed(runs))
    assert a == b
    assert a.ratio == max(r.ratio for r in runs)
    assert a.evaluations == sum(r.evaluations for r in runs)
    assert serialize_trace(a.trace)
