"""Seeded trace generators and a hill-climbing search for high OPT/LQD ratios."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import NamedTuple

from lqdlab.opt import opt_throughput_dp
from lqdlab.switch import LQD, RoundRobinByPort, run_policy
from lqdlab.trace import Trace, make_trace, serialize_trace

BOUND = Fraction(3, 2)


@dataclass(frozen=True)
class GenSpec:
    M: int
    N: int
    horizon: int
    max_count: int
    burst_probability: float = 0.0
    seed: int = 0
    density: float = 0.5
    search_budget: int = 400

    def __post_init__(self):
        for name in ("M", "N", "horizon", "max_count", "search_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.burst_probability <= 1 or not 0 < self.density <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.N > self.M:
            raise ValueError("N may not exceed M")

    def with_seed(self, seed: int) -> "GenSpec":
        return replace(self, seed=seed)


def gen_random(spec: GenSpec) -> Trace:
    rng = random.Random(spec.seed)
    arr = {}
    for t in range(1, spec.horizon + 1):
        for p in range(spec.N):
            if rng.random() < spec.density:
                arr[(t, p)] = rng.randint(1, spec.max_count)
    return make_trace(spec.M, spec.N, arr)


def gen_bursty(spec: GenSpec) -> Trace:
    """Like :func:`gen_random`, but each batch is bursty (at least M packets)
    with probability ``burst_probability``."""
    rng = random.Random(spec.seed)
    top = max(spec.M, spec.max_count)
    arr = {}
    for t in range(1, spec.horizon + 1):
        for p in range(spec.N):
            if rng.random() < spec.density:
                if rng.random() < spec.burst_probability:
                    arr[(t, p)] = rng.randint(spec.M, top)
                else:
                    arr[(t, p)] = rng.randint(1, spec.max_count)
    return make_trace(spec.M, spec.N, arr)


def throughput_ratio_of(trace: Trace, budget: int | None = None) -> Fraction:
    """OPT/LQD throughput; 1 for a trace LQD never transmits on."""
    lqd = run_policy(trace, LQD(), RoundRobinByPort()).throughput
    if lqd == 0:
        return Fraction(1)
    return Fraction(opt_throughput_dp(trace, budget), lqd)


class SearchResult(NamedTuple):
    trace: Trace
    ratio: Fraction
    bound_violation: bool
    evaluations: int


def _mutate(arr: dict, spec: GenSpec, rng: random.Random) -> dict:
    arr = dict(arr)
    top = max(spec.M, spec.max_count)
    cells = [(t, p) for t in range(1, spec.horizon + 1) for p in range(spec.N)]
    op = rng.choice(("add", "remove", "resize")) if arr else "add"
    if op == "add":
        free = [c for c in cells if c not in arr]
        if free:
            arr[rng.choice(free)] = rng.randint(1, top)
    elif op == "remove":
        del arr[rng.choice(sorted(arr))]
    else:
        arr[rng.choice(sorted(arr))] = rng.randint(1, top)
    return arr


def _better(a: tuple[Fraction, str], b: tuple[Fraction, str]) -> bool:
    """Higher ratio wins; ties go to the lexicographically smaller trace text."""
    return a[0] > b[0] or (a[0] == b[0] and a[1] < b[1])


def search_high_ratio(spec: GenSpec, budget: int | None = None, restarts: int | None = None) -> SearchResult:
    """Random restarts plus single-batch mutations, climbing on OPT/LQD.

    ``spec.search_budget`` caps the number of ratio evaluations.  Sideways
    moves are accepted so the climb can cross plateaus.
    """
    rng = random.Random(spec.seed)
    restarts = restarts or max(1, spec.search_budget // 50)
    per = max(1, spec.search_budget // restarts)
    best = None
    evals = 0
    for r in range(restarts):
        sub = spec.with_seed(rng.randrange(2**31))
        start = gen_bursty(replace(sub, burst_probability=max(sub.burst_probability, 0.3)))
        arr = dict(start.arrivals)
        cur_tr = make_trace(spec.M, spec.N, arr)
        cur = (throughput_ratio_of(cur_tr, budget), serialize_trace(cur_tr))
        evals += 1
        for _ in range(per - 1):
            cand_arr = _mutate(arr, spec, rng)
            cand_tr = make_trace(spec.M, spec.N, cand_arr)
            cand = (throughput_ratio_of(cand_tr, budget), serialize_trace(cand_tr))
            evals += 1
            if cand[0] >= cur[0]:
                arr, cur_tr, cur = cand_arr, cand_tr, cand
        if best is None or _better(cur, best[1]):
            best = (cur_tr, cur)
    trace, (ratio, _) = best
    return SearchResult(trace, ratio, ratio > BOUND, evals)


def merge_results(results) -> SearchResult:
    """Deterministic merge of independent searches."""
    results = list(results)
    best = None
    for res in results:
        key = (res.ratio, serialize_trace(res.trace))
        if best is None or _better(key, best[0]):
            best = (key, res)
    total = sum(r.evaluations for r in results)
    res = best[1]
    return SearchResult(res.trace, res.ratio, any(r.bound_violation for r in results), total)
