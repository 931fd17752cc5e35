"""Joint LQD/OPT timeline and the quantities defined over it."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

from lqdlab.errors import EmptyDenominator, MismatchedTrace, NotAnOverflowTimestep
from lqdlab.opt import OptSchedule, reconstruct_canonical_opt
from lqdlab.switch import LQD, PreferDominatingFirst, RoundRobinByPort, RunLog, TieBreakRule, run_policy
from lqdlab.trace import Trace


class QClass(str, Enum):
    FREE = "F"
    DOMINATING = "D"
    SEMI = "S"
    ESTABLISHED = "E"
    INACTIVE = "-"


def classify(p_lqd: int, p_opt: int, prev_d: int) -> QClass:
    if p_lqd > p_opt:
        return QClass.FREE
    if p_lqd == 0:
        return QClass.ESTABLISHED if p_opt > 0 else QClass.INACTIVE
    return QClass.DOMINATING if prev_d <= p_opt - p_lqd else QClass.SEMI


class CompactPeriod(NamedTuple):
    queue: int
    start: int
    end: int


@dataclass(frozen=True)
class JointTimeline:
    trace: Trace
    lqd_log: RunLog
    opt: OptSchedule
    T_tot: int
    lqd: tuple  # lqd[t] for t = 0..T_tot (index 0 is the empty pre-state)
    opt_len: tuple
    d: tuple
    classes: tuple
    overflow: tuple  # overflow[t]: frozenset of LQD-overflowed ports

    @property
    def N(self):
        return self.trace.N

    @property
    def M(self):
        return self.trace.M

    @property
    def window(self) -> int:
        """Last timestep with arrivals; structural checks stop here because
        the drain that follows is an artifact of finite traces."""
        return self.trace.horizon

    def counts(self, t: int) -> dict[QClass, int]:
        out = {c: 0 for c in QClass}
        for c in self.classes[t]:
            out[c] += 1
        return out

    def queues_of(self, t: int, *kinds: QClass) -> list[int]:
        return [i for i, c in enumerate(self.classes[t]) if c in kinds]

    @cached_property
    def periods(self) -> tuple[CompactPeriod, ...]:
        return tuple(compact_periods(self))


def build_joint_timeline(trace: Trace, lqd_log: RunLog, opt: OptSchedule) -> JointTimeline:
    if (lqd_log.M, lqd_log.N) != (trace.M, trace.N):
        raise MismatchedTrace(f"run is M={lqd_log.M},N={lqd_log.N}; trace is M={trace.M},N={trace.N}")
    for step in lqd_log.steps:
        offered = tuple(a + r for a, r in zip(step.outcome.accepted, step.outcome.rejected))
        if offered != trace.batch(step.t):
            raise MismatchedTrace(f"LQD run saw {offered} at t={step.t}, trace has {trace.batch(step.t)}")
    for (t, p), c in opt.accept.items():
        if c > trace.count(t, p):
            raise MismatchedTrace(f"OPT accepts {c} at (t={t}, port={p}) but only {trace.count(t, p)} arrived")

    N = trace.N
    last = 0
    for t in range(1, max(lqd_log.drain_t, len(opt.state_path)) + 1):
        if any(lqd_log.lengths_at(t)) or any(opt.lengths_at(t) or (0,)):
            last = t
    T_tot = last
    zero = (0,) * N
    lqd = [zero]
    opl = [zero]
    d = [zero]
    classes = [(QClass.INACTIVE,) * N]
    overflow = [frozenset()]
    for t in range(1, T_tot + 1):
        l = lqd_log.lengths_at(t)
        o = opt.lengths_at(t) or zero
        dt = tuple(oi - li for oi, li in zip(o, l))
        row = []
        for i in range(N):
            active_before = lqd[t - 1][i] > 0 or opl[t - 1][i] > 0
            prev_d = d[t - 1][i] if active_before else 0
            row.append(classify(l[i], o[i], prev_d))
        lqd.append(l)
        opl.append(o)
        d.append(dt)
        classes.append(tuple(row))
        overflow.append(lqd_log.overflow_at(t))
    return JointTimeline(trace, lqd_log, opt, T_tot, tuple(lqd), tuple(opl), tuple(d),
                         tuple(classes), tuple(overflow))


def analyze(trace: Trace, *, prefer_dominating: bool = True, base: TieBreakRule | None = None,
            budget: int | None = None, rounds: int = 4) -> JointTimeline:
    """Run LQD and the canonical OPT together and build their timeline.

    With ``prefer_dominating`` the LQD run breaks preemption ties in favour of
    queues that are not free against the canonical OPT; since the canonical
    OPT in turn depends on the LQD run, the pair is iterated until the LQD
    run stops changing (at most ``rounds`` times).
    """
    base = base or RoundRobinByPort()
    log = run_policy(trace, LQD(), base)
    opt = reconstruct_canonical_opt(trace, log, budget)
    if prefer_dominating:
        for _ in range(rounds):
            again = run_policy(trace, LQD(), PreferDominatingFirst(opt.state_path, base))
            if [s.lengths for s in again.steps] == [s.lengths for s in log.steps]:
                log = again
                break
            log = again
            opt = reconstruct_canonical_opt(trace, log, budget)
    return build_joint_timeline(trace, log, opt)


# -- inequality (1) and the ratio ------------------------------------------------------

class Ineq1(NamedTuple):
    holds: bool
    lhs: int
    rhs: int
    equality: bool
    opt_full: bool


def check_inequality_1(tl: JointTimeline, t: int) -> Ineq1:
    lhs = rhs = 0
    for i, c in enumerate(tl.classes[t]):
        if c in (QClass.DOMINATING, QClass.SEMI):
            lhs += tl.d[t][i]
        elif c is QClass.ESTABLISHED:
            lhs += tl.opt_len[t][i]
        elif c is QClass.FREE:
            rhs += -tl.d[t][i]
    return Ineq1(lhs <= rhs, lhs, rhs, lhs == rhs, sum(tl.opt_len[t]) == tl.M)


def inequality1_violations(tl: JointTimeline) -> list[int]:
    return [t for t in range(1, tl.T_tot + 1) if not check_inequality_1(tl, t).holds]


def ratio_r(tl: JointTimeline) -> Fraction:
    """(F + E + D + S) / (F + D + S) summed over all timesteps."""
    num = den = 0
    for t in range(1, tl.T_tot + 1):
        for c in tl.classes[t]:
            if c is QClass.INACTIVE:
                continue
            num += 1
            if c is not QClass.ESTABLISHED:
                den += 1
    if den == 0:
        raise EmptyDenominator("LQD never transmits")
    return Fraction(num, den)


def throughput_ratio(tl: JointTimeline) -> Fraction:
    if tl.lqd_log.throughput == 0:
        raise EmptyDenominator("LQD never transmits")
    return Fraction(tl.opt.throughput, tl.lqd_log.throughput)


# -- compact periods, urgency, immediacy ----------------------------------------------------

def compact_periods(tl: JointTimeline) -> list[CompactPeriod]:
    out = []
    for i in range(tl.N):
        start = None
        for t in range(1, tl.T_tot + 2):
            both = t <= tl.T_tot and tl.lqd[t][i] > 0 and tl.opt_len[t][i] > 0
            if both and start is None:
                start = t
            elif not both and start is not None:
                out.append(CompactPeriod(i, start, t - 1))
                start = None
    out.sort(key=lambda p: (p.start, p.queue))
    return out


def period_d(tl: JointTimeline, period: CompactPeriod) -> list[int]:
    return [tl.d[t][period.queue] for t in range(period.start, period.end + 1)]


def is_dominating_period(tl: JointTimeline, period: CompactPeriod) -> bool:
    return any(tl.classes[t][period.queue] in (QClass.DOMINATING, QClass.SEMI)
               for t in range(period.start, period.end + 1))


def _never_positive(tl, period):
    return all(tl.d[t][period.queue] <= 0 for t in range(period.start, period.end + 1))


def max_d_time(tl: JointTimeline, period: CompactPeriod) -> int | None:
    """First timestep the period's maximum d is attained, or None when the
    maximum is not positive."""
    ds = period_d(tl, period)
    top = max(ds)
    if top <= 0:
        return None
    return period.start + ds.index(top)


def _arrivals_in(tl, queue, lo, hi):
    return any(tl.trace.count(t, queue) for t in range(lo, hi + 1))


def is_urgent(tl: JointTimeline, period: CompactPeriod) -> bool:
    """No arrivals after the maximum positive d, or d never positive.

    A dominating queue whose d never goes above zero holds no potential
    extra packets in the period, whether or not it is free in between; it
    is treated like the d = 0 case.
    """
    if _never_positive(tl, period):
        return True
    t_m = max_d_time(tl, period)
    if t_m is None:
        return False
    return not _arrivals_in(tl, period.queue, t_m + 1, period.end)


def is_immediate(tl: JointTimeline, period: CompactPeriod) -> bool:
    if _never_positive(tl, period):
        return True
    ds = period_d(tl, period)
    return ds[0] > 0 and not _arrivals_in(tl, period.queue, period.start + 1, period.end)


# -- potential extra packets and thresholds ------------------------------------------------------

def potential_extra_packets(tl: JointTimeline, t: int, i: int) -> range:
    if tl.classes[t][i] in (QClass.FREE, QClass.INACTIVE):
        return range(0)
    return range(tl.lqd[t][i] + 1, tl.opt_len[t][i] + 1)


def potential_extra_total(tl: JointTimeline) -> int:
    return sum(len(potential_extra_packets(tl, t, i))
               for t in range(1, tl.T_tot + 1) for i in range(tl.N))


def extra_packets(tl: JointTimeline) -> int:
    """OPT transmissions from queues that are empty in the LQD buffer."""
    return sum(tl.counts(t)[QClass.ESTABLISHED] for t in range(1, tl.T_tot + 1))


def overflowed_dominating(tl: JointTimeline, t: int) -> list[int]:
    if not 1 <= t <= tl.T_tot:
        return []
    return sorted(i for i in tl.overflow[t] if tl.classes[t][i] in (QClass.DOMINATING, QClass.SEMI))


def threshold_at(tl: JointTimeline, t: int) -> int:
    """LQD length shared by the dominating/semi-dominating queues that
    overflow at ``t``.  Under tied arbitrary drops some may sit one above it;
    see :func:`threshold_excess`."""
    queues = overflowed_dominating(tl, t)
    if not queues:
        raise NotAnOverflowTimestep(f"no dominating overflow at t={t}")
    return min(tl.lqd[t][i] for i in queues)


def threshold_excess(tl: JointTimeline, t: int) -> list[int]:
    """LQD queues whose length exceeds the threshold line at ``t``."""
    line = threshold_at(tl, t)
    return [i for i in range(tl.N) if tl.lqd[t][i] > line]


# -- structural properties (each returns its violations) --------------------------------

def corollary2_violations(tl: JointTimeline) -> list[tuple[int, int]]:
    return [(t, i) for t in range(1, tl.T_tot + 1) for i in tl.queues_of(t, QClass.FREE)
            if tl.opt_len[t][i] < 1]


def lemma4_violations(tl: JointTimeline) -> list[tuple[CompactPeriod, CompactPeriod]]:
    urgent = [(p, max_d_time(tl, p)) for p in tl.periods
              if is_dominating_period(tl, p) and is_urgent(tl, p) and max_d_time(tl, p)]
    bad = []
    for a, ta in urgent:
        for b, tb in urgent:
            if a.queue == b.queue or ta >= tb:
                continue
            overlap = a.start <= b.end and b.start <= a.end
            if overlap and a.end > b.end:
                bad.append((a, b))
    return bad


def lemma7_violations(tl: JointTimeline) -> list[tuple[int, int]]:
    """(t, i): queue ``i`` is free at ``t`` but empty in LQD later in the window."""
    bad = []
    w = min(tl.window, tl.T_tot)
    for t in range(1, w + 1):
        for i in tl.queues_of(t, QClass.FREE):
            if any(tl.lqd[u][i] == 0 for u in range(t + 1, w + 1)):
                bad.append((t, i))
    return bad


def corollary3_violations(tl: JointTimeline) -> list[tuple[int, int]]:
    """(t, i): a queue that was free earlier in the same compact period is
    dominating at ``t``."""
    bad = []
    for p in tl.periods:
        seen_free = False
        for t in range(p.start, min(p.end, tl.window) + 1):
            c = tl.classes[t][p.queue]
            if c is QClass.FREE:
                seen_free = True
            elif c in (QClass.DOMINATING, QClass.SEMI) and seen_free:
                bad.append((t, p.queue))
    return bad


def corollary4_violations(tl: JointTimeline) -> list[tuple[int, int]]:
    """(t, i): queue ``i`` becomes established at ``t`` without having been
    dominating at ``t - 1``."""
    bad = []
    for t in range(1, tl.T_tot + 1):
        for i in tl.queues_of(t, QClass.ESTABLISHED):
            before = tl.classes[t - 1][i]
            if before is QClass.ESTABLISHED:
                continue
            if before is not QClass.DOMINATING:
                bad.append((t, i))
    return bad


def free_length_spread_violations(tl: JointTimeline) -> list[int]:
    """Timesteps in the window where LQD free-queue lengths differ by more than one."""
    bad = []
    for t in range(1, min(tl.window, tl.T_tot) + 1):
        lens = [tl.lqd[t][i] for i in tl.queues_of(t, QClass.FREE)]
        if lens and max(lens) - min(lens) > 1:
            bad.append(t)
    return bad


# -- export -------------------------------------------------------------------------------

def timeline_csv(tl: JointTimeline) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "port", "p_lqd", "p_opt", "d", "class", "overflow"])
    for t in range(1, tl.T_tot + 1):
        for i in range(tl.N):
            w.writerow([t, i, tl.lqd[t][i], tl.opt_len[t][i], tl.d[t][i], tl.classes[t][i].value,
                        int(i in tl.overflow[t])])
    return out.getvalue()


def fraction_str(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def timeline_summary(tl: JointTimeline) -> dict:
    per_t = []
    for t in range(1, tl.T_tot + 1):
        c = tl.counts(t)
        per_t.append({"t": t, "F": c[QClass.FREE], "D": c[QClass.DOMINATING],
                      "S": c[QClass.SEMI], "E": c[QClass.ESTABLISHED]})
    doc = {
        "T_tot": tl.T_tot,
        "lqd_throughput": tl.lqd_log.throughput,
        "opt_throughput": tl.opt.throughput,
        "q1_residuals": tl.opt.q1_residuals,
        "q2_residuals": tl.opt.q2_residuals,
        "counts": per_t,
    }
    if tl.lqd_log.throughput:
        doc["ratio_r"] = fraction_str(ratio_r(tl))
        doc["throughput_ratio"] = fraction_str(throughput_ratio(tl))
        doc["throughput_ratio_approx"] = float(throughput_ratio(tl))
    return doc


def timeline_summary_json(tl: JointTimeline) -> str:
    return json.dumps(timeline_summary(tl), indent=2, sort_keys=True)
