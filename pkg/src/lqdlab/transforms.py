"""Trace rewritings toward ideal fine sequences.

Each rewriting replays LQD and the canonical OPT on the trace it edits, so
these are desk-scale operations.  Every report carries the ratio before and
after; a decrease is recorded as a violation, never hidden.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

from lqdlab.analysis import (
    JointTimeline,
    QClass,
    analyze,
    fraction_str,
    is_dominating_period,
    is_immediate,
    is_urgent,
    max_d_time,
    ratio_r,
)
from lqdlab.errors import EmptyDenominator, NoFreshQueue
from lqdlab.trace import Trace, serialize_trace


@dataclass(frozen=True)
class RewriteRecord:
    kind: str
    queue: int
    period: tuple[int, int]
    touched: tuple[int, ...]
    removed: int
    added: int
    note: str = ""

    def to_dict(self):
        return {"kind": self.kind, "queue": self.queue, "period": list(self.period),
                "touched": list(self.touched), "removed": self.removed, "added": self.added,
                "note": self.note}


@dataclass
class TransformReport:
    stage: str
    before: Trace
    after: Trace
    r_before: Fraction | None
    r_after: Fraction | None
    steps: list[RewriteRecord] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    converged: bool = True

    @property
    def identity(self) -> bool:
        return self.before == self.after

    @property
    def monotone(self) -> bool:
        if self.r_before is None or self.r_after is None:
            return True
        return self.r_after >= self.r_before

    def to_dict(self):
        def digest(tr):
            return hashlib.sha256(serialize_trace(tr).encode()).hexdigest()[:16]

        def frac(x):
            return None if x is None else fraction_str(x)

        return {"stage": self.stage, "before": digest(self.before), "after": digest(self.after),
                "r_before": frac(self.r_before), "r_after": frac(self.r_after),
                "monotone": self.monotone, "converged": self.converged,
                "steps": [s.to_dict() for s in self.steps], "violations": list(self.violations)}


def _r(tl: JointTimeline) -> Fraction | None:
    try:
        return ratio_r(tl)
    except EmptyDenominator:
        return None


def _blame(tl_before, tl_after) -> str:
    """Name the invariant behind a drop of r."""
    if tl_before.opt.q1_residuals or tl_after.opt.q1_residuals:
        return "canonical OPT has q1 residuals, so r is not the throughput ratio"
    return "throughput ratio fell: LQD gained transmissions elsewhere after the rewrite"


def _finish(stage, before, after, tl_before, tl_after, steps, violations, converged):
    rep = TransformReport(stage, before, after, _r(tl_before), _r(tl_after), steps, violations, converged)
    if not rep.monotone:
        rep.violations.append(
            f"monotonicity: r fell from {fraction_str(rep.r_before)} to {fraction_str(rep.r_after)}"
            f" ({_blame(tl_before, tl_after)})")
    return rep


def _round_cap(trace: Trace) -> int:
    return 4 * (len(trace.entries) + trace.N) + 8


# -- urgent dominating queues -------------------------------------------------------------

def _non_urgent(tl: JointTimeline):
    out = []
    for p in tl.periods:
        if is_dominating_period(tl, p) and not is_urgent(tl, p):
            t_m = max_d_time(tl, p)
            if t_m is not None:
                out.append((t_m, p.queue, p))
    return sorted(out)


def _fresh_port(tl: JointTimeline, trace: Trace, lo: int, hi: int, exclude: int) -> int | None:
    for n in range(tl.N):
        if n == exclude:
            continue
        quiet = all(tl.lqd[t][n] == 0 and tl.opt_len[t][n] == 0 for t in range(lo, min(hi, tl.T_tot) + 1))
        silent = not any(trace.count(t, n) for t in range(lo, hi + 1))
        if quiet and silent:
            return n
    return None


def urgentify(trace: Trace, budget: int | None = None) -> TransformReport:
    """Make every dominating queue urgent.

    For a non-urgent queue ``l`` whose period peaks at ``t_m`` and ends at
    ``t_f``, its arrivals in ``(t_m, t_f]`` are deleted; at each timestep of
    that window where another LQD queue overflows, a fresh idle queue ``n``
    receives just enough packets that the LQD lengths of ``l`` and ``n``
    together match the length ``l`` had before the edit.
    """
    tl0 = analyze(trace, budget=budget)
    cur, tl = trace, tl0
    steps, violations = [], []
    converged = False
    for _ in range(_round_cap(trace)):
        todo = _non_urgent(tl)
        if not todo:
            converged = True
            break
        t_m, l, period = todo[0]
        t_f = period.end
        arr = dict(cur.arrivals)
        removed = 0
        touched = []
        for t in range(t_m + 1, t_f + 1):
            if (t, l) in arr:
                removed += arr.pop((t, l))
                touched.append(t)
        feeds = [t for t in range(t_m + 1, t_f + 1) if tl.overflow[t] - {l}]
        added = 0
        fresh = None
        if feeds:
            fresh = _fresh_port(tl, cur, t_m + 1, t_f, l)
            if fresh is None:
                raise NoFreshQueue(f"no idle queue for window [{t_m + 1}, {t_f}] of queue {l}")
        nxt = cur.replace_arrivals(arr)
        for t_u in feeds:
            probe = analyze(nxt, budget=budget)
            have = probe.lqd[t_u][l] + probe.lqd[t_u][fresh] if t_u <= probe.T_tot else 0
            need = tl.lqd[t_u][l] - have
            if need > 0:
                arr[(t_u, fresh)] = arr.get((t_u, fresh), 0) + need
                added += need
                touched.append(t_u)
                nxt = cur.replace_arrivals(arr)
        tl_next = analyze(nxt, budget=budget)
        for t_u in feeds:
            lhs = tl_next.lqd[t_u][l] + tl_next.lqd[t_u][fresh] if t_u <= tl_next.T_tot else 0
            if lhs != tl.lqd[t_u][l]:
                violations.append(f"eq3: t={t_u} queues {l}+{fresh} hold {lhs}, expected {tl.lqd[t_u][l]}")
        note = f"fresh={fresh}" if fresh is not None else ""
        steps.append(RewriteRecord("urgentify", l, (period.start, t_f), tuple(sorted(set(touched))),
                                   removed, added, note))
        if nxt == cur:
            violations.append(f"urgentify made no progress on queue {l} period {period.start}-{t_f}")
            break
        cur, tl = nxt, tl_next
    return _finish("urgentify", trace, cur, tl0, tl, steps, violations, converged)


# -- immediate dominating queues -----------------------------------------------------------------

def _establish_time(tl: JointTimeline, period) -> int:
    t = period.end + 1
    if t <= tl.T_tot and tl.classes[t][period.queue] is QClass.ESTABLISHED:
        return t
    return tl.T_tot + 1


def _trim_zero_d(tl: JointTimeline, trace: Trace, budget=None):
    """Cut arrivals of d = 0 dominating queues down to what keeps their
    lengths as they are.

    The target count is the net growth of the LQD queue; a cut is only kept
    if every LQD and OPT length stays unchanged (preemption churn can make
    a smaller batch play out differently).
    """
    cuts = []
    for p in tl.periods:
        if not is_dominating_period(tl, p):
            continue
        if any(tl.d[t][p.queue] != 0 for t in range(p.start, p.end + 1)):
            continue
        for t in range(p.start, min(p.end, tl.window) + 1):
            net = tl.lqd[t][p.queue] - max(tl.lqd[t - 1][p.queue] - 1, 0)
            have = trace.count(t, p.queue)
            if have > net:
                cuts.append((p, t, net))
    if not cuts:
        return trace, tl, []

    def same(other):
        return other.lqd[1:] == tl.lqd[1:] and other.opt_len[1:] == tl.opt_len[1:]

    arr = dict(trace.arrivals)
    for p, t, net in cuts:
        arr[(t, p.queue)] = net
    cand = trace.replace_arrivals(arr)
    tl_c = analyze(cand, budget=budget)
    kept = cuts
    if not same(tl_c):
        arr = dict(trace.arrivals)
        kept = []
        cand, tl_c = trace, tl
        for cut in cuts:
            p, t, net = cut
            trial = dict(arr)
            trial[(t, p.queue)] = net
            tr2 = trace.replace_arrivals(trial)
            tl2 = analyze(tr2, budget=budget)
            if same(tl2):
                arr, cand, tl_c = trial, tr2, tl2
                kept.append(cut)
    records = []
    by_period = {}
    for p, t, net in kept:
        by_period.setdefault(p, []).append((t, trace.count(t, p.queue) - net))
    for p, items in by_period.items():
        records.append(RewriteRecord("trim-zero-d", p.queue, (p.start, p.end),
                                     tuple(t for t, _ in items), sum(r for _, r in items), 0))
    return cand, tl_c, records


def immediatify(trace: Trace, budget: int | None = None) -> TransformReport:
    """Make every dominating queue immediate.

    Queues processed in order of establishment (then first attainment of the
    maximum d, then port).  A non-immediate queue ``j`` loses its arrivals in
    ``[t_b, t_e - 1]`` and instead receives one batch at ``t_e`` equal to its
    OPT length there, less the OPT backlog it would still hold at ``t_e``.
    """
    tl0 = analyze(trace, budget=budget)
    cur, tl = trace, tl0
    steps, violations = [], []
    converged = False
    for _ in range(_round_cap(trace)):
        trimmed, tl_t, recs = _trim_zero_d(tl, cur, budget)
        if recs:
            steps.extend(recs)
            cur, tl = trimmed, tl_t
            continue
        todo = []
        for p in tl.periods:
            if not is_dominating_period(tl, p) or is_immediate(tl, p) or not is_urgent(tl, p):
                continue
            t_e = max_d_time(tl, p)
            if t_e is None:
                continue
            todo.append((_establish_time(tl, p), t_e, p.queue, p))
        if not todo:
            converged = True
            break
        todo.sort()
        _, t_e, j, p = todo[0]
        t_b = p.start
        arr = dict(cur.arrivals)
        removed = 0
        touched = []
        for t in range(t_b, p.end + 1):
            if (t, j) in arr:
                removed += arr.pop((t, j))
                touched.append(t)
        backlog = max(0, tl.opt_len[t_b - 1][j] - (t_e - t_b + 1))
        batch = tl.opt_len[t_e][j] - backlog
        if batch > 0:
            arr[(t_e, j)] = batch
            touched.append(t_e)
        nxt = cur.replace_arrivals(arr)
        steps.append(RewriteRecord("immediatify", j, (p.start, p.end), tuple(sorted(set(touched))),
                                   removed, max(batch, 0), f"t_b={t_b} t_e={t_e}"))
        if nxt == cur:
            violations.append(f"immediatify made no progress on queue {j} period {p.start}-{p.end}")
            break
        cur, tl = nxt, analyze(nxt, budget=budget)
    if any(not is_urgent(tl, p) for p in tl.periods if is_dominating_period(tl, p)):
        violations.append("precondition: non-urgent dominating queue left in place")
    return _finish("immediatify", trace, cur, tl0, tl, steps, violations, converged)


# -- bursty free queues ---------------------------------------------------------------------------

def _fed_cells(tl: JointTimeline):
    """(t, i) cells that must carry a bursty batch: from the first timestep a
    queue is free until the end of the window, so a free queue stays fed."""
    last = min(tl.window, tl.T_tot)
    for i in range(tl.N):
        first = next((t for t in range(1, last + 1) if tl.classes[t][i] is QClass.FREE), None)
        if first is not None:
            for t in range(first, tl.window + 1):
                yield t, i


def idealize(trace: Trace, budget: int | None = None) -> TransformReport:
    """Give every free queue a bursty batch (M packets) at each timestep from
    the first one it is free on."""
    tl0 = analyze(trace, budget=budget)
    cur, tl = trace, tl0
    steps, violations = [], []
    converged = False
    for _ in range(_round_cap(trace) + trace.horizon * trace.N):
        arr = dict(cur.arrivals)
        changed = {}
        for t, i in _fed_cells(tl):
            if arr.get((t, i), 0) < trace.M:
                changed.setdefault(i, []).append((t, trace.M - arr.get((t, i), 0)))
                arr[(t, i)] = trace.M
        if not changed:
            converged = True
            break
        for i, items in sorted(changed.items()):
            ts = tuple(sorted(t for t, _ in items))
            steps.append(RewriteRecord("idealize", i, (ts[0], ts[-1]), ts, 0, sum(a for _, a in items)))
        cur = cur.replace_arrivals(arr)
        tl = analyze(cur, budget=budget)
    return _finish("idealize", trace, cur, tl0, tl, steps, violations, converged)


# -- predicates -----------------------------------------------------------------------------------

def is_fine_timeline(tl: JointTimeline) -> bool:
    return all(is_immediate(tl, p) for p in tl.periods
               if p.start <= tl.window and is_dominating_period(tl, p))


def is_ideal_fine_timeline(tl: JointTimeline) -> bool:
    if not is_fine_timeline(tl):
        return False
    return all(tl.trace.count(t, i) >= tl.M for t, i in _fed_cells(tl))


def is_fine(trace: Trace, budget: int | None = None) -> bool:
    return is_fine_timeline(analyze(trace, budget=budget))


def is_ideal_fine(trace: Trace, budget: int | None = None) -> bool:
    return is_ideal_fine_timeline(analyze(trace, budget=budget))


# -- the whole chain --------------------------------------------------------------------------------

STAGES = (("urgentify", urgentify), ("immediatify", immediatify), ("idealize", idealize))


def pipeline(trace: Trace, budget: int | None = None, max_passes: int = 6) -> list[TransformReport]:
    """Apply urgentify, immediatify, idealize in turn until a full pass changes nothing."""
    reports = []
    cur = trace
    for _ in range(max_passes):
        changed = False
        for _, stage in STAGES:
            rep = stage(cur, budget=budget)
            reports.append(rep)
            if not rep.identity:
                changed = True
            cur = rep.after
        if not changed:
            break
    return reports


def reports_json(reports: list[TransformReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
