"""Brute-force references for the offline optimum.

Nothing here shares code with the DP in :mod:`lqdlab.opt`.  Both functions
enumerate admission schedules directly; they are only usable on tiny traces.
"""

from __future__ import annotations

from itertools import product

from lqdlab.trace import Trace


def _advance(lengths, accepted):
    return tuple((l - 1 if l > 0 else 0) + a for l, a in zip(lengths, accepted))


def enumerate_opt_throughput(trace: Trace) -> int:
    """Maximum over *every* admission schedule, one schedule at a time."""
    M, N = trace.M, trace.N
    cells = [(t, p, c) for t, p, c in trace.entries]
    best = 0
    for choice in product(*(range(c + 1) for _, _, c in cells)):
        plan = {}
        for (t, p, _), a in zip(cells, choice):
            plan[(t, p)] = a
        lengths = (0,) * N
        feasible = True
        for t in range(1, trace.horizon + 1):
            lengths = _advance(lengths, [plan.get((t, p), 0) for p in range(N)])
            if sum(lengths) > M:
                feasible = False
                break
        if feasible:
            best = max(best, sum(choice))
    return best


def reachable_outcomes(trace: Trace) -> set[tuple[tuple[int, ...], int]]:
    """All ``(final lengths, packets admitted)`` pairs over every schedule.

    Schedules are expanded timestep by timestep with every acceptance vector;
    only exact duplicates are merged, which cannot lose an outcome because
    identical pairs have identical futures.
    """
    frontier = frozenset({((0,) * trace.N, 0)})
    for t in range(1, trace.horizon + 1):
        frontier = step_outcomes(frontier, trace.batch(t), trace.M)
    return set(frontier)


def reachable_opt_throughput(trace: Trace) -> int:
    return max(total for _, total in reachable_outcomes(trace))


def step_outcomes(frontier, row, M):
    """One timestep of :func:`reachable_outcomes` on an explicit frontier."""
    nxt = set()
    for lengths, total in frontier:
        for acc in product(*(range(c + 1) for c in row)):
            new = _advance(lengths, acc)
            if sum(new) <= M:
                nxt.add((new, total + sum(acc)))
    return frozenset(nxt)


def _replay_lengths(trace: Trace, plan: dict, t_end: int):
    lengths = (0,) * trace.N
    path = []
    for t in range(1, t_end + 1):
        lengths = _advance(lengths, [plan.get((t, p), 0) for p in range(trace.N)])
        if sum(lengths) > trace.M:
            return None
        path.append(lengths)
    return path


def enumerate_canonical(trace: Trace, lqd_lengths) -> tuple[dict, list]:
    """Pick the canonical optimal schedule by listing every schedule.

    ``lqd_lengths(t)`` gives LQD's post-admission lengths.  Among schedules
    of maximum throughput the winner maximizes, in order: the per-timestep
    count of queues nonempty in both buffers among those nonempty under LQD
    (earliest timestep first); minus the summed decrease of d over
    (t, i) with LQD nonempty and OPT at least as long; the acceptance
    vector in (t, port) order.  Returns ``(accept, state_path)``.
    """
    cells = [(t, p, c) for t, p, c in trace.entries]
    t_end = trace.horizon + trace.M + 1
    best = None
    for choice in product(*(range(c + 1) for _, _, c in cells)):
        plan = {(t, p): a for (t, p, _), a in zip(cells, choice)}
        path = _replay_lengths(trace, plan, t_end)
        if path is None:
            continue
        total = sum(choice)
        q1 = []
        pen = 0
        prev_o, prev_l = (0,) * trace.N, (0,) * trace.N
        for t, o in enumerate(path, start=1):
            l = lqd_lengths(t)
            q1.append(sum(1 for i in range(trace.N) if o[i] > 0 and l[i] > 0))
            for i in range(trace.N):
                if l[i] > 0 and o[i] >= l[i]:
                    pen += max(0, (prev_o[i] - prev_l[i]) - (o[i] - l[i]))
            prev_o, prev_l = o, l
        key = (total, tuple(q1), -pen, choice)
        if best is None or key > best[0]:
            best = (key, plan, path)
    _, plan, path = best
    accept = {k: v for k, v in plan.items() if v}
    # keep the snapshot where the buffer drains, and at least the horizon
    last = max((t for t, v in enumerate(path, start=1) if any(v)), default=0)
    keep = max(trace.horizon, last + 1 if last else 0)
    return accept, path[:keep]
