"""Exact offline optimum for unit packets.

The offline schedule is restricted to non-preemptive admission: with full
lookahead, a packet that would later be preempted can simply be rejected on
arrival.  Unused ports stay empty in every schedule, so the state space is
built over the ports that actually receive packets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from lqdlab.errors import BudgetExceeded, InfeasibleSchedule
from lqdlab.switch import CompleteSharing, PortOrder, RunLog, run_policy
from lqdlab.trace import Trace

DEFAULT_BUDGET = 5_000_000
_NEG = np.int64(-(2**40))


def default_budget() -> int:
    env = os.environ.get("LQDLAB_BUDGET")
    return int(env) if env else DEFAULT_BUDGET


def state_space_bound(trace: Trace) -> int:
    n = max(1, len(trace.used_ports))
    return comb(trace.M + n, n) * (trace.horizon + trace.M)


def check_budget(trace: Trace, budget: int | None = None) -> int:
    budget = default_budget() if budget is None else budget
    bound = state_space_bound(trace)
    if bound > budget:
        raise BudgetExceeded(bound, budget)
    return bound


@dataclass(frozen=True)
class OptSchedule:
    accept: dict  # (t, port) -> accepted count, zero entries omitted
    throughput: int
    state_path: tuple[tuple[int, ...], ...]  # post-admission lengths, t = 1..len
    q1_residuals: int = 0
    q2_residuals: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def lengths_at(self, t: int) -> tuple[int, ...]:
        if 1 <= t <= len(self.state_path):
            return self.state_path[t - 1]
        n = len(self.state_path[0]) if self.state_path else 0
        return (0,) * n

    def to_json(self) -> str:
        doc = {
            "throughput": self.throughput,
            "accept": [{"t": t, "port": p, "count": c} for (t, p), c in sorted(self.accept.items())],
            "statePath": [list(v) for v in self.state_path],
        }
        return json.dumps(doc, separators=(",", ":"))


# -- throughput DP ----------------------------------------------------------------

@lru_cache(maxsize=64)
def _tables(M: int, n: int):
    """State list and transition tables for ``n`` queues sharing ``M`` slots."""
    states = []

    def rec(prefix, left):
        if len(prefix) == n:
            states.append(tuple(prefix))
            return
        for v in range(left + 1):
            rec(prefix + [v], left - v)

    rec([], M)
    index = {s: k for k, s in enumerate(states)}
    tx = np.array([index[tuple(v - 1 if v else 0 for v in s)] for s in states], dtype=np.int64)
    add = np.full((n, len(states), M + 1), -1, dtype=np.int64)
    for k in range(n):
        for j, s in enumerate(states):
            room = M - sum(s)
            for a in range(room + 1):
                t = list(s)
                t[k] += a
                add[k, j, a] = index[tuple(t)]
    return states, index, tx, add


def dp_initial(M: int, n: int) -> np.ndarray:
    states, index, _, _ = _tables(M, n)
    val = np.full(len(states), _NEG, dtype=np.int64)
    val[index[(0,) * n]] = 0
    return val


def dp_step(val: np.ndarray, counts, M: int) -> np.ndarray:
    """Advance the best-accepted-so-far table by one timestep.

    ``val[s]`` is the maximum number of packets admitted over schedules that
    end the previous timestep in state ``s``.
    """
    n = len(counts)
    _, _, tx, add = _tables(M, n)
    cur = np.full_like(val, _NEG)
    np.maximum.at(cur, tx, val)
    for k, c in enumerate(counts):
        if not c:
            continue
        live = cur > _NEG
        nxt = cur.copy()
        for a in range(1, min(c, M) + 1):
            idx = add[k, :, a]
            ok = live & (idx >= 0)
            if not ok.any():
                break
            np.maximum.at(nxt, idx[ok], cur[ok] + a)
        cur = nxt
    return cur


def opt_throughput_dp(trace: Trace, budget: int | None = None) -> int:
    """Maximum total transmission of any admission schedule."""
    check_budget(trace, budget)
    ports = trace.used_ports
    if not ports:
        return 0
    val = dp_initial(trace.M, len(ports))
    for row in trace.rows:
        val = dp_step(val, tuple(row[p] for p in ports), trace.M)
    return int(val.max())


# -- canonical schedule ---------------------------------------------------------------

def reconstruct_canonical_opt(trace: Trace, lqd_log: RunLog, budget: int | None = None) -> OptSchedule:
    """An optimal schedule chosen by lexicographic preference.

    Candidates are compared on, in order: total admitted packets; the
    per-timestep count of queues nonempty in both buffers among those
    nonempty under LQD (earlier timesteps first); the total decrease of
    ``d = opt - lqd`` at timesteps where the queue is nonempty under LQD and
    not shorter under OPT; and finally larger acceptances at earlier
    ``(t, port)``.  Every component is fixed by the path prefix, so a forward
    pass that keeps the best key per state is exact.
    """
    check_budget(trace, budget)
    M, N = trace.M, trace.N
    ports = trace.used_ports
    n = len(ports)
    if not n:
        return OptSchedule({}, 0, ((0,) * N,) * trace.horizon)
    t_end = max(trace.horizon + M, lqd_log.drain_t)
    lqd = [tuple(lqd_log.lengths_at(t)[p] for p in ports) for t in range(t_end + 1)]

    # key = (accepted, q1 counts per t, -penalty, acceptances); parents per layer
    start = (0,) * n
    layer = {start: ((0, (), 0, ()), None, None)}
    history = []
    for t in range(1, t_end + 1):
        row = trace.batch(t)
        counts = tuple(row[p] for p in ports)
        prev_lqd, cur_lqd = lqd[t - 1], lqd[t]
        # open a new q1 slot for this timestep
        layer = {s: ((k[0], k[1] + (0,), k[2], k[3]), par, a) for s, (k, par, a) in layer.items()}
        for k in range(n):
            nxt = {}
            for s, (key, _, _) in layer.items():
                old = s[k]
                base = old - 1 if old else 0
                used = sum(s[:k]) + base + sum(v - 1 if v else 0 for v in s[k + 1:])
                hi = min(counts[k], M - used)
                acc, q1, pen, seq = key
                for a in range(hi + 1):
                    new = base + a
                    hit = 1 if new > 0 and cur_lqd[k] > 0 else 0
                    drop = 0
                    if cur_lqd[k] > 0 and new >= cur_lqd[k]:
                        drop = max(0, (old - prev_lqd[k]) - (new - cur_lqd[k]))
                    cand = (acc + a, q1[:-1] + (q1[-1] + hit,), pen - drop, seq + (a,))
                    ns = s[:k] + (new,) + s[k + 1:]
                    cur = nxt.get(ns)
                    if cur is None or cand > cur[0]:
                        nxt[ns] = (cand, s, a)
            history.append(nxt)
            layer = nxt

    best_state = max(layer, key=lambda s: layer[s][0])
    best_key = layer[best_state][0]

    # walk parents back
    accept = {}
    path_local = []
    s = best_state
    for idx in range(len(history) - 1, -1, -1):
        t, k = divmod(idx, n)
        t += 1
        _, parent, a = history[idx][s]
        if k == n - 1:
            path_local.append(s)
        if a:
            accept[(t, ports[k])] = a
        s = parent
    path_local.reverse()

    state_path = []
    for local in path_local:
        full = [0] * N
        for k, p in enumerate(ports):
            full[p] = local[k]
        state_path.append(tuple(full))
    state_path = _trim_path(state_path, trace.horizon)
    throughput = best_key[0]
    q1, q2 = residuals(state_path, lqd_log)
    return OptSchedule(accept, throughput, tuple(state_path), q1, q2,
                       meta={"q1_profile": best_key[1], "q2_penalty": -best_key[2]})


def _trim_path(path, horizon):
    """Cut trailing empty snapshots, keeping the one where the buffer drains."""
    last_nz = max((t for t, v in enumerate(path, start=1) if any(v)), default=0)
    keep = max(horizon, last_nz + 1 if last_nz else 0)
    return path[:min(keep, len(path))]


def residuals(opt_path, lqd_log: RunLog) -> tuple[int, int]:
    """Count (t, i) where the schedule violates the q1 property (empty while
    LQD is not) and where it would be semi-dominating (q2)."""
    t_end = max(len(opt_path), lqd_log.drain_t)
    N = lqd_log.N
    q1 = q2 = 0

    def opt_at(t):
        return opt_path[t - 1] if 1 <= t <= len(opt_path) else (0,) * N

    for t in range(1, t_end + 1):
        o, l = opt_at(t), lqd_log.lengths_at(t)
        po, pl = opt_at(t - 1), lqd_log.lengths_at(t - 1)
        for i in range(N):
            if l[i] > 0 and o[i] == 0:
                q1 += 1
            if o[i] >= l[i] > 0:
                prev_d = (po[i] - pl[i]) if (po[i] or pl[i]) else 0
                if prev_d > o[i] - l[i]:
                    q2 += 1
    return q1, q2


# -- schedule replay and heuristics -----------------------------------------------------

def replay_schedule(trace: Trace, accept: dict) -> tuple[tuple[tuple[int, ...], ...], int]:
    """Policy-free replay of an admission schedule.

    Returns ``(state_path, throughput)``; raises :class:`InfeasibleSchedule`
    if the schedule accepts more than arrived or overfills the buffer.
    """
    M, N = trace.M, trace.N
    for (t, p), c in accept.items():
        if c < 0 or c > trace.count(t, p):
            raise InfeasibleSchedule(f"accept {c} > arrivals {trace.count(t, p)} at (t={t}, port={p})")
    lengths = [0] * N
    path = []
    throughput = 0
    t = 0
    while True:
        t += 1
        if t > trace.horizon and not any(lengths):
            break
        throughput += sum(1 for l in lengths if l)
        lengths = [l - 1 if l else 0 for l in lengths]
        for p in range(N):
            lengths[p] += accept.get((t, p), 0)
        if sum(lengths) > M:
            raise InfeasibleSchedule(f"occupancy {sum(lengths)} > {M} at t={t}")
        path.append(tuple(lengths))
    return tuple(path), throughput


def greedy_offline(trace: Trace) -> OptSchedule:
    """Accept everything until the buffer is full; never preempt."""
    log = run_policy(trace, CompleteSharing(), PortOrder())
    accept = {}
    for step in log.steps:
        for p, c in enumerate(step.outcome.accepted):
            if c:
                accept[(step.t, p)] = c
    path = tuple(s.lengths for s in log.steps)
    return OptSchedule(accept, log.throughput, path)


def schedule_from_log(log: RunLog) -> OptSchedule:
    """Net admissions of a (possibly preemptive) run as an OptSchedule-shaped record."""
    accept = {}
    for step in log.steps:
        for p, c in enumerate(step.outcome.accepted):
            if c:
                accept[(step.t, p)] = c
    return OptSchedule(accept, log.throughput, tuple(s.lengths for s in log.steps))
