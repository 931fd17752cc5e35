"""Discrete-time shared-memory switch.

Each timestep first sends the head packet of every nonempty queue, then
admits that timestep's arrivals one packet at a time.  Snapshots are taken
after admission.
"""

from __future__ import annotations

import csv
import io
import random
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from lqdlab.errors import InvalidThreshold
from lqdlab.trace import Trace

ACCEPT, REJECT, PREEMPT = "accept", "reject", "preempt"


class Packet(NamedTuple):
    id: int
    t: int  # admission timestep


# -- tie-break rules ----------------------------------------------------------

class TieBreakRule:
    """Fixes the serialization of simultaneous arrivals and the victim among
    equally long longest queues."""

    name = "abstract"

    def interleave(self, counts: Sequence[int], t: int) -> list[int]:
        raise NotImplementedError

    def victim(self, candidates: list[int], lengths: Sequence[int], t: int) -> int:
        return candidates[0]

    def __str__(self):
        return self.name


class RoundRobinByPort(TieBreakRule):
    name = "rr"

    def interleave(self, counts, t):
        remaining = list(counts)
        order = []
        while True:
            emitted = False
            for p, c in enumerate(remaining):
                if c:
                    order.append(p)
                    remaining[p] -= 1
                    emitted = True
            if not emitted:
                return order


class PortOrder(TieBreakRule):
    name = "port"

    def interleave(self, counts, t):
        return [p for p, c in enumerate(counts) for _ in range(c)]


class Seeded(TieBreakRule):
    """Random interleaving and victim choice, a pure function of (seed, t)."""

    def __init__(self, seed: int):
        self.seed = seed
        self.name = f"seeded:{seed}"

    def _rng(self, t, salt):
        return random.Random(self.seed * 1_000_003 + t * 7 + salt)

    def interleave(self, counts, t):
        order = PortOrder().interleave(counts, t)
        self._rng(t, 0).shuffle(order)
        return order

    def victim(self, candidates, lengths, t):
        # salt by the current lengths so repeated preemptions in one step differ
        return self._rng(t, 1 + hash(tuple(lengths)) % 997).choice(candidates)


class PreferDominatingFirst(TieBreakRule):
    """Among tied longest queues, drop first from one that is not free, i.e.
    whose length in the reference OPT buffer at ``t`` is at least the LQD
    length.  ``opt_path[t-1]`` is the OPT post-admission length vector."""

    name = "prefer-dominating"

    def __init__(self, opt_path: Sequence[Sequence[int]], base: TieBreakRule | None = None):
        self.opt_path = [tuple(v) for v in opt_path]
        self.base = base or RoundRobinByPort()

    def interleave(self, counts, t):
        return self.base.interleave(counts, t)

    def _opt(self, t, i):
        if 1 <= t <= len(self.opt_path):
            return self.opt_path[t - 1][i]
        return 0

    def victim(self, candidates, lengths, t):
        preferred = [i for i in candidates if self._opt(t, i) >= lengths[i]]
        return (preferred or candidates)[0]


def parse_tiebreak(text: str) -> TieBreakRule:
    if text == "rr":
        return RoundRobinByPort()
    if text == "port":
        return PortOrder()
    if text.startswith("seeded:"):
        return Seeded(int(text.split(":", 1)[1]))
    raise ValueError(f"unknown tie-break {text!r}")


# -- policies -----------------------------------------------------------------

class Policy:
    name = "abstract"
    preemptive = False

    def decide(self, lengths, dest, occupancy, M, N, tiebreak, t):
        """Return ``(ACCEPT|REJECT|PREEMPT, victim_port_or_None)``."""
        raise NotImplementedError

    def __str__(self):
        return self.name


class LQD(Policy):
    name = "lqd"
    preemptive = True

    def decide(self, lengths, dest, occupancy, M, N, tiebreak, t):
        if occupancy < M:
            return ACCEPT, None
        longest = max(lengths)
        if lengths[dest] == longest:
            return REJECT, None
        candidates = [i for i, l in enumerate(lengths) if l == longest]
        return PREEMPT, tiebreak.victim(candidates, lengths, t)


class CompleteSharing(Policy):
    name = "sharing"

    def decide(self, lengths, dest, occupancy, M, N, tiebreak, t):
        return (ACCEPT if occupancy < M else REJECT), None


class StaticThreshold(Policy):
    def __init__(self, theta: int):
        if theta < 1:
            raise InvalidThreshold(f"threshold {theta} < 1")
        self.theta = theta
        self.name = f"threshold:{theta}"

    def decide(self, lengths, dest, occupancy, M, N, tiebreak, t):
        ok = occupancy < M and lengths[dest] < self.theta
        return (ACCEPT if ok else REJECT), None


class CompletePartitioning(Policy):
    name = "partition"

    def decide(self, lengths, dest, occupancy, M, N, tiebreak, t):
        ok = occupancy < M and lengths[dest] < M // N
        return (ACCEPT if ok else REJECT), None


def parse_policy(text: str) -> Policy:
    if text == "lqd":
        return LQD()
    if text == "sharing":
        return CompleteSharing()
    if text == "partition":
        return CompletePartitioning()
    if text.startswith("threshold:"):
        return StaticThreshold(int(text.split(":", 1)[1]))
    raise ValueError(f"unknown policy {text!r}")


# -- state and one timestep ------------------------------------------------------

@dataclass(frozen=True)
class StepOutcome:
    transmitted: tuple[tuple[int, int], ...]
    accepted: tuple[int, ...]
    preempted: tuple[tuple[int, int], ...]
    rejected: tuple[int, ...]
    # (victim_port, victim_id, victim_position, new_port, new_id) per preemption
    replacements: tuple[tuple[int, int, int, int, int], ...] = ()
    overflow_ports: frozenset = frozenset()


class SwitchState:
    def __init__(self, M: int, N: int, queues=None, next_id: int = 0):
        self.M = M
        self.N = N
        self.queues = [deque(q) for q in queues] if queues is not None else [deque() for _ in range(N)]
        self.next_id = next_id

    @classmethod
    def from_lengths(cls, M, lengths, t=0):
        state = cls(M, len(lengths))
        for i, n in enumerate(lengths):
            for _ in range(n):
                state.queues[i].append(Packet(state.next_id, t))
                state.next_id += 1
        return state

    def copy(self) -> "SwitchState":
        return SwitchState(self.M, self.N, self.queues, self.next_id)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(len(q) for q in self.queues)

    @property
    def occupancy(self) -> int:
        return sum(len(q) for q in self.queues)

    def contents(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(p.id for p in q) for q in self.queues)

    def _transmit(self):
        return tuple((i, q.popleft().id) for i, q in enumerate(self.queues) if q)

    def _admit(self, counts, policy, tiebreak, t):
        lengths = [len(q) for q in self.queues]
        occupancy = sum(lengths)
        accepted = [0] * self.N
        rejected = [0] * self.N
        preempted, replacements, overflow = [], [], set()
        for dest in tiebreak.interleave(counts, t):
            action, victim = policy.decide(lengths, dest, occupancy, self.M, self.N, tiebreak, t)
            if action == REJECT:
                rejected[dest] += 1
                if occupancy >= self.M:
                    overflow.add(dest)
                continue
            pkt = Packet(self.next_id, t)
            self.next_id += 1
            if action == PREEMPT:
                position = lengths[victim]
                gone = self.queues[victim].pop()
                lengths[victim] -= 1
                occupancy -= 1
                preempted.append((victim, gone.id))
                replacements.append((victim, gone.id, position, dest, pkt.id))
                overflow.add(victim)
            self.queues[dest].append(pkt)
            lengths[dest] += 1
            occupancy += 1
            accepted[dest] += 1
        return StepOutcome(
            transmitted=(),
            accepted=tuple(accepted),
            preempted=tuple(preempted),
            rejected=tuple(rejected),
            replacements=tuple(replacements),
            overflow_ports=frozenset(overflow),
        )


def transmit_phase(state: SwitchState):
    """Send the head of every nonempty queue; returns ``(new_state, transmitted)``."""
    new = state.copy()
    return new, new._transmit()


def policy_admit(state: SwitchState, counts: Sequence[int], policy: Policy,
                 tiebreak: TieBreakRule | None = None, t: int = 1):
    new = state.copy()
    outcome = new._admit(tuple(counts), policy, tiebreak or RoundRobinByPort(), t)
    return new, outcome


def lqd_admit(state: SwitchState, counts: Sequence[int], tiebreak: TieBreakRule | None = None, t: int = 1):
    return policy_admit(state, counts, LQD(), tiebreak, t)


def lqd_step_lengths(lengths: Sequence[int], counts: Sequence[int], M: int,
                     tiebreak: TieBreakRule, t: int, policy: Policy | None = None):
    """Lengths-only timestep: transmit, then admit.  Returns the new lengths
    and the net number of packets added (accepted minus preempted).

    Uses the same decision code as the packet-level simulator; only packet
    identities are dropped.
    """
    policy = policy or LQD()
    N = len(lengths)
    cur = [l - 1 if l else 0 for l in lengths]
    occupancy = sum(cur)
    net = 0
    for dest in tiebreak.interleave(counts, t):
        action, victim = policy.decide(cur, dest, occupancy, M, N, tiebreak, t)
        if action == REJECT:
            continue
        if action == PREEMPT:
            cur[victim] -= 1
            net -= 1
            occupancy -= 1
        cur[dest] += 1
        occupancy += 1
        net += 1
    return tuple(cur), net


# -- whole runs -----------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    t: int
    lengths: tuple[int, ...]
    contents: tuple[tuple[int, ...], ...]
    outcome: StepOutcome


@dataclass(frozen=True)
class RunLog:
    M: int
    N: int
    policy: str
    tiebreak: str
    steps: tuple[StepRecord, ...]
    throughput: int
    _departures: dict = field(default=None, compare=False, repr=False)

    @property
    def drain_t(self) -> int:
        return self.steps[-1].t if self.steps else 0

    def lengths_at(self, t: int) -> tuple[int, ...]:
        if 1 <= t <= len(self.steps):
            return self.steps[t - 1].lengths
        return (0,) * self.N

    def contents_at(self, t: int) -> tuple[tuple[int, ...], ...]:
        if 1 <= t <= len(self.steps):
            return self.steps[t - 1].contents
        return ((),) * self.N

    def overflow_at(self, t: int) -> frozenset:
        if 1 <= t <= len(self.steps):
            return self.steps[t - 1].outcome.overflow_ports
        return frozenset()

    def departures(self) -> dict[int, int]:
        """Map packet id -> transmission timestep."""
        return {pid: s.t for s in self.steps for _, pid in s.outcome.transmitted}

    @property
    def accepted_total(self) -> int:
        return sum(sum(s.outcome.accepted) for s in self.steps)

    @property
    def preempted_total(self) -> int:
        return sum(len(s.outcome.preempted) for s in self.steps)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t"] + [f"len{i}" for i in range(self.N)]
                   + ["transmitted", "accepted", "preempted", "rejected", "overflow_ports"])
        for s in self.steps:
            o = s.outcome
            w.writerow([s.t, *s.lengths, len(o.transmitted), sum(o.accepted), len(o.preempted),
                        sum(o.rejected), " ".join(str(p) for p in sorted(o.overflow_ports))])
        return out.getvalue()


def run_policy(trace: Trace, policy: Policy | None = None, tiebreak: TieBreakRule | None = None) -> RunLog:
    """Run one buffer over ``trace`` until it drains after the last arrival."""
    policy = policy or LQD()
    tiebreak = tiebreak or RoundRobinByPort()
    state = SwitchState(trace.M, trace.N)
    steps = []
    throughput = 0
    t = 0
    while True:
        t += 1
        if t > trace.horizon and state.occupancy == 0:
            break
        transmitted = state._transmit()
        throughput += len(transmitted)
        outcome = state._admit(trace.batch(t), policy, tiebreak, t)
        outcome = StepOutcome(transmitted, outcome.accepted, outcome.preempted, outcome.rejected,
                              outcome.replacements, outcome.overflow_ports)
        steps.append(StepRecord(t, state.lengths, state.contents(), outcome))
    return RunLog(trace.M, trace.N, str(policy), str(tiebreak), tuple(steps), throughput)
