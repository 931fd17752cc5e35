"""Double connections between potential extra packets and LQD packets.

Works on the joint timeline of an ideal fine trace.  Every OPT packet that
sits above its queue's LQD length at the queue's last overflow is connected
to two distinct LQD packets at strictly lower positions; a connection rides
on an LQD packet id and moves to the arriving packet when its holder is
preempted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from lqdlab.analysis import (
    JointTimeline,
    QClass,
    compact_periods,
    fraction_str,
    threshold_at,
    throughput_ratio,
    timeline_csv,
)
from lqdlab.errors import (
    DuplicateTarget,
    ExhaustedFreePackets,
    InvalidConnection,
    NotAnOverflowTimestep,
    NotIdealFine,
)
from lqdlab.transforms import is_ideal_fine_timeline

DOMINATING = (QClass.DOMINATING, QClass.SEMI)


class Kind(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


class Which(str, Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class DominatingOverflowEvent:
    queue: int
    period: tuple[int, int]
    t1: int
    t2: int
    kind: Kind
    p_lqd_at_t1: int
    d_at_t1: int

    @property
    def extra_positions(self) -> range:
        return range(self.p_lqd_at_t1 + 1, self.p_lqd_at_t1 + self.d_at_t1 + 1)

    @property
    def pending_positions(self) -> tuple[int, ...]:
        if self.kind is Kind.PRIMARY:
            return ()
        return tuple(p for p in self.extra_positions if p > 2 * self.p_lqd_at_t1)


def event_kind(p_lqd: int, d: int) -> Kind:
    return Kind.PRIMARY if d <= p_lqd else Kind.SECONDARY


def classify_dominating_events(tl: JointTimeline, check: bool = True) -> list[DominatingOverflowEvent]:
    """One event per compact period in which the queue overflows while
    (semi-)dominating, anchored at the last such overflow."""
    if check and not is_ideal_fine_timeline(tl):
        raise NotIdealFine("timeline is not ideal fine")
    events = []
    for p in compact_periods(tl):
        i = p.queue
        hits = [t for t in range(p.start, p.end + 1)
                if i in tl.overflow[t] and tl.classes[t][i] in DOMINATING]
        if not hits:
            continue
        t1 = hits[-1]
        p_lqd, d = tl.lqd[t1][i], tl.d[t1][i]
        events.append(DominatingOverflowEvent(i, (p.start, p.end), t1, p.end + 1,
                                              event_kind(p_lqd, d), p_lqd, d))
    events.sort(key=lambda e: (e.t1, e.queue))
    return events


# -- ledger ------------------------------------------------------------------------------

@dataclass
class Connection:
    extra: tuple[int, int, int]  # (queue, position at t1, t1)
    target: tuple[int, int]  # (queue, position) when assigned
    packet: int  # LQD packet id when assigned
    assigned_at: int
    which: Which
    holders: list = field(default_factory=list)  # [(t, packet id)] after preemption transfers

    @property
    def holder(self) -> int:
        return self.holders[-1][1] if self.holders else self.packet

    @property
    def extra_departs(self) -> int:
        """Timestep at which OPT transmits the extra packet."""
        _, pos, t1 = self.extra
        return t1 + pos

    def to_dict(self):
        q, pos, t1 = self.extra
        return {"extra": {"queue": q, "position": pos, "t1": t1},
                "target": {"queue": self.target[0], "position": self.target[1]},
                "packet": self.packet, "assigned_at": self.assigned_at, "which": self.which.value,
                "holders": [list(h) for h in self.holders]}


@dataclass
class ConnectionLedger:
    connections: list[Connection] = field(default_factory=list)
    events: list[DominatingOverflowEvent] = field(default_factory=list)
    unresolved: list[tuple[int, int, int]] = field(default_factory=list)  # pending extras past the horizon
    slots: dict = field(default_factory=dict)  # live packet id -> connection index

    def connections_of(self, extra) -> list[Connection]:
        return [c for c in self.connections if c.extra == extra]

    def to_json(self) -> str:
        return json.dumps({"connections": [c.to_dict() for c in self.connections],
                           "unresolved": [list(u) for u in self.unresolved]}, indent=2)


def _positions(tl: JointTimeline, t: int) -> dict[int, tuple[int, int]]:
    """LQD packet id -> (queue, position) after admission at ``t``."""
    out = {}
    for q, ids in enumerate(tl.lqd_log.contents_at(t)):
        for k, pid in enumerate(ids, start=1):
            out[pid] = (q, k)
    return out


def _free_slots(tl, t, taken, line):
    """Unmatched free packets at ``t`` on or below the threshold line,
    highest first, then lowest port."""
    out = []
    contents = tl.lqd_log.contents_at(t)
    for q in tl.queues_of(t, QClass.FREE):
        for pos in range(tl.opt_len[t][q] + 1, tl.lqd[t][q] + 1):
            if line is not None and pos > line:
                continue
            pid = contents[q][pos - 1]
            if pid not in taken:
                out.append((pos, q, pid))
    out.sort(key=lambda x: (-x[0], x[1]))
    return out


def _free_queue_commons(tl, t, taken):
    out = []
    contents = tl.lqd_log.contents_at(t)
    for q in tl.queues_of(t, QClass.FREE):
        for pos in range(1, min(tl.opt_len[t][q], tl.lqd[t][q]) + 1):
            pid = contents[q][pos - 1]
            if pid not in taken:
                out.append((pos, q, pid))
    out.sort(key=lambda x: (-x[0], x[1]))
    return out


def _pair_descending(extras, slots):
    """Pair extras (highest first) with the highest slot strictly below each."""
    pairs = []
    pool = list(slots)
    for ex_pos, ex in extras:
        pick = next((k for k, s in enumerate(pool) if s[0] < ex_pos), None)
        if pick is None:
            return pairs, ex
        pairs.append((ex, pool.pop(pick)))
    return pairs, None


def assign_connections(tl: JointTimeline, events: list[DominatingOverflowEvent] | None = None,
                       check: bool = True) -> ConnectionLedger:
    """Run the two-connection assignment over the whole timeline."""
    if check and not is_ideal_fine_timeline(tl):
        raise NotIdealFine("timeline is not ideal fine")
    if events is None:
        events = classify_dominating_events(tl, check=False)
    ledger = ConnectionLedger(events=list(events))
    by_t1, by_t2 = {}, {}
    for ev in events:
        by_t1.setdefault(ev.t1, []).append(ev)
    window = tl.window

    def connect(extra, t, slot, which):
        pos, q, pid = slot
        if pid in ledger.slots:
            raise DuplicateTarget(f"packet {pid} already connected", t, q, pos)
        ledger.slots[pid] = len(ledger.connections)
        ledger.connections.append(Connection(extra, (q, pos), pid, t, which))

    def exhausted(ev, pos, t, why):
        raise ExhaustedFreePackets(f"{why} for queue {ev.queue} extra at position {pos} (t1={ev.t1})",
                                   t, ev.queue, pos, timeline_csv(tl))

    for t in range(1, tl.T_tot + 1):
        step = tl.lqd_log.steps[t - 1] if t <= len(tl.lqd_log.steps) else None
        if step is not None:
            # transmitted holders leave; preempted holders hand over to the arrival
            for _, pid in step.outcome.transmitted:
                ledger.slots.pop(pid, None)
            for _, gone, _, _, new in step.outcome.replacements:
                k = ledger.slots.pop(gone, None)
                if k is not None:
                    ledger.slots[new] = k
                    ledger.connections[k].holders.append((t, new))

        for ev in by_t1.get(t, []):
            if not ev.d_at_t1:
                continue
            i = ev.queue
            contents = tl.lqd_log.contents_at(t)[i]
            try:
                line = threshold_at(tl, t)
            except NotAnOverflowTimestep:
                line = ev.p_lqd_at_t1
            pending = set(ev.pending_positions)
            extras = [(p, (i, p, t)) for p in reversed(ev.extra_positions)]

            # same-queue common packets for every non-pending extra
            commons = [(k, i, pid) for k, pid in enumerate(contents, start=1) if pid not in ledger.slots]
            commons.sort(key=lambda x: x[0])
            non_pending = [(p, ex) for p, ex in extras if p not in pending]
            if len(commons) < len(non_pending):
                exhausted(ev, non_pending[len(commons)][0], t, "not enough same-queue common packets")
            for (p, ex), slot in zip(sorted(non_pending), commons):
                connect(ex, t, slot, Which.FIRST)

            # free packets: second connection for non-pending, first for pending
            free = _free_slots(tl, t, ledger.slots, line)
            pairs, stuck = _pair_descending(extras, free)
            if stuck is not None:
                used = {s[2] for _, s in pairs}
                spare = [s for s in _free_queue_commons(tl, t, ledger.slots) if s[2] not in used]
                rest = [(p, ex) for p, ex in extras if ex not in {e for e, _ in pairs}]
                more, stuck = _pair_descending(rest, spare)
                pairs += more
                if stuck is not None:
                    exhausted(ev, stuck[1], t, "no valid free packet at t1")
            for ex, slot in pairs:
                which = Which.FIRST if ex[1] in pending else Which.SECOND
                connect(ex, t, slot, which)

            if pending:
                if ev.t2 > window:
                    ledger.unresolved.extend((i, p, t) for p in sorted(pending, reverse=True))
                else:
                    by_t2.setdefault(ev.t2, []).append(ev)

        for ev in by_t2.get(t, []):
            i, t1 = ev.queue, ev.t1
            shift = t - t1
            extras = [(p - shift, (i, p, t1)) for p in sorted(ev.pending_positions, reverse=True)]
            free = _free_slots(tl, t, ledger.slots, None)
            pairs, stuck = _pair_descending(extras, free)
            if stuck is not None:
                # same tied-drop fallback as at t1
                used = {s[2] for _, s in pairs}
                spare = [s for s in _free_queue_commons(tl, t, ledger.slots) if s[2] not in used]
                done = {e for e, _ in pairs}
                more, stuck = _pair_descending([x for x in extras if x[1] not in done], spare)
                pairs += more
                if stuck is not None:
                    exhausted(ev, stuck[1], t, "no valid free packet at t2")
            for ex, slot in pairs:
                connect(ex, t, slot, Which.SECOND)
    return ledger


# -- verification ------------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    extra: int
    potential_extra: int
    matched: int
    lqd_throughput: int
    opt_throughput: int
    unresolved: int
    ratio_bound: Fraction
    bound_holds: bool

    def to_dict(self):
        return {"extra": self.extra, "potential_extra": self.potential_extra, "matched": self.matched,
                "lqd_throughput": self.lqd_throughput, "opt_throughput": self.opt_throughput,
                "unresolved": self.unresolved, "ratio_bound": fraction_str(self.ratio_bound),
                "bound_holds": self.bound_holds}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _replay_holders(tl: JointTimeline, conn: Connection) -> list[tuple[int, int]]:
    holders = []
    pid = conn.packet
    for s in tl.lqd_log.steps[conn.assigned_at:]:
        for _, gone, _, _, new in s.outcome.replacements:
            if gone == pid:
                pid = new
                holders.append((s.t, new))
        if any(x == pid for _, x in s.outcome.transmitted):
            break
    return holders


def verify_ledger(tl: JointTimeline, ledger: ConnectionLedger) -> Certificate:
    """Re-check every connection and summarize what the ledger certifies."""
    departures = tl.lqd_log.departures()
    positions = {}
    owner = {}
    for k, c in enumerate(ledger.connections):
        q, pos = c.target
        t = c.assigned_at
        if t not in positions:
            positions[t] = _positions(tl, t)
        if positions[t].get(c.packet) != (q, pos):
            raise InvalidConnection(f"packet {c.packet} is not at the recorded slot", t, q, pos)
        _, ep, t1 = c.extra
        ex_pos = ep - (t - t1)
        if pos >= ex_pos:
            raise InvalidConnection(f"target position {pos} not below extra position {ex_pos}", t, q, pos)
        if c.holders != _replay_holders(tl, c):
            raise InvalidConnection("holder chain does not follow the preemptions", t, q, pos)
        # a packet id can carry one connection in its lifetime
        for pid in [c.packet] + [h for _, h in c.holders]:
            if pid in owner:
                raise DuplicateTarget(f"packet {pid} carries two connections", t, q, pos)
            owner[pid] = k
        left = departures.get(c.holder)
        if left is None or left >= c.extra_departs:
            raise InvalidConnection(f"LQD packet leaves at {left}, extra at {c.extra_departs}", t, q, pos)

    pe = sum(ev.d_at_t1 for ev in ledger.events)
    lqd = tl.lqd_log.throughput
    extra = sum(tl.counts(t)[QClass.ESTABLISHED] for t in range(1, tl.T_tot + 1))
    unresolved = len(ledger.unresolved)
    matched = len(ledger.connections)
    if lqd:
        bound = 1 + Fraction(pe, lqd)
    else:
        bound = Fraction(1)
    holds = (2 * pe - unresolved <= matched <= lqd) and bound <= Fraction(3, 2)
    return Certificate(extra, pe, matched, lqd, tl.opt.throughput, unresolved, bound, holds)


def certify(tl: JointTimeline) -> Certificate:
    return verify_ledger(tl, assign_connections(tl))


# -- property checks ----------------------------------------------------------------------

def corollary5_violations(ledger: ConnectionLedger) -> list[tuple[int, int, int]]:
    """Pending extras (resolved within the horizon) without exactly one
    connection at t1 and one at t2."""
    bad = []
    unresolved = set(ledger.unresolved)
    for ev in ledger.events:
        for p in ev.pending_positions:
            key = (ev.queue, p, ev.t1)
            if key in unresolved:
                continue
            conns = ledger.connections_of(key)
            times = sorted(c.assigned_at for c in conns)
            if times != [ev.t1, ev.t2]:
                bad.append(key)
    return bad


def free_sufficiency_violations(tl: JointTimeline, ledger: ConnectionLedger) -> list[int]:
    """t1 timesteps where connections into free queues outnumber what the
    free queues can supply: their free packets on or below the threshold
    line, plus, for each free packet pushed above the line by a tied drop,
    one common packet of a free queue."""
    bad = []
    for t in sorted({ev.t1 for ev in ledger.events}):
        demanded = sum(1 for c in ledger.connections
                       if c.assigned_at == t and tl.classes[t][c.target[0]] is QClass.FREE)
        try:
            line = threshold_at(tl, t)
        except NotAnOverflowTimestep:
            continue
        below = above = commons = 0
        for q in tl.queues_of(t, QClass.FREE):
            lo, hi = tl.opt_len[t][q], tl.lqd[t][q]
            below += max(0, min(hi, line) - lo)
            above += max(0, hi - max(line, lo))
            commons += lo
        if demanded > below + min(above, commons):
            bad.append(t)
    return bad


def shadowing_violations(tl: JointTimeline, ledger: ConnectionLedger) -> list[tuple[int, int, int]]:
    """Free slots connected at a t1 with no dominating LQD queue at least as long."""
    t1s = {ev.t1 for ev in ledger.events}
    bad = []
    for c in ledger.connections:
        t = c.assigned_at
        q, pos = c.target
        if t not in t1s or tl.classes[t][q] is not QClass.FREE:
            continue
        if not any(tl.lqd[t][i] >= pos for i in tl.queues_of(t, *DOMINATING)):
            bad.append((t, q, pos))
    return bad


def bound_dominates(tl: JointTimeline, cert: Certificate) -> bool:
    if not tl.lqd_log.throughput:
        return True
    return cert.ratio_bound >= throughput_ratio(tl)
