"""Arrival traces: validation, normalization, and the on-disk formats."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

from lqdlab.errors import (
    CountTooLarge,
    InputMLessThanN,
    NonPositiveCount,
    NonPositiveTimestep,
    PortOutOfRange,
    TraceSyntaxError,
    ZeroDimensions,
)

MAX_COUNT = 2**31 - 1


@dataclass(frozen=True)
class Trace:
    """An arrival schedule for a switch with buffer ``M`` and ``N`` ports.

    ``entries`` holds ``(t, port, count)`` triples sorted by ``(t, port)``;
    timesteps are 1-based and absent entries mean no arrivals.
    """

    M: int
    N: int
    entries: tuple[tuple[int, int, int], ...] = ()

    @classmethod
    def from_mapping(cls, M: int, N: int, arrivals: Mapping[tuple[int, int], int]) -> "Trace":
        entries = tuple(sorted((t, p, c) for (t, p), c in arrivals.items()))
        return cls(M, N, entries)

    @cached_property
    def arrivals(self) -> dict[tuple[int, int], int]:
        return {(t, p): c for t, p, c in self.entries}

    @property
    def horizon(self) -> int:
        return self.entries[-1][0] if self.entries else 0

    def count(self, t: int, port: int) -> int:
        return self.arrivals.get((t, port), 0)

    def batch(self, t: int) -> tuple[int, ...]:
        """Arrival counts of timestep ``t`` as a length-N vector."""
        if 1 <= t <= self.horizon:
            return self.rows[t - 1]
        return (0,) * self.N

    @cached_property
    def rows(self) -> tuple[tuple[int, ...], ...]:
        rows = [[0] * self.N for _ in range(self.horizon)]
        for t, p, c in self.entries:
            rows[t - 1][p] = c
        return tuple(tuple(r) for r in rows)

    @cached_property
    def used_ports(self) -> tuple[int, ...]:
        return tuple(sorted({p for _, p, _ in self.entries}))

    def total_arrivals(self, port: int | None = None) -> int:
        return sum(c for _, p, c in self.entries if port is None or p == port)

    def replace_arrivals(self, arrivals: Mapping[tuple[int, int], int]) -> "Trace":
        """Copy with a new arrival map; zero counts are dropped."""
        return Trace.from_mapping(self.M, self.N, {k: c for k, c in arrivals.items() if c > 0})


@dataclass(frozen=True)
class ArrivalBatch:
    t: int
    counts: tuple[int, ...]


def validate_trace(raw: Trace) -> Trace:
    """Check a trace and normalize it to the M = N model.

    An input with M > N gets unused ports appended so that N = M.
    """
    M, N = raw.M, raw.N
    if M <= 0 or N <= 0:
        raise ZeroDimensions(f"M={M}, N={N}")
    if M < N:
        raise InputMLessThanN(f"M={M} < N={N}")
    seen = set()
    for t, p, c in raw.entries:
        if t < 1:
            raise NonPositiveTimestep(f"timestep {t} at port {p}")
        if not 0 <= p < N:
            raise PortOutOfRange(f"port {p} not in [0, {N})")
        if c <= 0:
            raise NonPositiveCount(f"count {c} at (t={t}, port={p})")
        if c > MAX_COUNT:
            raise CountTooLarge(f"count {c} at (t={t}, port={p})")
        if (t, p) in seen:
            raise TraceSyntaxError(f"duplicate entry (t={t}, port={p})")
        seen.add((t, p))
    entries = tuple(sorted(raw.entries))
    return Trace(M, M, entries)


def normalize(raw: Trace) -> Trace:
    return validate_trace(raw)


def make_trace(M: int, N: int, arrivals: Mapping[tuple[int, int], int] | Iterable = ()) -> Trace:
    """Build and validate a trace from ``{(t, port): count}`` or triples."""
    if isinstance(arrivals, Mapping):
        entries = tuple((t, p, c) for (t, p), c in arrivals.items())
    else:
        entries = tuple(tuple(e) for e in arrivals)
    return validate_trace(Trace(M, N, entries))


def is_bursty(trace: Trace, t: int, port: int) -> bool:
    return trace.count(t, port) >= trace.M


# -- file formats -----------------------------------------------------------

def serialize_trace(trace: Trace) -> str:
    doc = {
        "M": trace.M,
        "N": trace.N,
        "arrivals": [{"t": t, "port": p, "count": c} for t, p, c in sorted(trace.entries)],
    }
    return json.dumps(doc, separators=(",", ":"))


def _int_field(obj, key, lineno):
    value = obj.get(key) if isinstance(obj, dict) else None
    if isinstance(value, bool) or not isinstance(value, int):
        raise TraceSyntaxError(f"field {key!r} must be an integer", lineno)
    return value


def _line_of(text: str, needle: str, start: int = 0) -> int | None:
    idx = text.find(needle, start)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def _parse_json(text: str) -> Trace:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TraceSyntaxError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict):
        raise TraceSyntaxError("top level must be an object", 1)
    M = _int_field(doc, "M", _line_of(text, '"M"'))
    N = _int_field(doc, "N", _line_of(text, '"N"'))
    items = doc.get("arrivals", [])
    if not isinstance(items, list):
        raise TraceSyntaxError("'arrivals' must be a list", _line_of(text, '"arrivals"'))
    entries = []
    for k, item in enumerate(items):
        # best-effort line number: the k-th '{' after the arrivals key
        pos = text.find('"arrivals"')
        for _ in range(k + 1):
            pos = text.find("{", pos + 1)
        lineno = text.count("\n", 0, pos) + 1 if pos >= 0 else None
        entries.append(tuple(_int_field(item, key, lineno) for key in ("t", "port", "count")))
    return Trace(M, N, tuple(entries))


_HEADER = re.compile(r"^\s*#?\s*M\s*=\s*(-?\d+)\s*,\s*N\s*=\s*(-?\d+)\s*$")


def _parse_csv(text: str) -> Trace:
    lines = text.splitlines()
    match = _HEADER.match(lines[0]) if lines else None
    if not match:
        raise TraceSyntaxError("expected header 'M=<int>,N=<int>'", 1)
    M, N = int(match.group(1)), int(match.group(2))
    entries = []
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    for offset, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].strip().startswith("#"):
            continue
        if [c.strip() for c in row] == ["t", "port", "count"]:
            continue
        if len(row) != 3:
            raise TraceSyntaxError(f"expected 3 fields, got {len(row)}", offset)
        try:
            entries.append(tuple(int(c) for c in row))
        except ValueError:
            raise TraceSyntaxError(f"non-integer field in {row!r}", offset) from None
    return Trace(M, N, tuple(entries))


def parse_trace(text: str) -> Trace:
    """Parse the JSON (canonical) or CSV trace format, then validate."""
    stripped = text.lstrip()
    raw = _parse_json(text) if stripped.startswith("{") else _parse_csv(text)
    return validate_trace(raw)


def load_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read())


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_trace(trace) + "\n")
