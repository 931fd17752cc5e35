"""lqdlab command line: simulate, opt, ratio, transform, match, fuzz.

Exit codes: 0 success, 2 an invariant violation was found, 1 operational error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from lqdlab.analysis import (
    analyze,
    fraction_str,
    inequality1_violations,
    throughput_ratio,
    timeline_csv,
    timeline_summary,
)
from lqdlab.errors import LqdLabError
from lqdlab.matcher import assign_connections, bound_dominates, verify_ledger
from lqdlab.opt import reconstruct_canonical_opt
from lqdlab.switch import LQD, PreferDominatingFirst, RoundRobinByPort, parse_policy, parse_tiebreak, run_policy
from lqdlab.trace import Trace, load_trace, serialize_trace
from lqdlab.tracegen import BOUND, GenSpec, gen_bursty, gen_random
from lqdlab.transforms import is_ideal_fine_timeline, pipeline

OK, FINDING, FAILURE = 0, 2, 1


class Output:
    """Writes named artifacts into --out, or to stdout without it."""

    def __init__(self, out_dir: str | None):
        self.dir = Path(out_dir) if out_dir else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        if self.dir:
            (self.dir / name).write_text(text if text.endswith("\n") else text + "\n")
        else:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def _load(args) -> Trace:
    trace = load_trace(args.trace)
    if args.horizon:
        trace = trace.replace_arrivals({k: v for k, v in trace.arrivals.items() if k[0] <= args.horizon})
    return trace


def cmd_simulate(args, out: Output) -> int:
    trace = _load(args)
    policy = parse_policy(args.policy)
    if args.tiebreak == "prefer-dominating":
        base = run_policy(trace, LQD(), RoundRobinByPort())
        opt = reconstruct_canonical_opt(trace, base, args.budget)
        tiebreak = PreferDominatingFirst(opt.state_path)
    else:
        tiebreak = parse_tiebreak(args.tiebreak)
    log = run_policy(trace, policy, tiebreak)
    if args.format == "csv":
        out.write("run.csv", log.to_csv())
    else:
        steps = [{"t": s.t, "lengths": list(s.lengths), "transmitted": len(s.outcome.transmitted),
                  "accepted": list(s.outcome.accepted), "rejected": list(s.outcome.rejected),
                  "preempted": len(s.outcome.preempted), "overflow": sorted(s.outcome.overflow_ports)}
                 for s in log.steps]
        out.write("run.json", _dump({"policy": log.policy, "tiebreak": log.tiebreak,
                                     "throughput": log.throughput, "steps": steps}))
    return OK


def cmd_opt(args, out: Output) -> int:
    trace = _load(args)
    log = run_policy(trace, LQD(), RoundRobinByPort())
    opt = reconstruct_canonical_opt(trace, log, args.budget)
    if args.format == "csv":
        lines = ["t," + ",".join(f"len{i}" for i in range(trace.N))]
        lines += [f"{t}," + ",".join(map(str, v)) for t, v in enumerate(opt.state_path, start=1)]
        out.write("opt.csv", "\n".join(lines))
    else:
        doc = json.loads(opt.to_json())
        doc["q1_residuals"] = opt.q1_residuals
        doc["q2_residuals"] = opt.q2_residuals
        out.write("opt.json", _dump(doc))
    return OK


def _ratio_doc(trace: Trace, budget):
    tl = analyze(trace, budget=budget)
    doc = timeline_summary(tl)
    doc["ratio"] = fraction_str(throughput_ratio(tl)) if tl.lqd_log.throughput else "1/1"
    viol = inequality1_violations(tl) if tl.opt.q1_residuals == 0 else []
    doc["inequality1_violations"] = viol
    bad = bool(viol) or (tl.lqd_log.throughput and throughput_ratio(tl) > BOUND)
    return tl, doc, bad


def cmd_ratio(args, out: Output) -> int:
    trace = _load(args)
    tl, doc, bad = _ratio_doc(trace, args.budget)
    if args.format == "csv":
        out.write("timeline.csv", timeline_csv(tl))
    out.write("ratio.json", _dump(doc))
    return FINDING if bad else OK


def cmd_transform(args, out: Output) -> int:
    trace = _load(args)
    reports = pipeline(trace, budget=args.budget)
    out.write("transforms.json", _dump([r.to_dict() for r in reports]))
    if args.out:
        out.write("ideal.json", serialize_trace(reports[-1].after))
    return FINDING if any(r.violations for r in reports) else OK


def cmd_match(args, out: Output) -> int:
    trace = _load(args)
    tl = analyze(trace, budget=args.budget)
    applied = False
    if not is_ideal_fine_timeline(tl):
        trace = pipeline(trace, budget=args.budget)[-1].after
        tl = analyze(trace, budget=args.budget)
        applied = True
    ledger = assign_connections(tl)
    cert = verify_ledger(tl, ledger)
    doc = cert.to_dict()
    doc["pipeline_applied"] = applied
    doc["dominates_observed"] = bound_dominates(tl, cert)
    out.write("certificate.json", _dump(doc))
    if args.out:
        out.write("ledger.json", ledger.to_json())
    return OK if cert.bound_holds and doc["dominates_observed"] else FINDING


# -- fuzz -----------------------------------------------------------------------------------

def _fuzz_one(job):
    index, spec, budget = job
    trace = gen_bursty(spec) if spec.burst_probability else gen_random(spec)
    tl, doc, _ = _ratio_doc(trace, budget)
    ratio = throughput_ratio(tl) if tl.lqd_log.throughput else Fraction(1)
    return {"index": index, "trace": serialize_trace(trace), "ratio": fraction_str(ratio),
            "bound_violation": ratio > BOUND, "q1_residuals": tl.opt.q1_residuals,
            "ineq1_violations": len(doc["inequality1_violations"])}


def fuzz_corpus(spec: GenSpec, count: int, budget=None, workers: int = 1, out: Output | None = None):
    jobs = [(k, spec.with_seed(spec.seed * 1_000_003 + k), budget) for k in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_fuzz_one, jobs, chunksize=max(1, count // (workers * 8))))
    else:
        rows = [_fuzz_one(j) for j in jobs]
    rows.sort(key=lambda r: r["index"])
    if out is not None and out.dir:
        out.write("samples.jsonl", "\n".join(json.dumps(r, sort_keys=True) for r in rows))
    best = max(rows, key=lambda r: (Fraction(r["ratio"]), [-ord(c) for c in r["trace"]]), default=None)
    return {
        "count": count,
        "max_ratio": best["ratio"] if best else None,
        "max_ratio_trace": json.loads(best["trace"]) if best else None,
        "tallies": {
            "bound_violation": sum(r["bound_violation"] for r in rows),
            "inequality1_violation": sum(1 for r in rows if r["ineq1_violations"]),
            "q1_residual_traces": sum(1 for r in rows if r["q1_residuals"]),
        },
    }


def cmd_fuzz(args, out: Output) -> int:
    M = args.M
    N = args.N or M
    spec = GenSpec(M, N, args.horizon or 8, args.max_count or M + 1, args.burst, args.seed)
    report = fuzz_corpus(spec, args.count, args.budget, args.workers, out)
    out.write("fuzz.json", _dump(report))
    t = report["tallies"]
    return FINDING if t["bound_violation"] or t["inequality1_violation"] else OK


COMMANDS = {"simulate": cmd_simulate, "opt": cmd_opt, "ratio": cmd_ratio,
            "transform": cmd_transform, "match": cmd_match, "fuzz": cmd_fuzz}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--trace", help="trace file (JSON or CSV)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--budget", type=int, default=None,
                        help="oracle state budget (default: $LQDLAB_BUDGET or built-in)")
    common.add_argument("--horizon", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("--policy", default="lqd", help="lqd | sharing | threshold:K | partition")
    common.add_argument("--tiebreak", default="rr", help="rr | port | seeded:K | prefer-dominating")

    parser = argparse.ArgumentParser(prog="lqdlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "fuzz":
            p.add_argument("--count", type=int, default=1000)
            p.add_argument("--M", type=int, default=4)
            p.add_argument("--N", type=int, default=None)
            p.add_argument("--max-count", type=int, default=None)
            p.add_argument("--burst", type=float, default=0.0, help="burst probability")
            p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "fuzz" and not args.trace:
        parser.error("--trace is required")
    for name in ("budget", "horizon"):
        v = getattr(args, name)
        if v is not None and v < 1:
            parser.error(f"--{name} must be positive")
    out = Output(args.out)
    try:
        return COMMANDS[args.command](args, out)
    except LqdLabError as e:
        sys.stderr.write(json.dumps({"error": e.code, "message": str(e)}) + "\n")
        return FAILURE
    except (OSError, ValueError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
