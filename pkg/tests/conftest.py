import os

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from lqdlab.trace import make_trace

settings.register_profile("default", deadline=None, max_examples=150,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def traces(draw, max_M=4, max_horizon=5, max_count=None):
    """Small random traces in the M = N model."""
    M = draw(st.integers(1, max_M))
    horizon = draw(st.integers(0, max_horizon))
    top = max_count or M + 1
    cells = [(t, p) for t in range(1, horizon + 1) for p in range(M)]
    arr = {}
    for cell in cells:
        c = draw(st.integers(0, top))
        if c:
            arr[cell] = c
    return make_trace(M, M, arr)


def synthetic(lqd_rows, opt_rows, overflow=None, trace=None):
    """A JointTimeline assembled directly from length rows (t = 1..T).

    Only the length-derived fields are meaningful; the logs are empty.
    """
    from lqdlab.analysis import JointTimeline, QClass, classify
    from lqdlab.opt import OptSchedule
    from lqdlab.switch import RunLog

    M = max(len(lqd_rows[0]), max(sum(r) for r in list(lqd_rows) + list(opt_rows)))
    trace = trace or make_trace(M, M)
    N = trace.N
    lqd_rows = [tuple(r) + (0,) * (N - len(r)) for r in lqd_rows]
    opt_rows = [tuple(r) + (0,) * (N - len(r)) for r in opt_rows]
    zero = (0,) * N
    lqd, opl, d = [zero], [zero], [zero]
    classes = [(QClass.INACTIVE,) * N]
    for l, o in zip(lqd_rows, opt_rows):
        row = []
        for i in range(N):
            active = lqd[-1][i] > 0 or opl[-1][i] > 0
            row.append(classify(l[i], o[i], d[-1][i] if active else 0))
        lqd.append(tuple(l))
        opl.append(tuple(o))
        d.append(tuple(a - b for a, b in zip(o, l)))
        classes.append(tuple(row))
    ov = [frozenset()] + [frozenset(s) for s in (overflow or [()] * len(lqd_rows))]
    log = RunLog(M, N, "lqd", "rr", (), 0)
    opt = OptSchedule({}, 0, tuple(tuple(o) for o in opt_rows))
    return JointTimeline(trace, log, opt, len(lqd_rows), tuple(lqd), tuple(opl), tuple(d),
                         tuple(classes), tuple(ov))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
