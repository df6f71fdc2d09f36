"""The twelve acceptance criteria, one test each.

Each criterion prints a PASS/FAIL line (collected into the pytest terminal
summary).  Run ``python3 tests/test_acceptance.py`` to print them directly.
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import absorption, convective, random_rhs  # noqa: E402
from subsup.barriers import CalibrationFailure, build_auxiliary, calibrate_C, check_prop_inequalities, estimate_envelope  # noqa: E402
from subsup.cli import main as cli_main  # noqa: E402
from subsup.domain import Field, Interval01, RadialBall, build_grid, distance_field  # noqa: E402
from subsup.fixedpoint import iterate  # noqa: E402
from subsup.plap import PlapProblem, solve  # noqa: E402
from subsup.systems import check_admissibility, truncate  # noqa: E402
from subsup.verify import localization_check, positivity_check, weak_solution_check  # noqa: E402

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SANDWICH = [(-0.2, -0.2), (-0.1, -0.1), (0.0, 0.0), (0.5, -0.2), (0.3, 0.3)]  # α+β = -0.4, -0.2, 0, 0.3, 0.6


def _ball():
    return build_grid(RadialBall(3), 256, 1.5)


def criterion_1():
    g = build_grid(Interval01(), 128)
    rhs = Field(g, np.full(g.n_nodes, 2.0), dirichlet_zero=False)
    t0 = time.perf_counter()
    u = solve(PlapProblem(g, 2.0, rhs)).u
    dt = time.perf_counter() - t0
    err = float(np.max(np.abs(u.values - g.nodes * (1 - g.nodes))))
    return err <= 1e-10 and dt < 0.1, f"max error {err:.3g} (<= 1e-10), {dt:.3g} s (< 0.1)"


def criterion_2():
    g = build_grid(Interval01(), 256, 1.5)
    rhs = Field(g, np.ones(g.n_nodes), dirichlet_zero=False)
    t0 = time.perf_counter()
    u = solve(PlapProblem(g, 3.0, rhs)).u
    dt = time.perf_counter() - t0
    x = g.nodes
    exact = 2 / 3 * (0.5**1.5 - np.abs(0.5 - x) ** 1.5)
    err = float(np.max(np.abs(u.values - exact)))
    return err <= 1e-4 and dt < 2.0, f"max error {err:.3g} (<= 1e-4), {dt:.3g} s (< 2)"


def criterion_3():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(20):
        p = rng.uniform(1.3, 3.5)
        g = build_grid(Interval01(), 128, 1.5) if k % 2 == 0 else build_grid(RadialBall(4), 128, 1.5)
        rhs = random_rhs(g, rng)
        u = solve(PlapProblem(g, p, rhs)).u.values
        for t in (0.5, 2.0, 10.0):
            ut = solve(PlapProblem(g, p, rhs.scaled(t ** (p - 1)))).u.values
            worst = max(worst, float(np.max(np.abs(ut - t * u)) / np.max(np.abs(t * u))))
    return worst <= 1e-8, f"worst relative deviation {worst:.3g} over 60 solves (<= 1e-8)"


def criterion_4():
    rng = np.random.default_rng(7)
    worst = -np.inf
    for k in range(20):
        p = rng.uniform(1.3, 3.5)
        g = build_grid(Interval01(), 128, 1.5) if k % 2 == 0 else build_grid(RadialBall(4), 128, 1.5)
        low = random_rhs(g, rng, positive=False)
        high = low.with_values(low.values + random_rhs(g, rng).values)
        ul = solve(PlapProblem(g, p, low)).u.values
        uh = solve(PlapProblem(g, p, high)).u.values
        worst = max(worst, float(np.max(ul - uh)))
    return worst <= 1e-9, f"max ordering violation {worst:.3g} over 20 pairs (<= 1e-9)"


def criterion_5():
    g = _ball()
    d = distance_field(g)
    lines, ok = [], True
    for ab in SANDWICH:
        aux = build_auxiliary(convective(*ab), g)
        c_lo = min(estimate_envelope(f, d)[0] for f in aux.layered)
        viol = max(float(np.max(aux.layered[i].values - aux.plain[i].values)) for i in (0, 1))
        ok &= c_lo > 0 and viol <= 1e-12
        lines.append(f"a+b={sum(ab):+.1f}: c_lo={c_lo:.3g} order viol={viol:.2g}")
    return ok, "; ".join(lines)


def criterion_6():
    g = _ball()
    lines, ok = [], True
    for ab in SANDWICH:
        cfg = convective(*ab)
        bp = calibrate_C(cfg, g)
        at = check_prop_inequalities(cfg, g, bp.C, bp.aux)
        sup2 = [v for v in check_prop_inequalities(cfg, g, 2 * bp.C, bp.aux) if v.name.startswith("sup")]
        ok &= bp.C <= 1e6 and not at and not sup2
        lines.append(f"a+b={sum(ab):+.1f}: C*={bp.C:.4g} viol={len(at)} sup@2C*={len(sup2)}")
    return ok, "; ".join(lines)


def _end_to_end(cfg):
    g = _ball()
    t0 = time.perf_counter()
    bp = calibrate_C(cfg, g)
    rep = iterate(cfg, bp, max_iter=200, tol=1e-8)
    dt = time.perf_counter() - t0
    u1, u2 = rep.fields
    res = max(v.measured for v in weak_solution_check(cfg, bp, u1, u2))
    loc = localization_check(u1, u2, bp).measured
    pos = positivity_check(u1, u2).measured
    ok = rep.converged and rep.final_increment <= 1e-8 and res <= 1e-6 and loc <= 1e-8 and pos == 0 and dt < 30
    return ok, (
        f"converged={rep.converged} in {rep.iterations} it (inc {rep.final_increment:.2g}), "
        f"residual {res:.2g}, localization {loc:.2g}, nonpositive nodes {int(pos)}, {dt:.2f} s"
    )


def criterion_7():
    return _end_to_end(convective(-0.1, -0.1))


def criterion_8():
    return _end_to_end(absorption(0.0, 0.0, 0.25))


def criterion_9():
    try:
        calibrate_C(absorption(0.0, 0.0, 0.0), _ball())
        return False, "calibration unexpectedly succeeded"
    except CalibrationFailure as exc:
        diag = exc.diagnostic
    with tempfile.TemporaryDirectory() as tmp:
        code = cli_main(["solve", "--config", str(CONFIGS / "absorption_degenerate.cfg"), "--out", str(Path(tmp) / "o")])
    return bool(diag) and code == 3, f"CalibrationFailure ({diag}); CLI exit {code}"


def criterion_10():
    values = np.round(np.linspace(-0.3, -0.2, 5), 12)
    flags = [check_admissibility(convective(a, -0.25)).admissible_w for a in values]
    expected = [a + -0.25 > -0.5 for a in values]
    at_boundary = check_admissibility(convective(-0.25, -0.25)).admissible_w
    just_inside = check_admissibility(convective(-0.25 + 1e-15, -0.25)).admissible_w
    ok = flags == expected and not at_boundary and just_inside and flags == [False, False, False, True, True]
    return ok, f"flags {flags}; boundary -0.5 admitted={at_boundary}; -0.5+1e-15 admitted={just_inside}"


def criterion_11():
    rng = np.random.default_rng(11)
    g = build_grid(Interval01(), 64, 1.5)
    d = distance_field(g).values
    lo, hi = Field(g, 0.5 * d), Field(g, 2.0 * d)
    fails = 0
    for _ in range(1000):
        a = np.where(g.dirichlet, 0.0, rng.uniform(-1, 2, g.n_nodes))
        b = a + np.where(g.dirichlet, 0.0, rng.uniform(0, 1, g.n_nodes))
        ta = truncate(Field(g, a), lo, hi)
        tb = truncate(Field(g, b), lo, hi)
        fails += not np.array_equal(truncate(ta, lo, hi).values, ta.values)
        fails += not np.all(ta.values <= tb.values)
    return fails == 0, f"{fails} failures over 1000 idempotence and 1000 monotonicity checks"


def criterion_12():
    with tempfile.TemporaryDirectory() as tmp:
        outs = [Path(tmp) / "a", Path(tmp) / "b"]
        codes = [cli_main(["solve", "--config", str(CONFIGS / "convective.cfg"), "--out", str(o)]) for o in outs]
        names = sorted(p.name for p in outs[0].glob("*.csv"))
        same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = codes == [0, 0] and len(names) > 0 and same == names
    return ok, f"exit codes {codes}; {len(same)}/{len(names)} CSV files byte-identical"


CRITERIA = [globals()[f"criterion_{k}"] for k in range(1, 13)]


def _run(k):
    ok, detail = CRITERIA[k - 1]()
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    return ok, line


@pytest.mark.parametrize("k", range(1, 13))
def test_acceptance(k):
    from conftest import ACCEPTANCE_LINES

    ok, line = _run(k)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


if __name__ == "__main__":
    results = [_run(k)[0] for k in range(1, 13)]
    sys.exit(0 if all(results) else 1)
