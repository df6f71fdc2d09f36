import math

import numpy as np
import pytest

from helpers import convective
from subsup.barriers import calibrate_C
from subsup.domain import Field, Interval01, build_grid, distance_field
from subsup.systems import SingularityError
from subsup.verify import (
    Verdict, envelope_domination_check, full_suite, hardy_sobolev_diagnostic, localization_check,
    positivity_check, regularity_proxy, standard_probes, verdicts_to_csv, weak_solution_check,
)

HS_QUADRATIC = 0.288675134594812882254  # (1/6) / sqrt(1/3)


@pytest.fixture(scope="module")
def setup():
    g = build_grid(Interval01(), 128)
    cfg = convective(0, 0, gamma1=0, theta2=0)
    return g, cfg, calibrate_C(cfg, g)


def test_verdict_pass_rule():
    assert Verdict("a", 1.0, 1.0).passed
    assert not Verdict("a", 1.0 + 1e-16 * 4, 1.0).passed
    assert Verdict("a", 5.0, math.inf).passed


def test_weak_check_on_exact_solution(setup):
    g, cfg, bp = setup
    x = g.nodes
    u = Field(g, 1.5 * x * (1 - x))
    v1, v2 = weak_solution_check(cfg, bp, u, u)
    assert v1.passed and v2.passed and v1.measured <= 1e-13


def test_weak_check_on_barrier_is_nonzero(setup):
    g, cfg, bp = setup
    v1, _ = weak_solution_check(cfg, bp, bp.upper1, bp.upper2)
    # upper solves −Δu = 2 C while the system asks for 3
    assert v1.measured > 1e-3 and not v1.passed


def test_weak_check_singular_zero_state(setup):
    g, _, bp = setup
    zero = Field(g, np.zeros(g.n_nodes))
    with pytest.raises(SingularityError):
        weak_solution_check(convective(-0.2, -0.2), bp, zero, zero)


def test_localization_examples(setup):
    g, _, bp = setup
    assert localization_check(bp.lower1, bp.lower2, bp).measured == 0.0
    mid = [bp.lower(i).with_values(0.5 * (bp.lower(i).values + bp.upper(i).values)) for i in (1, 2)]
    assert localization_check(*mid, bp).measured == 0.0
    v = bp.upper1.values.copy()
    v[40] += 0.01
    out = localization_check(bp.upper1.with_values(v), bp.upper2, bp)
    assert out.measured == pytest.approx(0.01, abs=1e-15) and not out.passed


def test_positivity(setup):
    g, _, bp = setup
    assert positivity_check(bp.lower1, bp.lower2).measured == 0
    v = bp.lower1.values.copy()
    v[10] = 0.0
    assert positivity_check(bp.lower1.with_values(v), bp.lower2).measured == 1


def test_regularity_examples(setup):
    g, cfg, _ = setup
    x = g.nodes
    one = Field(g, np.ones(g.n_nodes), dirichlet_zero=False)
    rec = regularity_proxy(Field(g, x * (1 - x)), cfg, one)
    assert rec.sup_grad == pytest.approx(1.0, abs=1.0 / 128)
    zero = Field(g, np.zeros(g.n_nodes))
    assert regularity_proxy(zero, cfg, zero.with_values(np.zeros(g.n_nodes))) == (0.0, 0.0, 0.0)


def test_holder_quotient_diverges_for_kink():
    cfg = convective(0, 0)
    qs = []
    for n in (64, 256, 1024):
        g = build_grid(Interval01(), n)
        qs.append(regularity_proxy(distance_field(g), cfg, Field(g, np.ones(n + 1), dirichlet_zero=False)).holder_quotient)
    assert qs[1] > 1.9 * qs[0] and qs[2] > 1.9 * qs[1]


def test_holder_quotient_bounded_for_smooth():
    cfg = convective(0, 0)
    qs = []
    for n in (64, 256, 1024):
        g = build_grid(Interval01(), n)
        x = g.nodes
        qs.append(regularity_proxy(Field(g, x * (1 - x)), cfg, Field(g, np.ones(n + 1), dirichlet_zero=False)).holder_quotient)
    assert qs[2] <= qs[0]


def test_hardy_sobolev_closed_form():
    g = build_grid(Interval01(), 512)
    x = g.nodes
    r = hardy_sobolev_diagnostic(g, 0.0, 2.0, [Field(g, x * (1 - x))])
    assert r == pytest.approx(HS_QUADRATIC, rel=1e-5)


def test_hardy_sobolev_refinement_stable():
    vals = []
    for n in (128, 256):
        g = build_grid(Interval01(), n, 1.5)
        vals.append(hardy_sobolev_diagnostic(g, -0.4, 2.0, standard_probes(g, 2.0)))
    assert np.isfinite(vals).all()
    assert abs(vals[1] - vals[0]) <= 0.1 * vals[0]


def test_hardy_sobolev_scale_invariant():
    g = build_grid(Interval01(), 128, 1.5)
    probes = standard_probes(g, 2.0)
    a = hardy_sobolev_diagnostic(g, -0.3, 2.0, probes)
    b = hardy_sobolev_diagnostic(g, -0.3, 2.0, [p.scaled(10.0) for p in probes])
    assert abs(a - b) <= 1e-13 * a


def test_hardy_sobolev_window():
    g = build_grid(Interval01(), 32)
    probes = [distance_field(g)]
    with pytest.raises(ValueError):
        hardy_sobolev_diagnostic(g, -0.5, 2.0, probes)
    with pytest.raises(ValueError):
        hardy_sobolev_diagnostic(g, 0.1, 2.0, probes)
    with pytest.raises(ValueError):
        hardy_sobolev_diagnostic(g, -0.2, 2.0, [Field(g, np.zeros(33))])


def test_sup_grad_of_auxiliary_within_bound(ball_grid):
    cfg = convective(-0.2, -0.2)
    bp = calibrate_C(cfg, ball_grid)
    one = Field(ball_grid, np.ones(ball_grid.n_nodes), dirichlet_zero=False)
    for f in bp.aux.all_fields:
        assert regularity_proxy(f, cfg, one).sup_grad <= bp.grad_bound + 1e-12


def test_full_suite_and_csv(tmp_path, setup):
    g, cfg, bp = setup
    x = g.nodes
    u = Field(g, 1.5 * x * (1 - x))
    verdicts = full_suite(cfg, bp, u, u)
    verdicts.append(envelope_domination_check(cfg, bp, 200, seed=1))
    assert all(v.passed for v in verdicts)
    verdicts_to_csv(verdicts, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "name,pass,measured,threshold,detail"
    assert len(lines) == len(verdicts) + 1
