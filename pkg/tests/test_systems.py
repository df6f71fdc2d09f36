import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import absorption, convective
from subsup.barriers import calibrate_C
from subsup.config import ConfigError
from subsup.domain import Field, Interval01, build_grid
from subsup.systems import (
    ExponentConfig, SingularityError, SystemKind, check_admissibility, eval_f, growth_envelope, truncate,
)

F1_EXAMPLE = 3.74110112659224827827  # 0.25^-0.4 + 2, arbitrary precision


def test_admissible_convective_example():
    rep = check_admissibility(convective(-0.2, -0.2, alpha2=-0.1, beta2=-0.1))
    assert rep.admissible_w
    assert not rep.admissible_c1  # r = 2 < N = 3


def test_alpha_sum_below_threshold_rejected():
    rep = check_admissibility(convective(-0.3, -0.3))
    assert not rep.admissible_w
    names = [v[0] for v in rep.violated]
    assert "alpha1: a1+b1 > -1/r1" in names
    row = next(v for v in rep.violated if v[0] == "alpha1: a1+b1 > -1/r1")
    assert row[1] == pytest.approx(-0.6) and row[2] == -0.5


def test_admissible_absorption_example():
    assert check_admissibility(absorption(0.0, 0.0, 0.25)).admissible_w


def test_absorption_eta_too_large():
    rep = check_admissibility(absorption(0.0, 0.0, 0.5))
    assert not rep.admissible_w


def test_c1_regime_needs_r_above_N():
    rep = check_admissibility(convective(-0.1, -0.1, r1=3.5, r2=3.5, gamma1=0.1, theta2=0.1))
    assert rep.admissible_c1 and rep.admissible_w


def test_weak_regime_flag_separate():
    rep = check_admissibility(convective(-0.1, -0.1, r1=1.5, r2=1.5))
    assert not rep.admissible_w
    assert any(name.startswith("weak: r1") for name, _, _ in rep.violated)


def test_strict_boundary_is_rejected():
    at = convective(-0.25, -0.25)
    inside = convective(-0.25 + 1e-15, -0.25)
    assert not check_admissibility(at).admissible_w
    assert check_admissibility(inside).admissible_w


def test_slack_sign_matches_pass():
    rep = check_admissibility(convective(0.5, -0.2))
    for c in rep.conditions:
        if c.relation in ("<", ">"):
            assert c.passed == (c.slack > 0)
        else:
            assert c.passed == (c.slack >= 0)


@pytest.mark.parametrize("p", [1.0, 3.0, 4.0])
def test_p_outside_range_rejected(p):
    with pytest.raises(ValueError):
        convective(0, 0, p1=p)


def test_eval_f_constant_case():
    c = convective(0, 0, gamma1=0, theta2=0)
    f1, f2 = eval_f(c, 0.3, 0.7, 1.3, 5.0, 0.0)
    assert (f1, f2) == (3.0, 3.0)


def test_eval_f_zero_gradient_with_zero_exponent():
    c = convective(0, 0, gamma1=0, theta2=0)
    assert eval_f(c, 0.3, 1.0, 1.0, 0.0, 0.0) == (3.0, 3.0)


def test_eval_f_convective_example():
    c = convective(-0.2, -0.2)
    f1, _ = eval_f(c, 0.1, 0.25, 0.25, 1.0, 7.0)
    assert f1 == pytest.approx(F1_EXAMPLE, rel=1e-15)


def test_eval_f_absorption_example():
    f1, _ = eval_f(absorption(0, 0, 0.25), 0.1, 0.5, 0.5, 16.0, 0.0)
    assert f1 == pytest.approx(-1.0, abs=1e-15)


def test_eval_f_singular_state():
    c = convective(-0.2, -0.2)
    with pytest.raises(SingularityError):
        eval_f(c, 0.1, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(SingularityError):
        eval_f(convective(0.2, 0.2), 0.1, -1.0, 1.0, 1.0, 1.0)


def test_eval_f_rejects_negative_gradient_magnitude():
    with pytest.raises(ValueError):
        eval_f(convective(0, 0), 0.1, 1.0, 1.0, -1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(
    s=st.tuples(st.floats(0.01, 10), st.floats(0.01, 10)),
    g=st.tuples(st.floats(0.01, 10), st.floats(0.01, 10)),
    a=st.floats(-0.45, 0.45),
)
def test_eval_f_continuity(s, g, a):
    c = convective(a, -a / 2)
    base = np.array(eval_f(c, 0.1, *s, *g))
    moved = np.array(eval_f(c, 0.1, s[0] * (1 + 1e-6), s[1] * (1 + 1e-6), g[0] * (1 + 1e-6), g[1] * (1 + 1e-6)))
    assert np.all(np.abs(moved - base) <= 1e-4 * np.abs(base))


def test_config_text_roundtrip():
    c = convective(-0.2, 0.1)
    assert ExponentConfig.from_text(c.to_text()) == c
    a = absorption(0.1, 0.0, 0.2)
    assert ExponentConfig.from_text(a.to_text()) == a


def test_config_errors_carry_line_numbers():
    text = convective(0, 0).to_text().replace("p1 = 2.0", "p1 = banana")
    with pytest.raises(ConfigError) as info:
        ExponentConfig.from_text(text)
    assert info.value.line == 4
    with pytest.raises(ConfigError, match="not valid"):
        ExponentConfig.from_text(convective(0, 0).to_text() + "eta1 = 0.1\n")
    with pytest.raises(ConfigError, match="unknown system kind"):
        ExponentConfig.from_text("[system]\nkind = diffusive\n")


def test_system_kind_parsed():
    assert absorption().system is SystemKind.ABSORPTION


# -- truncation -----------------------------------------------------------------

GRID = build_grid(Interval01(), 32)
LOW = Field(GRID, 0.5 * np.minimum(GRID.nodes, 1 - GRID.nodes))
HIGH = Field(GRID, 2.0 * np.minimum(GRID.nodes, 1 - GRID.nodes))

values = st.lists(st.floats(-5, 5), min_size=GRID.n_nodes - 2, max_size=GRID.n_nodes - 2).map(
    lambda v: Field(GRID, np.concatenate([[0.0], v, [0.0]]))
)


def test_truncate_examples():
    mid = LOW.with_values(0.5 * (LOW.values + HIGH.values))
    assert np.array_equal(truncate(mid, LOW, HIGH).values, mid.values)
    neg = Field(GRID, np.where(GRID.dirichlet, 0.0, -5.0))
    assert np.array_equal(truncate(neg, LOW, HIGH).values, LOW.values)
    pos = Field(GRID, np.where(GRID.dirichlet, 0.0, 5.0))
    assert np.array_equal(truncate(pos, LOW, HIGH).values, HIGH.values)


def test_truncate_rejects_crossed_rectangle():
    with pytest.raises(ValueError):
        truncate(LOW, HIGH, LOW)


@settings(max_examples=200, deadline=None)
@given(z=values)
def test_truncate_idempotent(z):
    once = truncate(z, LOW, HIGH)
    assert np.array_equal(truncate(once, LOW, HIGH).values, once.values)
    assert np.all(LOW.values <= once.values) and np.all(once.values <= HIGH.values)


@settings(max_examples=200, deadline=None)
@given(z=values, w=values)
def test_truncate_monotone(z, w):
    lo, hi = np.minimum(z.values, w.values), np.maximum(z.values, w.values)
    a = truncate(Field(GRID, lo), LOW, HIGH).values
    b = truncate(Field(GRID, hi), LOW, HIGH).values
    assert np.all(a <= b)


# -- growth envelope --------------------------------------------------------------

@pytest.fixture(scope="module")
def calibrated():
    cfg = convective(-0.2, -0.2)
    g = build_grid(Interval01(), 64, 1.5)
    return cfg, g, calibrate_C(cfg, g)


def test_envelope_constant_case():
    cfg = convective(0, 0, gamma1=0, theta2=0)
    bp = calibrate_C(cfg, build_grid(Interval01(), 64))
    b1, b2 = growth_envelope(cfg, bp, 0.2, 1.0, 1.0)
    assert b1 >= 3.0 and b2 >= 3.0
    assert b1 == pytest.approx(b2)


def test_envelope_dominates_samples(calibrated):
    cfg, g, bp = calibrated
    rng = np.random.default_rng(11)
    idx = rng.choice(g.free, 1000)
    d = g.distance(g.nodes[idx])
    s1 = rng.uniform(bp.lower1.values[idx], bp.upper1.values[idx])
    s2 = rng.uniform(bp.lower2.values[idx], bp.upper2.values[idx])
    g1, g2 = rng.uniform(0, 10, 1000), rng.uniform(0, 10, 1000)
    f1, f2 = eval_f(cfg, d, s1, s2, g1, g2)
    b1, b2 = growth_envelope(cfg, bp, d, g1, g2)
    assert np.sum(np.abs(f1) > b1) + np.sum(np.abs(f2) > b2) == 0


def test_envelope_blows_up_at_boundary(calibrated):
    cfg, _, bp = calibrated
    d = np.array([1e-2, 1e-4, 1e-6])
    b1, _ = growth_envelope(cfg, bp, d, 1.0, 1.0)
    # singular part scales like d^(alpha+beta)
    ratio = (b1[2] - b1[1]) / (b1[1] - b1[0])
    assert ratio == pytest.approx((1e-6**-0.4 - 1e-4**-0.4) / (1e-4**-0.4 - 1e-2**-0.4), rel=1e-12)


def test_envelope_requires_calibration(calibrated):
    cfg, _, bp = calibrated

    class Raw:
        C = None

    with pytest.raises(ValueError):
        growth_envelope(cfg, Raw(), 0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        growth_envelope(cfg, bp, 0.0, 0.0, 0.0)
