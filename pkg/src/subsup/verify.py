"""A-posteriori checks recomputed from raw nodal fields.

Nothing here reads solver internals: every verdict is reassembled from the
fields, the exponent configuration and the barrier pair.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .barriers import BarrierPair, check_prop_inequalities
from .domain import Field, Grid, fmt_float, distance_field, gradient, integrate, norms
from .plap import PlapProblem, SingularRhs, solve, weak_residual
from .systems import ExponentConfig, SingularityError, eval_f, growth_envelope, nodal_rhs

LOCALIZATION_THRESHOLD = 1e-8
HOLDER_EXPONENT = 0.5


@dataclass(frozen=True)
class Verdict:
    name: str
    measured: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.threshold)


def verdicts_to_csv(verdicts: list[Verdict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "pass", "measured", "threshold", "detail"])
        for v in verdicts:
            w.writerow([v.name, str(v.passed).lower(), fmt_float(v.measured), fmt_float(v.threshold), v.detail])


def weak_solution_check(
    config: ExponentConfig, barriers: BarrierPair | None, u1: Field, u2: Field, tol: float = 1e-6
) -> tuple[Verdict, Verdict]:
    """Weak residual of each equation with the untruncated nonlinearity.

    Raises SingularityError if a negative exponent meets a nonpositive value.
    """
    if u1.grid is not u2.grid:
        raise ValueError("fields must share a grid")
    f = nodal_rhs(config, u1, u2)
    out = []
    for i, u in ((1, u1), (2, u2)):
        r = weak_residual(PlapProblem(u.grid, config.p(i), f[i - 1]), u)
        out.append(Verdict(f"weak_residual{i}", r, tol, "max |<a(u) - f, phi_j>| / (1 + |f|_1)"))
    return out[0], out[1]


def localization_check(u1: Field, u2: Field, barriers: BarrierPair) -> Verdict:
    worst = 0.0
    for i, u in ((1, u1), (2, u2)):
        if u.grid is not barriers.grid:
            raise ValueError("fields must live on the barrier grid")
        worst = max(
            worst,
            float(np.max(barriers.lower(i).values - u.values)),
            float(np.max(u.values - barriers.upper(i).values)),
        )
    return Verdict("localization", worst, LOCALIZATION_THRESHOLD, "max excursion outside [lower, upper]")


def positivity_check(u1: Field, u2: Field) -> Verdict:
    free = u1.grid.free
    bad = int(np.sum(u1.values[free] <= 0) + np.sum(u2.values[free] <= 0))
    lo = min(float(u1.values[free].min()), float(u2.values[free].min()))
    return Verdict("positivity", float(bad), 0.0, f"nonpositive interior nodes; min value {lo:.6g}")


class RegularityRecord(NamedTuple):
    sup_grad: float
    holder_quotient: float
    dm_bound_ratio: float


def _lr_norm(rhs: Field, r: float) -> float:
    grid = rhs.grid
    pts, _ = grid.quad_points()
    vals = np.abs(grid.interpolate(rhs.values, pts)) ** r
    return integrate(grid, vals) ** (1.0 / r)


def regularity_proxy(u: Field, config: ExponentConfig, rhs_field: Field, component: int = 1) -> RegularityRecord:
    """Gradient sup norm, a Hölder quotient of the gradient and a gradient-bound ratio.

    The quotient max |∇u(c) - ∇u(c')| / dist(c, c')^0.5 over adjacent cells
    grows without bound under refinement when the gradient jumps.
    """
    grid = u.grid
    s = gradient(u)
    sup = float(np.max(np.abs(s)))
    dist = np.diff(grid.midpoints)
    holder = float(np.max(np.abs(np.diff(s)) / dist**HOLDER_EXPONENT))
    p, r = config.p(component), config.r(component)
    scale = _lr_norm(rhs_field, r) ** (1.0 / (p - 1.0))
    ratio = sup / scale if scale > 0 else (0.0 if sup == 0 else math.inf)
    return RegularityRecord(sup, holder, float(ratio))


def hardy_sobolev_window(p: float) -> tuple[float, float]:
    """Admissible weights mu: the half-open interval (-1 + 1/p, 0]."""
    return -1.0 + 1.0 / p, 0.0


def standard_probes(grid: Grid, p: float, n_hats: int = 4) -> list[Field]:
    """Hats at several distances from the boundary, the torsion function, the distance."""
    probes = []
    free_idx = grid.free
    d = grid.distance(grid.nodes)
    for target in np.geomspace(0.02, 0.4, n_hats):
        j = free_idx[np.argmin(np.abs(d[free_idx] - target))]
        v = np.zeros(grid.n_nodes)
        v[j] = 1.0
        probes.append(Field(grid, v))
    probes.append(solve(PlapProblem(grid, p, SingularRhs(constant=1.0))).u)
    probes.append(distance_field(grid))
    return probes


def hardy_sobolev_diagnostic(grid: Grid, mu: float, p: float, probe_fields: list[Field]) -> float:
    """max over probes of ∫ d^mu u / ||∇u||_p (an empirical lower bound on the constant)."""
    lo, hi = hardy_sobolev_window(p)
    if not lo < mu <= hi:
        raise ValueError(f"mu = {mu} outside ({lo:g}, {hi:g}]")
    if not probe_fields:
        raise ValueError("need at least one probe")
    pts, _ = grid.quad_points()
    best = 0.0
    for u in probe_fields:
        if u.grid is not grid:
            raise ValueError("probe lives on a different grid")
        den = norms(u, p).lp_gradient
        if not den > 0:
            raise ValueError("probes must be nonzero")
        num = integrate(grid, grid.interpolate(u.values, pts), weight_mu=None if mu == 0 else mu)
        best = max(best, num / den)
    return best


def full_suite(
    config: ExponentConfig,
    barriers: BarrierPair,
    u1: Field,
    u2: Field,
    residual_tol: float = 1e-6,
) -> list[Verdict]:
    """Every gating check plus reported diagnostics (threshold inf)."""
    out: list[Verdict] = []
    out.append(positivity_check(u1, u2))
    try:
        out.extend(weak_solution_check(config, barriers, u1, u2, residual_tol))
    except SingularityError as exc:
        out.extend(Verdict(f"weak_residual{i}", math.inf, residual_tol, str(exc)) for i in (1, 2))
    out.append(localization_check(u1, u2, barriers))
    if barriers.aux is not None:
        viol = check_prop_inequalities(config, barriers.grid, barriers.C, barriers.aux)
        out.append(Verdict("barrier_inequalities", float(len(viol)), 0.0, f"violations at C={barriers.C:.6g}"))
    try:
        f = nodal_rhs(config, u1, u2)
    except SingularityError:
        f = None
    for i, u in ((1, u1), (2, u2)):
        n = norms(u, config.p(i))
        out.append(Verdict(f"lp_gradient{i}", n.lp_gradient, math.inf, "diagnostic"))
        out.append(Verdict(f"sup_gradient{i}", n.sup_gradient, math.inf, "diagnostic"))
        if f is not None:
            rec = regularity_proxy(u, config, f[i - 1], component=i)
            out.append(Verdict(f"holder_quotient{i}", rec.holder_quotient, math.inf, "diagnostic"))
            out.append(Verdict(f"gradient_bound_ratio{i}", rec.dm_bound_ratio, math.inf, "diagnostic"))
    return out


def envelope_domination_check(
    config: ExponentConfig, barriers: BarrierPair, n_samples: int = 1000, seed: int = 0
) -> Verdict:
    """Count random samples where |f| exceeds the growth envelope.

    States are drawn from the barrier rectangle at random interior nodes and
    gradient magnitudes from [0, 2 C grad_bound].
    """
    rng = np.random.default_rng(seed)
    grid = barriers.grid
    idx = rng.choice(grid.free, size=n_samples)
    d = grid.distance(grid.nodes[idx])
    s = [
        rng.uniform(barriers.lower(i).values[idx], barriers.upper(i).values[idx]) for i in (1, 2)
    ]
    gmax = 2.0 * barriers.C * barriers.grad_bound
    g1, g2 = rng.uniform(0.0, gmax, n_samples), rng.uniform(0.0, gmax, n_samples)
    f1, f2 = eval_f(config, d, s[0], s[1], g1, g2)
    b1, b2 = growth_envelope(config, barriers, d, g1, g2)
    bad = int(np.sum(np.abs(f1) > b1) + np.sum(np.abs(f2) > b2))
    return Verdict("envelope_domination", float(bad), 0.0, f"{n_samples} samples, seed {seed}")
