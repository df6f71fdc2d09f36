"""Sub-/supersolution pairs built from torsion-type auxiliary problems.

For each component i the plain auxiliary field solves

    -Δ_{p_i} v = 1 + d^{α_i+β_i}   (convective)    or   d^{α_i+β_i}   (absorption)

and the δ-variant uses the same right side off the boundary layer {d < δ}
and -1 inside it.  The barrier pair is

    lower_i = (δ-variant) / C,      upper_i = C * (plain).

By (p-1)-homogeneity, -Δ_p(t v) = t^{p-1} (-Δ_p v), so the left sides of
the sub/super inequalities are known in closed form from the auxiliary right
sides and never need a discrete second derivative.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import Field, Grid, distance_field, gradient, snap_to_node
from .plap import PlapProblem, SingularRhs, solve
from .systems import ExponentConfig, SystemKind

logger = logging.getLogger(__name__)


class BarrierDegeneracy(RuntimeError):
    """An auxiliary field is not positive at some interior node."""


class CalibrationFailure(RuntimeError):
    """No multiplier C <= c_max satisfies every inequality."""

    def __init__(self, message: str, c_max: float, node: int, coord: float, name: str, margin: float):
        super().__init__(message)
        self.c_max = c_max
        self.node = node
        self.coord = coord
        self.name = name
        self.margin = margin

    @property
    def diagnostic(self) -> str:
        return f"node={self.node} x={self.coord:.6g} inequality={self.name} margin={self.margin:.6g} at C={self.c_max:.6g}"


class AuxKind(enum.Enum):
    XiConvective = "xi"
    XiDeltaConvective = "xi_delta"
    ZAbsorption = "z"
    ZDeltaAbsorption = "z_delta"

    @property
    def layered(self) -> bool:
        return self in (AuxKind.XiDeltaConvective, AuxKind.ZDeltaAbsorption)


def auxiliary_rhs(config: ExponentConfig, which: AuxKind, i: int, delta: float | None) -> SingularRhs:
    mu = config.mu(i)
    if not mu > -1.0:
        raise ValueError(f"alpha{i}+beta{i} = {mu} must exceed -1")
    constant = 1.0 if which in (AuxKind.XiConvective, AuxKind.XiDeltaConvective) else 0.0
    if which.layered:
        if delta is None or not 0.0 < delta < 0.5:
            raise ValueError(f"layered auxiliary problem needs delta in (0, 1/2), got {delta}")
        return SingularRhs(constant=constant, mu=mu, layer_value=-1.0, delta=delta)
    return SingularRhs(constant=constant, mu=mu)


def _check_grid(config: ExponentConfig, grid: Grid) -> None:
    if grid.is_radial and grid.kind.N != config.N:
        raise ValueError(f"radial grid has N={grid.kind.N} but the system has N={config.N}")


def solve_auxiliary(
    config: ExponentConfig,
    grid: Grid,
    which: AuxKind,
    i: int,
    delta: float | None = None,
    tol: float | None = None,
) -> Field:
    """Solve one auxiliary problem for component ``i`` (1 or 2)."""
    if i not in (1, 2):
        raise ValueError("component index must be 1 or 2")
    _check_grid(config, grid)
    rhs = auxiliary_rhs(config, which, i, delta)
    return solve(PlapProblem(grid, config.p(i), rhs, tol=tol)).u


def _kinds(config: ExponentConfig) -> tuple[AuxKind, AuxKind]:
    if config.system is SystemKind.CONVECTIVE:
        return AuxKind.XiConvective, AuxKind.XiDeltaConvective
    return AuxKind.ZAbsorption, AuxKind.ZDeltaAbsorption


@dataclass(frozen=True)
class AuxiliarySet:
    """The four solved auxiliary fields and the data needed to rescale them."""

    config: ExponentConfig
    grid: Grid
    delta: float
    plain: tuple[Field, Field]
    layered: tuple[Field, Field]
    rhs_plain: tuple[SingularRhs, SingularRhs]
    rhs_layered: tuple[SingularRhs, SingularRhs]

    @property
    def all_fields(self) -> list[Field]:
        return [*self.plain, *self.layered]


def build_auxiliary(config: ExponentConfig, grid: Grid, delta: float = 0.1, tol: float | None = None) -> AuxiliarySet:
    """Solve all four auxiliary problems; ``delta`` is snapped to a node first."""
    _check_grid(config, grid)
    delta = snap_to_node(grid, delta)
    kp, kl = _kinds(config)
    rp = tuple(auxiliary_rhs(config, kp, i, None) for i in (1, 2))
    rl = tuple(auxiliary_rhs(config, kl, i, delta) for i in (1, 2))
    plain = tuple(solve(PlapProblem(grid, config.p(i), rp[i - 1], tol=tol)).u for i in (1, 2))
    layered = tuple(solve(PlapProblem(grid, config.p(i), rl[i - 1], tol=tol)).u for i in (1, 2))
    return AuxiliarySet(config, grid, delta, plain, layered, rp, rl)


def estimate_envelope(field: Field, d: Field) -> tuple[float, float]:
    """(min, max) of field/d over interior nodes."""
    free = field.grid.free
    v, dv = field.values[free], d.values[free]
    if np.any(dv <= 0):
        raise ValueError("distance must be positive at interior nodes")
    bad = np.flatnonzero(v <= 0)
    if bad.size:
        idx = free[bad[0]]
        raise BarrierDegeneracy(
            f"field is nonpositive at {bad.size} interior node(s), first at x={field.grid.nodes[idx]:.6g}"
        )
    ratio = v / dv
    return float(ratio.min()), float(ratio.max())


def gradient_bound(fields: list[Field]) -> float:
    if not fields:
        raise ValueError("gradient_bound needs at least one field")
    return max(float(np.max(np.abs(gradient(f)))) for f in fields)


@dataclass(frozen=True)
class BarrierPair:
    lower1: Field
    lower2: Field
    upper1: Field
    upper2: Field
    C: float
    delta: float
    c_lo: float
    c_hi: float
    grad_bound: float
    system: SystemKind
    aux: AuxiliarySet | None = None

    def lower(self, i: int) -> Field:
        return self.lower1 if i == 1 else self.lower2

    def upper(self, i: int) -> Field:
        return self.upper1 if i == 1 else self.upper2

    @property
    def grid(self) -> Grid:
        return self.lower1.grid

    def manifest_lines(self) -> list[str]:
        return [
            f"C = {self.C!r}",
            f"delta = {self.delta!r}",
            f"c_lo = {self.c_lo!r}",
            f"c_hi = {self.c_hi!r}",
            f"grad_bound = {self.grad_bound!r}",
            f"system = {self.system.value}",
        ]

    def export(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("lower1", "lower2", "upper1", "upper2"):
            getattr(self, name).to_csv(out / f"barrier_{name}.csv")
        (out / "barriers_manifest.txt").write_text("\n".join(self.manifest_lines()) + "\n")


def assemble(aux: AuxiliarySet, C: float) -> BarrierPair:
    if not C > 1.0:
        raise ValueError("C must exceed 1")
    d = distance_field(aux.grid)
    c_lo = min(estimate_envelope(f, d)[0] for f in aux.layered)
    c_hi = max(estimate_envelope(f, d)[1] for f in aux.plain)
    return BarrierPair(
        lower1=aux.layered[0].scaled(1.0 / C),
        lower2=aux.layered[1].scaled(1.0 / C),
        upper1=aux.plain[0].scaled(C),
        upper2=aux.plain[1].scaled(C),
        C=float(C),
        delta=aux.delta,
        c_lo=c_lo,
        c_hi=c_hi,
        grad_bound=gradient_bound(aux.all_fields),
        system=aux.config.system,
        aux=aux,
    )


@dataclass(frozen=True)
class Violation:
    node: int
    name: str
    margin: float


def _corner_power(x_lo, x_hi, e, want_max):
    """Extreme of x^e over [x_lo, x_hi] (x > 0), nodewise."""
    if e == 0.0:
        return np.ones_like(x_lo)
    take_hi = (e > 0) == want_max
    return (x_hi if take_hi else x_lo) ** e


def _effective_rhs(grid: Grid, rhs: SingularRhs) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise nodal values and hat-averaged values <g, φ_j>/<1, φ_j>."""
    with np.errstate(divide="ignore", invalid="ignore"):
        avg = rhs.load(grid) / grid.hat_masses
        pt = rhs.nodal(grid)
    return pt, avg


def check_prop_inequalities(config: ExponentConfig, grid: Grid, C: float, aux: AuxiliarySet) -> list[Violation]:
    """Every interior node where a sub- or super-inequality fails at multiplier C.

    Left sides come from homogeneity.  Each is tested against both the
    pointwise and the hat-averaged auxiliary right side (the worse of the
    two), so the check also covers the lumped discrete comparison.  Right
    sides take the worst rectangle corner for w1^α w2^β.  Margins are
    positive when violated.
    """
    if aux.grid is not grid:
        raise ValueError("auxiliary fields live on a different grid")
    free = grid.free
    idx = free
    lo = [f.values[free] / C for f in aux.layered]
    hi = [f.values[free] * C for f in aux.plain]
    M = gradient_bound(aux.all_fields)
    out: list[Violation] = []
    for i in (1, 2):
        p = config.p(i)
        a, b = config.ab(i)
        w_min = _corner_power(lo[0], hi[0], a, False) * _corner_power(lo[1], hi[1], b, False)
        w_max = _corner_power(lo[0], hi[0], a, True) * _corner_power(lo[1], hi[1], b, True)

        pt, avg = _effective_rhs(grid, aux.rhs_layered[i - 1])
        sub_lhs = C ** (-(p - 1)) * np.maximum(pt[free], avg[free])
        pt, avg = _effective_rhs(grid, aux.rhs_plain[i - 1])
        sup_lhs = C ** (p - 1) * np.minimum(pt[free], avg[free])

        if config.system is SystemKind.CONVECTIVE:
            own, other = config.gradient_exponents(i) if i == 1 else config.gradient_exponents(i)[::-1]
            # own-gradient term bounded by (M C)^own; the other enters as
            # (1 + |∇w|)^other, which is at most 1 when other <= 0
            other_bound = 1.0 if other <= 0 else (1.0 + M * C) ** other
            sub_rhs = w_min
            sup_rhs = w_max + (M * C) ** own + other_bound
        else:
            eta = config.gradient_exponents(i)[0]
            sub_rhs = w_min - (M / C) ** eta
            sup_rhs = w_max

        for name, margin in ((f"sub{i}", sub_lhs - sub_rhs), (f"sup{i}", sup_rhs - sup_lhs)):
            for k in np.flatnonzero(margin > 0):
                out.append(Violation(int(idx[k]), name, float(margin[k])))
    return out


def _worst(violations: list[Violation]) -> Violation:
    return max(violations, key=lambda v: v.margin)


def calibrate_C(
    config: ExponentConfig,
    grid: Grid,
    delta: float = 0.1,
    c_max: float = 1e6,
    n_bisect: int = 60,
    aux: AuxiliarySet | None = None,
    tol: float | None = None,
) -> BarrierPair:
    """Smallest C in (1, c_max] (to relative width 1e-3) with no violations.

    Doubling from C = 2 brackets a feasible value; bisection then shrinks
    the bracket.  The returned pair uses the feasible end of the bracket.
    """
    if not c_max > 1.0:
        raise ValueError("c_max must exceed 1")
    if aux is None:
        aux = build_auxiliary(config, grid, delta, tol=tol)

    def fails(C):
        return check_prop_inequalities(config, grid, C, aux)

    lo, hi = 1.0, min(2.0, c_max)
    viol = fails(hi)
    while viol and hi < c_max:
        lo, hi = hi, min(2.0 * hi, c_max)
        viol = fails(hi)
    if viol:
        w = _worst(viol)
        x = float(grid.nodes[w.node])
        raise CalibrationFailure(
            f"no C <= {c_max:g} satisfies the inequalities; worst: {w.name} at x={x:.6g}, margin {w.margin:.6g}",
            c_max,
            w.node,
            x,
            w.name,
            w.margin,
        )
    for _ in range(n_bisect):
        if (hi - lo) <= 1e-3 * hi:
            break
        mid = math.sqrt(lo * hi) if lo > 1.0 else 0.5 * (lo + hi)
        if fails(mid):
            lo = mid
        else:
            hi = mid
    logger.info("calibrated C = %.6g (bracket [%.6g, %.6g])", hi, lo, hi)
    return assemble(aux, hi)
