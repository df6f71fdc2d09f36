"""Truncated solution operator T and a damped fixed-point iteration for it.

T(z) freezes the coupling at the truncated state z̃ = clamp(z, lower, upper):
each component then solves one scalar p-Laplacian problem with the frozen
right side f_i(z̃1, z̃2, |∇z̃1|, |∇z̃2|).  The iteration

    z <- (1 - ω) z + ω T(z)

halves ω once when the increments stagnate, and then switches to Anderson
mixing (window 3).  Failure to converge is reported, not raised.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .barriers import BarrierPair
from .domain import Field, fmt_float, norms
from .plap import NonConvergence, PlapProblem, energy, solve, weak_residual
from .systems import ExponentConfig, SingularityError, nodal_rhs, truncate

logger = logging.getLogger(__name__)

STAGNATION_WINDOW = 10
ANDERSON_DEPTH = 3


class Initial(enum.Enum):
    Lower = "lower"
    Upper = "upper"
    Midpoint = "midpoint"


@dataclass(frozen=True)
class IterationRecord:
    k: int
    increment: float
    lp_grad: tuple[float, float]
    sup_grad: tuple[float, float]
    residuals: tuple[float, float]
    energies: tuple[float, float]
    relaxation: float
    mode: str


@dataclass
class IterationState:
    z1: Field
    z2: Field
    k: int = 0
    relaxation: float = 1.0
    history: list[IterationRecord] = field(default_factory=list)


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    final_increment: float
    weak_residuals: tuple[float, float]
    localization_violation: float
    apriori_max_lp_grad: tuple[float, float]
    apriori_max_sup_grad: tuple[float, float]
    fields: tuple[Field, Field]
    history: tuple[IterationRecord, ...] = ()
    message: str = ""

    CSV_HEADER = (
        "k,increment,lp_grad1,lp_grad2,sup_grad1,sup_grad2,residual1,residual2,energy1,energy2,relaxation,mode"
    )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_HEADER.split(","))
            for r in self.history:
                w.writerow(
                    [r.k, fmt_float(r.increment)]
                    + [fmt_float(x) for x in (*r.lp_grad, *r.sup_grad, *r.residuals, *r.energies, r.relaxation)]
                    + [r.mode]
                )

    def summary_lines(self) -> list[str]:
        return [
            f"converged = {self.converged}",
            f"iterations = {self.iterations}",
            f"final_increment = {self.final_increment!r}",
            f"weak_residual1 = {self.weak_residuals[0]!r}",
            f"weak_residual2 = {self.weak_residuals[1]!r}",
            f"localization_violation = {self.localization_violation!r}",
            f"apriori_max_lp_grad = {self.apriori_max_lp_grad[0]!r}, {self.apriori_max_lp_grad[1]!r}",
            f"apriori_max_sup_grad = {self.apriori_max_sup_grad[0]!r}, {self.apriori_max_sup_grad[1]!r}",
            f"message = {self.message}",
        ]


def _check_on_grid(barriers: BarrierPair, *zs: Field) -> None:
    for z in zs:
        if z.grid is not barriers.grid:
            raise ValueError("iterate lives on a different grid than the barriers")


def _frozen_rhs(config, barriers, z1, z2):
    zt1 = truncate(z1, barriers.lower1, barriers.upper1)
    zt2 = truncate(z2, barriers.lower2, barriers.upper2)
    f1, f2 = nodal_rhs(config, zt1, zt2)
    return (zt1, zt2), (f1, f2)


def apply_T(
    config: ExponentConfig,
    barriers: BarrierPair,
    z1: Field,
    z2: Field,
    plap_tol: float | None = None,
) -> tuple[Field, Field]:
    """One application of the truncated solution operator.

    Each scalar solve is warm-started from the truncated state, so T(z)
    depends on z only through truncate(z).
    """
    _check_on_grid(barriers, z1, z2)
    zt, f = _frozen_rhs(config, barriers, z1, z2)
    out = []
    for i in (1, 2):
        prob = PlapProblem(barriers.grid, config.p(i), f[i - 1], tol=plap_tol)
        out.append(solve(prob, initial=zt[i - 1]).u)
    return out[0], out[1]


def _l2(grid, v) -> float:
    return float(np.sqrt(np.sum(grid.hat_masses * v * v)))


def _increment(old: tuple[Field, Field], new: tuple[Field, Field]) -> float:
    grid = old[0].grid
    inc = 0.0
    for a, b in zip(old, new):
        scale = max(_l2(grid, b.values), np.finfo(float).tiny)
        inc = max(inc, _l2(grid, b.values - a.values) / scale)
    return inc


def system_residuals(config: ExponentConfig, u1: Field, u2: Field) -> tuple[float, float]:
    """Weak residuals of the untruncated system at (u1, u2)."""
    f = nodal_rhs(config, u1, u2)
    return tuple(
        weak_residual(PlapProblem(u.grid, config.p(i), f[i - 1]), u) for i, u in ((1, u1), (2, u2))
    )


def localization_violation(barriers: BarrierPair, u1: Field, u2: Field) -> float:
    worst = 0.0
    for i, u in ((1, u1), (2, u2)):
        lo, hi = barriers.lower(i).values, barriers.upper(i).values
        worst = max(worst, float(np.max(lo - u.values)), float(np.max(u.values - hi)))
    return worst


def _initial(barriers: BarrierPair, initial: Initial) -> tuple[Field, Field]:
    if initial is Initial.Lower:
        return barriers.lower1, barriers.lower2
    if initial is Initial.Upper:
        return barriers.upper1, barriers.upper2
    return tuple(
        barriers.lower(i).with_values(0.5 * (barriers.lower(i).values + barriers.upper(i).values)) for i in (1, 2)
    )


def _stagnating(incs: list[float]) -> bool:
    if len(incs) < STAGNATION_WINDOW:
        return False
    w = incs[-STAGNATION_WINDOW:]
    lo = min(w)
    return lo > 0 and max(w) <= 2.0 * lo


class _Anderson:
    """Type-II Anderson mixing on the stacked nodal vectors of both components."""

    def __init__(self, depth: int, omega: float):
        self.depth = depth
        self.omega = omega
        self.zs: list[np.ndarray] = []
        self.fs: list[np.ndarray] = []

    def step(self, z: np.ndarray, tz: np.ndarray) -> np.ndarray:
        f = tz - z
        self.zs.append(z)
        self.fs.append(f)
        if len(self.zs) > self.depth + 1:
            self.zs.pop(0)
            self.fs.pop(0)
        if len(self.zs) == 1:
            return z + self.omega * f
        dZ = np.column_stack([self.zs[j + 1] - self.zs[j] for j in range(len(self.zs) - 1)])
        dF = np.column_stack([self.fs[j + 1] - self.fs[j] for j in range(len(self.fs) - 1)])
        gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
        return z + self.omega * f - (dZ + self.omega * dF) @ gamma


def _record(config, barriers, k, inc, z, u, omega, mode) -> IterationRecord:
    lp, sup, res, en = [], [], [], []
    _, f = _frozen_rhs(config, barriers, *u)
    for i in (1, 2):
        n = norms(u[i - 1], config.p(i))
        lp.append(n.lp_gradient)
        sup.append(n.sup_gradient)
        prob = PlapProblem(barriers.grid, config.p(i), f[i - 1])
        # residual of u against the nonlinearity frozen at its own truncation
        res.append(weak_residual(prob, u[i - 1]))
        en.append(energy(prob, u[i - 1]))
    return IterationRecord(k, inc, tuple(lp), tuple(sup), tuple(res), tuple(en), omega, mode)


def iterate(
    config: ExponentConfig,
    barriers: BarrierPair,
    initial: Initial | str = Initial.Midpoint,
    relaxation: float = 1.0,
    max_iter: int = 200,
    tol: float = 1e-8,
    residual_tol: float = 1e-6,
    plap_tol: float | None = None,
) -> SolveReport:
    """Damped fixed-point iteration of T; always returns a report."""
    if not isinstance(initial, Initial):
        initial = Initial(str(initial).lower())
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0.0 < relaxation <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")

    grid = barriers.grid
    z1, z2 = _initial(barriers, initial)
    state = IterationState(z1, z2, 0, relaxation)
    incs: list[float] = []
    mode = "damped"
    halved = False
    anderson: _Anderson | None = None
    n = grid.n_nodes
    inc = np.inf
    u = (z1, z2)
    message = ""

    try:
        while state.k < max_iter:
            u = apply_T(config, barriers, state.z1, state.z2, plap_tol)
            if anderson is None:
                w = state.relaxation
                new = tuple(
                    z.with_values((1.0 - w) * z.values + w * t.values) for z, t in zip((state.z1, state.z2), u)
                )
            else:
                zv = np.concatenate([state.z1.values, state.z2.values])
                tv = np.concatenate([u[0].values, u[1].values])
                v = anderson.step(zv, tv)
                new = (state.z1.with_values(v[:n]), state.z2.with_values(v[n:]))
            inc = _increment((state.z1, state.z2), new)
            state.k += 1
            state.history.append(_record(config, barriers, state.k, inc, new, u, state.relaxation, mode))
            state.z1, state.z2 = new
            incs.append(inc)
            if not np.isfinite(inc):
                message = "non-finite increment"
                break
            if inc <= tol:
                break
            if anderson is None and _stagnating(incs):
                if not halved:
                    halved = True
                    state.relaxation *= 0.5
                    logger.info("stagnation at k=%d: relaxation -> %g", state.k, state.relaxation)
                else:
                    mode = "anderson"
                    anderson = _Anderson(ANDERSON_DEPTH, state.relaxation)
                    logger.info("stagnation at k=%d: switching to Anderson mixing", state.k)
                incs.clear()
        u = apply_T(config, barriers, state.z1, state.z2, plap_tol)
    except SingularityError as exc:
        message = f"singular evaluation: {exc}"
    except NonConvergence as exc:
        message = f"scalar solve failed: {exc}"

    try:
        res = system_residuals(config, *u)
    except SingularityError as exc:
        res = (np.inf, np.inf)
        message = message or f"final state leaves the positive cone: {exc}"
    loc = localization_violation(barriers, *u)
    hist = tuple(state.history)
    converged = bool(not message and inc <= tol and max(res) <= residual_tol)
    if not converged and not message:
        message = "increment above tol" if not inc <= tol else "residual above residual_tol"
    lp = tuple(max((r.lp_grad[j] for r in hist), default=0.0) for j in (0, 1))
    sup = tuple(max((r.sup_grad[j] for r in hist), default=0.0) for j in (0, 1))
    return SolveReport(
        converged=converged,
        iterations=state.k,
        final_increment=float(inc),
        weak_residuals=(float(res[0]), float(res[1])),
        localization_violation=loc,
        apriori_max_lp_grad=lp,
        apriori_max_sup_grad=sup,
        fields=u,
        history=hist,
        message=message if not converged else "",
    )


@dataclass(frozen=True)
class AprioriVerdict:
    max_lp_grad: tuple[float, float]
    max_sup_grad: tuple[float, float]
    bounded: bool


def track_apriori(report: SolveReport) -> AprioriVerdict:
    """Empirical a-priori bound: no iterate exceeds 10x the median of the first five."""
    hist = report.history
    if not hist:
        raise ValueError("report has no iteration history")
    series = [
        np.array([r.lp_grad[0] for r in hist]),
        np.array([r.lp_grad[1] for r in hist]),
        np.array([r.sup_grad[0] for r in hist]),
        np.array([r.sup_grad[1] for r in hist]),
    ]
    bounded = all(np.all(np.isfinite(s)) and np.all(s <= 10.0 * np.median(s[:5])) for s in series)
    return AprioriVerdict(
        (float(series[0].max()), float(series[1].max())),
        (float(series[2].max()), float(series[3].max())),
        bool(bounded),
    )
