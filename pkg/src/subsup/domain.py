"""Meshes, the distance function, boundary layers and singular quadrature.

Two domains are supported: the unit interval (a closed-form testbed) and the
unit ball in R^N reduced to its radial coordinate r in [0, 1].  Radial
integrals carry the r^(N-1) factor but not the surface measure of the unit
sphere, so all integrals are per unit solid angle.

Integrals against d(x)^mu with mu in (-1, 0) are computed by product
integration: the integrand is interpolated at the cell's Gauss points and the
interpolating polynomial is integrated against d^mu r^(N-1) with a
Gauss-Jacobi rule on cells touching the boundary and a high-order
Gauss-Legendre rule elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import roots_jacobi

# sub-quadrature size used to build product-integration weights
_SUBQUAD = 32


@dataclass(frozen=True)
class Interval01:
    """The interval (0, 1) with Dirichlet conditions at both ends."""

    def __str__(self) -> str:
        return "interval"


@dataclass(frozen=True)
class RadialBall:
    """The unit ball in R^N, discretized along the radius."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"RadialBall requires an integer N >= 2, got {self.N}")

    def __str__(self) -> str:
        return f"radial{self.N}"


DomainKind = Interval01 | RadialBall


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """A graded 1D mesh of [0, 1] with per-cell Gauss quadrature.

    Use :func:`build_grid` rather than constructing this directly.
    """

    kind: DomainKind
    nodes: np.ndarray
    grading_ratio: float
    quadrature_order: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes))
        x = self.nodes
        if x.ndim != 1 or x.size < 5:
            raise ValueError("a grid needs at least 4 cells")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("grid nodes must start at 0 and end at 1")
        if not np.all(np.diff(x) > 0):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def is_radial(self) -> bool:
        return isinstance(self.kind, RadialBall)

    @property
    def dim(self) -> int:
        """Exponent of the volume factor plus one (1 on the interval)."""
        return self.kind.N if self.is_radial else 1

    @property
    def dirichlet(self) -> np.ndarray:
        """Boolean mask of Dirichlet boundary nodes."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[-1] = True
        if not self.is_radial:
            mask[0] = True
        return mask

    @property
    def free(self) -> np.ndarray:
        """Indices of nodes carrying unknowns (everything but Dirichlet nodes)."""
        return np.flatnonzero(~self.dirichlet)

    @property
    def cell_volumes(self) -> np.ndarray:
        """Exact integral of r^(N-1) over each cell (the cell width on the interval)."""
        if "cell_volumes" not in self._cache:
            a, b = self.nodes[:-1], self.nodes[1:]
            n = self.dim
            self._cache["cell_volumes"] = _readonly((b**n - a**n) / n)
        return self._cache["cell_volumes"]

    @property
    def hat_masses(self) -> np.ndarray:
        """Integral of each nodal hat function, volume factor included."""
        if "hat_masses" not in self._cache:
            mom = hat_moments(self, None)
            m = np.zeros(self.n_nodes)
            np.add.at(m, np.arange(self.n_cells), mom[:, 0])
            np.add.at(m, np.arange(1, self.n_nodes), mom[:, 1])
            self._cache["hat_masses"] = _readonly(m)
        return self._cache["hat_masses"]

    def quad_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre points and plain weights, both shaped (n_cells, q).

        The weights integrate against dx only; the radial volume factor is
        applied by :func:`integrate`.
        """
        if "quad" not in self._cache:
            s, w = _gauss01(self.quadrature_order)
            a, h = self.nodes[:-1, None], self.widths[:, None]
            self._cache["quad"] = (_readonly(a + h * s), _readonly(h * w))
        return self._cache["quad"]

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_radial:
            return 1.0 - x
        return np.minimum(x, 1.0 - x)

    def interpolate(self, values, x) -> np.ndarray:
        """Evaluate the piecewise-linear interpolant of nodal values at x."""
        return np.interp(x, self.nodes, values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_index", "coord"])
            for i, x in enumerate(self.nodes):
                w.writerow([i, fmt_float(x)])


def fmt_float(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of a continuous piecewise-linear function on a grid."""

    grid: Grid
    values: np.ndarray
    dirichlet_zero: bool = True

    def __post_init__(self):
        v = _readonly(self.values)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has {v.size} values but the grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.dirichlet_zero and np.any(v[self.grid.dirichlet] != 0.0):
            raise ValueError("field flagged dirichlet_zero is nonzero on the boundary")

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values, dirichlet_zero: bool | None = None) -> Field:
        dz = self.dirichlet_zero if dirichlet_zero is None else dirichlet_zero
        return Field(self.grid, values, dz)

    def scaled(self, t: float) -> Field:
        return Field(self.grid, t * self.values, self.dirichlet_zero)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["coord", "value"])
            for x, v in zip(self.grid.nodes, self.values):
                w.writerow([fmt_float(x), fmt_float(v)])

    @classmethod
    def from_csv(cls, path, grid: Grid, dirichlet_zero: bool = True) -> Field:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["coord", "value"]:
            raise ValueError(f"{path}: expected header 'coord,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        if data.shape[0] != grid.n_nodes or not np.allclose(
            data[:, 0], grid.nodes, rtol=0, atol=1e-15
        ):
            raise ValueError(f"{path}: coordinates do not match the grid")
        return cls(grid, data[:, 1], dirichlet_zero)


class Norms(NamedTuple):
    lp_gradient: float
    sup_gradient: float
    lp_value: float
    sup_value: float


def build_grid(
    kind: DomainKind, n_cells: int, grading_ratio: float = 1.0, quadrature_order: int = 3
) -> Grid:
    """Build a mesh refined toward the Dirichlet boundary.

    Nodes follow a power-law map: at distance fraction t from the boundary the
    node sits at t**grading_ratio (scaled to the half-interval on Interval01,
    to the whole radius on RadialBall).  ``grading_ratio = 1`` is uniform, and
    for ratios above 1 cell widths shrink monotonically toward each boundary.
    """
    if not isinstance(kind, (Interval01, RadialBall)):
        raise TypeError(f"unknown domain kind {kind!r}")
    if not np.isfinite(grading_ratio) or grading_ratio < 1.0:
        raise ValueError(f"grading_ratio must be a finite number >= 1, got {grading_ratio}")
    if int(n_cells) != n_cells or n_cells < 4:
        raise ValueError(f"n_cells must be an integer >= 4, got {n_cells}")
    if int(quadrature_order) != quadrature_order or not 1 <= quadrature_order <= 10:
        raise ValueError(f"quadrature_order must be in [1, 10], got {quadrature_order}")
    n_cells = int(n_cells)
    k = float(grading_ratio)

    if isinstance(kind, RadialBall):
        t = np.arange(n_cells, -1, -1) / n_cells
        nodes = 1.0 - t**k
    else:
        # distance of each node to the nearest end, in units of half the domain
        j = np.arange(n_cells + 1)
        t = np.minimum(j, n_cells - j) / (n_cells / 2.0)
        half = 0.5 * t**k
        nodes = np.where(j <= n_cells / 2.0, half, 1.0 - half)
    nodes[0], nodes[-1] = 0.0, 1.0
    return Grid(kind, nodes, k, int(quadrature_order))


def distance_field(grid: Grid) -> Field:
    """d(x) = distance to the Dirichlet boundary, as a nodal field."""
    return Field(grid, grid.distance(grid.nodes), dirichlet_zero=True)


def boundary_layer_mask(grid: Grid, delta: float) -> np.ndarray:
    """Nodes of the boundary layer {d < delta}."""
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    return grid.distance(grid.nodes) < delta


def snap_to_node(grid: Grid, delta: float) -> float:
    """Return the nodal distance value closest to ``delta``.

    Only distances strictly inside (0, 1/2) are candidates, so the snapped
    layer is never empty and never the whole domain.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    d = grid.distance(grid.nodes)
    cand = np.unique(d[(d > 0.0) & (d < 0.5)])
    return float(cand[np.argmin(np.abs(cand - delta))])


def _gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(n: int, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on [0, 1] for the weight u^mu."""
    x, w = roots_jacobi(n, 0.0, mu)
    return 0.5 * (x + 1.0), w / 2.0 ** (mu + 1.0)


def _pieces(grid: Grid):
    """Split cells into sub-intervals on which d is linear.

    Yields (cell index, left, right) arrays.  Only an Interval01 cell that
    straddles x = 1/2 is split.
    """
    a, b = grid.nodes[:-1], grid.nodes[1:]
    cells = np.arange(grid.n_cells)
    if grid.is_radial:
        return cells, a, b
    split = (a < 0.5) & (b > 0.5)
    if not split.any():
        return cells, a, b
    c = np.concatenate([cells[~split], cells[split], cells[split]])
    lo = np.concatenate([a[~split], a[split], np.full(split.sum(), 0.5)])
    hi = np.concatenate([b[~split], np.full(split.sum(), 0.5), b[split]])
    return c, lo, hi


def _weighted_rule(grid: Grid, mu: float | None):
    """Sub-quadrature of d^mu r^(N-1) dx on every linear piece.

    Returns (cell index per piece, points, weights) with points/weights shaped
    (n_pieces, _SUBQUAD).  The rule is exact for polynomials of degree up to
    2*_SUBQUAD - 1 - (N - 1) times the weight on boundary pieces.
    """
    key = ("rule", mu)
    if key in grid._cache:
        return grid._cache[key]
    cells, lo, hi = _pieces(grid)
    h = (hi - lo)[:, None]
    d_lo, d_hi = grid.distance(lo), grid.distance(hi)
    s_leg, w_leg = _gauss01(_SUBQUAD)
    pts = lo[:, None] + h * s_leg
    wts = h * w_leg * np.ones_like(pts)
    if mu is not None and mu != 0.0:
        wts = wts * grid.distance(pts) ** mu
        at_lo = d_lo == 0.0
        at_hi = d_hi == 0.0
        if at_lo.any() or at_hi.any():
            u, wu = _jacobi01(_SUBQUAD, mu)
            # on a boundary piece d = D*u where u runs from the boundary end
            for mask, start, sign in ((at_lo, lo, 1.0), (at_hi, hi, -1.0)):
                if not mask.any():
                    continue
                hm = h[mask]
                D = np.where(mask, d_lo + d_hi, 0.0)[mask][:, None]
                pts[mask] = start[mask][:, None] + sign * hm * u
                wts[mask] = hm * wu * D**mu
    if grid.is_radial:
        wts = wts * pts ** (grid.dim - 1)
    out = (cells, pts, wts)
    grid._cache[key] = out
    return out


def _check_mu(mu):
    if mu is not None and not mu > -1.0:
        raise ValueError(f"weight exponent mu must exceed -1 for integrability, got {mu}")


def hat_moments(grid: Grid, mu: float | None) -> np.ndarray:
    """Per-cell integrals of the two local hat functions against d^mu r^(N-1).

    Column 0 is the hat of the left node, column 1 that of the right node.
    ``mu=None`` (or 0) means no singular weight.
    """
    _check_mu(mu)
    key = ("hat", mu)
    if key not in grid._cache:
        cells, pts, wts = _weighted_rule(grid, mu)
        a, h = grid.nodes[cells][:, None], grid.widths[cells][:, None]
        right = (pts - a) / h
        out = np.zeros((grid.n_cells, 2))
        np.add.at(out, cells, np.stack([((1 - right) * wts).sum(1), (right * wts).sum(1)], 1))
        grid._cache[key] = _readonly(out)
    return grid._cache[key]


def _product_weights(grid: Grid, mu: float) -> np.ndarray:
    """Weights on the grid's Gauss points for integrals against d^mu r^(N-1)."""
    key = ("prod", mu)
    if key not in grid._cache:
        q = grid.quadrature_order
        s_nodes, _ = _gauss01(q)
        cells, pts, wts = _weighted_rule(grid, mu)
        a, h = grid.nodes[cells][:, None], grid.widths[cells][:, None]
        s = (pts - a) / h
        out = np.zeros((grid.n_cells, q))
        for k in range(q):
            lk = np.ones_like(s)
            for m in range(q):
                if m != k:
                    lk *= (s - s_nodes[m]) / (s_nodes[k] - s_nodes[m])
            np.add.at(out[:, k], cells, (lk * wts).sum(1))
        grid._cache[key] = _readonly(out)
    return grid._cache[key]


def integrate(grid: Grid, integrand, weight_mu: float | None = None) -> float:
    """Integrate values given at the grid's quadrature points.

    Parameters
    ----------
    grid : Grid
    integrand : array_like, shape (n_cells, quadrature_order)
        Values at ``grid.quad_points()[0]``.  A scalar is broadcast.
    weight_mu : float, optional
        If given, integrate ``integrand * d(x)**weight_mu``; must exceed -1.
    """
    _check_mu(weight_mu)
    pts, w = grid.quad_points()
    f = np.broadcast_to(np.asarray(integrand, dtype=float), pts.shape)
    if weight_mu is None or weight_mu == 0.0:
        if grid.is_radial:
            w = w * pts ** (grid.dim - 1)
        return float(np.sum(f * w))
    return float(np.sum(f * _product_weights(grid, weight_mu)))


def gradient(field: Field) -> np.ndarray:
    """Per-cell slope of the piecewise-linear field."""
    return np.diff(field.values) / field.grid.widths


def nodal_gradient_magnitude(field: Field) -> np.ndarray:
    """|grad u| at nodes: mean of the adjacent cell slopes, then absolute value.

    End nodes use their single adjacent cell.
    """
    s = gradient(field)
    g = np.empty(field.grid.n_nodes)
    g[0], g[-1] = s[0], s[-1]
    g[1:-1] = 0.5 * (s[:-1] + s[1:])
    return np.abs(g)


def norms(field: Field, p: float) -> Norms:
    if not p > 1.0:
        raise ValueError(f"p must exceed 1, got {p}")
    grid = field.grid
    s = gradient(field)
    lp_grad = float(np.sum(np.abs(s) ** p * grid.cell_volumes) ** (1.0 / p))
    pts, _ = grid.quad_points()
    u_q = grid.interpolate(field.values, pts)
    lp_val = integrate(grid, np.abs(u_q) ** p) ** (1.0 / p)
    return Norms(
        lp_gradient=lp_grad,
        sup_gradient=float(np.max(np.abs(s))),
        lp_value=float(lp_val),
        sup_value=float(np.max(np.abs(field.values))),
    )


def read_grid_csv(path, kind: DomainKind, quadrature_order: int = 3) -> Grid:
    """Rebuild a Grid from a ``node_index,coord`` CSV."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["node_index", "coord"]:
        raise ValueError(f"{path}: expected header 'node_index,coord'")
    nodes = np.array([float(r[1]) for r in rows[1:]])
    return Grid(kind, nodes, float("nan"), quadrature_order)
