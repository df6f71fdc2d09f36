"""The convective and absorption systems, their exponent conditions, truncation.

Convective:
    -Δ_{p1} u1 = u1^α1 u2^β1 + |∇u1|^γ1 + (1 + |∇u2|)^θ1
    -Δ_{p2} u2 = u1^α2 u2^β2 + (1 + |∇u1|)^γ2 + |∇u2|^θ2
Absorption:
    -Δ_{pi} ui = u1^αi u2^βi - |∇ui|^ηi

Gradients enter only through their magnitudes.  Powers use the convention
0^0 = 1, which matters at critical points where a gradient vanishes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, as_float, as_int, parse_sections
from .domain import Field, nodal_gradient_magnitude


class SingularityError(ArithmeticError):
    """A nonlinearity was evaluated outside the open positive cone."""


class SystemKind(enum.Enum):
    CONVECTIVE = "convective"
    ABSORPTION = "absorption"


@dataclass(frozen=True)
class ExponentConfig:
    system: SystemKind
    N: int
    p1: float
    p2: float
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float
    r1: float
    r2: float
    gamma1: float = 0.0
    gamma2: float = 0.0
    theta1: float = 0.0
    theta2: float = 0.0
    eta1: float = 0.0
    eta2: float = 0.0

    def __post_init__(self):
        if not isinstance(self.system, SystemKind):
            object.__setattr__(self, "system", SystemKind(self.system))
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")
        for f in fields(self):
            if f.name != "system" and not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        for i in (1, 2):
            p = self.p(i)
            if not 1.0 < p < self.N:
                raise ValueError(f"p{i} = {p} must lie in (1, N) = (1, {self.N})")
            if not self.r(i) >= 1.0:
                raise ValueError(f"r{i} must be >= 1")

    def p(self, i: int) -> float:
        return self.p1 if i == 1 else self.p2

    def r(self, i: int) -> float:
        return self.r1 if i == 1 else self.r2

    def ab(self, i: int) -> tuple[float, float]:
        return (self.alpha1, self.beta1) if i == 1 else (self.alpha2, self.beta2)

    def mu(self, i: int) -> float:
        """Boundary blow-up exponent α_i + β_i."""
        a, b = self.ab(i)
        return a + b

    def gradient_exponents(self, i: int) -> tuple[float, float]:
        """Exponents applied to (|∇u1|, |∇u2|) in equation i."""
        if self.system is SystemKind.CONVECTIVE:
            return (self.gamma1, self.theta1) if i == 1 else (self.gamma2, self.theta2)
        eta = self.eta1 if i == 1 else self.eta2
        return (eta, eta)

    @property
    def is_convective(self) -> bool:
        return self.system is SystemKind.CONVECTIVE

    # -- key = value serialization ---------------------------------------

    _COMMON = ("N", "p1", "p2", "alpha1", "beta1", "alpha2", "beta2", "r1", "r2")
    _CONV = ("gamma1", "gamma2", "theta1", "theta2")
    _ABS = ("eta1", "eta2")

    def keys(self) -> tuple[str, ...]:
        return self._COMMON + (self._CONV if self.is_convective else self._ABS)

    def to_text(self) -> str:
        lines = ["[system]", f"kind = {self.system.value}"]
        for k in self.keys():
            v = getattr(self, k)
            lines.append(f"{k} = {v if k == 'N' else repr(float(v))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_entries(cls, entries) -> ExponentConfig:
        """Build from a parsed ``[system]`` section (see :mod:`subsup.config`)."""
        if "kind" not in entries:
            raise ConfigError("[system] needs 'kind = convective|absorption'")
        kind_entry = entries["kind"]
        try:
            kind = SystemKind(kind_entry.value.lower())
        except ValueError:
            raise ConfigError(f"unknown system kind {kind_entry.value!r}", kind_entry.line) from None
        allowed = set(cls._COMMON) | set(cls._CONV if kind is SystemKind.CONVECTIVE else cls._ABS)
        values = {}
        for k, e in entries.items():
            if k == "kind":
                continue
            if k not in allowed:
                raise ConfigError(f"key {k!r} is not valid for a {kind.value} system", e.line)
            values[k] = as_int(e, k) if k == "N" else as_float(e, k)
        missing = [k for k in cls._COMMON if k not in values]
        if missing:
            raise ConfigError(f"[system] is missing {', '.join(missing)}")
        try:
            return cls(system=kind, **values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text: str) -> ExponentConfig:
        sections = parse_sections(text)
        if set(sections) - {"system"}:
            extra = sorted(set(sections) - {"system"})
            raise ConfigError(f"unexpected section(s) {extra}")
        if "system" not in sections:
            raise ConfigError("missing [system] section")
        return cls.from_entries(sections["system"])

    @classmethod
    def from_file(cls, path) -> ExponentConfig:
        return cls.from_text(Path(path).read_text())


# -- admissibility ------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    relation: str
    rhs: float
    regime: str  # "base", "weak" or "c1"

    @property
    def passed(self) -> bool:
        ops = {
            "<": np.less,
            "<=": np.less_equal,
            ">": np.greater,
            ">=": np.greater_equal,
        }
        return bool(ops[self.relation](self.lhs, self.rhs))

    @property
    def slack(self) -> float:
        """Distance to the boundary, positive when satisfied."""
        return self.rhs - self.lhs if self.relation in ("<", "<=") else self.lhs - self.rhs


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible_w: bool
    admissible_c1: bool
    conditions: tuple[Condition, ...]

    @property
    def violated(self) -> list[tuple[str, float, float]]:
        return [(c.name, c.lhs, c.rhs) for c in self.conditions if not c.passed]

    def table(self) -> str:
        rows = [f"{'condition':<34} {'lhs':>12} {'rel':>3} {'rhs':>12} {'slack':>12}  ok"]
        for c in self.conditions:
            rows.append(
                f"{c.name:<34} {c.lhs:>12.6g} {c.relation:>3} {c.rhs:>12.6g} {c.slack:>12.4g}  "
                + ("yes" if c.passed else "NO")
            )
        rows.append(f"weak regime (r_i >= p_i'):  {'admissible' if self.admissible_w else 'NOT admissible'}")
        rows.append(f"C^1 regime (r_i > N):       {'admissible' if self.admissible_c1 else 'NOT admissible'}")
        return "\n".join(rows)


def conjugate(x: float) -> float:
    return x / (x - 1.0)


def check_admissibility(config: ExponentConfig) -> AdmissibilityReport:
    """Evaluate every exponent condition with its numeric slack.

    Strict inequalities are evaluated strictly; no tolerance is applied.
    """
    conds: list[Condition] = []
    N = config.N
    for i in (1, 2):
        p, r = config.p(i), config.r(i)
        a, b = config.ab(i)
        conds += [
            Condition(f"alpha1: |a{i}|+|b{i}| < p{i}-1", abs(a) + abs(b), "<", p - 1, "base"),
            Condition(f"alpha1: a{i}+b{i} <= |a{i}|+|b{i}|", a + b, "<=", abs(a) + abs(b), "base"),
            Condition(f"alpha1: a{i}+b{i} > -1/r{i}", a + b, ">", -1.0 / r, "base"),
        ]
    if config.is_convective:
        conds += [
            Condition("gamma1: gamma2 <= 0", config.gamma2, "<=", 0.0, "base"),
            Condition("gamma1: theta1 <= 0", config.theta1, "<=", 0.0, "base"),
            Condition("gamma1: gamma1 >= 0", config.gamma1, ">=", 0.0, "base"),
            Condition("gamma1: theta2 >= 0", config.theta2, ">=", 0.0, "base"),
            Condition("gamma1: gamma1 < (p1-1)/r1", config.gamma1, "<", (config.p1 - 1) / config.r1, "base"),
            Condition("gamma1: theta2 < (p2-1)/r2", config.theta2, "<", (config.p2 - 1) / config.r2, "base"),
        ]
    else:
        for i in (1, 2):
            a, b = config.ab(i)
            eta = config.eta1 if i == 1 else config.eta2
            conds += [
                Condition(f"gamma2: |a{i}|+|b{i}| <= eta{i}", abs(a) + abs(b), "<=", eta, "base"),
                Condition(f"gamma2: eta{i} < (p{i}-1)/r{i}", eta, "<", (config.p(i) - 1) / config.r(i), "base"),
            ]
    for i in (1, 2):
        p, r = config.p(i), config.r(i)
        p_star = N * p / (N - p)
        conds.append(Condition(f"r{i} >= (p{i}*)'/(p{i})'", r, ">=", conjugate(p_star) / conjugate(p), "base"))
    for i in (1, 2):
        conds.append(Condition(f"weak: r{i} >= p{i}'", config.r(i), ">=", conjugate(config.p(i)), "weak"))
    for i in (1, 2):
        conds.append(Condition(f"C1: r{i} > N", config.r(i), ">", float(N), "c1"))

    base = all(c.passed for c in conds if c.regime == "base")
    weak = base and all(c.passed for c in conds if c.regime == "weak")
    c1 = base and all(c.passed for c in conds if c.regime == "c1")
    return AdmissibilityReport(weak, c1, tuple(conds))


# -- nonlinearities -----------------------------------------------------------


def cone_power(s, e: float) -> np.ndarray:
    """s**e on the closed positive half-line with 0**0 = 1.

    Raises SingularityError for s < 0 (nonzero e) and for s = 0 with e < 0.
    """
    s = np.asarray(s, dtype=float)
    if e == 0.0:
        return np.ones_like(s)
    if np.any(s < 0.0):
        raise SingularityError(f"negative base raised to power {e}")
    if e < 0.0 and np.any(s == 0.0):
        raise SingularityError(f"zero raised to negative power {e}")
    return s**e


def eval_f(config: ExponentConfig, d_at_x, s1, s2, g1, g2):
    """Right-hand sides (f1, f2) at state (s1, s2) and gradient magnitudes (g1, g2).

    ``d_at_x`` is accepted for interface symmetry with the growth envelope;
    neither system depends on x explicitly.
    """
    s1, s2 = np.asarray(s1, float), np.asarray(s2, float)
    g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
    if np.any(g1 < 0) or np.any(g2 < 0):
        raise ValueError("gradient arguments are magnitudes and must be >= 0")
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        # only an error when a negative exponent actually sees the zero
        for i in (1, 2):
            a, b = config.ab(i)
            cone_power(s1, a)
            cone_power(s2, b)

    def prod(i):
        a, b = config.ab(i)
        return cone_power(s1, a) * cone_power(s2, b)

    if config.is_convective:
        f1 = prod(1) + cone_power(g1, config.gamma1) + cone_power(1.0 + g2, config.theta1)
        f2 = prod(2) + cone_power(1.0 + g1, config.gamma2) + cone_power(g2, config.theta2)
    else:
        f1 = prod(1) - cone_power(g1, config.eta1)
        f2 = prod(2) - cone_power(g2, config.eta2)
    return f1, f2


def product_bound(config: ExponentConfig, i: int, C: float, c_lo: float, c_hi: float) -> float:
    """K with s1^a s2^b <= K d^(a+b) whenever C^-1 c_lo d <= s_j <= C c_hi d."""
    a, b = config.ab(i)
    lo, hi = c_lo / C, C * c_hi
    return max(x**a * y**b for x in (lo, hi) for y in (lo, hi))


def growth_envelope(config: ExponentConfig, barriers, d_at_x, g1, g2):
    """Computable instance of the growth hypothesis on the barrier rectangle.

    Returns M_i (d^μ_i + g1^γ̂_i + g2^θ̂_i) for i = 1, 2, with M_i derived from
    the calibrated envelope constants of ``barriers``.  Requires the sign
    conditions γ2, θ1 <= 0 for convective systems, under which
    (1 + g)^θ <= g^θ.
    """
    C = getattr(barriers, "C", None)
    if C is None or not C > 1.0 or not barriers.c_lo > 0.0:
        raise ValueError("growth_envelope needs calibrated barriers (C > 1, c_lo > 0)")
    if config.is_convective and (config.gamma2 > 0 or config.theta1 > 0):
        raise ValueError("envelope requires gamma2 <= 0 and theta1 <= 0")
    d = np.asarray(d_at_x, dtype=float)
    if np.any(d <= 0):
        raise ValueError("the envelope is evaluated at interior points (d > 0)")
    out = []
    with np.errstate(divide="ignore"):
        for i in (1, 2):
            K = product_bound(config, i, C, barriers.c_lo, barriers.c_hi)
            M = max(K, 1.0)
            e1, e2 = config.gradient_exponents(i)
            val = d ** config.mu(i) + np.power(np.asarray(g1, float), e1) + np.power(np.asarray(g2, float), e2)
            out.append(M * val)
    return out[0], out[1]


def truncate(z: Field, lower: Field, upper: Field) -> Field:
    """Nodewise clamp min(max(z, lower), upper)."""
    if not (z.grid is lower.grid is upper.grid):
        raise ValueError("truncate needs all fields on one grid")
    bad = np.flatnonzero(lower.values > upper.values)
    if bad.size:
        raise ValueError(f"lower > upper at {bad.size} node(s), first at index {bad[0]}")
    v = np.minimum(np.maximum(z.values, lower.values), upper.values)
    return Field(z.grid, v, dirichlet_zero=lower.dirichlet_zero and upper.dirichlet_zero)


def nodal_rhs(config: ExponentConfig, u1: Field, u2: Field) -> tuple[Field, Field]:
    """f_i evaluated at interior nodes from (u1, u2) and their nodal gradient magnitudes.

    Dirichlet nodes carry 0; their value never enters a load.
    """
    if u1.grid is not u2.grid:
        raise ValueError("both components must live on one grid")
    grid = u1.grid
    free = grid.free
    g1 = nodal_gradient_magnitude(u1)[free]
    g2 = nodal_gradient_magnitude(u2)[free]
    f1, f2 = eval_f(config, grid.distance(grid.nodes[free]), u1.values[free], u2.values[free], g1, g2)
    out = []
    for f in (f1, f2):
        v = np.zeros(grid.n_nodes)
        v[free] = f
        out.append(Field(grid, v, dirichlet_zero=False))
    return out[0], out[1]
