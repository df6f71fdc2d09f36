import numpy as np

from subsup.domain import Field
from subsup.systems import ExponentConfig


def convective(alpha, beta, **kw):
    base = dict(
        system="convective", N=3, p1=2.0, p2=2.0, alpha1=alpha, beta1=beta, alpha2=alpha, beta2=beta,
        r1=2.0, r2=2.0, gamma1=0.25, gamma2=0.0, theta1=0.0, theta2=0.25,
    )
    base.update(kw)
    return ExponentConfig(**base)


def absorption(alpha=0.0, beta=0.0, eta=0.25, **kw):
    base = dict(
        system="absorption", N=3, p1=2.0, p2=2.0, alpha1=alpha, beta1=beta, alpha2=alpha, beta2=beta,
        r1=2.0, r2=2.0, eta1=eta, eta2=eta,
    )
    base.update(kw)
    return ExponentConfig(**base)


def random_rhs(grid, rng, n_modes=4, positive=True):
    """Smooth random nodal rhs: a short cosine series, shifted positive if asked."""
    x = grid.nodes
    v = sum(rng.normal() * np.cos(np.pi * k * x) / k for k in range(1, n_modes + 1))
    if positive:
        v = v - v.min() + rng.uniform(0.1, 1.0)
    return Field(grid, v, dirichlet_zero=False)
