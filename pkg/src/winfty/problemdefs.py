"""Cost integrands, sources, target shapes and the volume penalty of the three experiments.

All integrand callables are vectorised: ``x`` has shape ``(K, 2)``, ``u`` shape
``(K,)`` and ``z`` (the gradient slot) shape ``(K, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .meshkit import ReferenceMesh, generate_annulus_in_square, generate_square_in_square


class CostIntegrand:
    """Integrand ``j(x, u, z)`` with its partial derivatives and the Poisson source ``f``.

    Subclasses override what they need; the defaults describe ``j = 0`` and ``f = 0``.
    """

    def j(self, x, u, z):
        return np.zeros(len(x))

    def j_x(self, x, u, z):
        return np.zeros((len(x), 2))

    def j_u(self, x, u, z):
        return np.zeros(len(x))

    def j_z(self, x, u, z):
        return np.zeros((len(x), 2))

    def f(self, x):
        return np.zeros(len(x))

    def grad_f(self, x):
        return np.zeros((len(x), 2))


class ConstantSource(CostIntegrand):
    """Zero cost, constant source; handy for plain Poisson solves."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def f(self, x):
        return np.full(len(x), self.value)


class Tracking(CostIntegrand):
    """``j = (u - u_d)^2 / 2`` with a constant source."""

    def __init__(self, u_d: Callable, grad_u_d: Callable, source: float):
        self.u_d = u_d
        self.grad_u_d = grad_u_d
        self.source = float(source)

    def j(self, x, u, z):
        return 0.5 * (u - self.u_d(x)) ** 2

    def j_u(self, x, u, z):
        return u - self.u_d(x)

    def j_x(self, x, u, z):
        return -(u - self.u_d(x))[:, None] * self.grad_u_d(x)

    def f(self, x):
        return np.full(len(x), self.source)


class Dirichlet(CostIntegrand):
    """``j = |z + x/2|^2 / 2``: every centred ball is a zero-energy minimiser."""

    def __init__(self, source: float = 1.0):
        self.source = float(source)

    def j(self, x, u, z):
        w = z + 0.5 * x
        return 0.5 * np.einsum("ka,ka->k", w, w)

    def j_z(self, x, u, z):
        return z + 0.5 * x

    def j_x(self, x, u, z):
        return 0.5 * (z + 0.5 * x)

    def f(self, x):
        return np.full(len(x), self.source)


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class TargetShape:
    """Centred ball (``r_inner = 0``) or annulus."""

    r_outer: float
    r_inner: float = 0.0

    def distance(self, x) -> np.ndarray:
        """Distance to the complement of the shape (zero outside it)."""
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
        if self.r_inner > 0:
            d = np.minimum(r - self.r_inner, self.r_outer - r)
        else:
            d = self.r_outer - r
        return np.maximum(d, 0.0)

    @property
    def area(self) -> float:
        return np.pi * (self.r_outer**2 - self.r_inner**2)


def target_distance(shape: TargetShape, x) -> float:
    return float(shape.distance(np.asarray(x, dtype=float).reshape(1, 2))[0])


# ---------------------------------------------------------------- penalty


@dataclass(frozen=True)
class PenaltyConfig:
    m0: float
    mu: float

    def __post_init__(self):
        if self.m0 <= 0:
            raise ValueError("m0 must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")


def penalty_value_and_derivative(volume: float, config: PenaltyConfig) -> tuple[float, float]:
    """Value ``mu/2 (|Omega| - m0)^2`` and the coefficient multiplying ``int div V``."""
    gap = volume - config.m0
    return 0.5 * config.mu * gap**2, config.mu * gap


def exp3_mu(h: float) -> float:
    """Penalty weight schedule ``(8 h)^(-1/2)``."""
    return (8.0 * h) ** -0.5


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class MeshSpec:
    kind: str
    params: dict

    def build(self) -> ReferenceMesh:
        if self.kind == "square":
            return generate_square_in_square(**self.params)
        if self.kind == "annulus":
            return generate_annulus_in_square(**self.params)
        raise ValueError(f"unknown mesh kind {self.kind!r}")


@dataclass(frozen=True)
class Experiment:
    name: str
    problem: CostIntegrand
    target: TargetShape
    mesh: MeshSpec
    m0: float | None = None
    mu_schedule: Callable[[float], float] | None = None

    def penalty(self, h: float) -> PenaltyConfig | None:
        if self.m0 is None:
            return None
        return PenaltyConfig(self.m0, self.mu_schedule(h))


def _u_d1(x):
    return 4.0 / np.pi - np.einsum("ka,ka->k", x, x)


def _grad_u_d1(x):
    return -2.0 * x


ORIGIN_GUARD = 1e-12
_C2 = 5.0 / (np.pi * np.log(256.0))


def _r2(x):
    r2 = np.einsum("ka,ka->k", x, x)
    if np.any(r2 < ORIGIN_GUARD**2):
        raise ValueError("experiment 2 target state is singular at the origin")
    return r2


def _u_d2(x):
    r2 = _r2(x)
    return _C2 * (-np.pi * r2 * np.log(4.0) + 3 * np.log(r2) + 3 * np.log(np.pi) + np.log(4.0))


def _grad_u_d2(x):
    r2 = _r2(x)
    return _C2 * (-2 * np.pi * np.log(4.0) + 6.0 / r2)[:, None] * x


def experiment1(n: int = 8) -> Experiment:
    return Experiment(
        "exp1",
        Tracking(_u_d1, _grad_u_d1, source=1.0),
        TargetShape(4.0 / np.sqrt(3 * np.pi)),
        MeshSpec("square", {"n": n}),
    )


def experiment2(n_angular: int = 32, n_radial: int = 2) -> Experiment:
    return Experiment(
        "exp2",
        Tracking(_u_d2, _grad_u_d2, source=5.0),
        TargetShape(2.0 / np.sqrt(np.pi), 1.0 / np.sqrt(np.pi)),
        MeshSpec("annulus", {"n_angular": n_angular, "n_radial": n_radial, "r_inner": 0.7, "r_outer": 1.4}),
    )


def experiment3(n: int = 8) -> Experiment:
    return Experiment(
        "exp3",
        Dirichlet(source=1.0),
        TargetShape(2.0 / np.sqrt(np.pi)),
        MeshSpec("square", {"n": n}),
        m0=4.0,
        mu_schedule=exp3_mu,
    )


EXPERIMENTS = {"exp1": experiment1, "exp2": experiment2, "exp3": experiment3}
