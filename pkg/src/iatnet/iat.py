"""Integral activation transform ``z -> int q(s) sigma(z @ p(s)) ds``.

Two evaluation routes:

* discretized: midpoint rule on ``M`` uniform cells, any ``sigma``;
* analytic (ReLU only): find the activation pattern ``{s : z @ p(s) > 0}``
  and integrate ``q p^T`` over it exactly, giving ``S(D(z)) z``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from .basis import BasisSet, pair_quadrature, sign_change_roots

__all__ = [
    "Sigma",
    "Discretized",
    "AnalyticReLU",
    "ANALYTIC",
    "IATLayerConfig",
    "ActivationPattern",
    "DegenerateRootError",
    "pattern",
    "activation_matrix",
    "forward_analytic_relu",
    "jacobian_analytic_relu",
    "forward_discretized",
    "jacobian_discretized",
    "root_sensitivity",
]


class DegenerateRootError(ArithmeticError):
    """Root sensitivity requested at a root that is not simple."""


class Sigma(enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    @classmethod
    def parse(cls, name: "str | Sigma") -> "Sigma":
        return name if isinstance(name, Sigma) else cls(str(name).lower())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self is Sigma.RELU:
            return np.maximum(x, 0.0)
        if self is Sigma.TANH:
            return np.tanh(x)
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    def derivative(self, x: np.ndarray) -> np.ndarray:
        # ReLU'(0) := 0
        if self is Sigma.RELU:
            return (x > 0).astype(float)
        if self is Sigma.TANH:
            return 1.0 - np.tanh(x) ** 2
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return sig * (1.0 - sig)


@dataclass(frozen=True)
class Discretized:
    M: int

    def __post_init__(self) -> None:
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"mesh size must be a positive integer, got {self.M}")


@dataclass(frozen=True)
class AnalyticReLU:
    pass


ANALYTIC = AnalyticReLU()
Mode = Union[Discretized, AnalyticReLU]


@dataclass(frozen=True)
class IATLayerConfig:
    """Input basis ``p`` (size d1), output basis ``q`` (size d2), nonlinearity and mode."""

    p: BasisSet
    q: BasisSet
    sigma: Sigma = Sigma.RELU
    mode: Mode = ANALYTIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma", Sigma.parse(self.sigma))
        if isinstance(self.mode, AnalyticReLU) and self.sigma is not Sigma.RELU:
            raise ValueError("analytic evaluation is only available for ReLU")

    @property
    def analytic(self) -> bool:
        return isinstance(self.mode, AnalyticReLU)

    @property
    def d_in(self) -> int:
        return self.p.d

    @property
    def d_out(self) -> int:
        return self.q.d

    def grids(self) -> tuple[np.ndarray, np.ndarray]:
        if self.analytic:
            raise ValueError("analytic layers have no mesh")
        return self.p.eval_grid(self.mode.M), self.q.eval_grid(self.mode.M)


@dataclass(frozen=True)
class ActivationPattern:
    """Disjoint sorted open intervals where the state function is positive."""

    intervals: tuple[tuple[float, float], ...] = ()

    @property
    def measure(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def contains(self, s: float) -> bool:
        return any(lo < s < hi for lo, hi in self.intervals)


def pattern(p: BasisSet, z) -> ActivationPattern:
    z = np.asarray(z, dtype=float)
    scale = np.max(np.abs(z)) if z.size else 0.0
    if scale == 0.0:
        return ActivationPattern()
    # divide by a component so exactly representable rescalings give bitwise-equal roots
    report = sign_change_roots(p, z / scale)
    bounds = report.bounds
    out = [
        (float(bounds[k]), float(bounds[k + 1]))
        for k, sg in enumerate(report.signs)
        if sg > 0 and bounds[k + 1] > bounds[k]
    ]
    return ActivationPattern(tuple(out))


def activation_matrix(p: BasisSet, q: BasisSet, pat: ActivationPattern) -> np.ndarray:
    """``d_q x d_p`` matrix ``S = int_D q(s) p(s)^T ds``."""
    nodes, weights = pair_quadrature(p, q, pat.intervals)
    if nodes.size == 0:
        return np.zeros((q.d, p.d))
    return (q.eval(nodes) * weights) @ p.eval(nodes).T


def _require_analytic(cfg: IATLayerConfig) -> None:
    if cfg.sigma is not Sigma.RELU:
        raise ValueError("analytic IAT requires sigma = ReLU")


def forward_analytic_relu(cfg: IATLayerConfig, z) -> np.ndarray:
    _require_analytic(cfg)
    z = np.asarray(z, dtype=float)
    return activation_matrix(cfg.p, cfg.q, pattern(cfg.p, z)) @ z


def jacobian_analytic_relu(cfg: IATLayerConfig, z) -> np.ndarray:
    # boundary terms vanish: f(r_k) = 0 at roots, dr_k/dz = 0 at breakpoints
    _require_analytic(cfg)
    return activation_matrix(cfg.p, cfg.q, pattern(cfg.p, z))


def _mesh(cfg: IATLayerConfig, M: int | None) -> int:
    if M is not None:
        return int(M)
    if isinstance(cfg.mode, Discretized):
        return cfg.mode.M
    raise ValueError("discretized evaluation needs a mesh size")


def forward_discretized(cfg: IATLayerConfig, z, M: int | None = None) -> np.ndarray:
    M = _mesh(cfg, M)
    P, Q = cfg.p.eval_grid(M), cfg.q.eval_grid(M)
    return (2.0 / M) * (Q @ cfg.sigma(P.T @ np.asarray(z, dtype=float)))


def jacobian_discretized(cfg: IATLayerConfig, z, M: int | None = None) -> np.ndarray:
    M = _mesh(cfg, M)
    P, Q = cfg.p.eval_grid(M), cfg.q.eval_grid(M)
    dsig = cfg.sigma.derivative(P.T @ np.asarray(z, dtype=float))
    return (2.0 / M) * (Q * dsig) @ P.T


def root_sensitivity(p: BasisSet, z, r: float) -> np.ndarray:
    """Gradient of a simple root ``r`` of ``z @ p`` with respect to ``z``.

    Roots of discontinuous families sit on fixed breakpoints and do not move,
    so their sensitivity is zero.
    """
    z = np.asarray(z, dtype=float)
    if not p.family.continuous:
        return np.zeros(p.d)
    pr = p.eval(r)
    value = float(z @ pr)
    if abs(value) > 1e-8 * max(1.0, float(np.sum(np.abs(z)))):
        raise ValueError(f"{r} is not a root of the state function (value {value:.3e})")
    slope = float(z @ p.eval_derivative(r))
    if abs(slope) <= 1e-12:
        raise DegenerateRootError(f"root at {r} is not simple (slope {slope:.3e})")
    return -pr / slope


def state_margin(p: BasisSet, z, M: int) -> float:
    """Smallest |z @ p(s_m)| over the M midpoints (degeneracy screen).

    Midpoints where every basis function vanishes are skipped: the state is
    zero there for all z, so no perturbation can flip them.
    """
    P = live_columns(p.eval_grid(M))
    return float(np.min(np.abs(np.asarray(z, dtype=float) @ P), initial=np.inf))


def live_columns(P: np.ndarray) -> np.ndarray:
    return P[:, np.max(np.abs(P), axis=0) > 1e-12]
