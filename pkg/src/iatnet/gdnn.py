"""Generalised DNN with finite-rank kernels and its IAT-network twin.

Hidden states are functions on [-1, 1]. Kernels are ``p_out(s2)^T W q_in(s1)``,
so after midpoint discretisation every kernel is the rank-limited matrix
``P_out^T W Q_in`` and the whole model factors into an ordinary network with
IAT activation layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSet
from .iat import ANALYTIC, Discretized, IATLayerConfig, Mode, Sigma
from .net import (
    Affine,
    IATActivation,
    Network,
    ShapeError,
    TrainConfig,
    init_network,
    train,
)


@dataclass(frozen=True)
class GDNNParams:
    """Weights ``W[k]`` (d_{k+1} x d_k), biases ``b[k]`` and one (p, q) basis pair per hidden layer.

    Two hidden layers give the usual three-matrix model; any count >= 1 works.
    """

    W: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    bases: tuple[tuple[BasisSet, BasisSet], ...]
    sigma: Sigma = Sigma.RELU

    def __post_init__(self) -> None:
        W = tuple(np.asarray(w, dtype=float) for w in self.W)
        b = tuple(np.asarray(v, dtype=float).ravel() for v in self.b)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", Sigma.parse(self.sigma))
        if len(W) != len(b) or len(W) != len(self.bases) + 1:
            raise ShapeError("need one more weight matrix than basis pairs, and one bias per matrix")
        for k, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or v.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {v.shape} disagree")
            if k and W[k - 1].shape[0] != w.shape[1]:
                raise ShapeError(f"layer {k} input {w.shape[1]} != layer {k-1} output {W[k-1].shape[0]}")
        for k, (p, q) in enumerate(self.bases):
            width = W[k].shape[0]
            if p.d != width or q.d != width:
                raise ShapeError(f"hidden layer {k} has width {width}, bases have sizes {p.d}, {q.d}")

    @property
    def dims(self) -> list[int]:
        return [self.W[0].shape[1]] + [w.shape[0] for w in self.W]

    @classmethod
    def random(cls, dims: Sequence[int], bases, seed: int, sigma="relu") -> "GDNNParams":
        from .net import stream

        Ws, bs = [], []
        for k in range(len(dims) - 1):
            g = stream(seed, f"gdnn/{k}")
            Ws.append(g.uniform(-1, 1, size=(dims[k + 1], dims[k])) / np.sqrt(dims[k]))
            bs.append(g.uniform(-0.5, 0.5, size=dims[k + 1]))
        return cls(tuple(Ws), tuple(bs), tuple(bases), Sigma.parse(sigma))

    @classmethod
    def zeros(cls, dims: Sequence[int], bases, sigma="relu") -> "GDNNParams":
        Ws = tuple(np.zeros((dims[k + 1], dims[k])) for k in range(len(dims) - 1))
        bs = tuple(np.zeros(dims[k + 1]) for k in range(len(dims) - 1))
        return cls(Ws, bs, tuple(bases), Sigma.parse(sigma))

    @classmethod
    def from_network(cls, net: Network) -> "GDNNParams":
        """Pull weights out of an Affine / IAT alternating network."""
        Ws, bs, bases, sigma = [], [], [], Sigma.RELU
        for layer in net.layers:
            if isinstance(layer, Affine):
                Ws.append(layer.params["W"].copy())
                bs.append(layer.params["b"].copy())
            elif isinstance(layer, IATActivation):
                bases.append((layer.cfg.p, layer.cfg.q))
                sigma = layer.cfg.sigma
            else:
                raise ShapeError(f"{type(layer).__name__} has no GDNN counterpart")
        return cls(tuple(Ws), tuple(bs), tuple(bases), sigma)


def discretize_kernel(W, p_out: BasisSet, q_in: BasisSet, M: int) -> np.ndarray:
    """Midpoint matrix ``P_out^T W Q_in`` of the kernel ``p_out(s2)^T W q_in(s1)``."""
    W = np.asarray(W, dtype=float)
    if W.shape != (p_out.d, q_in.d):
        raise ShapeError(f"kernel weight must be ({p_out.d}, {q_in.d}), got {W.shape}")
    return p_out.eval_grid(M).T @ W @ q_in.eval_grid(M)


def gdnn_forward(x, params: GDNNParams, M: int) -> np.ndarray:
    """Midpoint-discretised GDNN on rows of ``x``; hidden states live on the M midpoints."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != params.dims[0]:
        raise ShapeError(f"input has {X.shape[1]} columns, model expects {params.dims[0]}")
    sig = params.sigma
    h = 2.0 / M
    p1 = params.bases[0][0].eval_grid(M)
    Z = (X @ params.W[0].T + params.b[0]) @ p1  # n x M
    for k in range(1, len(params.W) - 1):
        p_out = params.bases[k][0]
        q_in = params.bases[k - 1][1]
        K = discretize_kernel(params.W[k], p_out, q_in, M)
        Z = h * sig(Z) @ K.T + params.b[k] @ p_out.eval_grid(M)
    q_last = params.bases[-1][1].eval_grid(M)
    return h * sig(Z) @ (params.W[-1] @ q_last).T + params.b[-1]


def to_network(params: GDNNParams, mode: Mode) -> Network:
    layers = []
    for k, (w, v) in enumerate(zip(params.W, params.b)):
        layers.append(Affine(w.copy(), v.copy()))
        if k < len(params.bases):
            p, q = params.bases[k]
            layers.append(IATActivation(IATLayerConfig(p, q, params.sigma, mode)))
    return Network(layers)


def equivalence_gap(params: GDNNParams, M: int, X) -> float:
    """max over rows of |gdnn_forward - IAT network forward|_inf."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    net = to_network(params, Discretized(M))
    return float(np.max(np.abs(gdnn_forward(X, params, M) - net(X)), initial=0.0))


@dataclass(frozen=True)
class DecoupledParams:
    lin: GDNNParams
    pat: GDNNParams

    def __post_init__(self) -> None:
        if self.lin.dims != self.pat.dims or len(self.lin.bases) != len(self.pat.bases):
            raise ShapeError("linear and pattern parameters must share one architecture")
        for (p1, q1), (p2, q2) in zip(self.lin.bases, self.pat.bases):
            if p1 != p2 or q1 != q2:
                raise ShapeError("linear and pattern parameters must use the same bases")
        if self.lin.sigma != self.pat.sigma:
            raise ShapeError("linear and pattern parameters must share one nonlinearity")


def _same_arch(a: Network, b: Network) -> None:
    if len(a.layers) != len(b.layers):
        raise ShapeError("linear and pattern networks differ in depth")
    for la, lb in zip(a.layers, b.layers):
        if type(la) is not type(lb) or (la.d_in, la.d_out) != (lb.d_in, lb.d_out):
            raise ShapeError("linear and pattern networks differ in layer structure")
        if isinstance(la, IATActivation) and la.cfg != lb.cfg:
            raise ShapeError("linear and pattern networks use different IAT layers")


def decoupled_net_forward(X, lin: Network, pat: Network) -> np.ndarray:
    """Patterns from ``pat``, linear pieces from ``lin``."""
    _same_arch(lin, pat)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return lin.forward(X, patterns=pat.patterns(X))[0]


def decoupled_forward(x, dp: DecoupledParams, mode: Mode = ANALYTIC) -> np.ndarray:
    return decoupled_net_forward(x, to_network(dp.lin, mode), to_network(dp.pat, mode))


def refit_linear(pat: Network, dataset, cfg: TrainConfig, lin: Network | None = None) -> tuple[Network, object]:
    """Train linear parameters with the patterns of ``pat`` frozen on the training inputs.

    ``lin`` defaults to a fresh initialisation of ``pat``'s architecture
    (seeded by ``cfg.seed``).
    """
    X = dataset.inputs if hasattr(dataset, "inputs") else dataset[0]
    if lin is None:
        if pat.arch is None:
            raise ValueError("need an Arch to initialise the linear network")
        lin = init_network(pat.arch, cfg.seed)
    _same_arch(lin, pat)
    return train(lin, dataset, cfg, patterns=pat.patterns(X))


def continuity_probe(model: Callable[[np.ndarray], np.ndarray], x_start, x_end, n: int) -> float:
    """Largest jump in the first output between neighbours on an n-point segment sweep."""
    if n < 2:
        raise ValueError("continuity probe needs n >= 2")
    a = np.atleast_1d(np.asarray(x_start, dtype=float))
    b = np.atleast_1d(np.asarray(x_end, dtype=float))
    t = np.linspace(0.0, 1.0, n)[:, None]
    Y = np.asarray(model(a + t * (b - a)), dtype=float).reshape(n, -1)
    return float(np.max(np.abs(np.diff(Y[:, 0]))))
