"""Dense training stack with hand-written backward passes.

Layers cache what their backward pass needs; a :class:`Network` strings the
caches together into a :class:`Tape`. Activation layers that are linear once
their on/off pattern is fixed (scalar ReLU, IAT-ReLU in either mode) expose
``pattern_of`` / ``apply_pattern`` so the pattern can be computed from one
set of parameters and applied with another.
"""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .basis import make_basis
from .iat import (
    ANALYTIC,
    ActivationPattern,
    Discretized,
    IATLayerConfig,
    Sigma,
    activation_matrix,
    live_columns,
    pattern,
)

log = logging.getLogger(__name__)

CKPT_HEADER = "iatnet-ckpt v1"


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_finite_loss: float):
        super().__init__(
            f"loss became non-finite at epoch {epoch}; last finite loss {last_finite_loss:.6e}"
        )
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


def stream(seed: int, tag: str) -> np.random.Generator:
    """Philox generator keyed by ``(seed, tag)``; distinct tags give independent streams."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode())], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_2d(X: np.ndarray, cols: int, what: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cols:
        raise ShapeError(f"{what}: expected (n, {cols}), got {X.shape}")
    return X


# ---------------------------------------------------------------------------
# layers


class Layer:
    d_in: int
    d_out: int
    params: dict[str, np.ndarray]

    def forward(self, X: np.ndarray, training: bool = False, pattern=None):
        raise NotImplementedError

    def backward(self, cache, dY: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotImplementedError

    @property
    def has_pattern(self) -> bool:
        return False


class Affine(Layer):
    def __init__(self, W: np.ndarray, b: np.ndarray):
        W = np.array(W, dtype=float)
        b = np.array(b, dtype=float).ravel()
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError(f"affine weight {W.shape} and bias {b.shape} disagree")
        self.params = {"W": W, "b": b}
        self.d_out, self.d_in = W.shape

    def forward(self, X, training=False, pattern=None):
        X = _check_2d(X, self.d_in, "affine input")
        return X @ self.params["W"].T + self.params["b"], X

    def backward(self, cache, dY):
        X = cache
        return dY @ self.params["W"], {"W": dY.T @ X, "b": dY.sum(axis=0)}


class ScalarActivation(Layer):
    def __init__(self, kind: "str | Sigma", dim: int):
        self.sigma = Sigma.parse(kind)
        self.d_in = self.d_out = int(dim)
        self.params = {}

    @property
    def has_pattern(self) -> bool:
        return self.sigma is Sigma.RELU

    def pattern_of(self, Z: np.ndarray) -> np.ndarray:
        return Z > 0

    def forward(self, X, training=False, pattern=None):
        X = _check_2d(X, self.d_in, "activation input")
        if pattern is None and self.sigma is not Sigma.RELU:
            return self.sigma(X), (X, None)
        if pattern is None:
            pattern = self.pattern_of(X)
        elif not self.has_pattern:
            raise ValueError(f"{self.sigma.value} activations have no on/off pattern")
        return X * pattern, (X, pattern)

    def backward(self, cache, dY):
        X, pat = cache
        if pat is None:
            return dY * self.sigma.derivative(X), {}
        return dY * pat, {}


class IATActivation(Layer):
    """Parameter-free IAT layer; analytic mode loops over samples."""

    def __init__(self, cfg: IATLayerConfig):
        self.cfg = cfg
        self.d_in, self.d_out = cfg.d_in, cfg.d_out
        self.params = {}

    @property
    def has_pattern(self) -> bool:
        return self.cfg.sigma is Sigma.RELU

    def interval_patterns(self, Z: np.ndarray) -> list[ActivationPattern]:
        return [pattern(self.cfg.p, z) for z in Z]

    def pattern_of(self, Z: np.ndarray) -> np.ndarray:
        """Per-sample activation matrices (analytic) or midpoint masks (discretized)."""
        if self.cfg.analytic:
            if Z.shape[0] == 0:
                return np.zeros((0, self.d_out, self.d_in))
            return np.stack([activation_matrix(self.cfg.p, self.cfg.q, pat) for pat in self.interval_patterns(Z)])
        P, _ = self.cfg.grids()
        return (Z @ P) > 0

    def forward(self, X, training=False, pattern=None):
        X = _check_2d(X, self.d_in, "IAT input")
        cfg = self.cfg
        if pattern is None and not self.has_pattern:
            P, Q = cfg.grids()
            A = X @ P
            return (2.0 / cfg.mode.M) * (cfg.sigma(A) @ Q.T), (X, A, None)
        if pattern is not None and not self.has_pattern:
            raise ValueError("only ReLU IAT layers have an activation pattern")
        if cfg.analytic:
            if pattern is None:
                pattern = self.pattern_of(X)
            return np.einsum("nij,nj->ni", pattern, X), (X, None, pattern)
        P, Q = cfg.grids()
        A = X @ P
        if pattern is None:
            pattern = A > 0
        A *= pattern
        return (2.0 / cfg.mode.M) * (A @ Q.T), (X, None, pattern)

    def backward(self, cache, dY):
        X, A, pat = cache
        cfg = self.cfg
        if cfg.analytic:
            return np.einsum("nij,ni->nj", pat, dY), {}
        P, Q = cfg.grids()
        G = dY @ Q
        G *= cfg.sigma.derivative(A) if pat is None else pat
        return (2.0 / cfg.mode.M) * (G @ P.T), {}


class Standardize(Layer):
    """Batch standardisation; batch statistics in training, running ones otherwise."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.d_in = self.d_out = int(dim)
        self.params = {"scale": np.ones(dim), "shift": np.zeros(dim)}
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, X, training=False, pattern=None):
        X = _check_2d(X, self.d_in, "standardize input")
        if training:
            mu, var = X.mean(axis=0), X.var(axis=0)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (X - mu) * inv
        return self.params["scale"] * xhat + self.params["shift"], (xhat, inv, training, mu, var)

    def backward(self, cache, dY):
        xhat, inv, training, _, _ = cache
        grads = {"scale": np.sum(dY * xhat, axis=0), "shift": dY.sum(axis=0)}
        g = dY * self.params["scale"]
        if not training:
            return g * inv, grads
        n = dY.shape[0]
        dX = inv / n * (n * g - g.sum(axis=0) - xhat * np.sum(g * xhat, axis=0))
        return dX, grads

    def update_running(self, cache) -> None:
        _, _, training, mu, var = cache
        if training:
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor.

    ``depth`` counts affine layers; an activation (plus optional
    standardisation) sits between consecutive affine layers.
    """

    d_in: int
    d_out: int
    width: int
    depth: int = 3
    activation: str = "iat"
    basis_in: str = "fourier"
    basis_out: str = "pwq"
    sigma: str = "relu"
    mode: str = "disc"
    M: int = 500
    standardize: bool = False

    def __post_init__(self) -> None:
        for name in ("d_in", "d_out", "width", "depth"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.activation not in ("iat", "relu", "tanh", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "iat":
            if self.mode not in ("disc", "analytic"):
                raise ConfigError(f"unknown IAT mode {self.mode!r}")
            if self.mode == "analytic" and self.sigma != "relu":
                raise ConfigError("analytic mode requires sigma = relu")
            if self.mode == "disc" and int(self.M) < 1:
                raise ConfigError("discretized mode needs M >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Arch":
        return cls(**json.loads(text))

    def iat_config(self) -> IATLayerConfig:
        mode = ANALYTIC if self.mode == "analytic" else Discretized(int(self.M))
        return IATLayerConfig(
            make_basis(self.basis_in, self.width, "input"),
            make_basis(self.basis_out, self.width, "output"),
            Sigma.parse(self.sigma),
            mode,
        )

    @property
    def label(self) -> str:
        if self.activation != "iat":
            return self.activation
        m = "analytic" if self.mode == "analytic" else f"M={self.M}"
        return f"{self.basis_in}/{self.basis_out} {m}"


@dataclass
class Tape:
    owner: int
    version: int
    caches: list
    n: int


class Network:
    def __init__(self, layers: list[Layer], arch: Arch | None = None):
        for a, b in zip(layers, layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer output {a.d_out} does not feed layer input {b.d_in}")
        self.layers = list(layers)
        self.arch = arch
        self.version = 0

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def parameters(self) -> list[tuple[int, str, np.ndarray]]:
        return [(i, k, v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def touch(self) -> None:
        """Mark parameters as modified; outstanding tapes become stale."""
        self.version += 1

    def forward(self, X, training: bool = False, patterns: dict[int, Any] | None = None):
        X = _check_2d(X, self.d_in, "network input")
        caches = []
        H = X
        for i, layer in enumerate(self.layers):
            pat = None if patterns is None else patterns.get(i)
            H, cache = layer.forward(H, training=training, pattern=pat)
            caches.append(cache)
        return H, Tape(id(self), self.version, caches, X.shape[0])

    def __call__(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, tape: Tape, dY) -> list[dict[str, np.ndarray]]:
        if tape.owner != id(self) or tape.version != self.version:
            raise StaleTapeError("tape does not match the current network parameters")
        dY = _check_2d(dY, self.d_out, "output gradient")
        if dY.shape[0] != tape.n:
            raise ShapeError(f"gradient has {dY.shape[0]} rows, tape has {tape.n}")
        grads: list[dict[str, np.ndarray]] = [{} for _ in self.layers]
        for i in range(len(self.layers) - 1, -1, -1):
            dY, grads[i] = self.layers[i].backward(tape.caches[i], dY)
        return grads

    def patterns(self, X) -> dict[int, Any]:
        """Pattern data of every pattern-capable activation layer at inputs ``X``."""
        X = _check_2d(X, self.d_in, "network input")
        out = {}
        H = X
        for i, layer in enumerate(self.layers):
            if layer.has_pattern:
                out[i] = layer.pattern_of(H)
                H, _ = layer.forward(H, pattern=out[i])
            else:
                H, _ = layer.forward(H)
        return out

    def update_running_stats(self, tape: Tape) -> None:
        for layer, cache in zip(self.layers, tape.caches):
            if isinstance(layer, Standardize):
                layer.update_running(cache)

    def copy(self) -> "Network":
        import copy

        return copy.deepcopy(self)

    def iat_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, IATActivation)]


def init_network(arch: Arch, seed: int) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    Each affine layer draws from its own stream, so swapping activation kinds
    leaves the weights untouched.
    """
    dims = [arch.d_in] + [arch.width] * (arch.depth - 1) + [arch.d_out]
    layers: list[Layer] = []
    iat_cfg = arch.iat_config() if arch.activation == "iat" and arch.depth > 1 else None
    for k in range(arch.depth):
        fan_in, fan_out = dims[k], dims[k + 1]
        bound = 1.0 / np.sqrt(fan_in)
        W = stream(seed, f"init/affine/{k}").uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Affine(W, np.zeros(fan_out)))
        if k == arch.depth - 1:
            break
        if iat_cfg is not None:
            layers.append(IATActivation(iat_cfg))
        else:
            layers.append(ScalarActivation(arch.activation, fan_out))
        if arch.standardize:
            layers.append(Standardize(fan_out))
    return Network(layers, arch)


# ---------------------------------------------------------------------------
# losses and optimisers


def mse_loss(Y, T) -> float:
    Y, T = np.asarray(Y, dtype=float), np.asarray(T, dtype=float)
    if Y.shape != T.shape:
        raise ShapeError(f"prediction {Y.shape} and target {T.shape} differ")
    return float(np.mean((Y - T) ** 2))


def mse_grad(Y, T) -> np.ndarray:
    Y, T = np.asarray(Y, dtype=float), np.asarray(T, dtype=float)
    if Y.shape != T.shape:
        raise ShapeError(f"prediction {Y.shape} and target {T.shape} differ")
    return 2.0 * (Y - T) / Y.size


def accuracy_sign(Y, T) -> float:
    """Fraction of rows whose signs all agree; sign(0) counts as +1."""
    Y, T = np.asarray(Y, dtype=float), np.asarray(T, dtype=float)
    if Y.shape != T.shape:
        raise ShapeError(f"prediction {Y.shape} and target {T.shape} differ")
    Y = Y.reshape(Y.shape[0], -1)
    T = T.reshape(T.shape[0], -1)
    return float(np.mean(np.all((Y >= 0) == (T >= 0), axis=1)))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient lists differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float):
    for p, g in zip(params, grads):
        p -= lr * g
    return params


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 3000
    batch_size: int | None = None
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.loss != "mse":
            raise ConfigError("only the mse loss is supported")


@dataclass
class TrainReport:
    loss_curve: list[float]
    final_loss: float
    final_accuracy: float | None
    wall_time: float
    seed: int
    extra: dict = field(default_factory=dict)


def _unpack(dataset) -> tuple[np.ndarray, np.ndarray, bool]:
    if isinstance(dataset, tuple):
        X, T = dataset
        return np.asarray(X, float), np.asarray(T, float), False
    return dataset.inputs, dataset.targets, bool(getattr(dataset, "is_classification", False))


def compute_loss_and_grads(net: Network, X, T, training: bool = False, patterns=None):
    Y, tape = net.forward(X, training=training, patterns=patterns)
    loss = mse_loss(Y, T)
    return loss, net.backward(tape, mse_grad(Y, T)), tape


def train(net: Network, dataset, cfg: TrainConfig, patterns: dict[int, Any] | None = None):
    """Train ``net`` in place; deterministic given ``cfg.seed``.

    ``patterns`` freezes activation patterns (decoupled refit). Mini-batching
    is incompatible with frozen per-sample patterns.
    """
    X, T, classify = _unpack(dataset)
    params = [p for _, _, p in net.parameters()]
    state = AdamState.zeros_like(params)
    shuffle = stream(cfg.seed, "train/batches")
    n = X.shape[0]
    if patterns is not None and cfg.batch_size is not None:
        raise ConfigError("frozen patterns require full-batch training")
    curve: list[float] = []
    last = float("nan")
    t0 = time.perf_counter()
    for epoch in range(int(cfg.epochs)):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = shuffle.permutation(n)
            batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        epoch_loss = 0.0
        for idx in batches:
            # overflow surfaces as a non-finite loss below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, tape = compute_loss_and_grads(net, X[idx], T[idx], training=True, patterns=patterns)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, last)
            epoch_loss += loss * idx.size / n
            net.update_running_stats(tape)
            flat = [g[k] for g, layer in zip(grads, net.layers) for k in layer.params]
            if cfg.optimizer == "adam":
                adam_step(params, flat, state, cfg.lr)
            else:
                sgd_step(params, flat, cfg.lr)
            net.touch()
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, last)
        last = epoch_loss
        curve.append(epoch_loss)
    Y, _ = net.forward(X, patterns=patterns)
    final = mse_loss(Y, T)
    if not np.isfinite(final):
        raise TrainingDiverged(int(cfg.epochs), last)
    acc = accuracy_sign(Y, T) if classify else None
    return net, TrainReport(curve, final, acc, time.perf_counter() - t0, cfg.seed)


def grad_check(net: Network, X, T, h: float = 1e-6, training: bool = False) -> float:
    """Max over all parameters of ``|a - fd| / max(1, |a| + |fd|)``, central differences."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    _, grads, _ = compute_loss_and_grads(net, X, T, training=training)
    worst = 0.0
    for i, name, p in net.parameters():
        g = grads[i][name]
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = mse_loss(net.forward(X, training=training)[0], T)
            flat[k] = orig - h
            down = mse_loss(net.forward(X, training=training)[0], T)
            flat[k] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(gflat[k] - fd) / max(1.0, abs(gflat[k]) + abs(fd)))
    net.touch()
    return worst


def state_margin(net: Network, X) -> float:
    """Smallest |pre-activation| the network's patterns depend on.

    For discretized IAT layers this is the state function at the midpoints,
    for scalar ReLU and analytic Rect layers the pre-activation itself.
    Continuous analytic layers return +inf (their map is C^1).
    """
    X = _check_2d(X, net.d_in, "network input")
    H = X
    margin = np.inf
    for layer in net.layers:
        if isinstance(layer, ScalarActivation) and layer.sigma is Sigma.RELU:
            margin = min(margin, float(np.min(np.abs(H))))
        elif isinstance(layer, IATActivation) and layer.has_pattern:
            if not layer.cfg.analytic:
                P = live_columns(layer.cfg.grids()[0])
                margin = min(margin, float(np.min(np.abs(H @ P), initial=np.inf)))
            elif not layer.cfg.p.family.continuous:
                mids = 0.5 * (np.concatenate(([-1.0], layer.cfg.p.knots)) + np.concatenate((layer.cfg.p.knots, [1.0])))
                vals = np.abs(H @ layer.cfg.p.eval(mids))
                margin = min(margin, float(np.min(vals)))
        H, _ = layer.forward(H)
    return margin


# ---------------------------------------------------------------------------
# checkpoints


def _write_matrix(fh, A: np.ndarray) -> None:
    A = np.atleast_2d(A)
    fh.write(f"W {A.shape[0]} {A.shape[1]}\n")
    for row in A:
        fh.write(" ".join(format(float(v), ".17g") for v in row) + "\n")


def _checkpoint_blocks(net: Network) -> list[np.ndarray]:
    blocks = []
    for layer in net.layers:
        for name, value in layer.params.items():
            blocks.append(value if value.ndim == 2 else value[None, :])
        if isinstance(layer, Standardize):
            blocks += [layer.running_mean[None, :], layer.running_var[None, :]]
    return blocks


def save_checkpoint(net: Network, path) -> None:
    if net.arch is None:
        raise ConfigError("only networks built from an Arch can be checkpointed")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(CKPT_HEADER + "\n")
        fh.write("arch " + net.arch.to_json() + "\n")
        for block in _checkpoint_blocks(net):
            _write_matrix(fh, block)


def load_checkpoint(path) -> Network:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise ConfigError(f"{path}: not an {CKPT_HEADER!r} checkpoint")
    if not lines[1].startswith("arch "):
        raise ConfigError(f"{path}: missing architecture line")
    arch = Arch.from_json(lines[1][5:])
    net = init_network(arch, 0)
    blocks = []
    k = 2
    while k < len(lines):
        tag, rows, cols = lines[k].split()
        if tag != "W":
            raise ConfigError(f"{path}: unexpected block tag {tag!r}")
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[k + 1 + r].split()] for r in range(rows)]
        blocks.append(np.array(data, dtype=float).reshape(rows, cols))
        k += 1 + rows
    targets = []
    for layer in net.layers:
        for name in layer.params:
            targets.append((layer.params, name))
        if isinstance(layer, Standardize):
            targets += [(layer, "running_mean"), (layer, "running_var")]
    if len(blocks) != len(targets):
        raise ConfigError(f"{path}: expected {len(targets)} blocks, found {len(blocks)}")
    for (owner, name), block in zip(targets, blocks):
        if isinstance(owner, dict):
            owner[name][...] = block.reshape(owner[name].shape)
        else:
            setattr(owner, name, block.reshape(-1).copy())
    net.touch()
    return net
