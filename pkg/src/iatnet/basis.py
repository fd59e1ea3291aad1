"""One-dimensional basis families on [-1, 1].

Piecewise families (everything except Fourier) are stored as per-segment
quadratic coefficients in the local variable ``t = s - segment_start``.
Evaluation, derivatives, exact integrals and closed-form roots all read from
that one table, so they cannot drift apart.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisError",
    "BasisDomainError",
    "BasisSizeError",
    "BasisFamily",
    "Role",
    "BasisSet",
    "RootReport",
    "make_basis",
    "sign_change_roots",
    "pair_integral",
    "quadrature_rule",
]

GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)

# bisection stops once every bracket is narrower than this
ROOT_XTOL = 1e-13
ROOT_MERGE = 1e-12


class BasisError(ValueError):
    """Invalid basis construction or argument."""


class BasisDomainError(BasisError):
    """Evaluation point outside [-1, 1]."""


class BasisSizeError(BasisError):
    """Collection size too small for the requested family."""


class BasisFamily(enum.Enum):
    RECT = "rect"
    PWL = "pwl"
    PWQ = "pwq"
    FOURIER = "fourier"
    PWL_WAVELET = "pwl-w"
    RECT_WAVELET = "rect-w"

    @classmethod
    def parse(cls, name: "str | BasisFamily") -> "BasisFamily":
        if isinstance(name, BasisFamily):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {"pwlw": "pwl-w", "rectw": "rect-w", "pwl-wavelet": "pwl-w", "rect-wavelet": "rect-w"}
        key = aliases.get(key, key)
        for fam in cls:
            if fam.value == key:
                return fam
        raise BasisError(f"unknown basis family {name!r}; expected one of {[f.value for f in cls]}")

    @property
    def continuous(self) -> bool:
        return self not in (BasisFamily.RECT, BasisFamily.RECT_WAVELET)

    @property
    def smooth(self) -> bool:
        return self in (BasisFamily.PWQ, BasisFamily.FOURIER)

    @property
    def is_global(self) -> bool:
        return self is BasisFamily.FOURIER

    @property
    def zero_integral(self) -> bool:
        return self in (BasisFamily.FOURIER, BasisFamily.PWL_WAVELET, BasisFamily.RECT_WAVELET)

    @property
    def min_size(self) -> int:
        return 1 if self is BasisFamily.FOURIER else 2


class Role(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class RootReport:
    """Sign structure of ``f(s) = z @ p(s)`` on [-1, 1].

    ``signs[k]`` is the sign on the k-th maximal interval of
    ``[-1] + roots + [1]``; adjacent signs always differ.
    """

    roots: tuple[float, ...]
    breakpoints: tuple[float, ...]
    signs: tuple[int, ...]

    @property
    def bounds(self) -> np.ndarray:
        return np.concatenate(([-1.0], np.asarray(self.roots, dtype=float), [1.0]))


def _check_domain(s: np.ndarray) -> None:
    if s.size and not np.all((s >= -1.0) & (s <= 1.0)):
        bad = s[~((s >= -1.0) & (s <= 1.0))]
        raise BasisDomainError(f"basis evaluated outside [-1, 1]: {bad[:4]}")


def _trig_pi(x: np.ndarray, use_sin: np.ndarray) -> np.ndarray:
    """sin(pi x) or cos(pi x), exact at half-integer arguments."""
    xr = np.fmod(x, 2.0)
    out = np.where(use_sin, np.sin(np.pi * xr), np.cos(np.pi * xr))
    twice = 2.0 * xr
    exact = twice == np.round(twice)
    if np.any(exact):
        m = np.mod(np.round(twice[exact]).astype(np.int64), 4)
        sin_tab = np.array([0.0, 1.0, 0.0, -1.0])
        cos_tab = np.array([1.0, 0.0, -1.0, 0.0])
        out[exact] = np.where(use_sin[exact], sin_tab[m], cos_tab[m])
    return out


@dataclass(frozen=True)
class BasisSet:
    """A collection of ``d`` basis functions from one family.

    Immutable and hashable; cached grids are keyed on ``(family, d, role)``.
    """

    family: BasisFamily
    d: int
    role: Role = Role.INPUT
    _edges: np.ndarray = field(init=False, repr=False, compare=False)
    _coef: np.ndarray = field(init=False, repr=False, compare=False)
    _freq: np.ndarray = field(init=False, repr=False, compare=False)
    _is_sin: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        fam = BasisFamily.parse(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "role", Role(self.role))
        if int(self.d) != self.d or self.d < fam.min_size:
            raise BasisSizeError(f"{fam.value} needs d >= {fam.min_size}, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if fam is BasisFamily.FOURIER:
            k = np.arange(self.d) // 2 + 1
            is_sin = (np.arange(self.d) % 2) == 0
            edges = np.array([-1.0, 1.0])
            coef = np.zeros((0, self.d, 3))
        else:
            k = np.zeros(0)
            is_sin = np.zeros(0, dtype=bool)
            edges, coef = _piecewise_table(fam, self.d, self.amplitude)
        for name, arr in (("_edges", edges), ("_coef", coef), ("_freq", k), ("_is_sin", is_sin)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- descriptors -------------------------------------------------------

    @property
    def amplitude(self) -> float:
        if self.role is Role.OUTPUT and self.family in (BasisFamily.RECT, BasisFamily.RECT_WAVELET):
            return self.d / 2.0
        return 1.0

    @property
    def k_max(self) -> int:
        return int(math.ceil(self.d / 2)) if self.family is BasisFamily.FOURIER else 0

    @property
    def knots(self) -> np.ndarray:
        """Interior breakpoints in (-1, 1); empty for Fourier."""
        return self._edges[1:-1]

    @property
    def max_piece(self) -> float:
        """Largest quadrature piece length that keeps 8-point Gauss-Legendre at 1e-12."""
        if self.k_max:
            return min(0.25, 1.0 / (2 * self.k_max))
        return 0.25

    # -- evaluation --------------------------------------------------------

    def _locate(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nseg = self._edges.size - 1
        j = np.clip(np.searchsorted(self._edges, s, side="right") - 1, 0, nseg - 1)
        return j, s - self._edges[j]

    def eval(self, s):
        """Basis values; shape ``(d,)`` for scalar ``s``, ``(d, n)`` for arrays."""
        arr = np.asarray(s, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        _check_domain(flat)
        if self.family is BasisFamily.FOURIER:
            x = np.outer(self._freq, flat)
            out = _trig_pi(x, np.broadcast_to(self._is_sin[:, None], x.shape))
        else:
            j, t = self._locate(flat)
            c = self._coef[j]
            out = (c[..., 0] + t[:, None] * (c[..., 1] + t[:, None] * c[..., 2])).T
        return out[:, 0] if arr.ndim == 0 else out.reshape((self.d,) + arr.shape)

    def eval_derivative(self, s):
        """Derivatives ``p'(s)``; right-sided at breakpoints, left-sided at s = 1."""
        arr = np.asarray(s, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        _check_domain(flat)
        if self.family is BasisFamily.FOURIER:
            x = np.outer(self._freq, flat)
            trig = _trig_pi(x, np.broadcast_to(~self._is_sin[:, None], x.shape))
            sign = np.where(self._is_sin, 1.0, -1.0)[:, None]
            out = sign * np.pi * self._freq[:, None] * trig
        else:
            j, t = self._locate(flat)
            c = self._coef[j]
            out = (c[..., 1] + 2.0 * t[:, None] * c[..., 2]).T
        return out[:, 0] if arr.ndim == 0 else out.reshape((self.d,) + arr.shape)

    def eval_grid(self, M: int) -> np.ndarray:
        """``d x M`` matrix of values at the midpoints ``-1 + (2m - 1)/M``."""
        return _grid(self, int(M))

    def integrals(self) -> np.ndarray:
        """Exact integrals over [-1, 1], one per basis function."""
        if self.family is BasisFamily.FOURIER:
            return np.zeros(self.d)
        L = np.diff(self._edges)[:, None]
        c = self._coef
        return np.sum(c[..., 0] * L + c[..., 1] * L**2 / 2 + c[..., 2] * L**3 / 3, axis=0)

    def state(self, z, s):
        """State function ``z @ p(s)``."""
        return np.asarray(z, dtype=float) @ self.eval(s)

    def segment_coefficients(self, z) -> np.ndarray:
        """Per-segment quadratic coefficients of ``z @ p``; shape (nseg, 3)."""
        if self.family is BasisFamily.FOURIER:
            raise BasisError("Fourier family has no piecewise representation")
        return np.einsum("jdk,d->jk", self._coef, np.asarray(z, dtype=float))


@functools.lru_cache(maxsize=256)
def _grid(basis: BasisSet, M: int) -> np.ndarray:
    if M < 1:
        raise BasisError(f"mesh size must be positive, got {M}")
    mids = -1.0 + (2.0 * np.arange(1, M + 1) - 1.0) / M
    out = np.ascontiguousarray(basis.eval(mids))
    out.setflags(write=False)
    return out


def _uniform_edges(n: int) -> np.ndarray:
    edges = -1.0 + 2.0 * np.arange(n + 1) / n
    edges[-1] = 1.0
    return edges


def _piecewise_table(fam: BasisFamily, d: int, amp: float) -> tuple[np.ndarray, np.ndarray]:
    if fam is BasisFamily.RECT:
        edges = _uniform_edges(d)
        coef = np.zeros((d, d, 3))
        coef[np.arange(d), np.arange(d), 0] = amp
    elif fam is BasisFamily.RECT_WAVELET:
        edges = _uniform_edges(2 * d)
        coef = np.zeros((2 * d, d, 3))
        j = np.arange(2 * d)
        coef[j, j // 2, 0] = np.where(j % 2 == 0, amp, -amp)
    elif fam is BasisFamily.PWL:
        h = 2.0 / (d - 1)
        edges = _uniform_edges(d - 1)
        coef = np.zeros((d - 1, d, 3))
        j = np.arange(d - 1)
        coef[j, j, 0] = 1.0
        coef[j, j, 1] = -1.0 / h
        coef[j, j + 1, 1] = 1.0 / h
    elif fam is BasisFamily.PWL_WAVELET:
        quarter = 1.0 / (2 * d)
        edges = _uniform_edges(4 * d)
        coef = np.zeros((4 * d, d, 3))
        j = np.arange(4 * d)
        r = j % 4
        coef[j, j // 4, 0] = np.array([0.0, 1.0, 0.0, -1.0])[r]
        coef[j, j // 4, 1] = np.array([1.0, -1.0, -1.0, 1.0])[r] / quarter
    elif fam is BasisFamily.PWQ:
        edges, coef = _pwq_table(d)
    else:  # pragma: no cover
        raise BasisError(f"no piecewise table for {fam}")
    return edges, coef


# uniform quadratic B-spline pieces alpha + beta u + gamma u^2 on u in [0,1], [1,2], [2,3]
_BSPLINE2 = np.array([[0.0, 0.0, 0.5], [-1.5, 3.0, -1.0], [4.5, -3.0, 0.5]])


def _pwq_table(d: int) -> tuple[np.ndarray, np.ndarray]:
    h = 2.0 / (d - 1)
    inner = -1.0 + (np.arange(d - 1) + 0.5) * h
    edges = np.concatenate(([-1.0], inner, [1.0]))
    nseg = edges.size - 1
    coef = np.zeros((nseg, d, 3))
    scale = 4.0 / 3.0  # peak of the quadratic B-spline is 3/4
    for j in range(nseg):
        lo, hi = edges[j], edges[j + 1]
        for i in range(d):
            start = (-1.0 + i * h) - 1.5 * h
            umid = (0.5 * (lo + hi) - start) / h
            piece = int(math.floor(umid))
            if not 0 <= piece <= 2:
                continue
            a, b, g = _BSPLINE2[piece] * scale
            u0 = (lo - start) / h
            coef[j, i] = (a + b * u0 + g * u0 * u0, (b + 2.0 * g * u0) / h, g / (h * h))
    return edges, coef


def make_basis(family: "str | BasisFamily", d: int, role: "str | Role" = Role.INPUT) -> BasisSet:
    return BasisSet(BasisFamily.parse(family), d, Role(role))


# ---------------------------------------------------------------------------
# roots


def _quadratic_roots(F: np.ndarray, L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Roots of c0 + c1 t + c2 t^2 inside [0, L] per row; returns (segment, t)."""
    c0, c1, c2 = F[:, 0], F[:, 1], F[:, 2]
    segs, ts = [], []
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = (c2 == 0.0) & (c1 != 0.0)
        idx = np.nonzero(lin)[0]
        segs.append(idx)
        ts.append(-c0[idx] / c1[idx])
        disc = c1 * c1 - 4.0 * c2 * c0
        quad = (c2 != 0.0) & (disc >= 0.0)
        idx = np.nonzero(quad)[0]
        sq = np.sqrt(disc[idx])
        qq = -0.5 * (c1[idx] + np.copysign(sq, c1[idx]))
        segs += [idx, idx]
        ts += [qq / c2[idx], c0[idx] / qq]
    seg = np.concatenate(segs)
    t = np.concatenate(ts)
    slack = 1e-14 * L[seg] + 1e-300
    keep = np.isfinite(t) & (t >= -slack) & (t <= L[seg] + slack)
    seg, t = seg[keep], np.clip(t[keep], 0.0, L[seg[keep]])
    return seg, t


def _bisect(fun, a: np.ndarray, b: np.ndarray, fa: np.ndarray, xtol: float = ROOT_XTOL):
    """Vectorised bisection on brackets with sign(f(a)) != sign(f(b))."""
    a, b, fa = a.copy(), b.copy(), fa.copy()
    while a.size and np.max(b - a) > xtol:
        m = 0.5 * (a + b)
        fm = fun(m)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
        hit = fm == 0.0
        a[hit] = b[hit] = m[hit]
    return a, b


def _fourier_candidates(basis: BasisSet, z: np.ndarray) -> np.ndarray:
    n = max(256, 32 * basis.k_max)
    s = np.linspace(-1.0, 1.0, n)

    # plain trig sums: exactness at half-integers is irrelevant for bracketing
    amp = basis.amplitude
    ks, zs = np.pi * basis._freq[basis._is_sin], amp * z[basis._is_sin]
    kc, zc = np.pi * basis._freq[~basis._is_sin], amp * z[~basis._is_sin]

    def f(x):
        return np.sin(np.outer(x, ks)) @ zs + np.cos(np.outer(x, kc)) @ zc

    def fp(x):
        return np.cos(np.outer(x, ks)) @ (ks * zs) - np.sin(np.outer(x, kc)) @ (kc * zc)

    fv = f(s)
    sg = np.sign(fv)
    found = [s[1:-1][fv[1:-1] == 0.0]]

    lo = np.nonzero(sg[:-1] * sg[1:] < 0)[0]
    brackets_a, brackets_b, brackets_fa = [s[lo]], [s[lo + 1]], [fv[lo]]

    # same-sign cells can hide a pair of roots around an interior extremum
    # |f| <= max|f''| h^2 at the ends of a cell holding two roots
    h = s[1] - s[0]
    curv = float(np.sum(ks**2 * np.abs(zs)) + np.sum(kc**2 * np.abs(zc)))
    small = np.minimum(np.abs(fv[:-1]), np.abs(fv[1:])) <= curv * h * h
    same = np.nonzero((sg[:-1] == sg[1:]) & (sg[:-1] != 0) & small)[0]
    if same.size:
        dv = fp(s)
        cells = same[np.sign(dv[same]) * np.sign(dv[same + 1]) < 0]
        if cells.size:
            ca, cb = _bisect(fp, s[cells], s[cells + 1], dv[cells])
            c = 0.5 * (ca + cb)
            fc = f(c)
            flip = (np.sign(fc) != sg[cells]) & (fc != 0.0)
            cells, c, fc = cells[flip], c[flip], fc[flip]
            brackets_a += [s[cells], c]
            brackets_b += [c, s[cells + 1]]
            brackets_fa += [fv[cells], fc]

    a = np.concatenate(brackets_a)
    b = np.concatenate(brackets_b)
    fa = np.concatenate(brackets_fa)
    if a.size:
        # coarse bracket, then Newton steps that must stay inside it and not increase |f|
        a, b = _bisect(f, a, b, fa, xtol=1e-7)
        r = 0.5 * (a + b)
        fr = f(r)
        for _ in range(3):
            with np.errstate(divide="ignore", invalid="ignore"):
                step = r - fr / fp(r)
            ok = np.isfinite(step) & (step >= a) & (step <= b)
            step = np.where(ok, step, r)
            fs = f(step)
            ok &= np.abs(fs) <= np.abs(fr)
            r, fr = np.where(ok, step, r), np.where(ok, fs, fr)
        found.append(r)
    return np.concatenate(found)


def sign_change_roots(basis: BasisSet, z) -> RootReport:
    """Locate every sign change of ``z @ p(s)`` in (-1, 1).

    Piecewise families are solved per segment in closed form, Rect families
    change sign only at their fixed breakpoints, and Fourier combinations are
    scanned, bracketed, bisected and Newton-polished. Tangential zeros are
    dropped because they do not change the sign.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.d,):
        raise BasisError(f"coefficient vector must have shape ({basis.d},), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise BasisError("coefficient vector must be finite")
    if not np.any(z):
        return RootReport((), (), (0,))

    knots = basis.knots
    if basis.family is BasisFamily.FOURIER:
        cand = _fourier_candidates(basis, z)
    elif not basis.family.continuous:
        cand = knots
    else:
        F = basis.segment_coefficients(z)
        L = np.diff(basis._edges)
        seg, t = _quadratic_roots(F, L)
        roots = basis._edges[seg] + t
        if roots.size and knots.size:
            near = np.min(np.abs(knots[:, None] - roots[None, :]), axis=1) <= 1e-12
            knots = knots[~near]
        cand = np.concatenate((roots, knots))

    # neighbouring segments report a shared edge root twice, a few ulps apart
    cand = np.unique(cand[(cand > -1.0 + ROOT_MERGE) & (cand < 1.0 - ROOT_MERGE)])
    if cand.size > 1:
        cand = cand[np.concatenate(([True], np.diff(cand) > ROOT_MERGE))]
    bounds = np.concatenate(([-1.0], cand, [1.0]))
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    signs = np.sign(basis.state(z, mids)).astype(int)
    change = np.nonzero(signs[:-1] != signs[1:])[0]
    roots = tuple(float(r) for r in cand[change])
    kept = np.concatenate(([0], change + 1))
    breakpoints = roots if not basis.family.continuous else ()
    return RootReport(roots, breakpoints, tuple(int(v) for v in signs[kept]))


# ---------------------------------------------------------------------------
# quadrature


def quadrature_rule(intervals, breaks, max_len: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite 8-point Gauss-Legendre nodes/weights over a union of intervals.

    Each interval is split at ``breaks`` and then into pieces no longer than
    ``max_len``.
    """
    pieces_lo, pieces_hi = [], []
    breaks = np.asarray(breaks, dtype=float)
    for lo, hi in intervals:
        if hi <= lo:
            continue
        inner = breaks[(breaks > lo) & (breaks < hi)]
        pts = np.concatenate(([lo], inner, [hi]))
        pieces_lo.append(pts[:-1])
        pieces_hi.append(pts[1:])
    if not pieces_lo:
        return np.zeros(0), np.zeros(0)
    lo = np.concatenate(pieces_lo)
    hi = np.concatenate(pieces_hi)
    count = np.maximum(1, np.ceil((hi - lo) / max_len - 1e-12)).astype(int)
    rep = np.repeat(np.arange(lo.size), count)
    k = np.arange(rep.size) - np.repeat(np.cumsum(count) - count, count)
    width = (hi - lo)[rep] / count[rep]
    a = lo[rep] + k * width
    half = 0.5 * width
    nodes = (a + half)[:, None] + half[:, None] * _GL_X[None, :]
    weights = half[:, None] * _GL_W[None, :]
    return nodes.ravel(), weights.ravel()


def pair_quadrature(p: BasisSet, q: BasisSet, intervals) -> tuple[np.ndarray, np.ndarray]:
    breaks = np.union1d(p.knots, q.knots)
    return quadrature_rule(intervals, breaks, min(p.max_piece, q.max_piece))


def pair_integral(p: BasisSet, q: BasisSet, a: float, b: float) -> np.ndarray:
    """``d_q x d_p`` matrix of integrals of ``q_i(s) p_j(s)`` over [a, b]."""
    if a > b:
        raise BasisError(f"interval is reversed: a={a} > b={b}")
    _check_domain(np.array([a, b], dtype=float))
    nodes, weights = pair_quadrature(p, q, [(a, b)])
    if nodes.size == 0:
        return np.zeros((q.d, p.d))
    return (q.eval(nodes) * weights) @ p.eval(nodes).T
