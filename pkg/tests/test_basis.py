import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iatnet.basis import (
    BasisDomainError,
    BasisError,
    BasisFamily,
    BasisSizeError,
    make_basis,
    pair_integral,
    sign_change_roots,
)

FAMILIES = [f.value for f in BasisFamily]
CONTINUOUS = ["pwl", "pwq", "fourier", "pwl-w"]


# ---- construction / properties


def test_family_table():
    cont = {f.value for f in BasisFamily if f.continuous}
    smooth = {f.value for f in BasisFamily if f.smooth}
    glob = {f.value for f in BasisFamily if f.is_global}
    zero = {f.value for f in BasisFamily if f.zero_integral}
    assert cont == {"pwl", "pwq", "fourier", "pwl-w"}
    assert smooth == {"pwq", "fourier"}
    assert glob == {"fourier"}
    assert zero == {"fourier", "pwl-w", "rect-w"}


@pytest.mark.parametrize("name", ["RECT", "Pwl", "pwq", "Fourier", "PWL-W", "rect-w"])
def test_family_names_case_insensitive(name):
    assert BasisFamily.parse(name).value == name.lower()


def test_unknown_family():
    with pytest.raises(ValueError):
        BasisFamily.parse("chebyshev")


@pytest.mark.parametrize("fam", ["rect", "pwq", "pwl", "pwl-w", "rect-w"])
def test_size_too_small(fam):
    with pytest.raises(BasisSizeError):
        make_basis(fam, 1, "input")


def test_rect_amplitudes():
    assert make_basis("rect", 2, "input").amplitude == 1.0
    assert make_basis("rect", 2, "output").amplitude == 1.0
    assert make_basis("rect", 8, "output").amplitude == 4.0
    assert make_basis("rect-w", 6, "output").amplitude == 3.0
    assert make_basis("pwl", 8, "output").amplitude == 1.0


def test_fourier_members():
    b = make_basis("fourier", 4, "input")
    s = np.linspace(-1, 1, 11)
    expect = np.array([np.sin(np.pi * s), np.cos(np.pi * s), np.sin(2 * np.pi * s), np.cos(2 * np.pi * s)])
    np.testing.assert_allclose(b.eval(s), expect, atol=1e-15)


# ---- eval


def test_eval_examples():
    np.testing.assert_array_equal(make_basis("rect", 2, "input").eval(-0.5), [1.0, 0.0])
    np.testing.assert_array_equal(make_basis("pwl", 3, "input").eval(0.0), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(make_basis("fourier", 2, "input").eval(0.5), [1.0, 0.0])


def test_eval_right_continuous():
    b = make_basis("rect", 2, "input")
    np.testing.assert_array_equal(b.eval(0.0), [0.0, 1.0])
    np.testing.assert_array_equal(b.eval(1.0), [0.0, 1.0])


@pytest.mark.parametrize("s", [-1.0000001, 1.5, np.nan])
def test_eval_domain(s):
    with pytest.raises(BasisDomainError):
        make_basis("pwl", 4, "input").eval(s)


def test_eval_shapes():
    b = make_basis("pwq", 5, "input")
    assert b.eval(0.1).shape == (5,)
    assert b.eval(np.zeros(7)).shape == (5, 7)


def test_derivative_examples():
    np.testing.assert_allclose(make_basis("fourier", 2, "input").eval_derivative(0.5), [0.0, -np.pi], atol=1e-15)
    np.testing.assert_array_equal(make_basis("rect", 2, "input").eval_derivative(-0.5), [0.0, 0.0])
    np.testing.assert_array_equal(make_basis("pwl", 3, "input").eval_derivative(-0.5), [-1.0, 1.0, 0.0])


@pytest.mark.parametrize("fam", CONTINUOUS)
def test_derivative_matches_fd(fam):
    b = make_basis(fam, 7, "input")
    s = np.array([-0.83, -0.31, 0.07, 0.44, 0.91])
    h = 1e-7
    fd = (b.eval(s + h) - b.eval(s - h)) / (2 * h)
    np.testing.assert_allclose(b.eval_derivative(s), fd, atol=2e-6)


def test_pwq_is_c1_and_peaks_at_one():
    b = make_basis("pwq", 6, "input")
    knots = b.knots
    eps = 1e-9
    left = b.eval_derivative(knots - eps)
    right = b.eval_derivative(knots + eps)
    np.testing.assert_allclose(left, right, atol=1e-6)
    s = np.linspace(-1, 1, 20001)
    assert np.max(b.eval(s)) == pytest.approx(1.0, abs=1e-8)


def test_pwl_wavelet_zigzag():
    b = make_basis("pwl-w", 2, "input")
    np.testing.assert_allclose(b.eval(np.array([-1.0, -0.75, -0.5, -0.25]))[0], [0, 1, 0, -1], atol=1e-15)


# ---- grids


def test_eval_grid_examples():
    np.testing.assert_array_equal(make_basis("rect", 2, "input").eval_grid(4), [[1, 1, 0, 0], [0, 0, 1, 1]])
    np.testing.assert_array_equal(make_basis("fourier", 1, "input").eval_grid(2), [[-1.0, 1.0]])
    for fam in FAMILIES:
        b = make_basis(fam, 4, "input")
        np.testing.assert_array_equal(b.eval_grid(1)[:, 0], b.eval(0.0))


def test_eval_grid_readonly():
    g = make_basis("pwl", 4, "input").eval_grid(8)
    with pytest.raises(ValueError):
        g[0, 0] = 3.0


# ---- integrals


def test_integral_examples():
    np.testing.assert_allclose(make_basis("fourier", 4, "input").integrals(), 0.0, atol=1e-15)
    np.testing.assert_array_equal(make_basis("rect", 2, "input").integrals(), [1.0, 1.0])
    np.testing.assert_array_equal(make_basis("rect-w", 2, "input").integrals(), [0.0, 0.0])


@pytest.mark.parametrize("fam", FAMILIES)
def test_integrals_match_quadrature(fam):
    b = make_basis(fam, 6, "output")
    M = 240_000  # multiple of d keeps cell edges between midpoints
    np.testing.assert_allclose(b.integrals(), b.eval_grid(M).sum(axis=1) * 2 / M, atol=1e-6)


@pytest.mark.parametrize("fam", ["fourier", "pwl-w", "rect-w"])
def test_zero_integral_families(fam):
    for d in range(2, 65):
        assert np.max(np.abs(make_basis(fam, d, "input").integrals())) < 1e-12


def test_rect_partition_of_unity():
    b = make_basis("rect", 7, "input")
    s = np.linspace(-0.999, 0.999, 301)
    np.testing.assert_allclose(b.eval(s).sum(axis=0), 1.0)


# ---- roots


def test_root_examples():
    r = sign_change_roots(make_basis("pwl", 3, "input"), [1, -1, 1])
    np.testing.assert_allclose(r.roots, [-0.5, 0.5], atol=1e-15)
    assert r.signs == (1, -1, 1)
    r = sign_change_roots(make_basis("fourier", 2, "input"), [0, 1])
    np.testing.assert_allclose(r.roots, [-0.5, 0.5], atol=1e-13)
    assert r.signs == (-1, 1, -1)
    r = sign_change_roots(make_basis("rect", 2, "input"), [1, -2])
    assert r.roots == (0.0,) and r.breakpoints == (0.0,)
    assert r.signs == (1, -1)


def test_roots_zero_vector():
    r = sign_change_roots(make_basis("pwq", 5, "input"), np.zeros(5))
    assert r.roots == () and set(r.signs) == {0}


def test_roots_bad_input():
    b = make_basis("pwl", 3, "input")
    with pytest.raises(BasisError):
        sign_change_roots(b, [1.0, 2.0])
    with pytest.raises(BasisError):
        sign_change_roots(b, [1.0, np.inf, 0.0])


def test_tangential_zero_ignored():
    # cos(2 pi s) - 1 <= 0 touches zero at s = 0 without crossing
    r = sign_change_roots(make_basis("fourier", 4, "input"), [0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(r.roots, [-0.75, -0.25, 0.25, 0.75], atol=1e-12)
    r = sign_change_roots(make_basis("pwl", 3, "input"), [1.0, 0.0, 1.0])
    assert r.roots == () and r.signs == (1,)


def test_close_root_pair_inside_one_scan_cell():
    # (1 - eps) cos(pi s) - cos(2 pi s) dips below zero on a tiny interval around 0
    b = make_basis("fourier", 4, "input")
    eps = 1e-9
    r = sign_change_roots(b, [0.0, 1 - eps, 0.0, -1.0])
    half = np.sqrt(2 * eps / (3 * np.pi**2))
    assert len(r.roots) == 4
    np.testing.assert_allclose(r.roots[1:3], [-half, half], rtol=1e-6)
    assert r.signs == (-1, 1, -1, 1, -1)


def _check_signs(b, z, rep):
    # sample several interior points: wavelet states vanish at cell edges and midpoints
    assert all(a != c for a, c in zip(rep.signs, rep.signs[1:]))
    bounds = rep.bounds
    for k, sg in enumerate(rep.signs):
        t = np.array([0.13, 0.37, 0.5, 0.61, 0.89])
        f = z @ b.eval(bounds[k] + t * (bounds[k + 1] - bounds[k]))
        big = np.abs(f) > 1e-12
        assert np.all(np.sign(f[big]) == sg)


@pytest.mark.parametrize("fam", CONTINUOUS)
def test_root_correctness_random(fam):
    rng = np.random.default_rng(11)
    for d in (3, 8, 17):
        b = make_basis(fam, d, "input")
        for _ in range(1000 // 3):
            z = rng.normal(size=d)
            rep = sign_change_roots(b, z)
            r = np.asarray(rep.roots)
            if r.size:
                assert np.all(np.diff(r) > 0)
                assert np.max(np.abs(z @ b.eval(r))) < 1e-9
            _check_signs(b, z, rep)


@pytest.mark.parametrize("fam", ["rect", "rect-w"])
def test_discontinuous_roots_are_breakpoints(fam):
    b = make_basis(fam, 6, "input")
    rep = sign_change_roots(b, np.random.default_rng(2).normal(size=6))
    assert rep.roots == rep.breakpoints
    knots = set(np.round(b.knots, 15))
    assert all(round(r, 15) in knots for r in rep.roots)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6))
def test_roots_never_spurious(z):
    z = np.asarray(z)
    b = make_basis("pwq", 6, "input")
    rep = sign_change_roots(b, z)
    s = np.linspace(-1, 1, 4001)
    f = z @ b.eval(s)
    dense = np.count_nonzero(np.sign(f[1:]) * np.sign(f[:-1]) < 0)
    assert len(rep.roots) <= max(dense, 0) + 2 * b.d  # closed form never invents roots
    for k, sg in enumerate(rep.signs):
        lo, hi = rep.bounds[k], rep.bounds[k + 1]
        inside = f[(s > lo + 1e-9) & (s < hi - 1e-9)]
        if sg and inside.size:
            assert np.all(inside * sg >= -1e-9)


# ---- pair integrals


def test_pair_integral_examples():
    f = make_basis("fourier", 2, "input")
    np.testing.assert_allclose(pair_integral(f, f, -0.5, 0.5), [[0.5, 0.0], [0.0, 0.5]], atol=1e-15)
    ri, ro = make_basis("rect", 2, "input"), make_basis("rect", 2, "output")
    np.testing.assert_allclose(pair_integral(ri, ro, -1.0, 0.0), [[1.0, 0.0], [0.0, 0.0]], atol=1e-15)
    np.testing.assert_array_equal(pair_integral(f, ri, 0.3, 0.3), np.zeros((2, 2)))


def test_pair_integral_orientation():
    p = make_basis("fourier", 3, "input")
    q = make_basis("pwl", 5, "output")
    assert pair_integral(p, q, -1, 1).shape == (5, 3)


def test_pair_integral_bad_interval():
    f = make_basis("fourier", 2, "input")
    with pytest.raises(BasisError):
        pair_integral(f, f, 0.5, -0.5)
    with pytest.raises(BasisDomainError):
        pair_integral(f, f, -2.0, 0.0)


@pytest.mark.parametrize("fp,fq", [("pwq", "fourier"), ("fourier", "fourier"), ("pwl-w", "rect"), ("rect-w", "pwq")])
def test_pair_integral_additive(fp, fq):
    p, q = make_basis(fp, 9, "input"), make_basis(fq, 7, "output")
    cuts = np.concatenate(([-1.0], np.sort(np.random.default_rng(4).uniform(-1, 1, 6)), [1.0]))
    parts = sum(pair_integral(p, q, a, b) for a, b in zip(cuts[:-1], cuts[1:]))
    np.testing.assert_allclose(parts, pair_integral(p, q, -1, 1), atol=1e-12)


def test_pair_integral_matches_fine_midpoint():
    rng = np.random.default_rng(8)
    M = 1_000_000
    for _ in range(4):
        fp, fq = rng.choice(FAMILIES, 2)
        p, q = make_basis(fp, 6, "input"), make_basis(fq, 6, "output")
        mid = (q.eval_grid(M) * (2 / M)) @ p.eval_grid(M).T
        np.testing.assert_allclose(pair_integral(p, q, -1, 1), mid, atol=1e-5)


def test_fourier_orthogonality():
    f = make_basis("fourier", 6, "input")
    np.testing.assert_allclose(pair_integral(f, f, -1, 1), np.eye(6), atol=1e-13)


# ---- linear independence


@pytest.mark.parametrize("fam", FAMILIES)
def test_linear_independence(fam):
    for d in (2, 3, 5, 16, 64):
        b = make_basis(fam, d, "input")
        G = b.eval(np.linspace(-1, 1, 64 * d))
        sv = np.linalg.svd(G @ G.T, compute_uv=False)
        assert sv[-1] > 1e-10 * sv[0]
