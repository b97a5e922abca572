import math

import numpy as np
import pytest
import scipy.linalg
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from nudgeflow.fields import (
    GridSpec,
    ResolutionMismatch,
    ScalarField,
    VectorField,
    VelocityField,
    bilinear,
    dealias,
    inner,
    leray_project,
    norms,
    random_velocity,
    read_snapshot,
    single_mode,
    stokes_apply,
    taylor_green,
    to_real,
    to_spectral,
    vorticity,
    write_snapshot,
)

seeds = st.integers(0, 2**32 - 1)
sides = st.sampled_from([2 * np.pi, 1.0, 3.7])


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# ---------------------------------------------------------------------------
# Grid and transforms


def test_grid_tables():
    g = GridSpec(3.0, 12)
    assert g.lambda1 == pytest.approx((2 * np.pi / 3.0) ** 2)
    j = np.abs(g.indices)
    assert np.array_equal(g.dealias_mask, (j[0] <= 4) & (j[1] <= 4))
    assert not (g.dealias_mask & g.nyquist_mask).any()
    assert g.nyquist_mask[6, 0] and g.nyquist_mask[0, 6]


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        GridSpec(1.0, 7)
    with pytest.raises(ValueError):
        GridSpec(-1.0, 8)


def test_coefficients_use_continuum_normalization():
    g = GridSpec(2.0, 8)
    x, y = g.coords
    s = to_spectral(np.sin(2 * np.pi * x / 2.0) + 3.0, g).coefficients
    assert s[0, 0] == pytest.approx(3.0)
    assert s[1, 0] == pytest.approx(-0.5j)
    assert s[-1, 0] == pytest.approx(0.5j)


@given(seeds, st.sampled_from([8, 16, 32]), sides)
def test_real_spectral_round_trip(seed, n, L):
    g = GridSpec(L, n)
    a = np.random.default_rng(seed).standard_normal((2, n, n))
    back = to_real(to_spectral(a, g))
    np.testing.assert_allclose(back, a, atol=1e-12)


@given(seeds, sides)
def test_inner_matches_grid_quadrature(seed, L):
    g = GridSpec(L, 16)
    rng = np.random.default_rng(seed)
    u, v = random_velocity(g, rng), random_velocity(g, rng)
    quad = np.mean(np.sum(to_real(u) * to_real(v), axis=0)) * L**2
    assert inner(u, v) == pytest.approx(quad, rel=1e-10, abs=1e-13)


# ---------------------------------------------------------------------------
# Leray projection


def _fourier_diff_matrix(n, L):
    """Periodic spectral differentiation matrix (even n), cotangent formula."""
    h = 2 * np.pi / n
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = 0.5 * (-1) ** (i - j) / np.tan((i - j) * h / 2)
    return D * (2 * np.pi / L)


def test_leray_matches_dense_nullspace_oracle(rng):
    n, L = 8, 2.5
    g = GridSpec(L, n)
    D = _fourier_diff_matrix(n, L)
    eye = np.eye(n)
    dx, dy = np.kron(D, eye), np.kron(eye, D)
    ones = np.ones((1, n * n))
    zero = np.zeros((1, n * n))
    C = np.vstack([np.hstack([dx, dy]), np.hstack([ones, zero]), np.hstack([zero, ones])])
    Z = scipy.linalg.null_space(C)
    for _ in range(5):
        f = dealias(to_spectral(rng.standard_normal((2, n, n)), g))
        x = to_real(f).reshape(-1)
        oracle = (Z @ (Z.T @ x)).reshape(2, n, n)
        np.testing.assert_allclose(to_real(leray_project(f)), oracle, atol=1e-12)


@given(seeds)
def test_leray_idempotent_and_self_adjoint(seed):
    g = GridSpec(2 * np.pi, 16)
    rng = np.random.default_rng(seed)
    f = dealias(to_spectral(rng.standard_normal((2, 16, 16)), g))
    h = dealias(to_spectral(rng.standard_normal((2, 16, 16)), g))
    pf = leray_project(f)
    np.testing.assert_allclose(leray_project(pf).coefficients, pf.coefficients, atol=1e-14)
    a = inner(pf, h)
    b = inner(f, leray_project(h))
    assert abs(a - b) <= 1e-12 * norms(f)[0] * norms(h)[0]


def test_velocity_field_invariants_are_enforced(grid16):
    g = grid16
    c = np.zeros((2, 16, 16), complex)
    c[0, 1, 0] = c[0, -1, 0] = 0.5  # u1 = cos(x): divergence sin(x) != 0
    with pytest.raises(ValueError, match="divergence"):
        VelocityField(c, g)
    c = np.zeros((2, 16, 16), complex)
    c[0, 0, 0] = 1.0
    with pytest.raises(ValueError, match="mean"):
        VelocityField(c, g)
    c = np.zeros((2, 16, 16), complex)
    c[0, 0, 8] = 1.0
    with pytest.raises(ValueError, match="Nyquist"):
        VelocityField(c, g)
    c = np.zeros((2, 16, 16), complex)
    c[0, 0, 1] = 1.0  # u1 = e^{iy} alone is not real
    with pytest.raises(ValueError, match="symmetric"):
        VelocityField(c, g)


def test_grid_mismatch_is_an_error(grid16, grid32, rng):
    u = random_velocity(grid16, rng)
    v = random_velocity(grid32, rng)
    with pytest.raises(ResolutionMismatch):
        inner(u, v)
    with pytest.raises(ResolutionMismatch):
        bilinear(u, v)


# ---------------------------------------------------------------------------
# Bilinear term


def _padded_bilinear(u, v):
    """P(u . grad v) via exact products on a 2x grid, truncated to the 2/3 band."""
    g = u.grid
    n, m = g.n, 2 * g.n
    big = GridSpec(g.box_side, m)

    def pad(c):
        out = np.zeros(c.shape[:-2] + (m, m), complex)
        idx = np.fft.fftfreq(n, 1 / n).astype(int)
        out[..., idx[:, None] % m, idx[None, :] % m] = c
        return out

    uc, vc = pad(u.coefficients), pad(v.coefficients)
    ur = np.real(np.fft.ifft2(uc) * m * m)
    grads = [np.real(np.fft.ifft2(1j * big.k[a] * vc) * m * m) for a in range(2)]
    prod = ur[0] * grads[0] + ur[1] * grads[1]
    pc = np.fft.fft2(prod) / m**2
    idx = np.fft.fftfreq(n, 1 / n).astype(int)
    small = pc[..., idx[:, None] % m, idx[None, :] % m] * g.dealias_mask
    return leray_project(VectorField(small, g))


def test_bilinear_matches_padded_product(grid16, rng):
    u, v = random_velocity(grid16, rng), random_velocity(grid16, rng)
    np.testing.assert_allclose(bilinear(u, v).coefficients, _padded_bilinear(u, v).coefficients, atol=1e-12)


@given(seeds, sides)
def test_bilinear_identities(seed, L):
    g = GridSpec(L, 16)
    rng = np.random.default_rng(seed)
    u, v, w = (random_velocity(g, rng) for _ in range(3))
    nu_, nw = norms(u), norms(w)
    nv = norms(v)
    # <B(u,v), w> = -<B(u,w), v>
    scale = nu_[0] * nv[1] * nw[1] * 10
    assert abs(inner(bilinear(u, v), w) + inner(bilinear(u, w), v)) <= 1e-10 * scale
    # <B(u,w), w> = 0
    assert abs(inner(bilinear(u, w), w)) <= 1e-10 * nu_[1] * nw[0] * nw[1]
    # (B(w,w), Aw) = 0
    Aw, Au = stokes_apply(w), stokes_apply(u)
    assert abs(inner(bilinear(w, w), Aw)) <= 1e-10 * nw[0] * nw[1] * nw[2] * 10
    # (B(u,w),Aw) + (B(w,u),Aw) = -(B(w,w),Au)
    lhs = inner(bilinear(u, w), Aw) + inner(bilinear(w, u), Aw)
    rhs = -inner(bilinear(w, w), Au)
    assert abs(lhs - rhs) <= 1e-10 * (nu_[2] * nw[1] * nw[2]) * 10


@given(seeds, sides)
def test_poincare_chain(seed, L):
    g = GridSpec(L, 16)
    u = random_velocity(g, np.random.default_rng(seed))
    a, b, c = norms(u)
    lam = g.lambda1
    assert lam * a**2 <= b**2 * (1 + 1e-12)
    assert lam * b**2 <= c**2 * (1 + 1e-12)


def test_single_mode_attains_poincare_equality():
    g = GridSpec(3.0, 16)
    u = single_mode(g, (1, 0))
    a, b, c = norms(u)
    assert b**2 == pytest.approx(g.lambda1 * a**2, rel=1e-13)
    assert c**2 == pytest.approx(g.lambda1 * b**2, rel=1e-13)


# ---------------------------------------------------------------------------
# Taylor-Green against a symbolic oracle


def test_taylor_green_symbolic():
    x, y, L = sp.symbols("x y L", positive=True)
    k = 2 * sp.pi / L
    u1 = sp.sin(k * x) * sp.cos(k * y)
    u2 = -sp.cos(k * x) * sp.sin(k * y)
    assert sp.simplify(sp.diff(u1, x) + sp.diff(u2, y)) == 0
    # the advection term is a gradient, so its curl vanishes and B(u,u) = 0
    a1 = u1 * sp.diff(u1, x) + u2 * sp.diff(u1, y)
    a2 = u1 * sp.diff(u2, x) + u2 * sp.diff(u2, y)
    assert sp.simplify(sp.diff(a2, x) - sp.diff(a1, y)) == 0
    # -Laplacian eigenvalue 2 k^2
    assert sp.simplify(-(sp.diff(u1, x, 2) + sp.diff(u1, y, 2)) - 2 * k**2 * u1) == 0
    omega = sp.simplify(sp.diff(u2, x) - sp.diff(u1, y))
    Lv = 3.0
    g = GridSpec(Lv, 16)
    tg = taylor_green(g)
    X, Y = g.coords
    f1 = sp.lambdify((x, y), u1.subs(L, Lv), "numpy")
    f2 = sp.lambdify((x, y), u2.subs(L, Lv), "numpy")
    fo = sp.lambdify((x, y), omega.subs(L, Lv), "numpy")
    np.testing.assert_allclose(to_real(tg), np.array([f1(X, Y), f2(X, Y)]), atol=1e-13)
    np.testing.assert_allclose(np.real(np.fft.ifft2(vorticity(tg).coefficients) * 256), fo(X, Y), atol=1e-12)
    assert np.abs(bilinear(tg, tg).coefficients).max() < 1e-13
    np.testing.assert_allclose(stokes_apply(tg).coefficients, 2 * g.lambda1 * tg.coefficients, atol=1e-12)


# ---------------------------------------------------------------------------
# Random fields and snapshots


@given(seeds, st.floats(0.1, 100.0))
def test_random_velocity_energy_and_band(seed, energy):
    g = GridSpec(2 * np.pi, 32)
    u = random_velocity(g, np.random.default_rng(seed), energy=energy, kmax=5.0)
    assert norms(u)[0] ** 2 == pytest.approx(energy, rel=1e-10)
    assert np.abs(u.coefficients[:, g.ksq > 25 + 1e-9]).max() == 0


def test_snapshot_round_trip_is_bit_exact(tmp_path, grid16, rng):
    u = random_velocity(grid16, rng)
    p = tmp_path / "u.snap"
    write_snapshot(p, u, t=1.25, metadata={"config_hash": "abc", "dt": 1e-3})
    back, t, meta = read_snapshot(p)
    assert isinstance(back, VelocityField)
    assert np.array_equal(back.coefficients, u.coefficients)
    assert t == 1.25 and meta == {"config_hash": "abc", "dt": 1e-3}
    w = vorticity(u)
    write_snapshot(p, w)
    back, _, _ = read_snapshot(p)
    assert isinstance(back, ScalarField)
    assert np.array_equal(back.coefficients, w.coefficients)


def test_snapshot_rejects_corruption(tmp_path, grid16, rng):
    p = tmp_path / "u.snap"
    write_snapshot(p, random_velocity(grid16, rng))
    raw = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError, match="not a field snapshot"):
        read_snapshot(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="payload"):
        read_snapshot(tmp_path / "short")


def test_arithmetic_preserves_type(grid16, rng):
    u, v = random_velocity(grid16, rng), random_velocity(grid16, rng)
    assert isinstance(u + v, VelocityField)
    assert isinstance(2.0 * u - v, VelocityField)
    assert isinstance(-u, VelocityField)
    assert math.isclose(norms(u - u)[0], 0.0)
