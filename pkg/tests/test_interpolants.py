import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nudgeflow.fields import GridSpec, ResolutionMismatch, VectorField, VelocityField, norms, random_velocity
from nudgeflow.interpolants import (
    InterpCertificate,
    InterpolantSpec,
    Kind,
    ObservationRecord,
    Order,
    apply,
    certify_c0,
    observe,
    reconstruct,
    validate_certificate,
)

seeds = st.integers(0, 2**32 - 1)
kinds = st.sampled_from(list(Kind))


def _direct_cell_means(u, m):
    """Cell averages by summing the exact average of every Fourier mode over each cell."""
    g = u.grid
    L = g.box_side
    d = L / m
    k1, k2 = g.k
    out = np.zeros((2, m, m))

    def avg(k, a):
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (np.exp(1j * k * (a + d)) - np.exp(1j * k * a)) / (1j * k * d)
        return np.where(k == 0, 1.0, r)

    for i in range(m):
        for j in range(m):
            w = avg(k1, i * d) * avg(k2, j * d)
            out[:, i, j] = np.real(np.sum(u.coefficients * w, axis=(-2, -1)))
    return out


def _direct_node_values(u, m, offset):
    g = u.grid
    d = g.box_side / m
    k1, k2 = g.k
    out = np.zeros((2, m, m))
    for i in range(m):
        for j in range(m):
            ph = np.exp(1j * (k1 * (i + offset[0]) * d + k2 * (j + offset[1]) * d))
            out[:, i, j] = np.real(np.sum(u.coefficients * ph, axis=(-2, -1)))
    return out


def _step_coefficients(values, g):
    """Fourier coefficients of the piecewise-constant function, by direct integration, dealiased."""
    m = values.shape[-1]
    L = g.box_side
    d = L / m
    k1, k2 = g.k
    out = np.zeros((2, g.n, g.n), complex)

    def integ(k, a):
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (np.exp(-1j * k * (a + d)) - np.exp(-1j * k * a)) / (-1j * k)
        return np.where(k == 0, d, r)

    for i in range(m):
        for j in range(m):
            out += values[:, i, j, None, None] * (integ(k1, i * d) * integ(k2, j * d)) / L**2
    return out * g.dealias_mask


@pytest.mark.parametrize("m", [3, 5, 8])
def test_volume_elements_match_direct_integration(m, grid16, rng):
    u = random_velocity(grid16, rng)
    spec = InterpolantSpec.with_cells(Kind.VOLUME_ELEMENTS, m, grid16.box_side)
    rec = observe(spec, u)
    np.testing.assert_allclose(rec.values, _direct_cell_means(u, m), atol=1e-12)
    np.testing.assert_allclose(apply(spec, u).coefficients, _step_coefficients(rec.values, grid16), atol=1e-12)


@pytest.mark.parametrize("offset", [(0.5, 0.5), (0.0, 0.0), (0.25, 0.7)])
def test_nodes_match_direct_evaluation(offset, grid16, rng):
    u = random_velocity(grid16, rng)
    m = 6
    spec = InterpolantSpec.with_cells(Kind.NODES, m, grid16.box_side, node_offset=offset)
    rec = observe(spec, u)
    np.testing.assert_allclose(rec.values, _direct_node_values(u, m, offset), atol=1e-12)
    np.testing.assert_allclose(apply(spec, u).coefficients, _step_coefficients(rec.values, grid16), atol=1e-12)


def test_nodes_at_grid_points_equal_grid_samples(grid16, rng):
    from nudgeflow.fields import to_real

    u = random_velocity(grid16, rng)
    spec = InterpolantSpec.with_cells(Kind.NODES, 8, grid16.box_side, node_offset=(0.0, 0.0))
    np.testing.assert_allclose(observe(spec, u).values, to_real(u)[:, ::2, ::2], atol=1e-12)


def test_low_modes_is_a_spectral_cutoff(grid32, rng):
    u = random_velocity(grid32, rng)
    spec = InterpolantSpec(Kind.LOW_MODES, 0.25)
    out = apply(spec, u)
    assert isinstance(out, VelocityField)
    keep = (grid32.ksq <= 16) & (grid32.ksq > 0)
    np.testing.assert_allclose(out.coefficients[:, keep], u.coefficients[:, keep], rtol=1e-14, atol=1e-18)
    assert np.all(out.coefficients[:, ~keep] == 0)
    # idempotent, orthogonal
    np.testing.assert_allclose(apply(spec, out).coefficients, out.coefficients, rtol=1e-14, atol=1e-18)
    a, b = norms(out)[0], norms(u - out)[0]
    assert a**2 + b**2 == pytest.approx(norms(u)[0] ** 2, rel=1e-12)


@given(seeds, kinds, st.integers(2, 8))
def test_interpolant_is_linear(seed, kind, m):
    g = GridSpec(2 * np.pi, 16)
    rng = np.random.default_rng(seed)
    u, v = random_velocity(g, rng), random_velocity(g, rng)
    spec = InterpolantSpec.with_cells(kind, m, g.box_side)
    a, b = rng.standard_normal(2)
    lhs = apply(spec, a * u + b * v).coefficients
    rhs = a * apply(spec, u).coefficients + b * apply(spec, v).coefficients
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@given(seeds, st.integers(1, 8))
def test_volume_averages_sum_to_domain_mean(seed, m):
    g = GridSpec(3.0, 16)
    u = random_velocity(g, np.random.default_rng(seed))
    spec = InterpolantSpec.with_cells(Kind.VOLUME_ELEMENTS, m, g.box_side)
    assert np.abs(observe(spec, u).values.sum(axis=(-2, -1))).max() < 1e-12


@given(seeds, kinds, st.integers(2, 8))
def test_record_round_trips(seed, kind, m):
    g = GridSpec(2 * np.pi, 16)
    u = random_velocity(g, np.random.default_rng(seed))
    spec = InterpolantSpec.with_cells(kind, m, g.box_side)
    rec = observe(spec, u)
    for back in (ObservationRecord.from_json(rec.to_json()), ObservationRecord.from_bytes(rec.to_bytes())):
        assert back.kind is rec.kind and back.h == rec.h and back.n == rec.n
        np.testing.assert_array_equal(back.values, rec.values)
        np.testing.assert_array_equal(back.modes, rec.modes)
        np.testing.assert_array_equal(reconstruct(back).coefficients, reconstruct(rec).coefficients)


def test_record_sizes(grid16, rng):
    u = random_velocity(grid16, rng)
    assert observe(InterpolantSpec.with_cells(Kind.NODES, 5, grid16.box_side), u).scalar_count == 2 * 25
    lm = observe(InterpolantSpec(Kind.LOW_MODES, 1.0), u)
    # |k|^2 <= 1 leaves (1,0) and (0,1): two complex values per component
    assert lm.scalar_count == 2 * 2 * 2
    with pytest.raises(ValueError):
        ObservationRecord.from_bytes(b"\0" * 100)


def test_grid_resolution_checks(grid16, rng):
    u = random_velocity(grid16, rng)
    with pytest.raises(ResolutionMismatch):
        observe(InterpolantSpec.with_cells(Kind.NODES, 9, grid16.box_side), u)
    with pytest.raises(ValueError):
        observe(InterpolantSpec(Kind.VOLUME_ELEMENTS, 10.0), u)
    with pytest.raises(ValueError):
        InterpolantSpec(Kind.NODES, -1.0)
    with pytest.raises(ValueError):
        InterpolantSpec(Kind.NODES, 1.0, node_offset=(1.0, 0.0))


def test_non_dividing_h_rounds_cells_up():
    spec = InterpolantSpec(Kind.VOLUME_ELEMENTS, 0.9)
    assert spec.cells_per_side(2 * np.pi) == 7
    assert InterpolantSpec.with_cells(Kind.VOLUME_ELEMENTS, 7, 2 * np.pi).cells_per_side(2 * np.pi) == 7


# ---------------------------------------------------------------------------
# Certification


def test_low_modes_certificate_is_bounded_by_one(grid32):
    # every discarded mode has |k| > 1/h, so the H1 ratio is below one
    spec = InterpolantSpec(Kind.LOW_MODES, 0.3)
    cert = certify_c0(spec, grid32, Order.H1, probes=100)
    assert 0.5 < cert.c0_estimate <= 1.0
    assert cert.sample_count > 100
    ok, worst = validate_certificate(cert, spec, grid32, 100, np.random.default_rng(7))
    assert ok and worst <= 1.0 + 1e-12


@pytest.mark.parametrize("h", [0.3, 0.35, 0.5])
def test_low_modes_certificate_is_attained_just_above_the_cutoff(grid32, h):
    # single-mode probes make the maximum exact: 1/(h^2 k*^2) for the smallest
    # lattice |k|^2 strictly above 1/h^2
    k1, k2 = np.meshgrid(np.arange(-10, 11), np.arange(-10, 11))
    k2sum = (k1**2 + k2**2).ravel()
    kstar = k2sum[k2sum > 1 / h**2].min()
    cert = certify_c0(InterpolantSpec(Kind.LOW_MODES, h), grid32, Order.H1, probes=100)
    assert cert.c0_estimate == pytest.approx(1 / (h**2 * kstar), rel=1e-10)


def test_volume_elements_certificate_is_stable_under_probe_doubling(grid32):
    spec = InterpolantSpec(Kind.VOLUME_ELEMENTS, 2 * np.pi / 8)
    a = certify_c0(spec, grid32, Order.H1, probes=100, rng=np.random.default_rng(1))
    b = certify_c0(spec, grid32, Order.H1, probes=200, rng=np.random.default_rng(2))
    assert np.isfinite(a.c0_estimate) and a.c0_estimate > 0
    assert b.c0_estimate == pytest.approx(a.c0_estimate, rel=0.1)


def test_certificate_h2_takes_square_root(grid32):
    spec = InterpolantSpec(Kind.NODES, 2 * np.pi / 8)
    cert = certify_c0(spec, grid32, Order.H2, probes=100)
    assert cert.c0_estimate == pytest.approx(np.sqrt(cert.worst_case_ratio))
    assert InterpCertificate.from_dict(cert.to_dict()) == cert


def test_certificate_needs_enough_probes(grid16):
    with pytest.raises(ValueError, match="100"):
        certify_c0(InterpolantSpec(Kind.NODES, 1.0), grid16, probes=10)


def test_certificate_is_reproducible(grid16):
    spec = InterpolantSpec(Kind.VOLUME_ELEMENTS, 1.0)
    a = certify_c0(spec, grid16, probes=100, rng=np.random.default_rng(3))
    b = certify_c0(spec, grid16, probes=100, rng=np.random.default_rng(3))
    assert a == b


def test_apply_keeps_generic_fields_unprojected(grid16, rng):
    u = random_velocity(grid16, rng)
    out = apply(InterpolantSpec(Kind.VOLUME_ELEMENTS, 1.0), u)
    assert type(out) is VectorField
