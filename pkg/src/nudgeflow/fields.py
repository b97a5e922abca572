"""Spectral fields on the periodic box [0, L]^2.

Coefficients are stored on the full N x N FFT lattice with the continuum
Fourier-series normalization

    u(x) = sum_k u_hat(k) exp(i k.x),   u_hat = fft2(u) / N^2,

so |u|^2 = L^2 sum |u_hat|^2 is the L^2(Omega) norm.  Array axes are
(component, x-index, y-index).  The Nyquist row and column are never part of
a valid velocity field; the 2/3 dealiasing mask removes them as well.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

__all__ = [
    "GridSpec",
    "HalfLattice",
    "half_lattice",
    "VectorField",
    "VelocityField",
    "ScalarField",
    "ResolutionMismatch",
    "to_real",
    "to_spectral",
    "leray_project",
    "stokes_apply",
    "bilinear",
    "norms",
    "inner",
    "dealias",
    "random_velocity",
    "single_mode",
    "taylor_green",
    "vorticity",
    "write_snapshot",
    "read_snapshot",
]


class ResolutionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    box_side: float
    resolution: int

    def __post_init__(self):
        if not self.box_side > 0:
            raise ValueError(f"box_side must be positive, got {self.box_side}")
        n = self.resolution
        if int(n) != n or n < 4 or n % 2:
            raise ValueError(f"resolution must be an even integer >= 4, got {n}")

    @property
    def n(self) -> int:
        return self.resolution

    @property
    def lambda1(self) -> float:
        return (2 * np.pi / self.box_side) ** 2

    @property
    def dx(self) -> float:
        return self.box_side / self.resolution

    @cached_property
    def indices(self) -> np.ndarray:
        """Integer wavenumber indices, shape (2, N, N)."""
        j = np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)
        return np.array(np.meshgrid(j, j, indexing="ij"))

    @cached_property
    def k(self) -> np.ndarray:
        return (2 * np.pi / self.box_side) * self.indices.astype(float)

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k[0] ** 2 + self.k[1] ** 2

    @cached_property
    def ksq_safe(self) -> np.ndarray:
        out = self.ksq.copy()
        out[0, 0] = 1.0
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.n // 3
        j = np.abs(self.indices)
        return (j[0] <= cut) & (j[1] <= cut)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        j = self.indices
        return (j[0] == -self.n // 2) | (j[1] == -self.n // 2)

    @cached_property
    def coords(self) -> np.ndarray:
        x = np.arange(self.n) * self.dx
        return np.array(np.meshgrid(x, x, indexing="ij"))

    def check_same(self, other: "GridSpec") -> None:
        if self != other:
            raise ResolutionMismatch(f"grid mismatch: {self} vs {other}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=complex)
    a.flags.writeable = False
    return a


def _conj_partner(a: np.ndarray) -> np.ndarray:
    """Array whose [.., i, j] entry is a[.., -i, -j]."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


@dataclass(frozen=True)
class ScalarField:
    coefficients: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _freeze(self.coefficients))
        n = self.grid.n
        if self.coefficients.shape != (n, n):
            raise ResolutionMismatch(f"expected shape {(n, n)}, got {self.coefficients.shape}")


@dataclass(frozen=True)
class VectorField:
    """A two-component spectral vector field with no structural guarantees
    beyond conjugate symmetry (it represents a real field)."""

    coefficients: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _freeze(self.coefficients))
        n = self.grid.n
        if self.coefficients.shape != (2, n, n):
            raise ResolutionMismatch(f"expected shape {(2, n, n)}, got {self.coefficients.shape}")

    @classmethod
    def zeros(cls, grid: GridSpec):
        return cls(np.zeros((2, grid.n, grid.n), complex), grid)

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return type(self)(self.coefficients + other.coefficients, self.grid)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return type(self)(self.coefficients - other.coefficients, self.grid)

    def __mul__(self, a: float):
        return type(self)(a * self.coefficients, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(-self.coefficients, self.grid)

    def symmetry_defect(self) -> float:
        c = self.coefficients
        scale = max(np.abs(c).max(), np.finfo(float).tiny)
        return float(np.abs(c - np.conj(_conj_partner(c))).max() / scale)


@dataclass(frozen=True)
class VelocityField(VectorField):
    """Divergence-free, zero-mean, conjugate-symmetric field.

    Invariants are checked on construction (relative tolerance ``tol``);
    use :func:`leray_project` to build one from arbitrary data.
    """

    tol: float = field(default=1e-12, repr=False, compare=False)

    def __post_init__(self):
        super().__post_init__()
        c = self.coefficients
        scale = np.abs(c).max()
        if scale == 0:
            return
        g = self.grid
        if abs(c[:, 0, 0]).max() > self.tol * scale:
            raise ValueError("velocity field must have zero mean")
        if np.abs(c[:, g.nyquist_mask]).max() > self.tol * scale:
            raise ValueError("velocity field has Nyquist content")
        div = np.abs(g.k[0] * c[0] + g.k[1] * c[1]).max()
        if div > self.tol * np.abs(np.sqrt(g.ksq) * c).max():
            raise ValueError(f"velocity field is not divergence-free (|k.u| = {div:.3e})")
        if self.symmetry_defect() > self.tol:
            raise ValueError("velocity field is not conjugate-symmetric")

    @classmethod
    def zeros(cls, grid: GridSpec):
        return cls(np.zeros((2, grid.n, grid.n), complex), grid)

    def __mul__(self, a: float):
        return VelocityField(a * self.coefficients, self.grid)

    __rmul__ = __mul__

    def _combine(self, other, c):
        if not isinstance(other, VelocityField):
            return VectorField(c, self.grid)
        # cancellation leaves rounding at the operands' scale, not the result's
        big = max(np.abs(self.coefficients).max(), np.abs(other.coefficients).max())
        small = np.abs(c).max()
        tol = max(self.tol, other.tol) * (big / small if small > 0 else 1.0)
        return VelocityField(c, self.grid, tol=tol)

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return self._combine(other, self.coefficients + other.coefficients)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return self._combine(other, self.coefficients - other.coefficients)

    def __neg__(self):
        return VelocityField(-self.coefficients, self.grid)


# ---------------------------------------------------------------------------
# Raw-array kernels.  Full-lattice arrays have shape (..., 2, N, N).  The
# time stepper works on the half lattice (..., 2, N, N//2 + 1) used by the
# real FFT; conjugate symmetry supplies the other half.


class HalfLattice:
    """Precomputed tables for kernels on the rfft half lattice."""

    def __init__(self, grid: GridSpec):
        n = grid.n
        h = n // 2 + 1
        self.grid = grid
        self.n = n
        self.cols = h
        self.k = grid.k[..., :h].copy()
        self.ksq = grid.ksq[:, :h].copy()
        self.ksq_safe = grid.ksq_safe[:, :h].copy()
        self.mask = grid.dealias_mask[:, :h].copy()
        self.nyquist = grid.nyquist_mask[:, :h].copy()
        self.ik_masked = 1j * self.k * self.mask
        self.out_scale = self.mask / n**2
        w = np.full(h, 2.0)
        w[0] = w[-1] = 1.0
        self.weight = w
        self._neg_rows = (-np.arange(n)) % n

    def to_half(self, ch: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(ch[..., : self.cols])

    def to_full(self, hh: np.ndarray) -> np.ndarray:
        n, h = self.n, self.cols
        out = np.empty(hh.shape[:-1] + (n,), complex)
        out[..., :h] = hh
        out[..., h:] = np.conj(hh[..., self._neg_rows, 1 : n // 2][..., ::-1])
        return out

    def project(self, hh: np.ndarray) -> np.ndarray:
        k = self.k
        kdotu = (k[0] * hh[..., 0, :, :] + k[1] * hh[..., 1, :, :]) / self.ksq_safe
        out = hh - k * kdotu[..., None, :, :]
        out[..., :, 0, 0] = 0.0
        out[..., :, self.nyquist] = 0.0
        return out

    def real(self, hh: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(hh, s=(self.n, self.n)) * self.n**2

    def bilinear(self, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
        """P_sigma[(u.grad) v] with inputs and product truncated by the 2/3 mask."""
        lead = uh.shape[:-3]
        st = np.empty(lead + (6, self.n, self.cols), complex)
        st[..., 0:2, :, :] = uh * self.mask
        st[..., 2:4, :, :] = self.ik_masked[0] * vh
        st[..., 4:6, :, :] = self.ik_masked[1] * vh
        r = self.real(st)
        prod = r[..., 0:1, :, :] * r[..., 2:4, :, :] + r[..., 1:2, :, :] * r[..., 4:6, :, :]
        return self.project(np.fft.rfft2(prod) * self.out_scale)

    def norms_sq(self, hh: np.ndarray) -> tuple[float, float, float]:
        p = np.sum(hh.real**2 + hh.imag**2, axis=-3) * self.weight
        area = self.grid.box_side**2
        return (
            float(area * p.sum()),
            float(area * (self.ksq * p).sum()),
            float(area * (self.ksq**2 * p).sum()),
        )


_HALF_CACHE: dict = {}


def half_lattice(grid: GridSpec) -> HalfLattice:
    hl = _HALF_CACHE.get(grid)
    if hl is None:
        hl = _HALF_CACHE[grid] = HalfLattice(grid)
    return hl


def _to_real(grid: GridSpec, ch: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(ch).real * grid.n**2


def _to_spectral(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    return np.fft.fft2(a) / grid.n**2


def _project(grid: GridSpec, ch: np.ndarray) -> np.ndarray:
    k = grid.k
    kdotu = (k[0] * ch[..., 0, :, :] + k[1] * ch[..., 1, :, :]) / grid.ksq_safe
    out = ch - k * kdotu[..., None, :, :]
    out[..., :, 0, 0] = 0.0
    out[..., :, grid.nyquist_mask] = 0.0
    return out


def _bilinear(grid: GridSpec, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
    hl = half_lattice(grid)
    return hl.to_full(hl.bilinear(hl.to_half(uh), hl.to_half(vh)))


def _inner(grid: GridSpec, ah: np.ndarray, bh: np.ndarray) -> float:
    return float(grid.box_side**2 * np.sum((ah * np.conj(bh)).real))


def _norms_sq(grid: GridSpec, ch: np.ndarray) -> tuple[float, float, float]:
    p = np.sum(np.abs(ch) ** 2, axis=-3)
    area = grid.box_side**2
    return (
        float(area * p.sum()),
        float(area * (grid.ksq * p).sum()),
        float(area * (grid.ksq**2 * p).sum()),
    )


# ---------------------------------------------------------------------------
# Public operations on field objects.


def to_real(f: VectorField | ScalarField) -> np.ndarray:
    return _to_real(f.grid, f.coefficients)


def to_spectral(samples: np.ndarray, grid: GridSpec) -> VectorField | ScalarField:
    """Inverse of :func:`to_real`.  Returns a raw field; no projection."""
    n = grid.n
    samples = np.asarray(samples, dtype=float)
    if samples.shape == (n, n):
        return ScalarField(_to_spectral(grid, samples), grid)
    if samples.shape == (2, n, n):
        return VectorField(_to_spectral(grid, samples), grid)
    raise ResolutionMismatch(f"samples of shape {samples.shape} do not fit a {n}x{n} grid")


def leray_project(f: VectorField) -> VelocityField:
    return VelocityField(_project(f.grid, np.array(f.coefficients)), f.grid)


def dealias(f: VectorField) -> VectorField:
    return type(f)(f.coefficients * f.grid.dealias_mask, f.grid)


def stokes_apply(f: VelocityField) -> VelocityField:
    return VelocityField(f.grid.ksq * f.coefficients, f.grid)


def bilinear(u: VectorField, v: VectorField) -> VelocityField:
    u.grid.check_same(v.grid)
    return VelocityField(_bilinear(u.grid, u.coefficients, v.coefficients), u.grid)


def inner(f: VectorField, g: VectorField) -> float:
    """L^2(Omega) inner product."""
    f.grid.check_same(g.grid)
    return _inner(f.grid, f.coefficients, g.coefficients)


def norms(f: VectorField) -> tuple[float, float, float]:
    """(|f|, ||f||, |Af|): L^2 norm, gradient norm, Stokes-operator norm."""
    a, b, c = _norms_sq(f.grid, f.coefficients)
    return np.sqrt(a), np.sqrt(b), np.sqrt(c)


def vorticity(u: VectorField) -> ScalarField:
    k = u.grid.k
    c = u.coefficients
    return ScalarField(1j * (k[0] * c[1] - k[1] * c[0]), u.grid)


# ---------------------------------------------------------------------------
# Field constructors.


def random_velocity(
    grid: GridSpec,
    rng: np.random.Generator,
    *,
    slope: float = 2.0,
    kmax: float | None = None,
    kmin: float = 0.0,
    energy: float = 1.0,
) -> VelocityField:
    """Random dealiased divergence-free field with |u_hat(k)| ~ |k|^-slope.

    ``kmin``/``kmax`` are physical wavenumber magnitudes; ``energy`` is |u|^2.
    """
    noise = rng.standard_normal((2, grid.n, grid.n))
    ch = _to_spectral(grid, noise)
    kk = np.sqrt(grid.ksq)
    amp = np.where(kk > 0, grid.ksq_safe ** (-slope / 2), 0.0)
    keep = grid.dealias_mask & (kk >= kmin)
    if kmax is not None:
        keep &= kk <= kmax
    ch = _project(grid, ch * amp * keep)
    e = _norms_sq(grid, ch)[0]
    if e > 0:
        ch *= np.sqrt(energy / e)
    return VelocityField(ch, grid)


def single_mode(grid: GridSpec, j: tuple[int, int], amplitude: float = 1.0, phase: float = 0.0) -> VelocityField:
    """Real divergence-free field built from the lattice modes +-j, with
    amplitude vector perpendicular to k."""
    j1, j2 = j
    if (j1, j2) == (0, 0):
        raise ValueError("mode (0, 0) carries no zero-mean divergence-free field")
    ch = np.zeros((2, grid.n, grid.n), complex)
    kvec = np.array([j1, j2], float)
    perp = np.array([-kvec[1], kvec[0]]) / np.hypot(*kvec)
    a = 0.5 * amplitude * np.exp(1j * phase)
    ch[:, j1 % grid.n, j2 % grid.n] += a * perp
    ch[:, -j1 % grid.n, -j2 % grid.n] += np.conj(a) * perp
    return VelocityField(_project(grid, ch), grid)


def taylor_green(grid: GridSpec, amplitude: float = 1.0) -> VelocityField:
    """u = (sin(2 pi x/L) cos(2 pi y/L), -cos(2 pi x/L) sin(2 pi y/L))."""
    x, y = grid.coords * (2 * np.pi / grid.box_side)
    u = amplitude * np.array([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    return leray_project(to_spectral(u, grid))


# ---------------------------------------------------------------------------
# Binary snapshots.

SNAPSHOT_MAGIC = b"NUDGSNAP"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sHIdHdI")


def write_snapshot(path, f: VectorField, *, t: float = 0.0, metadata: dict[str, Any] | None = None) -> None:
    """Header (magic, version, N, L, components, t, metadata length), JSON
    metadata, then little-endian float64 (re, im) pairs in C order."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    c = np.ascontiguousarray(f.coefficients)
    ncomp = 1 if c.ndim == 2 else c.shape[0]
    payload = c.view(np.float64).astype("<f8", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, f.grid.n, f.grid.box_side, ncomp, t, len(meta)))
        fh.write(meta)
        fh.write(payload)


def read_snapshot(path) -> tuple[VectorField | ScalarField, float, dict[str, Any]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, n, box, ncomp, t, mlen = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = _HEADER.size
    meta = json.loads(raw[off : off + mlen].decode())
    off += mlen
    expected = ncomp * n * n * 16
    if len(raw) - off != expected:
        raise ValueError(f"{path}: payload has {len(raw) - off} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(float).view(complex)
    grid = GridSpec(box, n)
    if ncomp == 1:
        return ScalarField(data.reshape(n, n), grid), t, meta
    out = VectorField(data.reshape(ncomp, n, n), grid)
    try:
        out = VelocityField(out.coefficients, grid)
    except ValueError:
        pass
    return out, t, meta
