"""Coarse observables I_h: low Fourier modes, volume elements, nodal values.

Volume elements and nodes act on the continuum Fourier series, not on grid
samples.  For a partition into m x m square cells, the cell means and the
nodal values depend on the lattice only through j mod m, so both reduce to
folding the N x N coefficient array onto m x m and one small inverse FFT.
The piecewise-constant reconstruction is the exact Fourier transform of the
step function, truncated by the dealiasing mask.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fields import (
    GridSpec,
    ResolutionMismatch,
    VectorField,
    VelocityField,
    _norms_sq,
    random_velocity,
    single_mode,
)

__all__ = [
    "Kind",
    "Order",
    "InterpolantSpec",
    "InterpCertificate",
    "ObservationRecord",
    "apply",
    "observe",
    "reconstruct",
    "certify_c0",
    "validate_certificate",
]


class Kind(str, enum.Enum):
    LOW_MODES = "low_modes"
    VOLUME_ELEMENTS = "volume_elements"
    NODES = "nodes"


class Order(str, enum.Enum):
    H1 = "H1"
    H2 = "H2"


@dataclass(frozen=True)
class InterpolantSpec:
    kind: Kind
    h: float
    node_offset: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "node_offset", tuple(float(o) for o in self.node_offset))
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not all(0.0 <= o < 1.0 for o in self.node_offset):
            raise ValueError("node_offset entries must lie in [0, 1)")

    @classmethod
    def with_cells(cls, kind, cells: int, box_side: float, **kw) -> "InterpolantSpec":
        """Spec whose partition has exactly ``cells`` squares per side."""
        return cls(kind, box_side / cells, **kw)

    def cells_per_side(self, box_side: float) -> int:
        if self.h > box_side * (1 + 1e-12):
            raise ValueError(f"h = {self.h} exceeds the box side {box_side}")
        return max(1, math.ceil(box_side / self.h - 1e-9))

    @property
    def cutoff(self) -> float:
        return 1.0 / self.h

    def check_grid(self, grid: GridSpec) -> None:
        if self.kind is Kind.LOW_MODES:
            if self.h > grid.box_side * (1 + 1e-12):
                raise ValueError(f"h = {self.h} exceeds the box side {grid.box_side}")
            return
        m = self.cells_per_side(grid.box_side)
        # at least two grid points per cell side
        if m > grid.n // 2:
            raise ResolutionMismatch(
                f"{m} cells per side cannot be resolved by the {grid.n}^2 grid (max {grid.n // 2})"
            )

    def low_mode_mask(self, grid: GridSpec) -> np.ndarray:
        m = grid.ksq <= self.cutoff**2 * (1 + 1e-12)
        m[0, 0] = False
        return m

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "h": self.h, "node_offset": list(self.node_offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "InterpolantSpec":
        return cls(Kind(d["kind"]), float(d["h"]), tuple(d.get("node_offset", (0.5, 0.5))))


# ---------------------------------------------------------------------------
# Folding tables.


def _cell_factor(j: np.ndarray, m: int) -> np.ndarray:
    """Mean of exp(2 pi i j s / m) over s in [0, 1]: (e^{i t} - 1)/(i t), t = 2 pi j/m."""
    t = 2 * np.pi * j / m
    out = np.ones_like(t, dtype=complex)
    nz = t != 0
    out[nz] = (np.exp(1j * t[nz]) - 1) / (1j * t[nz])
    return out


@lru_cache(maxsize=64)
def _tables(n: int, m: int, kind: Kind, offset: tuple[float, float]):
    j = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    f1 = _cell_factor(j, m)
    if kind is Kind.VOLUME_ELEMENTS:
        w1 = w2 = f1
    else:
        w1 = np.exp(2j * np.pi * j * offset[0] / m)
        w2 = np.exp(2j * np.pi * j * offset[1] / m)
    weight = np.outer(w1, w2)
    r = j % m
    fold_index = (r[:, None] * m + r[None, :]).ravel()
    # step function -> lattice coefficient
    synth = np.outer(np.conj(f1), np.conj(f1)) / m**2
    return weight, fold_index, synth, r


def _fold(ch: np.ndarray, weight: np.ndarray, fold_index: np.ndarray, m: int) -> np.ndarray:
    lead = ch.shape[:-2]
    flat = (ch * weight).reshape(-1, ch.shape[-2] * ch.shape[-1])
    out = np.empty((flat.shape[0], m * m), complex)
    for i, row in enumerate(flat):
        out[i] = np.bincount(fold_index, row.real, m * m) + 1j * np.bincount(fold_index, row.imag, m * m)
    return out.reshape(*lead, m, m)


def _cell_values(spec: InterpolantSpec, grid: GridSpec, ch: np.ndarray) -> np.ndarray:
    m = spec.cells_per_side(grid.box_side)
    weight, idx, _, _ = _tables(grid.n, m, spec.kind, spec.node_offset)
    folded = _fold(ch, weight, idx, m)
    return (np.fft.ifft2(folded) * m**2).real


def _piecewise_constant(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    m = values.shape[-1]
    _, _, synth, r = _tables(grid.n, m, Kind.VOLUME_ELEMENTS, (0.5, 0.5))
    g = np.fft.fft2(values)
    lattice = g[..., r[:, None], r[None, :]]
    return lattice * synth * grid.dealias_mask


def apply_array(spec: InterpolantSpec, grid: GridSpec, ch: np.ndarray) -> np.ndarray:
    """I_h on raw coefficient arrays of shape (..., 2, N, N)."""
    if spec.kind is Kind.LOW_MODES:
        return ch * spec.low_mode_mask(grid)
    return _piecewise_constant(grid, _cell_values(spec, grid, ch))


# ---------------------------------------------------------------------------
# Observation records.


@dataclass(frozen=True)
class ObservationRecord:
    """Raw observation data.

    ``values`` is a real array: for low modes, shape (2, 2, M) holding
    (component, re/im, mode) over one representative of each +-k pair listed
    in ``modes``; otherwise shape (2, m, m) holding per-cell values.
    """

    kind: Kind
    h: float
    n: int
    box_side: float
    values: np.ndarray
    modes: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    node_offset: tuple[float, float] = (0.5, 0.5)

    @property
    def scalar_count(self) -> int:
        return int(self.values.size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "kind": self.kind.value,
                "h": self.h,
                "n": self.n,
                "box_side": self.box_side,
                "node_offset": list(self.node_offset),
                "shape": list(self.values.shape),
                "values": self.values.ravel().tolist(),
                "modes": self.modes.ravel().tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ObservationRecord":
        d = json.loads(text)
        return cls(
            Kind(d["kind"]),
            d["h"],
            d["n"],
            d["box_side"],
            np.array(d["values"], float).reshape(d["shape"]),
            np.array(d["modes"], int).reshape(-1, 2),
            tuple(d["node_offset"]),
        )

    _HEADER = struct.Struct("<8sHBdIdddIII")
    MAGIC = b"NUDGOBS\x00"

    def to_bytes(self) -> bytes:
        kinds = list(Kind)
        v = np.ascontiguousarray(self.values, "<f8")
        shape = v.shape + (1,) * (3 - v.ndim)
        head = self._HEADER.pack(
            self.MAGIC, 1, kinds.index(self.kind), self.h, self.n, self.box_side,
            self.node_offset[0], self.node_offset[1], *shape,
        )
        modes = np.ascontiguousarray(self.modes, "<i4")
        return head + struct.pack("<I", len(modes)) + modes.tobytes() + v.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ObservationRecord":
        magic, version, kind, h, n, box, o1, o2, s0, s1, s2 = cls._HEADER.unpack_from(raw)
        if magic != cls.MAGIC or version != 1:
            raise ValueError("not an observation record")
        off = cls._HEADER.size
        (nm,) = struct.unpack_from("<I", raw, off)
        off += 4
        modes = np.frombuffer(raw, "<i4", 2 * nm, off).reshape(nm, 2).astype(int)
        off += 8 * nm
        values = np.frombuffer(raw, "<f8", s0 * s1 * s2, off).astype(float).reshape(s0, s1, s2)
        return cls(list(Kind)[kind], h, n, box, values, modes, (o1, o2))


def _half_plane_modes(mask: np.ndarray, grid: GridSpec) -> np.ndarray:
    j = grid.indices
    j1, j2 = j[0][mask], j[1][mask]
    rep = (j1 > 0) | ((j1 == 0) & (j2 > 0))
    return np.stack([j1[rep], j2[rep]], axis=1)


def observe(spec: InterpolantSpec, phi: VectorField) -> ObservationRecord:
    grid = phi.grid
    spec.check_grid(grid)
    ch = phi.coefficients
    if spec.kind is Kind.LOW_MODES:
        modes = _half_plane_modes(spec.low_mode_mask(grid), grid)
        c = ch[:, modes[:, 0] % grid.n, modes[:, 1] % grid.n]
        values = np.stack([c.real, c.imag], axis=1)
        return ObservationRecord(spec.kind, spec.h, grid.n, grid.box_side, values, modes, spec.node_offset)
    values = _cell_values(spec, grid, ch)
    return ObservationRecord(spec.kind, spec.h, grid.n, grid.box_side, values, node_offset=spec.node_offset)


def reconstruct(record: ObservationRecord, grid: GridSpec | None = None) -> VectorField:
    grid = grid or GridSpec(record.box_side, record.n)
    if record.kind is Kind.LOW_MODES:
        ch = np.zeros((2, grid.n, grid.n), complex)
        c = record.values[:, 0] + 1j * record.values[:, 1]
        i1, i2 = record.modes[:, 0] % grid.n, record.modes[:, 1] % grid.n
        ch[:, i1, i2] = c
        ch[:, -record.modes[:, 0] % grid.n, -record.modes[:, 1] % grid.n] = np.conj(c)
        return VectorField(ch, grid)
    return VectorField(_piecewise_constant(grid, record.values), grid)


def apply(spec: InterpolantSpec, phi: VectorField) -> VectorField:
    """I_h(phi) as a dealiased spectral vector field (not projected)."""
    out = reconstruct(observe(spec, phi), phi.grid)
    if spec.kind is Kind.LOW_MODES and isinstance(phi, VelocityField):
        return VelocityField(out.coefficients, phi.grid)
    return out


# ---------------------------------------------------------------------------
# Certification of the approximation constant.


@dataclass(frozen=True)
class InterpCertificate:
    kind: Kind
    h: float
    order: Order
    c0_estimate: float
    worst_case_ratio: float
    sample_count: int
    worst_probe: str
    n: int
    box_side: float

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.kind.value,
            "h": self.h,
            "order": self.order.value,
            "c0_estimate": self.c0_estimate,
            "worst_case_ratio": self.worst_case_ratio,
            "sample_count": self.sample_count,
            "worst_probe": self.worst_probe,
            "n": self.n,
            "box_side": self.box_side,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InterpCertificate":
        return cls(
            Kind(d["kind"]), d["h"], Order(d["order"]), d["c0_estimate"], d["worst_case_ratio"],
            d["sample_count"], d["worst_probe"], d["n"], d["box_side"],
        )


def probe_ratios(spec: InterpolantSpec, grid: GridSpec, order: Order, probes: np.ndarray) -> np.ndarray:
    """||phi - I_h phi||^2 / (h^2 ||phi||^2) for H1, or / (h^4 |A phi|^2 / 4) for H2."""
    err = probes - apply_array(spec, grid, probes)
    p_err = np.sum(np.abs(err) ** 2, axis=(-3, -2, -1))
    p = np.sum(np.abs(probes) ** 2, axis=-3)
    if order is Order.H1:
        denom = spec.h**2 * np.sum(grid.ksq * p, axis=(-2, -1))
    else:
        denom = 0.25 * spec.h**4 * np.sum(grid.ksq**2 * p, axis=(-2, -1))
    return p_err / denom


def _random_probes(grid: GridSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    out = np.empty((count, 2, grid.n, grid.n), complex)
    for i in range(count):
        slope = rng.uniform(0.0, 4.0)
        out[i] = random_velocity(grid, rng, slope=slope).coefficients
    return out


def _mode_probes(grid: GridSpec) -> tuple[np.ndarray, list[str]]:
    modes = _half_plane_modes(grid.dealias_mask & (grid.ksq > 0), grid)
    probes, labels = [], []
    for j1, j2 in modes:
        for phase in (0.0, np.pi / 2):
            probes.append(single_mode(grid, (int(j1), int(j2)), phase=phase).coefficients)
            labels.append(f"mode({j1},{j2}) phase={phase:.3f}")
    return np.array(probes), labels


def certify_c0(
    spec: InterpolantSpec,
    grid: GridSpec,
    order: Order | str = Order.H1,
    probes: int = 200,
    rng: np.random.Generator | None = None,
    batch: int = 64,
) -> InterpCertificate:
    """Empirical approximation constant of ``spec`` on dealiased fields.

    Probes are ``probes`` random divergence-free fields with random spectral
    slopes plus every single lattice mode (two phases each).  For H1 the
    constant is the largest ratio; for H2 the defining inequality carries
    c0^2, so c0 is the square root of the largest ratio.
    """
    order = Order(order)
    if probes < 100:
        raise ValueError(f"at least 100 probes required, got {probes}")
    spec.check_grid(grid)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst, label = -np.inf, ""
    modes, labels = _mode_probes(grid)
    for s in range(0, len(modes), batch):
        r = probe_ratios(spec, grid, order, modes[s : s + batch])
        i = int(np.argmax(r))
        if r[i] > worst:
            worst, label = float(r[i]), labels[s + i]
    done = 0
    while done < probes:
        cnt = min(batch, probes - done)
        r = probe_ratios(spec, grid, order, _random_probes(grid, rng, cnt))
        i = int(np.argmax(r))
        if r[i] > worst:
            worst, label = float(r[i]), f"random#{done + i}"
        done += cnt
    c0 = worst if order is Order.H1 else math.sqrt(worst)
    return InterpCertificate(
        spec.kind, spec.h, order, c0, worst, probes + len(modes), label, grid.n, grid.box_side
    )


def validate_certificate(
    cert: InterpCertificate,
    spec: InterpolantSpec,
    grid: GridSpec,
    probes: int,
    rng: np.random.Generator,
    slack: float = 0.05,
) -> tuple[bool, float]:
    """Check a fresh probe set against the certified ratio; returns
    (ok, worst fresh ratio / certified ratio)."""
    r = probe_ratios(spec, grid, cert.order, _random_probes(grid, rng, probes))
    worst = float(r.max() / cert.worst_case_ratio)
    return worst <= 1 + slack, worst
