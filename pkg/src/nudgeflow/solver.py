"""Time integration of the forced 2D Navier-Stokes equations, with optional
nudging toward coarse observations of a reference trajectory.

Scheme: ARS(2,2,2), a two-stage second-order L-stable IMEX Runge-Kutta
method.  Viscosity is implicit (diagonal in Fourier space).  For low-mode
observables the relaxation term is implicit as well; for volume elements and
nodes it is explicit and requires mu*dt <= 1.

The implicit nudged stage is evaluated as

    Y = Y_free + rho * (Y_obs - Y_free),   rho = a / (D + a),

which is algebraically the implicit solve but adds an exact zero whenever the
observed stage equals the free stage.  Together with forming the explicit
relaxation from I_h(u - v), this makes a synchronized pair (v = u) advance
bit-for-bit like the un-nudged equation.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .fields import (
    GridSpec,
    VectorField,
    VelocityField,
    _norms_sq,
    _project,
    half_lattice,
    norms,
    to_spectral,
)
from .interpolants import InterpolantSpec, Kind, apply_array

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "BlowUpError",
    "CFLError",
    "ConstraintError",
    "ForcingKind",
    "Forcing",
    "shell_modes",
    "StepperConfig",
    "Nudge",
    "Stepper",
    "step",
    "integrate",
    "Trajectory",
    "grashof",
    "MonitorReport",
    "monitor",
    "Monitor",
]


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    pass


class CFLError(SolverError):
    pass


class ConstraintError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Forcing


class ForcingKind(str, enum.Enum):
    STEADY_LOW_MODE = "steady_low_mode"
    TAYLOR_GREEN_SUSTAIN = "taylor_green_sustain"
    CUSTOM = "custom"


def shell_modes(kmin: float, kmax: float) -> tuple[tuple[int, int], ...]:
    """Half-plane integer modes with kmin <= |j| <= kmax."""
    r = int(math.ceil(kmax))
    out = []
    for j1 in range(0, r + 1):
        for j2 in range(-r, r + 1):
            if j1 == 0 and j2 <= 0:
                continue
            if kmin**2 <= j1 * j1 + j2 * j2 <= kmax**2:
                out.append((j1, j2))
    return tuple(out)


@dataclass(frozen=True)
class Forcing:
    """Steady, zero-mean, divergence-free body force with |f| = amplitude.

    For STEADY_LOW_MODE the listed modes get random phases and
    amplitudes from ``seed`` (the forcing realization).
    """

    kind: ForcingKind = ForcingKind.STEADY_LOW_MODE
    amplitude: float = 0.0
    active_modes: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    custom: VelocityField | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ForcingKind(self.kind))
        object.__setattr__(self, "active_modes", tuple(tuple(int(x) for x in m) for m in self.active_modes))
        if self.amplitude < 0:
            raise ValueError("forcing amplitude must be non-negative")
        if self.kind is ForcingKind.CUSTOM and self.custom is None:
            raise ValueError("custom forcing requires a field")

    @classmethod
    def for_grashof(cls, G: float, nu: float, grid: GridSpec, **kw) -> "Forcing":
        return cls(amplitude=G * nu**2 * grid.lambda1, **kw)

    def field(self, grid: GridSpec) -> VelocityField:
        if self.kind is ForcingKind.CUSTOM:
            grid.check_same(self.custom.grid)
            base = self.custom.coefficients
        elif self.kind is ForcingKind.TAYLOR_GREEN_SUSTAIN:
            x, y = grid.coords * (2 * np.pi / grid.box_side)
            real = np.array([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
            base = to_spectral(real, grid).coefficients
        else:
            if not self.active_modes:
                return VelocityField.zeros(grid)
            rng = np.random.default_rng(self.seed)
            base = np.zeros((2, grid.n, grid.n), complex)
            for j1, j2 in self.active_modes:
                if max(abs(j1), abs(j2)) > grid.n // 3:
                    raise ValueError(f"forcing mode {(j1, j2)} is outside the dealiased range")
                kv = np.array([j1, j2], float)
                perp = np.array([-kv[1], kv[0]]) / np.hypot(*kv)
                a = rng.uniform(0.5, 1.0) * np.exp(2j * np.pi * rng.uniform())
                base[:, j1 % grid.n, j2 % grid.n] += a * perp
                base[:, -j1 % grid.n, -j2 % grid.n] += np.conj(a) * perp
        base = _project(grid, np.array(base) * grid.dealias_mask)
        size = math.sqrt(_norms_sq(grid, base)[0])
        if self.amplitude == 0 or size == 0:
            return VelocityField.zeros(grid)
        return VelocityField(base * (self.amplitude / size), grid)

    def to_dict(self) -> dict:
        if self.kind is ForcingKind.CUSTOM:
            raise ValueError("custom forcing is not serializable to a config")
        return {
            "kind": self.kind.value,
            "amplitude": self.amplitude,
            "active_modes": [list(m) for m in self.active_modes],
            "seed": self.seed,
        }


def grashof(forcing: VelocityField | float, nu: float, lambda1: float) -> float:
    """G = |f| / (nu^2 lambda_1) for a steady force."""
    size = forcing if isinstance(forcing, (int, float)) else norms(forcing)[0]
    return float(size) / (nu**2 * lambda1)


# ---------------------------------------------------------------------------
# Stepper


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    scheme: str = "ars222"
    cfl_safety: float = 0.5
    cfl_check_stride: int = 10
    blowup_factor: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme != "ars222":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.cfl_safety < 1:
            raise ValueError("cfl_safety must lie in (0, 1)")
        if self.cfl_check_stride < 1:
            raise ValueError("cfl_check_stride must be >= 1")


@dataclass(frozen=True)
class Nudge:
    mu: float
    interpolant: InterpolantSpec
    c0: float = 1.0
    override: bool = False


_GAMMA = 1 - 1 / math.sqrt(2)
_DELTA = 1 - 1 / (2 * _GAMMA)


class Stepper:
    """Advances half-lattice coefficient arrays of shape (2, N, N//2 + 1).

    ``advance`` moves a single trajectory; ``advance_pair`` moves the
    reference u and the nudged v in lockstep, observing u at every stage.
    Use ``to_half``/``to_full`` to convert from and to full-lattice arrays.
    """

    def __init__(
        self,
        grid: GridSpec,
        nu: float,
        config: StepperConfig,
        forcing: VelocityField | None = None,
        nudge: Nudge | None = None,
    ):
        if not nu > 0:
            raise ValueError("viscosity must be positive")
        self.grid = grid
        self.hl = hl = half_lattice(grid)
        self.nu = nu
        self.config = config
        self.dt = config.dt
        full_f = np.zeros((2, grid.n, grid.n), complex) if forcing is None else np.asarray(forcing.coefficients)
        self.f = hl.to_half(full_f)
        self.nudge = nudge
        self._denom = 1 + config.dt * _GAMMA * nu * hl.ksq
        self._lin = -nu * hl.ksq
        self.steps = 0
        self._energy_ref = None
        self._implicit_mask = None
        if nudge is not None:
            check_nudge(nudge, nu, config.dt, grid)
            if nudge.interpolant.kind is Kind.LOW_MODES:
                chi = hl.to_half(nudge.interpolant.low_mode_mask(grid)[None])[0]
                a = config.dt * _GAMMA * nudge.mu * chi
                self._implicit_mask = chi
                self._rho = a / (self._denom + a)

    def to_half(self, ch: np.ndarray) -> np.ndarray:
        return self.hl.to_half(np.asarray(ch))

    def to_full(self, hh: np.ndarray) -> np.ndarray:
        return self.hl.to_full(hh)

    def _rhs(self, y: np.ndarray) -> np.ndarray:
        return self.f - self.hl.bilinear(y, y)

    def _relax(self, diff: np.ndarray) -> np.ndarray:
        """mu P_sigma I_h(diff) for explicitly treated observables."""
        nd, hl = self.nudge, self.hl
        ih = apply_array(nd.interpolant, self.grid, hl.to_full(diff))
        return nd.mu * hl.project(hl.to_half(ih))

    def advance(self, x: np.ndarray) -> np.ndarray:
        dt, d = self.dt, self._denom
        n1 = self._rhs(x)
        y2 = (x + dt * _GAMMA * n1) / d
        n2 = self._rhs(y2)
        y3 = (x + dt * (_DELTA * n1 + (1 - _DELTA) * n2) + dt * (1 - _GAMMA) * self._lin * y2) / d
        self._post(y3)
        return y3

    def advance_nudged(self, v: np.ndarray, observed: Sequence[np.ndarray]) -> np.ndarray:
        """Nudged step with the observed reference given at the three stage
        times (t, t + gamma dt, t + dt)."""
        if self.nudge is None:
            raise ValueError("stepper has no nudging configured")
        _, y = self._nudged_stages(v, list(observed), None)
        self._post(y)
        return y

    def advance_pair(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.nudge is None:
            un = self.advance(u)
            vn = self.advance(v)
            self.steps -= 1
            return un, vn
        un, vn = self._nudged_stages(v, None, u)
        self._post(un)
        self._post(vn, count=False)
        return un, vn

    def _nudged_stages(self, v, observed, u):
        dt, d = self.dt, self._denom
        implicit = self._implicit_mask is not None
        lin = self._lin
        paired = u is not None
        # stage 1
        n1v = self._rhs(v)
        if paired:
            n1u = self._rhs(u)
            obs1 = u
        else:
            obs1 = observed[0]
        if not implicit:
            n1v = n1v + self._relax(obs1 - v)
        y2v = (v + dt * _GAMMA * n1v) / d
        if paired:
            y2u = (u + dt * _GAMMA * n1u) / d
            obs2 = y2u
        else:
            obs2 = observed[1]
        if implicit:
            y2v = y2v + self._rho * (obs2 - y2v)
        # stage 2
        n2v = self._rhs(y2v)
        if paired:
            n2u = self._rhs(y2u)
        if not implicit:
            n2v = n2v + self._relax(obs2 - y2v)
        rhs3 = v + dt * (_DELTA * n1v + (1 - _DELTA) * n2v) + dt * (1 - _GAMMA) * lin * y2v
        if implicit:
            rhs3 = rhs3 + (dt * (1 - _GAMMA) * self.nudge.mu) * (self._implicit_mask * (obs2 - y2v))
        y3v = rhs3 / d
        y3u = None
        if paired:
            y3u = (u + dt * (_DELTA * n1u + (1 - _DELTA) * n2u) + dt * (1 - _GAMMA) * lin * y2u) / d
            obs3 = y3u
        else:
            obs3 = observed[2]
        if implicit:
            y3v = y3v + self._rho * (obs3 - y3v)
        return y3u, y3v

    def _post(self, y: np.ndarray, count: bool = True) -> None:
        if count:
            self.steps += 1
        if self.steps % self.config.cfl_check_stride:
            return
        hl = self.hl
        energy = hl.norms_sq(y)[0]
        if not math.isfinite(energy):
            raise BlowUpError(f"non-finite state after {self.steps} steps")
        if self._energy_ref is None:
            forced = (math.sqrt(hl.norms_sq(self.f)[0]) / (self.nu * self.grid.lambda1)) ** 2
            self._energy_ref = max(energy, forced, 1e-300)
        if energy > self.config.blowup_factor * self._energy_ref:
            raise BlowUpError(
                f"|u|^2 = {energy:.3e} exceeds {self.config.blowup_factor:g} x reference "
                f"{self._energy_ref:.3e} after {self.steps} steps"
            )
        umax = np.abs(hl.real(y)).max()
        courant = umax * self.dt / self.grid.dx
        if courant > self.config.cfl_safety:
            raise CFLError(f"Courant number {courant:.3f} exceeds {self.config.cfl_safety} (max |u| = {umax:.3e})")


def check_nudge(nudge: Nudge, nu: float, dt: float, grid: GridSpec) -> None:
    if not nudge.mu >= 0:
        raise ConstraintError("mu must be non-negative")
    nudge.interpolant.check_grid(grid)
    if nudge.override:
        return
    if nudge.mu * nudge.c0 * nudge.interpolant.h**2 > nu * (1 + 1e-12):
        raise ConstraintError(
            "well-posedness constraint mu*c0*h^2 <= nu violated: "
            f"mu={nudge.mu:g}, c0={nudge.c0:g}, h={nudge.interpolant.h:g}, nu={nu:g} "
            f"(mu*c0*h^2 = {nudge.mu * nudge.c0 * nudge.interpolant.h ** 2:g})"
        )
    if nudge.interpolant.kind is not Kind.LOW_MODES and nudge.mu * dt > 1:
        raise ConstraintError(f"explicit relaxation requires mu*dt <= 1, got {nudge.mu * dt:g}")


def step(
    state: VelocityField,
    forcing: VelocityField | None,
    nu: float,
    config: StepperConfig,
    nudge: Nudge | None = None,
    observed: VelocityField | Sequence[VelocityField] | None = None,
) -> VelocityField:
    """One time step.  With ``nudge``, ``observed`` is the reference field,
    either held fixed over the step or given at the three stage times."""
    stepper = Stepper(state.grid, nu, config, forcing, nudge)
    x = stepper.to_half(state.coefficients)
    if nudge is None:
        out = stepper.advance(x)
    else:
        if observed is None:
            raise ValueError("nudged step needs an observed field")
        obs = [observed] * 3 if isinstance(observed, VectorField) else list(observed)
        out = stepper.advance_nudged(x, [stepper.to_half(o.coefficients) for o in obs])
    return VelocityField(stepper.to_full(out), state.grid, tol=1e-10)


@dataclass
class Trajectory:
    final: VelocityField
    t: float
    steps: int
    samples: list = field(default_factory=list)


Callback = Callable[[float, np.ndarray], object]


def integrate(
    u0: VelocityField,
    forcing: VelocityField | None,
    nu: float,
    T: float,
    config: StepperConfig,
    callbacks: Iterable[Callback] = (),
    stride: int = 1,
    t0: float = 0.0,
) -> Trajectory:
    """Advance u0 over [t0, t0 + T] with a fixed step.

    Each callback is called as cb(t, coefficients) with full-lattice
    coefficients at t0 and then every ``stride`` steps; non-None return
    values are collected in ``samples``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    callbacks = list(callbacks)
    stepper = Stepper(u0.grid, nu, config, forcing)
    nsteps = int(round(T / config.dt))
    x = stepper.to_half(u0.coefficients)
    samples = []

    def fire(i):
        t = t0 + i * config.dt
        full = stepper.to_full(x)
        for cb in callbacks:
            r = cb(t, full)
            if r is not None:
                samples.append(r)

    fire(0)
    for i in range(1, nsteps + 1):
        x = stepper.advance(x)
        if i % stride == 0 or i == nsteps:
            fire(i)
    return Trajectory(VelocityField(stepper.to_full(x), u0.grid, tol=1e-10), t0 + nsteps * config.dt, nsteps, samples)


# ---------------------------------------------------------------------------
# A-priori bound monitors


@dataclass(frozen=True)
class MonitorReport:
    t: float
    l2_sq: float
    h1_sq: float
    h2_sq: float
    bounds: dict
    window_integrals: dict
    auball_ratio: float
    post_spinup: bool
    violations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "l2_sq": self.l2_sq,
            "h1_sq": self.h1_sq,
            "h2_sq": self.h2_sq,
            "bounds": self.bounds,
            "window_integrals": self.window_integrals,
            "auball_ratio": self.auball_ratio,
            "post_spinup": self.post_spinup,
            "violations": list(self.violations),
        }


def _bounds(G: float, nu: float, lam: float, window: float) -> dict:
    return {
        "energy": 2 * nu**2 * G**2,
        "enstrophy": 2 * nu**2 * lam * G**2,
        "enstrophy_window": 2 * (1 + window * nu * lam) * nu * G**2,
        "palinstrophy_window": 2 * (1 + window * nu * lam) * nu * lam * G**2,
    }


def monitor(
    state: VelocityField | np.ndarray,
    t: float,
    G: float,
    nu: float,
    lambda1: float,
    window: float,
    *,
    grid: GridSpec | None = None,
    window_integrals: dict | None = None,
    post_spinup: bool = True,
    atol: float = 1e-12,
) -> MonitorReport:
    """Compare |u|^2, ||u||^2 (and windowed integrals of ||u||^2, |Au|^2 when
    given) with their long-time bounds.  Violations are flagged only when
    ``post_spinup``.  The |Au|^2 bound has an unknown constant, so only the
    ratio |Au|^2 / (nu^2 lambda1^2 (1+G)^4) is reported."""
    if isinstance(state, VelocityField):
        grid, ch = state.grid, state.coefficients
    else:
        ch = state
    a, b, c = _norms_sq(grid, ch)
    bounds = _bounds(G, nu, lambda1, window)
    wi = dict(window_integrals or {})
    violations = []
    if post_spinup:
        checks = {"energy": a, "enstrophy": b, **wi}
        for name, value in checks.items():
            if value > bounds[name] * (1 + 1e-12) + atol:
                violations.append(name)
    ratio = c / (nu**2 * lambda1**2 * (1 + G) ** 4)
    return MonitorReport(t, a, b, c, bounds, wi, ratio, post_spinup, tuple(violations))


class Monitor:
    """Stateful wrapper that also integrates ||u||^2 and |Au|^2 over the
    trailing window (trapezoid rule on the sampled history)."""

    def __init__(self, grid: GridSpec, G: float, nu: float, window: float, t0: float, atol: float = 1e-12):
        self.grid, self.G, self.nu, self.window, self.t0, self.atol = grid, G, nu, window, t0, atol
        self.history: list[tuple[float, float, float]] = []
        self.reports: list[MonitorReport] = []

    def __call__(self, t: float, ch: np.ndarray) -> MonitorReport:
        _, b, c = _norms_sq(self.grid, ch)
        self.history.append((t, b, c))
        start = t - self.window
        while len(self.history) > 1 and self.history[1][0] <= start + 1e-12:
            self.history.pop(0)
        wi = {}
        if self.history[0][0] <= start + 1e-9 * max(1.0, abs(start)):
            h = np.array(self.history)
            wi = {
                "enstrophy_window": float(np.trapezoid(h[:, 1], h[:, 0])),
                "palinstrophy_window": float(np.trapezoid(h[:, 2], h[:, 0])),
            }
        rep = monitor(
            ch, t, self.G, self.nu, self.grid.lambda1, self.window, grid=self.grid,
            window_integrals=wi, post_spinup=t >= self.t0, atol=self.atol,
        )
        self.reports.append(rep)
        return rep

    def violation_counts(self) -> dict:
        out: dict = {}
        for r in self.reports:
            for v in r.violations:
                out[v] = out.get(v, 0) + 1
        return out

    def auball_estimate(self) -> float:
        post = [r.auball_ratio for r in self.reports if r.post_spinup]
        return max(post) if post else float("nan")
