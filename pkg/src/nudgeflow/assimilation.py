"""Coupled truth/assimilated runs, convergence thresholds and decay fits.

The reference trajectory u solves the forced Navier-Stokes equations; the
assimilated trajectory v solves the same equations plus the relaxation term
mu P_sigma (I_h(u) - I_h(v)).  Both advance in lockstep through
``Stepper.advance_pair`` so every stage of v sees the matching stage of u.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .fields import GridSpec, VelocityField, random_velocity, read_snapshot
from .interpolants import InterpolantSpec, Kind, Order, certify_c0
from .solver import (
    Forcing,
    Monitor,
    Nudge,
    Stepper,
    StepperConfig,
    grashof,
    shell_modes,
)

log = logging.getLogger(__name__)

__all__ = [
    "ThresholdReport",
    "thresholds",
    "feasible_h",
    "minlog_phi",
    "minlog_lower_bound",
    "InsufficientSamples",
    "ErrorSeries",
    "fit_decay_rate",
    "ForcingSpec",
    "V0Policy",
    "AssimilationConfig",
    "PairResult",
    "spin_up",
    "run_pair",
    "PredictionResult",
    "prediction_experiment",
    "prediction_ladder",
    "CalibrationResult",
    "calibrate_c",
    "certified_c0",
    "DEFAULT_C",
]

# Bracket top from calibrate_c on the default forcing (G ladder 10, 50, 250,
# N = 64, low modes); regenerate with scripts/calibrate.py.
DEFAULT_C = 1e-4


# ---------------------------------------------------------------------------
# Thresholds


@dataclass(frozen=True)
class ThresholdReport:
    G: float
    lambda1: float
    nu: float
    c0: float
    c: float
    c1: float
    c2: float
    c3: float
    c4: float
    J: float
    dirichlet_h_bound: float
    periodic_h_bound: float
    mu_dirichlet: float
    mu_periodic: float
    mu_periodic_alt: float
    h: float | None = None
    mu: float | None = None
    wellposed_bound: float | None = None
    feasible: bool | None = None
    h_bound_met: bool | None = None
    mu_in_window: bool | None = None

    def to_dict(self) -> dict:
        d = {"schema_version": 1}
        for k in self.__dataclass_fields__:
            d[k] = getattr(self, k)
        return d

    def format(self) -> str:
        width = max(len(k) for k in self.__dataclass_fields__)
        lines = []
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if isinstance(v, float):
                v = f"{v:.6g}"
            lines.append(f"{k:<{width}}  {v}")
        return "\n".join(lines)


def thresholds(
    G: float,
    nu: float,
    lambda1: float,
    c0: float,
    c: float,
    h: float | None = None,
    mu: float | None = None,
) -> ThresholdReport:
    """Sufficient-condition thresholds for synchronization.

    ``dirichlet_h_bound`` and ``periodic_h_bound`` are lower bounds on 1/h^2.
    With ``h`` given, ``feasible`` says whether mu_periodic fits under the
    well-posedness ceiling nu/(c0 h^2); with ``mu`` as well, ``mu_in_window``
    checks mu_periodic <= mu <= nu/(c0 h^2).
    """
    if G < 0:
        raise ValueError(f"G must be non-negative, got {G}")
    for name, val in (("nu", nu), ("lambda1", lambda1), ("c0", c0), ("c", c)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    c1 = 5 * c0 * c**2
    c3 = 2 * c * math.log(2 * c**1.5)
    c4 = 8 * c
    c2 = 3 * max(c3, c4)
    lg = math.log1p(G)
    J = c3 + c4 * lg
    wp = feasible = h_ok = in_window = None
    if h is not None:
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        wp = nu / (c0 * h**2)
    mu_per = 3 * nu * lambda1 * J * G
    phb = c2 * lambda1 * G * (1 + lg)
    if h is not None:
        feasible = mu_per <= wp
        h_ok = 1 / h**2 >= phb
        if mu is not None:
            in_window = mu_per <= mu <= wp * (1 + 1e-12)
    return ThresholdReport(
        G=G, lambda1=lambda1, nu=nu, c0=c0, c=c,
        c1=c1, c2=c2, c3=c3, c4=c4, J=J,
        dirichlet_h_bound=c1 * lambda1 * G**2,
        periodic_h_bound=phb,
        mu_dirichlet=5 * c**2 * G**2 * nu * lambda1,
        mu_periodic=mu_per,
        mu_periodic_alt=3 * c2 * nu * lambda1 * G * (1 + lg) / c0,
        h=h, mu=mu, wellposed_bound=wp, feasible=feasible, h_bound_met=h_ok, mu_in_window=in_window,
    )


def feasible_h(mu: float, nu: float, c0: float) -> float:
    """Largest h with mu c0 h^2 <= nu."""
    return math.sqrt(nu / (c0 * mu)) if mu > 0 else math.inf


def minlog_phi(r, beta):
    """phi(r) = r - beta (1 + log r), defined for r >= 1, beta > 0."""
    r = np.asarray(r, float)
    beta = np.asarray(beta, float)
    if np.any(r < 1) or np.any(~(beta > 0)):
        raise ValueError("minlog_phi needs r >= 1 and beta > 0")
    out = r - beta * (1 + np.log(r))
    return out if out.ndim else float(out)


def minlog_lower_bound(beta):
    """min over r >= 1 of phi: 1 - beta for beta <= 1, -beta log(beta) above."""
    beta = np.asarray(beta, float)
    if np.any(~(beta > 0)):
        raise ValueError("beta must be positive")
    out = np.where(beta > 1, -beta * np.log(np.maximum(beta, 1.0)), 1 - beta)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Error series and decay fits


class InsufficientSamples(ValueError):
    pass


MIN_FIT_SAMPLES = 10


def fit_decay_rate(series, window: tuple[float, float] | None = None, floor: float | None = None):
    """Least-squares fit of log y = log C - alpha t.

    ``series`` is an ErrorSeries (fit on the H1 norm) or a pair (t, y).
    Samples outside ``window`` or at or below ``floor`` are ignored; the
    default floor is the series' own.  Returns (alpha, C, rms residual of
    the log fit).
    """
    if isinstance(series, ErrorSeries):
        t, y = series.t, series.h1
        floor = series.floor_abs if floor is None else floor
    else:
        t, y = (np.asarray(a, float) for a in series)
        floor = 0.0 if floor is None else floor
    keep = y > floor
    if window is not None:
        keep &= (t >= window[0]) & (t <= window[1])
    if keep.sum() < MIN_FIT_SAMPLES:
        raise InsufficientSamples(
            f"need at least {MIN_FIT_SAMPLES} samples above the floor in the window, got {int(keep.sum())}"
        )
    tt, ly = t[keep], np.log(y[keep])
    A = np.stack([np.ones_like(tt), -tt], axis=1)
    (logc, alpha), *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ np.array([logc, alpha])
    return float(alpha), float(math.exp(logc)), float(np.sqrt(np.mean(res**2)))


@dataclass
class ErrorSeries:
    """Sampled |w| and ||w|| of w = u - v, with the truth norms alongside.

    The round-off floor is relative: ``floor`` times the mean of ||u||.
    """

    t: np.ndarray
    l2: np.ndarray
    h1: np.ndarray
    l2_u: np.ndarray | None = None
    h1_u: np.ndarray | None = None
    floor: float = 1e-13
    transient_fraction: float = 0.5
    fitted_rate: float | None = None
    fit_constant: float | None = None
    fit_window: tuple[float, float] | None = None
    fit_residual: float | None = None
    fit_error: str | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.l2 = np.asarray(self.l2, float)
        self.h1 = np.asarray(self.h1, float)
        if self.l2.shape != self.t.shape or self.h1.shape != self.t.shape:
            raise ValueError("sample arrays must have equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def floor_abs(self) -> float:
        scale = float(np.mean(self.h1_u)) if self.h1_u is not None and len(self.h1_u) else 1.0
        return self.floor * scale

    def transient_end(self) -> int:
        """Index of the first sample after the peak with ||w|| below
        ``transient_fraction`` of the peak."""
        if not len(self.h1):
            return 0
        peak = int(np.argmax(self.h1))
        below = np.nonzero(self.h1[peak:] < self.transient_fraction * self.h1[peak])[0]
        return peak + int(below[0]) if len(below) else len(self.h1)

    def fit_range(self) -> tuple[int, int]:
        """[start, stop) of post-transient samples before the first one at the floor."""
        i0 = self.transient_end()
        at_floor = np.nonzero(self.h1[i0:] <= self.floor_abs)[0]
        i1 = i0 + int(at_floor[0]) if len(at_floor) else len(self.h1)
        return i0, i1

    def fit(self) -> "ErrorSeries":
        i0, i1 = self.fit_range()
        if i1 - i0 < MIN_FIT_SAMPLES:
            self.fitted_rate = self.fit_constant = self.fit_residual = self.fit_window = None
            self.fit_error = f"only {i1 - i0} post-transient samples above the floor"
            return self
        self.fit_window = (float(self.t[i0]), float(self.t[i1 - 1]))
        sl = slice(i0, i1)
        self.fitted_rate, self.fit_constant, self.fit_residual = fit_decay_rate(
            (self.t[sl], self.h1[sl]), floor=self.floor_abs
        )
        self.fit_error = None
        return self

    def decay_orders(self) -> float:
        """log10 of (peak ||w||) / (smallest ||w|| above the floor)."""
        if not len(self.h1):
            return 0.0
        above = self.h1[self.h1 > self.floor_abs]
        if not len(above):
            return 0.0
        return float(math.log10(self.h1.max() / above.min()))

    def final_drop(self) -> float:
        """Last ||w|| over the peak."""
        return float(self.h1[-1] / self.h1.max()) if self.h1.max() > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "samples": [[float(a), float(b), float(c)] for a, b, c in zip(self.t, self.l2, self.h1)],
            "floor": self.floor,
            "floor_abs": self.floor_abs,
            "fitted_rate": self.fitted_rate,
            "fit_constant": self.fit_constant,
            "fit_window": list(self.fit_window) if self.fit_window else None,
            "fit_residual": self.fit_residual,
            "fit_error": self.fit_error,
            "decay_orders": self.decay_orders(),
        }


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ForcingSpec:
    """Steady forcing on the shell kmin <= |j| <= kmax with |f| = G nu^2 lambda1."""

    grashof: float = 250.0
    kmin: float = 2.0
    kmax: float = 2.3
    seed: int = 0

    def __post_init__(self):
        if self.grashof < 0:
            raise ValueError("grashof must be non-negative")
        if not 0 <= self.kmin <= self.kmax:
            raise ValueError("forcing shell needs 0 <= kmin <= kmax")

    def build(self, grid: GridSpec, nu: float) -> Forcing:
        return Forcing.for_grashof(self.grashof, nu, grid, active_modes=shell_modes(self.kmin, self.kmax), seed=self.seed)


class V0Policy(str, enum.Enum):
    ZERO = "zero"
    TRUTH = "truth"
    GIVEN = "given"
    PERTURBED = "perturbed"


@dataclass(frozen=True)
class AssimilationConfig:
    """Everything needed to reproduce one coupled run.

    ``spinup`` defaults to 5/(nu lambda1); ``c0`` to a certificate of the
    interpolant computed on the fly; ``init_energy`` (|u0|^2 of the random
    initial truth before spin-up) to (0.2 nu G)^2 / lambda1.
    """

    n: int = 64
    box_side: float = 2 * math.pi
    nu: float = 1.0
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    interpolant: InterpolantSpec = field(default_factory=lambda: InterpolantSpec(Kind.LOW_MODES, 0.35))
    mu: float = 8.0
    c0: float | None = None
    c: float = DEFAULT_C
    v0_policy: V0Policy = V0Policy.ZERO
    v0_path: str | None = None
    perturbation: float = 1e-3
    spinup: float | None = None
    T: float = 10.0
    stepper: StepperConfig = field(default_factory=lambda: StepperConfig(dt=2e-3, cfl_safety=0.9))
    sample_stride: int = 25
    seed: int = 1
    init_kmax: float = 4.0
    init_energy: float | None = None
    monitor_window: float | None = None
    checkpoint_stride: int = 0
    floor: float = 1e-13
    override: bool = False

    def __post_init__(self):
        object.__setattr__(self, "v0_policy", V0Policy(self.v0_policy))
        if self.n < 8 or self.n % 2:
            raise ValueError("n must be an even integer >= 8")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        if self.spinup is not None and self.spinup < 0:
            raise ValueError("spinup must be non-negative")
        if self.c0 is not None and not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.v0_policy is V0Policy.GIVEN and not self.v0_path:
            raise ValueError("v0_policy 'given' needs v0_path")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.box_side, self.n)

    @property
    def spinup_time(self) -> float:
        return 5 / (self.nu * self.grid.lambda1) if self.spinup is None else self.spinup

    @property
    def window(self) -> float:
        return 1 / (self.nu * self.grid.lambda1) if self.monitor_window is None else self.monitor_window

    def with_(self, **kw) -> "AssimilationConfig":
        return replace(self, **kw)


def _order_for(kind: Kind) -> Order:
    return Order.H2 if kind is Kind.NODES else Order.H1


_C0_CACHE: dict = {}


def certified_c0(spec: InterpolantSpec, grid: GridSpec, probes: int = 200, seed: int = 0) -> float:
    """Certified constant for ``spec``; low modes satisfy the bound with 1."""
    key = (spec, grid, probes, seed)
    if key not in _C0_CACHE:
        cert = certify_c0(spec, grid, _order_for(spec.kind), probes=probes, rng=np.random.default_rng(seed))
        _C0_CACHE[key] = cert.c0_estimate
    return _C0_CACHE[key]


# ---------------------------------------------------------------------------
# Coupled runs


@dataclass
class PairResult:
    config: AssimilationConfig
    truth: VelocityField
    assimilated: VelocityField
    series: ErrorSeries
    monitor: Monitor
    report: ThresholdReport
    c0: float
    rows: list = field(default_factory=list)
    kept: dict = field(default_factory=dict)
    steps: int = 0
    wall_time: float = 0.0
    stopped_early: bool = False


def _initial_truth(cfg: AssimilationConfig) -> VelocityField:
    grid = cfg.grid
    e = cfg.init_energy
    if e is None:
        e = (0.2 * cfg.nu * cfg.forcing.grashof) ** 2 / grid.lambda1
    rng = np.random.default_rng(cfg.seed)
    return random_velocity(grid, rng, kmax=cfg.init_kmax * 2 * math.pi / cfg.box_side, energy=e)


def spin_up(cfg: AssimilationConfig, monitor: Monitor | None = None) -> np.ndarray:
    """Truth state (half-lattice coefficients) after the spin-up interval.

    Monitor samples are taken on the assimilation clock, t in [-spinup, 0].
    """
    grid = cfg.grid
    f = cfg.forcing.build(grid, cfg.nu).field(grid)
    st = Stepper(grid, cfg.nu, cfg.stepper, f)
    x = st.to_half(_initial_truth(cfg).coefficients)
    nsteps = int(round(cfg.spinup_time / cfg.stepper.dt))
    t0 = -nsteps * cfg.stepper.dt
    if monitor is not None:
        monitor(t0, st.to_full(x))
    for i in range(1, nsteps + 1):
        x = st.advance(x)
        if monitor is not None and i % cfg.sample_stride == 0 and i < nsteps:
            monitor(t0 + i * cfg.stepper.dt, st.to_full(x))
    return x


def _initial_v(cfg: AssimilationConfig, st: Stepper, u: np.ndarray) -> np.ndarray:
    grid = cfg.grid
    if cfg.v0_policy is V0Policy.ZERO:
        return np.zeros_like(u)
    if cfg.v0_policy is V0Policy.TRUTH:
        return u.copy()
    if cfg.v0_policy is V0Policy.GIVEN:
        fld, _, _ = read_snapshot(cfg.v0_path)
        grid.check_same(fld.grid)
        return st.to_half(VelocityField(fld.coefficients, grid, tol=1e-10).coefficients)
    rng = np.random.default_rng([cfg.seed, 1])
    size = math.sqrt(st.hl.norms_sq(u)[0])
    pert = random_velocity(grid, rng, energy=(cfg.perturbation * size) ** 2)
    return u + st.to_half(pert.coefficients)


def _fit_ready(ts, h1, h1u, floor) -> bool:
    s = ErrorSeries(ts, h1, h1, None, h1u, floor=floor)
    i0, i1 = s.fit_range()
    return i1 - i0 >= MIN_FIT_SAMPLES


def run_pair(
    cfg: AssimilationConfig,
    *,
    truth0: np.ndarray | None = None,
    callbacks: Iterable[Callable] = (),
    keep_times: Sequence[float] = (),
    stop_drop: float | None = None,
    fit: bool = True,
    monitors: bool = True,
) -> PairResult:
    """Spin up the truth, then advance (u, v) in lockstep for cfg.T.

    ``truth0`` skips the spin-up (half-lattice coefficients).  Each callback
    gets (t, u_half, v_half, row) at every sample.  States closest to each
    of ``keep_times`` are kept as half-lattice pairs.  With ``stop_drop``
    the run ends once ||w|| falls below stop_drop times its peak and enough
    post-transient samples exist for a fit.  ``monitors=False`` skips the
    a-priori bound monitor (the returned monitor is then empty).
    """
    wall = time.perf_counter()
    grid = cfg.grid
    forcing = cfg.forcing.build(grid, cfg.nu)
    f = forcing.field(grid)
    G = grashof(f, cfg.nu, grid.lambda1)
    spec = cfg.interpolant
    spec.check_grid(grid)
    c0 = cfg.c0 if cfg.c0 is not None else certified_c0(spec, grid)
    report = thresholds(G, cfg.nu, grid.lambda1, c0, cfg.c, h=spec.h, mu=cfg.mu)
    if not report.mu_in_window:
        msg = (
            f"mu={cfg.mu:g} outside [mu_periodic, nu/(c0 h^2)] = "
            f"[{report.mu_periodic:.4g}, {report.wellposed_bound:.4g}] for c={cfg.c:g}"
        )
        if cfg.override:
            log.info(msg)
        else:
            log.warning(msg)
    nudge = Nudge(cfg.mu, spec, c0=c0, override=cfg.override)
    st = Stepper(grid, cfg.nu, cfg.stepper, f, nudge)
    mon = Monitor(grid, G, cfg.nu, cfg.window, t0=0.0)
    if truth0 is None:
        u = spin_up(cfg, mon if monitors else None)
    else:
        u = np.array(truth0, copy=True)
    v = _initial_v(cfg, st, u)
    hl, dt = st.hl, cfg.stepper.dt
    nsteps = int(round(cfg.T / dt))
    keep_steps = {int(round(tk / dt)): tk for tk in keep_times}
    kept = {}
    callbacks = list(callbacks)
    ts, l2, h1, l2u, h1u, rows = [], [], [], [], [], []
    peak = 0.0
    stopped = False

    def sample(i):
        nonlocal peak
        t = i * dt
        w = u - v
        a, b, _ = hl.norms_sq(w)
        au, bu, _ = hl.norms_sq(u)
        flags = ";".join(mon(t, st.to_full(u)).violations) if monitors else ""
        row = (t, math.sqrt(a), math.sqrt(b), math.sqrt(au), math.sqrt(bu), flags)
        ts.append(t)
        l2.append(row[1])
        h1.append(row[2])
        l2u.append(row[3])
        h1u.append(row[4])
        rows.append(row)
        peak = max(peak, row[2])
        for cb in callbacks:
            cb(t, u, v, row)
        return row

    sample(0)
    if 0 in keep_steps:
        kept[keep_steps[0]] = (u.copy(), v.copy())
    i = 0
    for i in range(1, nsteps + 1):
        u, v = st.advance_pair(u, v)
        if i in keep_steps:
            kept[keep_steps[i]] = (u.copy(), v.copy())
        if i % cfg.sample_stride == 0 or i == nsteps:
            row = sample(i)
            if (
                stop_drop is not None
                and peak > 0
                and row[2] <= stop_drop * peak
                and not keep_steps.keys() - kept.keys()
                and _fit_ready(ts, h1, h1u, cfg.floor)
            ):
                stopped = True
                break
    series = ErrorSeries(ts, l2, h1, l2u, h1u, floor=cfg.floor)
    if fit:
        series.fit()
    return PairResult(
        config=cfg,
        truth=VelocityField(st.to_full(u), grid, tol=1e-9),
        assimilated=VelocityField(st.to_full(v), grid, tol=1e-9),
        series=series,
        monitor=mon,
        report=report,
        c0=c0,
        rows=rows,
        kept=kept,
        steps=i,
        wall_time=time.perf_counter() - wall,
        stopped_early=stopped,
    )


# ---------------------------------------------------------------------------
# Prediction from the synchronized state


@dataclass
class PredictionResult:
    t1: float
    T_pred: float
    times: np.ndarray
    error: np.ndarray
    rel_error: np.ndarray
    eps: tuple[float, ...]
    time_to_eps: tuple[float, ...]
    censored: tuple[bool, ...]
    initial_error: float

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "t1": self.t1,
            "T_pred": self.T_pred,
            "eps": list(self.eps),
            "time_to_eps": list(self.time_to_eps),
            "censored": list(self.censored),
            "initial_error": self.initial_error,
            "series": [[float(a), float(b), float(c)] for a, b, c in zip(self.times, self.error, self.rel_error)],
        }


def _forecast(cfg, u, v, t1, T_pred, eps, stride) -> PredictionResult:
    grid = cfg.grid
    f = cfg.forcing.build(grid, cfg.nu).field(grid)
    st = Stepper(grid, cfg.nu, cfg.stepper, f)
    dt = cfg.stepper.dt
    nsteps = int(round(T_pred / dt))
    times, err, rel = [], [], []

    def sample(i):
        e = math.sqrt(st.hl.norms_sq(v - u)[0])
        size = math.sqrt(st.hl.norms_sq(u)[0])
        times.append(i * dt)
        err.append(e)
        rel.append(e / size if size > 0 else math.inf if e > 0 else 0.0)

    sample(0)
    for i in range(1, nsteps + 1):
        u, v = st.advance_pair(u, v)
        if i % stride == 0 or i == nsteps:
            sample(i)
    times, err, rel = np.array(times), np.array(err), np.array(rel)
    tte, cens = [], []
    for e in eps:
        hit = np.nonzero(rel > e)[0]
        if len(hit):
            tte.append(float(times[hit[0]]))
            cens.append(False)
        else:
            tte.append(float(T_pred))
            cens.append(True)
    return PredictionResult(t1, T_pred, times, err, rel, tuple(eps), tuple(tte), tuple(cens), float(err[0]))


def prediction_experiment(
    cfg: AssimilationConfig,
    t1: float,
    T_pred: float,
    eps: Sequence[float] = (1e-2,),
    *,
    truth0: np.ndarray | None = None,
    stride: int | None = None,
) -> PredictionResult:
    """Assimilate over [0, t1], then forecast from v(t1) without nudging and
    compare with the continuing truth.  ``time_to_eps`` is the first sample
    time (after t1) at which the relative L2 error strictly exceeds each
    eps; entries never exceeded are censored at T_pred."""
    return prediction_ladder(cfg, [t1], T_pred, eps, truth0=truth0, stride=stride)[0]


def prediction_ladder(
    cfg: AssimilationConfig,
    t1s: Sequence[float],
    T_pred: float,
    eps: Sequence[float] = (1e-2,),
    *,
    truth0: np.ndarray | None = None,
    stride: int | None = None,
) -> list[PredictionResult]:
    """One assimilation run to max(t1s), one forecast per t1."""
    if not T_pred > 0:
        raise ValueError("T_pred must be positive")
    t1s = [float(t) for t in t1s]
    if min(t1s) < 0:
        raise ValueError("assimilation windows must be non-negative")
    pair = run_pair(cfg.with_(T=max(max(t1s), cfg.stepper.dt)), truth0=truth0, keep_times=t1s, fit=False)
    stride = stride or cfg.sample_stride
    out = []
    for t1 in t1s:
        u, v = pair.kept[t1]
        out.append(_forecast(cfg, u.copy(), v.copy(), t1, T_pred, tuple(eps), stride))
    return out


# ---------------------------------------------------------------------------
# Calibration of the constant c


@dataclass
class CalibrationResult:
    c_lo: float
    c_hi: float
    converged: bool
    low_confidence: bool
    simulations: int
    evaluations: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.c_hi / self.c_lo

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "c_lo": self.c_lo,
            "c_hi": self.c_hi,
            "ratio": self.ratio,
            "converged": self.converged,
            "low_confidence": self.low_confidence,
            "simulations": self.simulations,
            "evaluations": self.evaluations,
        }


def calibration_pair(G: float, cfg: AssimilationConfig, c: float, c0: float = 1.0) -> tuple[float, float]:
    """(mu, h) at the edge of the feasible set: mu = mu_periodic (clamped at
    0), h the largest value with mu c0 h^2 <= nu, capped at the box side."""
    rep = thresholds(G, cfg.nu, cfg.grid.lambda1, c0, c)
    mu = max(rep.mu_periodic, 0.0)
    h = min(feasible_h(mu, cfg.nu, c0), cfg.box_side)
    return mu, h


def calibrate_c(
    nu: float,
    grashofs: Sequence[float],
    base: AssimilationConfig | None = None,
    *,
    c_lo: float = 1e-4,
    c_hi: float = 1e-2,
    target_ratio: float = 2.0,
    budget: int = 40,
    T_probe: float = 5.0,
    min_drop: float = 0.1,
    stop_drop: float = 1e-3,
    c_max: float = 1e3,
) -> CalibrationResult:
    """Geometric bisection for the smallest c whose threshold pairs
    synchronize at every G in the ladder.

    A ladder point succeeds when the run (LowModes, c0 = 1, (mu, h) from
    ``calibration_pair``) has a positive fitted rate and ||w|| ends at or
    below ``min_drop`` times its peak.  ``budget`` counts simulations.  If
    it runs out, the current bracket is returned with converged=False.
    With fewer than three G values the bracket target is squared (wider)
    and the result is flagged low-confidence.
    """
    if not grashofs:
        raise ValueError("need at least one Grashof number")
    base = base or AssimilationConfig()
    base = base.with_(nu=nu, T=T_probe, v0_policy=V0Policy.ZERO, c0=1.0, override=False, sample_stride=1)
    ladder = sorted({float(g) for g in grashofs}, reverse=True)
    degenerate = len(ladder) < 3
    target = target_ratio**2 if degenerate else target_ratio
    truths: dict = {}
    sims = 0
    evals: list = []

    def truth_for(G):
        if G not in truths:
            truths[G] = spin_up(base.with_(forcing=replace(base.forcing, grashof=G)))
        return truths[G]

    def succeeds(c) -> bool:
        nonlocal sims
        entry = {"c": c, "points": []}
        evals.append(entry)
        ok = True
        for G in ladder:
            mu, h = calibration_pair(G, base, c)
            point = {"G": G, "mu": mu, "h": h}
            if sims >= budget:
                point["skipped"] = "budget"
                entry["points"].append(point)
                ok = None
                break
            cfg = base.with_(
                forcing=replace(base.forcing, grashof=G),
                interpolant=InterpolantSpec(Kind.LOW_MODES, h),
                mu=mu,
                c=c,
            )
            res = run_pair(cfg, truth0=truth_for(G), stop_drop=stop_drop, monitors=False)
            sims += 1
            s = res.series
            rate = s.fitted_rate
            good = rate is not None and rate > 0 and s.final_drop() <= min_drop
            point.update(rate=rate, drop=s.final_drop(), success=good)
            entry["points"].append(point)
            if not good:
                ok = False
                break
        entry["success"] = ok
        return ok

    lo, hi = c_lo, c_hi
    # widen until hi succeeds and lo fails
    while True:
        r = succeeds(hi)
        if r is None:
            return CalibrationResult(lo, hi, False, True, sims, evals)
        if r:
            break
        if hi > c_max:
            return CalibrationResult(hi, math.inf, False, True, sims, evals)
        lo, hi = hi, hi * 4
    while True:
        r = succeeds(lo)
        if r is None:
            return CalibrationResult(lo, hi, False, True, sims, evals)
        if not r:
            break
        hi, lo = lo, lo / 4
    while hi / lo > target:
        mid = math.sqrt(lo * hi)
        r = succeeds(mid)
        if r is None:
            return CalibrationResult(lo, hi, False, True, sims, evals)
        if r:
            hi = mid
        else:
            lo = mid
    return CalibrationResult(lo, hi, True, degenerate, sims, evals)
