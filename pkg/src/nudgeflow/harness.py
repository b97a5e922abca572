"""Experiment execution and persistence: run directories, sweeps, caches.

Run directory layout::

    config.json       canonical config + hash
    thresholds.json   ThresholdReport for the configured and the default c
    series.csv        t, l2_w, h1_w, l2_u, h1_u, monitor_flags
    series.json       ErrorSeries with the decay fit
    monitors.jsonl    one MonitorReport per sample (spin-up included, t < 0)
    summary.json      RunSummary
    checkpoints/      truth and assimilated snapshots
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .assimilation import DEFAULT_C, AssimilationConfig, PairResult, certified_c0, run_pair, thresholds
from .config import ConfigError, config_from_dict, config_hash, config_to_dict, load_yaml
from .fields import GridSpec, VelocityField, half_lattice, write_snapshot
from .interpolants import InterpCertificate, InterpolantSpec, Kind, Order, certify_c0, validate_certificate
from .solver import Nudge, check_nudge

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENV_OUT = "NUDGEFLOW_OUT"
SERIES_COLUMNS = ("t", "l2_w", "h1_w", "l2_u", "h1_u", "monitor_flags")
SUMMARY_COLUMNS = (
    "cell_index", "kind", "h", "mu", "grashof", "repetition", "seed", "config_hash", "status",
    "error_class", "feasible", "mu_in_window", "h_bound_met", "fitted_rate", "fit_residual",
    "decay_orders", "violations", "auball_ratio", "wall_time",
)


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUT, "runs"))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Single runs


@dataclass
class RunSummary:
    cell_index: int
    kind: str
    h: float
    mu: float
    grashof: float
    repetition: int
    seed: int
    config_hash: str
    status: str = "ok"
    error_class: str | None = None
    error_message: str | None = None
    feasible: bool | None = None
    mu_in_window: bool | None = None
    h_bound_met: bool | None = None
    fitted_rate: float | None = None
    fit_residual: float | None = None
    decay_orders: float | None = None
    violations: dict = field(default_factory=dict)
    auball_ratio: float | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        d = {k: v for k, v in d.items() if k != "schema_version"}
        return cls(**d)


def series_csv(result: PairResult) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for row in result.rows:
        w.writerow([repr(float(x)) for x in row[:5]] + [row[5]])
    return buf.getvalue()


def read_series_csv(path) -> dict:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    out = {name: [] for name in header}
    for r in body:
        for name, val in zip(header, r):
            out[name].append(val)
    for name in header[:5]:
        out[name] = np.array(out[name], float)
    return out


def _thresholds_doc(cfg: AssimilationConfig, result: PairResult) -> dict:
    g = cfg.grid
    G = result.report.G
    calibrated = thresholds(G, cfg.nu, g.lambda1, result.c0, DEFAULT_C, h=cfg.interpolant.h, mu=cfg.mu)
    return {
        "schema_version": SCHEMA_VERSION,
        "c0": result.c0,
        "configured": result.report.to_dict(),
        "calibrated": calibrated.to_dict(),
    }


def summarize(result: PairResult, *, cell_index=0, repetition=0, chash=None) -> RunSummary:
    cfg, s, rep = result.config, result.series, result.report
    return RunSummary(
        cell_index=cell_index,
        kind=cfg.interpolant.kind.value,
        h=cfg.interpolant.h,
        mu=cfg.mu,
        grashof=cfg.forcing.grashof,
        repetition=repetition,
        seed=cfg.seed,
        config_hash=chash or config_hash(cfg),
        feasible=rep.feasible,
        mu_in_window=rep.mu_in_window,
        h_bound_met=rep.h_bound_met,
        fitted_rate=s.fitted_rate,
        fit_residual=s.fit_residual,
        decay_orders=s.decay_orders(),
        violations=result.monitor.violation_counts(),
        auball_ratio=result.monitor.auball_estimate(),
        wall_time=result.wall_time,
    )


def preflight(cfg: AssimilationConfig) -> float:
    """Validate the nudging parameters before anything is written; returns c0.
    Raises ConstraintError (or ResolutionMismatch) on violation."""
    cfg.interpolant.check_grid(cfg.grid)
    c0 = cfg.c0 if cfg.c0 is not None else certified_c0(cfg.interpolant, cfg.grid)
    check_nudge(Nudge(cfg.mu, cfg.interpolant, c0, cfg.override), cfg.nu, cfg.stepper.dt, cfg.grid)
    return c0


def simulate(cfg: AssimilationConfig, out: Path | str | None = None) -> tuple[Path, PairResult]:
    """run_pair plus the run-directory layout; returns (directory, result)."""
    preflight(cfg)
    chash = config_hash(cfg)
    out = Path(out) if out is not None else output_root() / f"run-{chash[:16]}"
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    grid = cfg.grid
    hl = half_lattice(grid)
    meta = {"config_hash": chash, "scheme": cfg.stepper.scheme, "dt": cfg.stepper.dt}
    _atomic_write(out / "config.json", _dumps({"config_hash": chash, "config": config_to_dict(cfg)}))

    def save(t, u, v):
        for role, x in (("truth", u), ("assimilated", v)):
            fld = VelocityField(hl.to_full(x), grid, tol=1e-9)
            write_snapshot(ck / f"{role}_t{t:010.4f}.snap", fld, t=t, metadata={**meta, "role": role})

    callbacks = []
    if cfg.checkpoint_stride:
        count = itertools.count()

        def periodic(t, u, v, row):
            if next(count) % cfg.checkpoint_stride == 0:
                save(t, u, v)

        callbacks.append(periodic)
    result = run_pair(cfg, callbacks=callbacks)
    save(result.series.t[-1], hl.to_half(result.truth.coefficients), hl.to_half(result.assimilated.coefficients))
    _atomic_write(out / "thresholds.json", _dumps(_thresholds_doc(cfg, result)))
    _atomic_write(out / "series.csv", series_csv(result))
    _atomic_write(out / "series.json", _dumps(result.series.to_dict()))
    lines = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in result.monitor.reports)
    _atomic_write(out / "monitors.jsonl", lines)
    _atomic_write(out / "summary.json", _dumps(summarize(result, chash=chash).to_dict()))
    return out, result


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class ExperimentPlan:
    """Cartesian sweep over interpolant kind, h, mu and G on top of ``base``.

    Empty axes keep the base value.  Cell i gets the seed drawn from
    SeedSequence(seed, spawn_key=(i,)).
    """

    base: AssimilationConfig = field(default_factory=AssimilationConfig)
    mu: tuple[float, ...] = ()
    h: tuple[float, ...] = ()
    kind: tuple[str, ...] = ()
    grashof: tuple[float, ...] = ()
    repetitions: int = 1
    seed: int = 0
    cap: int = 256
    output_dir: str | None = None

    def axes(self):
        b = self.base
        return (
            tuple(Kind(k) for k in self.kind) or (b.interpolant.kind,),
            self.h or (b.interpolant.h,),
            self.mu or (b.mu,),
            self.grashof or (b.forcing.grashof,),
            tuple(range(self.repetitions)),
        )

    def size(self) -> int:
        return int(np.prod([len(a) for a in self.axes()]))

    def cells(self) -> list[tuple[int, dict, AssimilationConfig]]:
        if self.size() > self.cap:
            raise ConfigError("sweep", f"{self.size()} cells exceed the cap of {self.cap}")
        out = []
        for i, (kind, h, mu, G, rep) in enumerate(itertools.product(*self.axes())):
            seed = int(np.random.SeedSequence(self.seed, spawn_key=(i,)).generate_state(1)[0])
            b = self.base
            cfg = replace(
                b,
                interpolant=InterpolantSpec(kind, float(h), b.interpolant.node_offset),
                mu=float(mu),
                forcing=replace(b.forcing, grashof=float(G)),
                seed=seed,
            )
            params = {"kind": kind.value, "h": float(h), "mu": float(mu), "grashof": float(G), "repetition": rep, "seed": seed}
            out.append((i, params, cfg))
        return out


_PLAN_KEYS = {"schema_version", "base", "sweep", "repetitions", "seed", "cap", "output_dir"}
_AXES = ("mu", "h", "kind", "grashof")


def plan_from_dict(d) -> ExperimentPlan:
    if not isinstance(d, dict):
        raise ConfigError("plan", "expected a mapping")
    for k in d:
        if k not in _PLAN_KEYS:
            raise ConfigError(str(k), f"unknown key (allowed: {', '.join(sorted(_PLAN_KEYS))})")
    base = config_from_dict(d.get("base") or {}, prefix="base")
    sw = d.get("sweep") or {}
    if not isinstance(sw, dict):
        raise ConfigError("sweep", "expected a mapping")
    axes = {}
    for k, v in sw.items():
        if k not in _AXES:
            raise ConfigError(f"sweep.{k}", f"unknown axis (allowed: {', '.join(_AXES)})")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep.{k}", "expected a non-empty list")
        if k == "kind":
            try:
                axes[k] = tuple(Kind(x).value for x in v)
            except ValueError:
                raise ConfigError("sweep.kind", f"entries must be among {[x.value for x in Kind]}") from None
        else:
            try:
                vals = tuple(float(x) for x in v)
            except (TypeError, ValueError):
                raise ConfigError(f"sweep.{k}", "entries must be numbers") from None
            if any(x < 0 for x in vals) or (k == "h" and any(x <= 0 for x in vals)):
                raise ConfigError(f"sweep.{k}", "entries out of range")
            axes[k] = vals
    ints = {}
    for k, default, lo in (("repetitions", 1, 1), ("seed", 0, 0), ("cap", 256, 1)):
        v = d.get(k, default)
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise ConfigError(k, f"expected an integer >= {lo}, got {v!r}")
        ints[k] = v
    out = d.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir", "expected a string")
    plan = ExperimentPlan(base=base, output_dir=out, **axes, **ints)
    if plan.size() > plan.cap:
        raise ConfigError("sweep", f"{plan.size()} cells exceed the cap of {plan.cap}")
    return plan


def plan_to_dict(plan: ExperimentPlan) -> dict:
    sweep = {k: list(getattr(plan, k)) for k in _AXES if getattr(plan, k)}
    return {
        "schema_version": SCHEMA_VERSION,
        "base": config_to_dict(plan.base),
        "sweep": sweep,
        "repetitions": plan.repetitions,
        "seed": plan.seed,
        "cap": plan.cap,
        "output_dir": plan.output_dir,
    }


def load_plan(path) -> ExperimentPlan:
    return plan_from_dict(load_yaml(path))


def _run_cell(index: int, params: dict, cfg_dict: dict, cell_dir: str) -> dict:
    """Worker entry point; never raises for simulation problems."""
    cfg = config_from_dict(cfg_dict)
    chash = config_hash(cfg)
    start = time.perf_counter()
    try:
        _, result = simulate(cfg, cell_dir)
        s = summarize(result, cell_index=index, repetition=params["repetition"], chash=chash)
    except Exception as e:  # per-cell isolation: record and continue
        s = RunSummary(
            cell_index=index, kind=params["kind"], h=params["h"], mu=params["mu"], grashof=params["grashof"],
            repetition=params["repetition"], seed=params["seed"], config_hash=chash, status="failed",
            error_class=type(e).__name__, error_message=str(e), wall_time=time.perf_counter() - start,
        )
        try:
            c0 = cfg.c0 if cfg.c0 is not None else certified_c0(cfg.interpolant, cfg.grid)
            rep = thresholds(cfg.forcing.grashof, cfg.nu, cfg.grid.lambda1, c0, cfg.c, h=cfg.interpolant.h, mu=cfg.mu)
            s.feasible, s.mu_in_window, s.h_bound_met = rep.feasible, rep.mu_in_window, rep.h_bound_met
        except ValueError:
            pass
    d = s.to_dict()
    Path(cell_dir).mkdir(parents=True, exist_ok=True)
    _atomic_write(Path(cell_dir) / "summary.json", _dumps(d))
    return d


def _summary_csv(rows: list[RunSummary]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        d = asdict(r)
        vals = []
        for c in SUMMARY_COLUMNS:
            v = d[c]
            if c == "violations":
                v = ";".join(f"{k}={n}" for k, n in sorted(v.items()))
            elif c == "wall_time":
                v = f"{v:.3f}"
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = ""
            vals.append(v)
        w.writerow(vals)
    return buf.getvalue()


def read_summary_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class SweepResult:
    directory: Path
    summaries: list[RunSummary]
    computed: int
    cached: int


def sweep(plan: ExperimentPlan, out: Path | str | None = None, workers: int = 1) -> SweepResult:
    """Run every cell, reusing cells whose directory already holds a summary
    for the same config hash.  summary.csv/json are rewritten after each
    finished cell."""
    cells = plan.cells()
    if out is None:
        out = Path(plan.output_dir) if plan.output_dir else output_root() / "sweep"
    out = Path(out)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "plan.json", _dumps(plan_to_dict(plan)))
    done: dict[int, RunSummary] = {}
    todo = []
    for i, params, cfg in cells:
        chash = config_hash(cfg)
        cell_dir = out / "cells" / chash[:16]
        marker = cell_dir / "summary.json"
        if marker.exists():
            try:
                d = json.loads(marker.read_text())
                if d.get("config_hash") == chash:
                    d.update(cell_index=i, repetition=params["repetition"])
                    done[i] = RunSummary.from_dict(d)
                    continue
            except (json.JSONDecodeError, TypeError):
                pass
        todo.append((i, params, config_to_dict(cfg), str(cell_dir)))
    cached = len(done)

    def flush():
        rows = [done[k] for k in sorted(done)]
        _atomic_write(out / "summary.csv", _summary_csv(rows))
        _atomic_write(out / "summary.json", _dumps({"schema_version": SCHEMA_VERSION, "cells": [r.to_dict() for r in rows]}))

    flush()
    if workers <= 1 or len(todo) <= 1:
        for args in todo:
            done[args[0]] = RunSummary.from_dict(_run_cell(*args))
            flush()
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_cell, *args) for args in todo]
            for fut in as_completed(futs):
                d = fut.result()
                done[d["cell_index"]] = RunSummary.from_dict(d)
                flush()
    return SweepResult(out, [done[k] for k in sorted(done)], len(todo), cached)


# ---------------------------------------------------------------------------
# Certificates


def certificate_key(spec: InterpolantSpec, grid: GridSpec, order: Order, probes: int, seed: int) -> str:
    canon = json.dumps(
        {"spec": spec.to_dict(), "n": grid.n, "box_side": grid.box_side, "order": order.value, "probes": probes, "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()


def certify(
    spec: InterpolantSpec,
    grid: GridSpec,
    order: Order | str,
    probes: int = 200,
    seed: int = 0,
    cache_dir: Path | str | None = None,
    validate: int = 0,
) -> tuple[dict, bool]:
    """Certificate document, cached on disk by spec hash; returns (doc, cached)."""
    order = Order(order)
    if probes < 100:
        raise ValueError(f"at least 100 probes required, got {probes}")
    cache_dir = Path(cache_dir) if cache_dir is not None else output_root() / "certificates"
    key = certificate_key(spec, grid, order, probes, seed)
    path = cache_dir / f"{key[:16]}.json"
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key and (not validate or "validation" in doc):
            return doc, True
    ss = np.random.SeedSequence(seed)
    cert_rng, val_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    cert = certify_c0(spec, grid, order, probes=probes, rng=cert_rng)
    doc = {"key": key, "seed": seed, "certificate": cert.to_dict()}
    if validate:
        ok, ratio = validate_certificate(cert, spec, grid, validate, val_rng)
        doc["validation"] = {"probes": validate, "ok": ok, "worst_ratio": ratio, "slack": 0.05}
    cache_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, _dumps(doc))
    return doc, False


def load_certificate(doc: dict) -> InterpCertificate:
    return InterpCertificate.from_dict(doc["certificate"])
