"""YAML configuration for coupled runs.

Every key is optional; missing keys take the defaults of
``AssimilationConfig``.  Unknown keys and bad values raise ConfigError
carrying the dotted path of the offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Any

import yaml

from .assimilation import AssimilationConfig, ForcingSpec, V0Policy
from .interpolants import InterpolantSpec, Kind
from .solver import StepperConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _num(v, path, *, integer=False, positive=False, nonneg=False, allow_none=False):
    if v is None:
        if allow_none:
            return None
        raise ConfigError(path, "value required")
    if isinstance(v, bool):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if isinstance(v, str):
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {v!r}") from None
    if not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(v).__name__}")
    if integer:
        if float(v) != int(v):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be non-negative, got {v}")
    return v


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _section(d, path) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(path, f"expected a mapping, got {type(d).__name__}")
    return d


def _check_keys(d: dict, allowed, path: str):
    for k in d:
        if k not in allowed:
            where = f"{path}.{k}" if path else str(k)
            raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _p(prefix, key):
    return f"{prefix}.{key}" if prefix else key


_TOP = {
    "schema_version", "grid", "nu", "forcing", "interpolant", "mu", "c0", "c", "v0", "spinup", "T",
    "stepper", "sample_stride", "seed", "initial", "monitor_window", "checkpoint_stride", "floor", "override",
}


def config_from_dict(d: dict | None, prefix: str = "") -> AssimilationConfig:
    d = _section(d, prefix or "config")
    _check_keys(d, _TOP, prefix)
    defaults = AssimilationConfig()
    if "schema_version" in d and d["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(_p(prefix, "schema_version"), f"unsupported version {d['schema_version']!r}")

    g = _section(d.get("grid"), _p(prefix, "grid"))
    _check_keys(g, {"n", "box_side"}, _p(prefix, "grid"))
    n = _num(g.get("n", defaults.n), _p(prefix, "grid.n"), integer=True, positive=True)
    if n < 8 or n % 2:
        raise ConfigError(_p(prefix, "grid.n"), f"must be an even integer >= 8, got {n}")
    box = _num(g.get("box_side", defaults.box_side), _p(prefix, "grid.box_side"), positive=True)

    fo = _section(d.get("forcing"), _p(prefix, "forcing"))
    _check_keys(fo, {"grashof", "kmin", "kmax", "seed"}, _p(prefix, "forcing"))
    fd = defaults.forcing
    G = _num(fo.get("grashof", fd.grashof), _p(prefix, "forcing.grashof"), nonneg=True)
    kmin = _num(fo.get("kmin", fd.kmin), _p(prefix, "forcing.kmin"), nonneg=True)
    kmax = _num(fo.get("kmax", fd.kmax), _p(prefix, "forcing.kmax"), nonneg=True)
    if kmax < kmin:
        raise ConfigError(_p(prefix, "forcing.kmax"), "must be >= forcing.kmin")
    if math.ceil(kmax) > n // 3:
        raise ConfigError(_p(prefix, "forcing.kmax"), f"forcing shell exceeds the dealiased range of n={n}")
    fseed = _num(fo.get("seed", fd.seed), _p(prefix, "forcing.seed"), integer=True, nonneg=True)

    it = _section(d.get("interpolant"), _p(prefix, "interpolant"))
    _check_keys(it, {"kind", "h", "node_offset"}, _p(prefix, "interpolant"))
    idef = defaults.interpolant
    kind = it.get("kind", idef.kind.value)
    try:
        kind = Kind(kind)
    except ValueError:
        raise ConfigError(_p(prefix, "interpolant.kind"), f"must be one of {[k.value for k in Kind]}, got {kind!r}") from None
    h = _num(it.get("h", idef.h), _p(prefix, "interpolant.h"), positive=True)
    if h > box:
        raise ConfigError(_p(prefix, "interpolant.h"), f"exceeds the box side {box}")
    off = it.get("node_offset", list(idef.node_offset))
    if not isinstance(off, (list, tuple)) or len(off) != 2:
        raise ConfigError(_p(prefix, "interpolant.node_offset"), "expected a pair")
    off = tuple(_num(o, _p(prefix, f"interpolant.node_offset[{i}]")) for i, o in enumerate(off))
    if not all(0 <= o < 1 for o in off):
        raise ConfigError(_p(prefix, "interpolant.node_offset"), "entries must lie in [0, 1)")
    if kind is not Kind.LOW_MODES and math.ceil(box / h - 1e-9) > n // 2:
        raise ConfigError(_p(prefix, "interpolant.h"), f"cells of size {h} cannot be resolved with n={n}")

    v0 = _section(d.get("v0"), _p(prefix, "v0"))
    _check_keys(v0, {"policy", "path", "perturbation"}, _p(prefix, "v0"))
    pol = v0.get("policy", defaults.v0_policy.value)
    try:
        pol = V0Policy(pol)
    except ValueError:
        raise ConfigError(_p(prefix, "v0.policy"), f"must be one of {[p.value for p in V0Policy]}, got {pol!r}") from None
    path = v0.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError(_p(prefix, "v0.path"), "expected a string")
    if pol is V0Policy.GIVEN and not path:
        raise ConfigError(_p(prefix, "v0.path"), "required when v0.policy is 'given'")
    pert = _num(v0.get("perturbation", defaults.perturbation), _p(prefix, "v0.perturbation"), nonneg=True)

    s = _section(d.get("stepper"), _p(prefix, "stepper"))
    _check_keys(s, {"dt", "scheme", "cfl_safety", "cfl_check_stride", "blowup_factor"}, _p(prefix, "stepper"))
    sd = defaults.stepper
    dt = _num(s.get("dt", sd.dt), _p(prefix, "stepper.dt"), positive=True)
    scheme = s.get("scheme", sd.scheme)
    if scheme != "ars222":
        raise ConfigError(_p(prefix, "stepper.scheme"), f"unknown scheme {scheme!r} (available: ars222)")
    safety = _num(s.get("cfl_safety", sd.cfl_safety), _p(prefix, "stepper.cfl_safety"), positive=True)
    if safety >= 1:
        raise ConfigError(_p(prefix, "stepper.cfl_safety"), "must be < 1")
    stride = _num(s.get("cfl_check_stride", sd.cfl_check_stride), _p(prefix, "stepper.cfl_check_stride"), integer=True, positive=True)
    blow = _num(s.get("blowup_factor", sd.blowup_factor), _p(prefix, "stepper.blowup_factor"), positive=True)

    ini = _section(d.get("initial"), _p(prefix, "initial"))
    _check_keys(ini, {"kmax", "energy"}, _p(prefix, "initial"))
    ikmax = _num(ini.get("kmax", defaults.init_kmax), _p(prefix, "initial.kmax"), positive=True)
    ienergy = _num(ini.get("energy", defaults.init_energy), _p(prefix, "initial.energy"), nonneg=True, allow_none=True)

    nu = _num(d.get("nu", defaults.nu), _p(prefix, "nu"), positive=True)
    mu = _num(d.get("mu", defaults.mu), _p(prefix, "mu"), nonneg=True)
    c0 = _num(d.get("c0", defaults.c0), _p(prefix, "c0"), positive=True, allow_none=True)
    c = _num(d.get("c", defaults.c), _p(prefix, "c"), positive=True)
    spin = _num(d.get("spinup", defaults.spinup), _p(prefix, "spinup"), nonneg=True, allow_none=True)
    T = _num(d.get("T", defaults.T), _p(prefix, "T"), positive=True)
    if T < dt:
        raise ConfigError(_p(prefix, "T"), f"shorter than one step (dt={dt})")
    sstride = _num(d.get("sample_stride", defaults.sample_stride), _p(prefix, "sample_stride"), integer=True, positive=True)
    seed = _num(d.get("seed", defaults.seed), _p(prefix, "seed"), integer=True, nonneg=True)
    window = _num(d.get("monitor_window", defaults.monitor_window), _p(prefix, "monitor_window"), positive=True, allow_none=True)
    ck = _num(d.get("checkpoint_stride", defaults.checkpoint_stride), _p(prefix, "checkpoint_stride"), integer=True, nonneg=True)
    floor = _num(d.get("floor", defaults.floor), _p(prefix, "floor"), positive=True)
    override = _bool(d.get("override", defaults.override), _p(prefix, "override"))
    if kind is not Kind.LOW_MODES and mu * dt > 1 and not override:
        raise ConfigError(_p(prefix, "mu"), f"explicit relaxation requires mu*dt <= 1, got {mu * dt:g}")

    return AssimilationConfig(
        n=n,
        box_side=box,
        nu=nu,
        forcing=ForcingSpec(G, kmin, kmax, fseed),
        interpolant=InterpolantSpec(kind, h, off),
        mu=mu,
        c0=c0,
        c=c,
        v0_policy=pol,
        v0_path=path,
        perturbation=pert,
        spinup=spin,
        T=T,
        stepper=StepperConfig(dt=dt, scheme=scheme, cfl_safety=safety, cfl_check_stride=stride, blowup_factor=blow),
        sample_stride=sstride,
        seed=seed,
        init_kmax=ikmax,
        init_energy=ienergy,
        monitor_window=window,
        checkpoint_stride=ck,
        floor=floor,
        override=override,
    )


def config_to_dict(cfg: AssimilationConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "grid": {"n": cfg.n, "box_side": cfg.box_side},
        "nu": cfg.nu,
        "forcing": {
            "grashof": cfg.forcing.grashof,
            "kmin": cfg.forcing.kmin,
            "kmax": cfg.forcing.kmax,
            "seed": cfg.forcing.seed,
        },
        "interpolant": cfg.interpolant.to_dict(),
        "mu": cfg.mu,
        "c0": cfg.c0,
        "c": cfg.c,
        "v0": {"policy": cfg.v0_policy.value, "path": cfg.v0_path, "perturbation": cfg.perturbation},
        "spinup": cfg.spinup,
        "T": cfg.T,
        "stepper": {
            "dt": cfg.stepper.dt,
            "scheme": cfg.stepper.scheme,
            "cfl_safety": cfg.stepper.cfl_safety,
            "cfl_check_stride": cfg.stepper.cfl_check_stride,
            "blowup_factor": cfg.stepper.blowup_factor,
        },
        "sample_stride": cfg.sample_stride,
        "seed": cfg.seed,
        "initial": {"kmax": cfg.init_kmax, "energy": cfg.init_energy},
        "monitor_window": cfg.monitor_window,
        "checkpoint_stride": cfg.checkpoint_stride,
        "floor": cfg.floor,
        "override": cfg.override,
    }


def dump_config(cfg: AssimilationConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)


def parse_config(text: str) -> AssimilationConfig:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("", f"not valid YAML: {e}") from None
    return config_from_dict(d)


def load_yaml(path) -> Any:
    with open(path) as fh:
        try:
            return yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError("", f"{path}: not valid YAML: {e}") from None


def load_config(path) -> AssimilationConfig:
    return config_from_dict(load_yaml(path))


def config_hash(cfg: AssimilationConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


_DOC = {
    "grid.n": "grid points per side (even); modes with |j| <= n/3 are kept",
    "grid.box_side": "side L of the periodic box; lambda1 = (2 pi / L)^2",
    "nu": "kinematic viscosity",
    "forcing.grashof": "Grashof number G = |f| / (nu^2 lambda1)",
    "forcing.kmin": "inner radius of the forced shell (integer wavevectors)",
    "forcing.kmax": "outer radius of the forced shell",
    "forcing.seed": "seed for the random phases and amplitudes of f",
    "interpolant.kind": "low_modes | volume_elements | nodes",
    "interpolant.h": "resolution h; cells have side L / ceil(L/h), low modes keep |k| <= 1/h",
    "interpolant.node_offset": "node position inside each cell, in cell units",
    "mu": "nudging strength",
    "c0": "approximation constant of the interpolant; null certifies it",
    "c": "dimensionless constant in the synchronization thresholds",
    "v0.policy": "zero | truth | given | perturbed",
    "v0.path": "snapshot file for policy 'given'",
    "v0.perturbation": "relative L2 size of the perturbation for policy 'perturbed'",
    "spinup": "truth spin-up time before assimilation starts; null means 5/(nu lambda1)",
    "T": "assimilation run length",
    "stepper.dt": "time step",
    "stepper.scheme": "time scheme (ars222)",
    "stepper.cfl_safety": "abort when the Courant number exceeds this",
    "stepper.cfl_check_stride": "steps between stability checks",
    "stepper.blowup_factor": "abort when |u|^2 exceeds this times its reference scale",
    "sample_stride": "steps between recorded samples",
    "seed": "seed of the random initial truth and perturbations",
    "initial.kmax": "largest wavenumber (in units of 2 pi / L) of the initial truth",
    "initial.energy": "|u0|^2 of the initial truth; null means (0.2 nu G)^2 / lambda1",
    "monitor_window": "window of the time-averaged bound monitors; null means 1/(nu lambda1)",
    "checkpoint_stride": "samples between checkpoints; 0 writes only the final state",
    "floor": "round-off floor for fits, relative to the mean ||u||",
    "override": "run even if mu c0 h^2 <= nu (or mu dt <= 1) is violated",
}


def reference() -> str:
    """Commented YAML listing every key with its default."""
    lines = ["# nudgeflow run configuration: every key with its default", ""]
    stack: list[str] = []
    for line in dump_config(AssimilationConfig()).splitlines():
        stripped = line.lstrip()
        level = (len(line) - len(stripped)) // 2
        del stack[level:]
        stack.append(stripped.split(":", 1)[0])
        doc = _DOC.get(".".join(stack))
        lines.append(f"{line}  # {doc}" if doc and not line.endswith(":") else line)
    return "\n".join(lines) + "\n"
