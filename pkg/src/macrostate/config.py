"""Scenario configuration: YAML parsing, validation and default resolution.

A scenario file has these top-level sections (all lower_snake_case)::

    model:        model_kind, num_sites, couplings, periodic, dim_cap
    observables:  n_max, mode_basis, sites, include_h, include_h2
    initial:      kind (gibbs | prepared | quench) plus kind-specific fields
    pipelines:    list drawn from exact, memory, semigroup
    mem:          tau, dt, truncate_history, quadrature, max_step_change
    semigroup:    dt, tau (defaults to the certified decay-time estimate)
    exact:        dt
    inversion:    tol, max_iters, damping, regularization, cond_limit
    diagnostics:  tau_t_max, tau_points
    t_end, seed, output_dir

``resolve`` returns a plain dict with every default filled in; the
``applied_defaults`` list records which dotted paths were defaulted.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

PIPELINES = ("exact", "memory", "semigroup")
INITIAL_KINDS = ("gibbs", "prepared", "quench")

_SECTIONS = {
    "model": {"model_kind", "num_sites", "couplings", "periodic", "dim_cap"},
    "observables": {"n_max", "mode_basis", "sites", "include_h", "include_h2"},
    "initial": {
        "kind", "zeta", "beta", "couplings", "T", "t0", "zeta_t0", "gamma_T", "controls", "quadrature_step",
    },
    "mem": {"tau", "dt", "truncate_history", "quadrature", "max_step_change", "order"},
    "semigroup": {"tau", "dt"},
    "exact": {"dt"},
    "inversion": {"tol", "max_iters", "damping", "regularization", "cond_limit", "zeta_bound"},
    "diagnostics": {"tau_t_max", "tau_points"},
}
_TOP = set(_SECTIONS) | {"pipelines", "t_end", "seed", "output_dir"}


@dataclass
class Resolved:
    config: dict
    applied_defaults: list
    t0: float = 0.0


def load_yaml(path) -> dict:
    """Read a YAML mapping, turning syntax errors into ``ConfigError`` with a line number."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML syntax error: {problem}", line=line) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    return data


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        parts = [k for k in key.strip().split(".") if k]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}", field=key) from exc
        node = cfg
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigError("override path crosses a non-mapping value", field=key)
            node = nxt
        node[parts[-1]] = value
    return cfg


def _num(value, path, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=path)
    if integer and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", field=path)
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value!r}", field=path)
    if nonneg and value < 0:
        raise ConfigError(f"must be non-negative, got {value!r}", field=path)
    return int(value) if integer else float(value)


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", field=path)
    return value


class _Defaults:
    def __init__(self):
        self.applied = []

    def take(self, section: dict, key: str, default, path: str):
        if key not in section or section[key] is None and default is not None:
            section[key] = default
            self.applied.append(path)
        return section[key]


def _check_keys(section: dict, allowed: set, path: str):
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", field=path)
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown field (allowed: {', '.join(sorted(allowed))})", field=f"{path}.{key}")


def _zeta_map(value, path):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping from observable label to value", field=path)
    return {str(k): _num(v, f"{path}.{k}") for k, v in value.items()}


def resolve(raw: dict) -> Resolved:
    """Validate ``raw`` and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    cfg = copy.deepcopy(raw)
    for key in cfg:
        if key not in _TOP:
            raise ConfigError(f"unknown top-level field (allowed: {', '.join(sorted(_TOP))})", field=key)
    d = _Defaults()

    if "model" not in cfg:
        raise ConfigError("missing required section", field="model")
    model = cfg["model"]
    _check_keys(model, _SECTIONS["model"], "model")
    for key in ("model_kind", "num_sites"):
        if key not in model:
            raise ConfigError("missing required field", field=f"model.{key}")
    if model["model_kind"] not in ("xxz_chain", "transverse_ising_chain"):
        raise ConfigError("must be xxz_chain or transverse_ising_chain", field="model.model_kind")
    _num(model["num_sites"], "model.num_sites", positive=True, integer=True)
    d.take(model, "couplings", {}, "model.couplings")
    if not isinstance(model["couplings"], dict):
        raise ConfigError("expected a mapping", field="model.couplings")
    d.take(model, "periodic", False, "model.periodic")
    _bool(model["periodic"], "model.periodic")
    d.take(model, "dim_cap", 4096, "model.dim_cap")
    _num(model["dim_cap"], "model.dim_cap", positive=True, integer=True)

    obs = cfg.setdefault("observables", {})
    if "observables" not in raw:
        d.applied.append("observables")
    _check_keys(obs, _SECTIONS["observables"], "observables")
    d.take(obs, "sites", None, "observables.sites")
    if obs["sites"] is not None:
        if not isinstance(obs["sites"], list) or not obs["sites"]:
            raise ConfigError("expected a non-empty list of site indices", field="observables.sites")
        for s in obs["sites"]:
            _num(s, "observables.sites", nonneg=True, integer=True)
            if s >= model["num_sites"]:
                raise ConfigError(f"site {s} out of range", field="observables.sites")
    d.take(obs, "n_max", None, "observables.n_max")
    if obs["n_max"] is not None:
        _num(obs["n_max"], "observables.n_max", nonneg=True, integer=True)
    d.take(obs, "mode_basis", "fourier" if model["periodic"] else "cosine", "observables.mode_basis")
    if obs["mode_basis"] not in ("fourier", "cosine"):
        raise ConfigError("must be fourier or cosine", field="observables.mode_basis")
    d.take(obs, "include_h", True, "observables.include_h")
    _bool(obs["include_h"], "observables.include_h")
    d.take(obs, "include_h2", False, "observables.include_h2")
    _bool(obs["include_h2"], "observables.include_h2")

    if "pipelines" not in cfg:
        raise ConfigError("missing required field", field="pipelines")
    pipes = cfg["pipelines"]
    if not isinstance(pipes, list) or not pipes:
        raise ConfigError("expected a non-empty list", field="pipelines")
    for p in pipes:
        if p not in PIPELINES:
            raise ConfigError(f"unknown pipeline {p!r} (allowed: {', '.join(PIPELINES)})", field="pipelines")
    cfg["pipelines"] = [p for p in PIPELINES if p in pipes]

    init = cfg.get("initial")
    if init is None:
        raise ConfigError("missing required section", field="initial")
    _check_keys(init, _SECTIONS["initial"], "initial")
    kind = init.get("kind")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"must be one of {', '.join(INITIAL_KINDS)}", field="initial.kind")
    t0 = 0.0
    if kind == "gibbs":
        init["zeta"] = _zeta_map(init.get("zeta"), "initial.zeta")
    elif kind == "quench":
        if "beta" not in init:
            raise ConfigError("missing required field", field="initial.beta")
        _num(init["beta"], "initial.beta", nonneg=True)
        d.take(init, "couplings", {}, "initial.couplings")
        if not isinstance(init["couplings"], dict):
            raise ConfigError("expected a mapping", field="initial.couplings")
    else:
        for key in ("T", "t0"):
            if key not in init:
                raise ConfigError("missing required field", field=f"initial.{key}")
            _num(init[key], f"initial.{key}")
        if init["T"] > init["t0"]:
            raise ConfigError("T must not exceed t0", field="initial.T")
        t0 = float(init["t0"])
        init["zeta_t0"] = _zeta_map(init.get("zeta_t0"), "initial.zeta_t0")
        init["gamma_T"] = _zeta_map(init.get("gamma_T"), "initial.gamma_T")
        d.take(init, "controls", [], "initial.controls")
        if not isinstance(init["controls"], list):
            raise ConfigError("expected a list", field="initial.controls")
        for i, c in enumerate(init["controls"]):
            path = f"initial.controls[{i}]"
            _check_keys(c, {"target", "index", "coefficient", "profile"}, path)
            if c.get("target") not in ("density", "current"):
                raise ConfigError("must be density or current", field=f"{path}.target")
            _num(c.get("index"), f"{path}.index", nonneg=True, integer=True)
            _num(c.get("coefficient"), f"{path}.coefficient")
            prof = c.get("profile")
            if not isinstance(prof, dict) or prof.get("kind") not in ("cosine", "constant", "gaussian_window"):
                raise ConfigError("needs kind cosine, constant or gaussian_window", field=f"{path}.profile")
            prof.setdefault("parameters", {})
        d.take(init, "quadrature_step", None, "initial.quadrature_step")
        if init["quadrature_step"] is not None:
            _num(init["quadrature_step"], "initial.quadrature_step", positive=True)

    if "t_end" not in cfg:
        raise ConfigError("missing required field", field="t_end")
    t_end = _num(cfg["t_end"], "t_end")
    if not t_end > t0:
        raise ConfigError(f"t_end must exceed t0 = {t0:g}", field="t_end")

    if "memory" in cfg["pipelines"]:
        if "mem" not in cfg or cfg["mem"] is None:
            raise ConfigError("memory pipeline requested but section is missing", field="mem")
    if "mem" in cfg:
        mem = cfg["mem"]
        _check_keys(mem, _SECTIONS["mem"], "mem")
        for key in ("tau", "dt"):
            if key not in mem:
                raise ConfigError("missing required field", field=f"mem.{key}")
            _num(mem[key], f"mem.{key}", positive=True)
        if mem["dt"] > mem["tau"]:
            raise ConfigError("dt must not exceed tau", field="mem.dt")
        d.take(mem, "truncate_history", False, "mem.truncate_history")
        _bool(mem["truncate_history"], "mem.truncate_history")
        d.take(mem, "quadrature", "gregory", "mem.quadrature")
        if mem["quadrature"] not in ("gregory", "trapezoid"):
            raise ConfigError("must be gregory or trapezoid", field="mem.quadrature")
        d.take(mem, "max_step_change", 1.0, "mem.max_step_change")
        _num(mem["max_step_change"], "mem.max_step_change", positive=True)
        d.take(mem, "order", 1, "mem.order")
        if mem["order"] != 1:
            raise ConfigError("only order 1 is implemented", field="mem.order")

    if "semigroup" in cfg["pipelines"]:
        if "semigroup" not in cfg or cfg["semigroup"] is None:
            raise ConfigError("semigroup pipeline requested but section is missing", field="semigroup")
    if "semigroup" in cfg:
        sg = cfg["semigroup"]
        _check_keys(sg, _SECTIONS["semigroup"], "semigroup")
        if "dt" not in sg:
            raise ConfigError("missing required field", field="semigroup.dt")
        _num(sg["dt"], "semigroup.dt", positive=True)
        # null tau means: use the certified decay-time estimate
        d.take(sg, "tau", None, "semigroup.tau")
        if sg["tau"] is not None:
            _num(sg["tau"], "semigroup.tau", positive=True)

    ex = cfg.setdefault("exact", {})
    _check_keys(ex, _SECTIONS["exact"], "exact")
    fallback = cfg["mem"]["dt"] if "mem" in cfg else cfg["semigroup"]["dt"] if "semigroup" in cfg else 0.05
    d.take(ex, "dt", fallback, "exact.dt")
    _num(ex["dt"], "exact.dt", positive=True)

    inv = cfg.setdefault("inversion", {})
    _check_keys(inv, _SECTIONS["inversion"], "inversion")
    for key, default in (
        ("tol", 1e-10), ("max_iters", 200), ("damping", 1.0),
        ("regularization", 1e-12), ("cond_limit", 1e12), ("zeta_bound", 1e6),
    ):
        d.take(inv, key, default, f"inversion.{key}")
        _num(inv[key], f"inversion.{key}", positive=True, integer=key == "max_iters")

    diag = cfg.setdefault("diagnostics", {})
    _check_keys(diag, _SECTIONS["diagnostics"], "diagnostics")
    d.take(diag, "tau_t_max", 10.0, "diagnostics.tau_t_max")
    _num(diag["tau_t_max"], "diagnostics.tau_t_max", positive=True)
    d.take(diag, "tau_points", 501, "diagnostics.tau_points")
    _num(diag["tau_points"], "diagnostics.tau_points", positive=True, integer=True)

    d.take(cfg, "seed", 0, "seed")
    _num(cfg["seed"], "seed", nonneg=True, integer=True)
    d.take(cfg, "output_dir", "out", "output_dir")
    return Resolved(cfg, sorted(d.applied), t0)


def load_config(path, overrides=()) -> Resolved:
    return resolve(apply_overrides(load_yaml(path), overrides))
