"""Command-line runner for macrostate scenarios.

Subcommands::

    macrostate run <config.yaml>           run the configured pipelines
    macrostate diagnose-tau <config.yaml>  decay time of driven-mode correlations
    macrostate compare <a.csv> <b.csv>     per-column deviations of two series

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Resolved, load_config
from .errors import ConfigError, DimensionError, InvariantError, NumericalError
from .evolution import (
    MemorySettings,
    ModeBasis,
    Trajectory,
    entropy_report,
    equilibrium_state,
    estimate_tau,
    exact_macrostate_trajectory,
    integrate_zeta,
    mode_relevant_set,
    site_relevant_set,
)
from .gibbs import entropy, gibbs_state, state_from_exponent
from .hilbert import ModelSpec, build_model
from .maxent import InversionSettings, project_macrostate
from .preparation import Control, PreparationSchedule, TestFunction, prepared_state
from .semigroup import decompose_relevant, reduced_dynamics_step

log = logging.getLogger("macrostate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# scenario assembly


class Scenario:
    """Model, relevant set and initial condition built from a resolved config."""

    def __init__(self, resolved: Resolved):
        self.resolved = resolved
        cfg = resolved.config
        self.cfg = cfg
        m = cfg["model"]
        self.spec = ModelSpec(m["model_kind"], int(m["num_sites"]), dict(m["couplings"]),
                              periodic=m["periodic"], dim_cap=int(m["dim_cap"]),
                              include_h2=cfg["observables"]["include_h2"])
        self.h, self.obs = build_model(self.spec)
        o = cfg["observables"]
        if o["sites"] is not None:
            self.rel = site_relevant_set(self.obs, o["sites"], o["include_h"], o["include_h2"])
        else:
            basis = ModeBasis.build(self.spec.num_sites, o["n_max"], o["mode_basis"])
            self.rel = mode_relevant_set(self.obs, basis, o["include_h"], o["include_h2"])
        self.labels = list(self.rel.labels)
        self.inversion = InversionSettings(**{k: v for k, v in cfg["inversion"].items()})
        self.t0 = resolved.t0
        self.t_end = float(cfg["t_end"])
        self.schedule = None
        self.rho0 = self._initial_state()

    def _vector(self, mapping, path):
        out = np.zeros(len(self.labels))
        for key, val in mapping.items():
            if key not in self.labels:
                raise ConfigError(f"unknown observable label {key!r} (have {', '.join(self.labels)})", field=path)
            out[self.labels.index(key)] = val
        return out

    def _initial_state(self):
        init = self.cfg["initial"]
        if init["kind"] == "gibbs":
            return gibbs_state(self.rel.ops, self._vector(init["zeta"], "initial.zeta")).state
        if init["kind"] == "quench":
            couplings = dict(self.spec.couplings)
            couplings.update(init["couplings"])
            pre = ModelSpec(self.spec.model_kind, self.spec.num_sites, couplings,
                            periodic=self.spec.periodic, dim_cap=self.spec.dim_cap)
            h_pre, _ = build_model(pre)
            return state_from_exponent(-float(init["beta"]) * h_pre).state
        zeta_t0 = self._vector(init["zeta_t0"], "initial.zeta_t0")
        params = gibbs_state(self.rel.ops, zeta_t0).params
        controls = {"density": [], "current": []}
        for i, c in enumerate(init["controls"]):
            limit = len(self.rel) if c["target"] == "density" else len(self.rel.currents)
            if c["index"] >= limit:
                raise ConfigError(f"index out of range (< {limit})", field=f"initial.controls[{i}].index")
            prof = TestFunction(c["profile"]["kind"], dict(c["profile"]["parameters"]))
            controls[c["target"]].append(Control(int(c["index"]), float(c["coefficient"]), prof))
        self.schedule = PreparationSchedule(
            float(init["T"]), float(init["t0"]), params,
            gamma_T=self._vector(init["gamma_T"], "initial.gamma_T"),
            gamma_density=controls["density"], gamma_current=controls["current"],
            quadrature_step=init["quadrature_step"],
        )
        return prepared_state(self.schedule, self.rel, self.h)

    def grid(self, dt, path):
        n = int(round((self.t_end - self.t0) / dt))
        if n < 1 or abs(self.t0 + n * dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ConfigError(f"t_end - t0 = {self.t_end - self.t0:g} is not a multiple of dt = {dt:g}", field=path)
        return self.t0 + dt * np.arange(n + 1)

    def initial_macrostate(self):
        return project_macrostate(self.rho0, self.rel.ops, settings=self.inversion)


# ---------------------------------------------------------------------------
# pipelines


def _stamp(exc, pipeline):
    return {"pipeline": pipeline, "time": getattr(exc, "time", None), "message": str(exc)}


def run_exact(sc: Scenario) -> Trajectory:
    times = sc.grid(sc.cfg["exact"]["dt"], "exact.dt")
    return exact_macrostate_trajectory(sc.rho0, sc.rel, sc.h, times, settings=sc.inversion)


def run_memory(sc: Scenario) -> Trajectory:
    mem_cfg = sc.cfg["mem"]
    sc.grid(mem_cfg["dt"], "mem.dt")
    mem = MemorySettings(
        tau=mem_cfg["tau"], dt=mem_cfg["dt"], truncate_history=mem_cfg["truncate_history"],
        order=mem_cfg["order"], quadrature=mem_cfg["quadrature"], max_step_change=mem_cfg["max_step_change"],
    )
    if sc.schedule is not None:
        start = sc.schedule.zeta_t0
    else:
        start = sc.initial_macrostate().params
    return integrate_zeta(start, sc.schedule, sc.rel, sc.h, mem, sc.t_end, t_start=sc.t0)


def run_semigroup(sc: Scenario) -> Trajectory:
    sg = sc.cfg["semigroup"]
    times = sc.grid(sg["dt"], "semigroup.dt")
    g = sc.initial_macrostate()
    zetas, zeta0s, means, ents = [], [], [], []
    for i, t in enumerate(times):
        zetas.append(g.params.zeta)
        zeta0s.append(g.params.zeta0)
        means.append([g.mean(a) for a in sc.rel.ops])
        ents.append(entropy(g))
        if i == len(times) - 1:
            break
        try:
            dec = decompose_relevant(sc.rel, g)
            g = reduced_dynamics_step(dec, g, sc.h, sg["tau"], sg["dt"], settings=sc.inversion).state
        except NumericalError as exc:
            exc.time = float(t)
            raise
    return Trajectory(times, np.array(zetas), np.array(zeta0s), np.array(means), np.array(ents), tuple(sc.labels))


PIPELINE_RUNNERS = {"exact": run_exact, "memory": run_memory, "semigroup": run_semigroup}


# ---------------------------------------------------------------------------
# outputs


def series_header(labels):
    return ["time"] + [f"zeta[{x}]" for x in labels] + [f"mean[{x}]" for x in labels] + ["entropy"]


def series_rows(traj: Trajectory):
    for i, t in enumerate(traj.times):
        yield [t, *traj.zeta[i], *traj.expectations[i], traj.entropy[i]]


def write_series(path: Path, traj: Trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series_header(traj.labels))
        for row in series_rows(traj):
            w.writerow(["%.17g" % v for v in row])


def read_series(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError("empty time-series file", field=str(path))
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry: {exc}", field=str(path)) from exc
    return header, data


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def deviation_table(trajs: dict) -> list:
    """Pairwise max deviations of expectations and entropy on shared grid times."""
    out = []
    names = [p for p in ("exact", "memory", "semigroup") if p in trajs]
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ta, tb = trajs[a], trajs[b]
            ia, ib = _shared_times(ta.times, tb.times)
            row = {"pair": f"{a}-{b}", "shared_times": int(len(ia))}
            if len(ia):
                dev = np.abs(ta.expectations[ia] - tb.expectations[ib])
                row["max_expectation_deviation"] = float(dev.max())
                row["per_observable"] = {lab: float(v) for lab, v in zip(ta.labels, dev.max(axis=0))}
                row["max_entropy_deviation"] = float(np.abs(ta.entropy[ia] - tb.entropy[ib]).max())
            out.append(row)
    return out


def _shared_times(a, b, tol=1e-9):
    ia, ib = [], []
    j = 0
    for i, t in enumerate(a):
        while j < len(b) and b[j] < t - tol:
            j += 1
        if j < len(b) and abs(b[j] - t) <= tol:
            ia.append(i)
            ib.append(j)
    return np.array(ia, dtype=int), np.array(ib, dtype=int)


def tau_report(sc: Scenario) -> dict:
    diag = sc.cfg["diagnostics"]
    times = np.linspace(0.0, diag["tau_t_max"], int(diag["tau_points"]))
    g_eq = equilibrium_state(sc.rel, sc.rho0, settings=sc.inversion)
    est = estimate_tau(sc.rel, sc.h, g_eq, times)
    return {
        "driven_modes": [sc.labels[j] for j in sc.rel.driven],
        "tau_est": est.tau,
        "recurrence": est.recurrence,
        "certified": est.certified,
        "crossings": est.crossings,
        "recurrences": est.recurrences,
        "note": est.note,
        "t_max": diag["tau_t_max"],
        "points": int(diag["tau_points"]),
    }


def _entropy_summary(traj: Trajectory, tau, rel):
    rep = entropy_report(traj, tau, rel)
    return {
        "tau": tau,
        "negative_steps": rep.negative_steps,
        "monotone": rep.monotone,
        "min_step": float(rep.steps.min()) if rep.steps.size else None,
        "equilibrium_entropy": rep.equilibrium_entropy,
        "final_gap": float(rep.equilibrium_gap[-1]) if rep.equilibrium_gap is not None else None,
    }


def execute(resolved: Resolved, out_dir: Path) -> int:
    """Run all pipelines, then write series, report and manifest."""
    cfg = resolved.config
    manifest = {
        "version": __version__,
        "config": cfg,
        "applied_defaults": resolved.applied_defaults,
        "t0": resolved.t0,
        "status": "ok",
        "failure": None,
        "outputs": [],
    }
    sc = Scenario(resolved)
    manifest["relevant_labels"] = sc.labels
    manifest["dimension"] = sc.rel.dim
    tau_diag = None
    trajs, failure = {}, None
    if "semigroup" in cfg and cfg["semigroup"]["tau"] is None:
        tau_diag = tau_report(sc)
        if tau_diag["certified"]:
            cfg["semigroup"]["tau"] = tau_diag["tau_est"]
            manifest["tau_source"] = "tau_est"
        else:
            failure = {"pipeline": "semigroup", "time": None,
                       "message": f"semigroup.tau defaults to tau_est, which is not certified: {tau_diag['note']}"}
    for name in cfg["pipelines"]:
        if failure is not None:
            break
        log.info("running pipeline %s", name)
        try:
            trajs[name] = PIPELINE_RUNNERS[name](sc)
        except NumericalError as exc:
            failure = _stamp(exc, name)
            log.error("pipeline %s failed at t=%s: %s", name, failure["time"], exc)
            break

    report = {"pipelines": list(trajs), "deviations": deviation_table(trajs), "entropy": {}}
    tau_ent = cfg["mem"]["tau"] if "mem" in cfg else cfg["semigroup"]["tau"] if "semigroup" in cfg else cfg["exact"]["dt"]
    for name, tr in trajs.items():
        report["entropy"][name] = _entropy_summary(tr, tau_ent, sc.rel)
    if "memory" in trajs and trajs["memory"].kubo_min_eig is not None:
        report["memory_min_kubo_eigenvalue"] = float(np.min(trajs["memory"].kubo_min_eig))
    try:
        report["tau_diagnostic"] = tau_diag or tau_report(sc)
    except NumericalError as exc:
        report["tau_diagnostic"] = {"error": str(exc)}

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, tr in trajs.items():
            fname = f"series_{name}.csv"
            write_series(out_dir / fname, tr)
            manifest["outputs"].append(fname)
        dump_json(out_dir / "report.json", report)
        manifest["outputs"].append("report.json")
        if failure is not None:
            manifest["status"] = "numerical_failure"
            manifest["failure"] = failure
        dump_json(out_dir / "manifest.json", manifest)
    except OSError as exc:
        raise ConfigError(f"output path not writable: {exc}", field="output_dir") from exc
    return EXIT_NUMERICAL if failure is not None else EXIT_OK


# ---------------------------------------------------------------------------
# entry points


def cmd_run(args) -> int:
    resolved = load_config(args.config, args.override)
    out = Path(args.output_dir or resolved.config["output_dir"])
    code = execute(resolved, out)
    if not args.quiet:
        report = json.loads((out / "report.json").read_text())
        for row in report["deviations"]:
            print(f"{row['pair']:>18s}  max |d<A>| = {row.get('max_expectation_deviation', float('nan')):.3e}  ({row['shared_times']} shared times)")
        tau = report["tau_diagnostic"]
        if "tau_est" in tau:
            print(f"tau_est = {tau['tau_est']}  certified = {tau['certified']}")
        print(f"outputs in {out}")
    return code


def cmd_diagnose_tau(args) -> int:
    resolved = load_config(args.config, args.override)
    sc = Scenario(resolved)
    rep = tau_report(sc)
    out = Path(args.output_dir or resolved.config["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        dump_json(out / "tau_report.json", rep)
    except OSError as exc:
        raise ConfigError(f"output path not writable: {exc}", field="output_dir") from exc
    if not args.quiet:
        if not rep["driven_modes"]:
            print("no driven modes: every relevant observable is conserved")
        else:
            for lab in rep["driven_modes"]:
                print(f"{lab:>8s}  1/e crossing = {rep['crossings'][lab]}  recurrence = {rep['recurrences'][lab]}")
            print(f"tau_est = {rep['tau_est']}  first recurrence = {rep['recurrence']}  certified = {rep['certified']}")
            if rep["note"]:
                print(rep["note"])
    return EXIT_OK


def cmd_compare(args) -> int:
    ha, a = read_series(args.series_a)
    hb, b = read_series(args.series_b)
    if ha != hb:
        raise ConfigError("series have different columns", field=str(args.series_b))
    if not ha or ha[0] != "time":
        raise ConfigError("first column must be 'time'", field=str(args.series_a))
    ia, ib = _shared_times(a[:, 0], b[:, 0])
    if a.shape[0] and b.shape[0] and not len(ia):
        raise ConfigError("series share no time points", field=str(args.series_b))
    dev = np.abs(a[ia] - b[ib])
    result = {
        "shared_times": int(len(ia)),
        "columns": {
            col: {"max": float(dev[:, i].max()) if dev.size else 0.0, "mean": float(dev[:, i].mean()) if dev.size else 0.0}
            for i, col in enumerate(ha)
        }
    }
    result["max_deviation"] = max((c["max"] for c in result["columns"].values()), default=0.0)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(out / "compare.json", result)
    if not args.quiet:
        width = max(len(c) for c in ha)
        print(f"{'column':<{width}s}  {'max':>12s}  {'mean':>12s}")
        for col, v in result["columns"].items():
            print(f"{col:<{width}s}  {v['max']:12.4e}  {v['mean']:12.4e}")
        print(f"shared times: {result['shared_times']}")
        print(f"max deviation: {result['max_deviation']:.17g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macrostate", description="Nonequilibrium macrostate scenarios")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=None, help="directory for output files")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config value by dot path, e.g. mem.dt=0.05 (repeatable)")
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run the configured pipelines")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("diagnose-tau", parents=[common], help="estimate the memory time tau")
    p.add_argument("config")
    p.set_defaults(func=cmd_diagnose_tau)
    p = sub.add_parser("compare", parents=[common], help="compare two time-series files")
    p.add_argument("series_a")
    p.add_argument("series_b")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimensionError, InvariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        t = getattr(exc, "time", None)
        where = f" at t={t:g}" if t is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
