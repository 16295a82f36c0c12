"""Command-line runner ``klab``.

Every subcommand shares the model flags (``--model``, ``--N``, ``--X``,
``--mu``, ``--F``), ``--seed``, ``--jobs`` and ``--out``.  Settings can also
come from a flat ``key = value`` text file given with ``--config``; flags on
the command line win over the file.  Unknown keys are rejected before
anything is written.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 solver nonconvergence, 4 truncation window exceeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as acc
from . import flow as fl
from . import functionals as fn
from . import group as gr
from . import io as kio
from . import metric as mt
from .errors import (ConfigError, ConvexificationFailure, Inconclusive, ModelMismatch,
                     NonConvergence, NormalizationAmbiguity, PositivityLoss, StepRejected,
                     StepTooLarge, TruncationExceeded)
from .model import P1, make_model
from .solver import continuity_run, default_schedule

log = logging.getLogger("klab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_TRUNCATION = 0, 1, 2, 3, 4
DEFAULT_N = {"p1": 512, "torus": 64}


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


GLOBAL_KEYS = {
    "model": str, "N": int, "X": float, "mu": float, "F": str, "seed": int,
    "jobs": int, "out": str, "tol": float, "task": str,
}

TASK_KEYS = {
    "continuity": {"to_ke": _bool, "trace": str, "snapshots": str, "gap": _bool},
    "flow": {"T": float, "dt": float, "variant": str, "phi0": str, "trace": str,
             "snapshot": str, "initial_constant": float, "dens_tol": float, "sup_tol": float},
    "distance": {"a": str, "b": str, "csv": str, "K": int},
    "geodesic": {"a": str, "b": str, "K": int},
    "orbit": {"eta": str, "window": float, "steps": int, "csv": str},
    "mt-scan": {"rays": int, "csv": str},
    "alpha": {"family": str, "beta": str, "csv": str},
    "functionals": {"in": str, "csv": str},
    "acceptance": {"compare": str, "only": str},
}

DEFAULTS = {
    "model": P1, "X": 12.0, "seed": 0, "jobs": 1, "out": "klab_out",
    "to_ke": False, "gap": True, "dt": 0.05, "variant": "normalized", "initial_constant": 0.0,
    "dens_tol": 1e-3, "sup_tol": 1e-3, "K": 32, "steps": 201, "rays": 32,
    "beta": "0.1:0.05:2.0",
}


# -- configuration -------------------------------------------------------

def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    out = {}
    for num, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{num}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(task, raw):
    allowed = dict(GLOBAL_KEYS, **TASK_KEYS[task])
    cfg = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"unknown configuration key {key!r} for task {task!r}")
        try:
            cfg[key] = allowed[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return cfg


def resolve_config(task, file_values, flag_values):
    """Defaults, then the config file, then command-line flags."""
    cfg = {k: v for k, v in DEFAULTS.items() if k in GLOBAL_KEYS or k in TASK_KEYS[task]}
    cfg.update(_coerce(task, file_values))
    cfg.update(_coerce(task, flag_values))
    if cfg.get("task", task) != task:
        raise ConfigError(f"config is for task {cfg['task']!r}, not {task!r}")
    cfg["task"] = task
    if cfg["model"] not in DEFAULT_N:
        raise ConfigError(f"unknown model kind {cfg['model']!r}")
    cfg.setdefault("N", DEFAULT_N[cfg["model"]])
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be at least 1")
    return cfg


def build_model(cfg):
    ricci = None
    if cfg.get("F"):
        path = Path(cfg["F"])
        if not path.is_file():
            raise ConfigError(f"F file {path} not found")
        ricci = np.loadtxt(path, comments="#", ndmin=1).ravel()
        n = (cfg["N"] ** 2) if cfg["model"] == "torus" else cfg["N"] + 1
        if ricci.size != n:
            raise ConfigError(f"F file holds {ricci.size} values, the grid needs {n}")
    return make_model(cfg["model"], cfg["N"], X=cfg["X"], mu=cfg.get("mu"), ricci=ricci)


def _load(model, path, what):
    if not path:
        return model.zeros()
    if not Path(path).is_file():
        raise ConfigError(f"{what} snapshot {path} not found")
    return kio.read_snapshot(path, model)


def _need(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError(f"task {cfg['task']!r} needs {', '.join(missing)}")


def _out(cfg, key, default):
    return Path(cfg[key]) if cfg.get(key) else Path(cfg["out"]) / default


# keys that only say where results go or how fast they are made
_NOT_PROVENANCE = ("jobs", "out", "compare", "csv", "trace", "snapshot", "snapshots")


def _provenance(cfg):
    return {k: v for k, v in cfg.items() if k not in _NOT_PROVENANCE}


def _beta_grid(text):
    try:
        lo, step, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"beta must read lo:step:hi, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise ConfigError(f"empty beta range {text!r}")
    return np.round(np.arange(lo, hi + 0.5 * step, step), 12)


# -- tasks ---------------------------------------------------------------

def task_functionals(cfg, model):
    phi = _load(model, cfg.get("in"), "input")
    row = fn.mabuchi(phi).as_dict()
    path = kio.write_csv(_out(cfg, "csv", "functionals.csv"), [row], _provenance(cfg), cfg["seed"])
    print(f"E = {row['E_fano']:.10g}  J = {row['J']:.10g}  I-J = {row['I_minus_J']:.10g}  -> {path}")
    return EXIT_OK


def task_continuity(cfg, model):
    sched = default_schedule(model.mu)
    if not cfg["to_ke"]:
        sched = [p for p in sched if p.t < 1.0 or p.s <= 0.0]
    prov = _provenance(cfg)
    trace_path = _out(cfg, "trace", "trace.csv")
    try:
        trace = continuity_run(model, sched, tol=cfg.get("tol", 1e-10), with_gap=cfg["gap"])
    except StepTooLarge as exc:
        if exc.trace is not None and len(exc.trace):
            kio.write_csv(trace_path, exc.trace.rows(), prov, cfg["seed"])
        raise
    kio.write_csv(trace_path, trace.rows(), prov, cfg["seed"])
    if cfg.get("snapshots"):
        for k, node in enumerate(trace.nodes):
            kio.write_snapshot(Path(cfg["snapshots"]) / f"node_{k:03d}.klab", node.potential)
    end = trace.terminal
    print(f"reached (s, t) = ({end.point.s:g}, {end.point.t:g}) in {len(trace)} nodes; "
          f"osc = {end.osc:.3e}  -> {trace_path}")
    return EXIT_OK


FLOW_COLUMNS = ["time", "E", "calabi_speed", "darvas_speed", "mabuchi_speed", "densL1_increment",
                "calabi_l1", "newton_residual"]


def task_flow(cfg, model):
    phi0 = _load(model, cfg.get("phi0"), "initial") if cfg.get("phi0") else None
    prov = _provenance(cfg)
    trace_path = _out(cfg, "trace", "flow.csv")
    try:
        traj = fl.krf_run(model, phi0, T=cfg.get("T"), dt=cfg["dt"], variant=cfg["variant"],
                          tol=cfg.get("tol", 1e-10), initial_constant=cfg["initial_constant"])
    except StepRejected as exc:
        if exc.trajectory is not None:
            kio.write_csv(trace_path, exc.trajectory.rows(), prov, cfg["seed"], FLOW_COLUMNS)
        raise
    kio.write_csv(trace_path, traj.rows(), prov, cfg["seed"], FLOW_COLUMNS)
    if cfg.get("snapshot"):
        kio.write_snapshot(cfg["snapshot"], traj.terminal)
    summary = dict(fl.flow_lengths(traj), duration=traj.duration)
    try:
        verdict = fl.convergence_verdict(traj, dens_tol=cfg["dens_tol"], sup_tol=cfg["sup_tol"])
        summary.update(verdict["evidence"], converged=int(verdict["converged"]))
        status = "converged" if verdict["converged"] else "not converged"
    except Inconclusive as exc:
        status = f"inconclusive ({exc})"
    kio.write_csv(Path(cfg["out"]) / "flow_summary.csv", [summary], prov, cfg["seed"])
    print(f"flow to T = {traj.duration:g}: {status}; darvas length {summary['darvas_len']:.6g}"
          f"  -> {trace_path}")
    return EXIT_OK


def task_distance(cfg, model):
    _need(cfg, "a", "b")
    u, v = _load(model, cfg["a"], "a"), _load(model, cfg["b"], "b")
    rep = mt.d1(u, v, K=cfg["K"])
    path = kio.write_csv(_out(cfg, "csv", "distance.csv"), [rep.as_dict()], _provenance(cfg),
                         cfg["seed"])
    print(f"d1 = {rep.d1:.10g}  dC = {rep.dC:.10g}  -> {path}")
    return EXIT_OK


def task_geodesic(cfg, model):
    _need(cfg, "a", "b")
    u, v = _load(model, cfg["a"], "a"), _load(model, cfg["b"], "b")
    path = mt.geodesic(u, v, K=cfg["K"])
    res = mt.geodesic_residual(path)
    out = Path(cfg["out"])
    # speeds belong to steps, so the row of time k describes the step k -> k+1
    rows = [dict(t=t, **{w: path.speeds[w][k] for w in mt.METRICS})
            for k, t in enumerate(path.times[:-1])]
    kio.write_csv(out / "geodesic.csv", rows, _provenance(cfg), cfg["seed"])
    for k in range(len(path)):
        kio.write_snapshot(out / f"geodesic_{k:03d}.klab", path.potential(k))
    print(f"geodesic with {len(path)} samples, residual {res:.3e}  -> {out}")
    return EXIT_OK


def task_orbit(cfg, model):
    eta = _load(model, cfg.get("eta"), "eta")
    window = cfg.get("window", gr.window_limit(model))
    if window > gr.window_limit(model) + 1e-12:
        raise TruncationExceeded(f"window {window:g} exceeds X/4 = {gr.window_limit(model):g}")
    scan = gr.orbit_scan(eta, np.linspace(-window, window, cfg["steps"]))
    path = kio.write_csv(_out(cfg, "csv", "orbit.csv"), scan.rows(), _provenance(cfg), cfg["seed"])
    print(f"F_eta strictly convex: {scan.is_strictly_convex()}; argmin a = {scan.argmin():.6g}; "
          f"E range {np.ptp(scan.E):.3e}  -> {path}")
    return EXIT_OK


def task_mt_scan(cfg, model):
    scan = gr.mt_scan(model, n_rays=cfg["rays"], seed=cfg["seed"])
    path = kio.write_csv(_out(cfg, "csv", "mt.csv"), scan.rows, _provenance(cfg), cfg["seed"])
    print(f"slope C = {scan.C:.6g}, offset D = {scan.D:.6g}, control slope {scan.control_C:.3e}, "
          f"flagged {scan.flagged}  -> {path}")
    return EXIT_OK


def task_alpha(cfg, model):
    betas = _beta_grid(cfg["beta"])
    lim = gr.window_limit(model)
    if cfg.get("family"):
        files = sorted(Path(cfg["family"]).glob("*.klab"))
        if not files:
            raise ConfigError(f"no .klab snapshots in {cfg['family']}")
        family = [kio.read_snapshot(f, model) for f in files]
        enriched = None
    else:
        family = gr.orbit_family(model, np.linspace(0.0, lim, 9))
        enriched = gr.orbit_family(model, np.linspace(0.0, lim, 17))
    table = gr.alpha_scan(family, betas, enriched=enriched)
    path = kio.write_csv(_out(cfg, "csv", "alpha.csv"), table.rows(), _provenance(cfg), cfg["seed"])
    print(f"{len(family)} members, stable up to beta = {table.stable_beta:g} "
          f"(sampled-family certificate)  -> {path}")
    return EXIT_OK


def task_acceptance(cfg, model=None):
    only = None
    if cfg.get("only"):
        try:
            only = [int(v) for v in cfg["only"].split(",")]
        except ValueError as exc:
            raise ConfigError(f"only must list criterion numbers, got {cfg['only']!r}") from exc
        if not set(only) <= set(range(1, 11)):
            raise ConfigError("criteria are numbered 1 to 10")
    outcomes = acc.run_suite(seed=cfg["seed"], out_dir=cfg["out"], only=only, jobs=cfg["jobs"],
                             compare_dir=cfg.get("compare"), config=_provenance(cfg))
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_FAIL


TASKS = {
    "continuity": task_continuity, "flow": task_flow, "distance": task_distance,
    "geodesic": task_geodesic, "orbit": task_orbit, "mt-scan": task_mt_scan,
    "alpha": task_alpha, "functionals": task_functionals, "acceptance": task_acceptance,
}


# -- argument parsing ------------------------------------------------------

def _common(parser):
    s = argparse.SUPPRESS
    g = parser.add_argument_group("model and run")
    g.add_argument("--config", default=s, help="flat key = value file")
    g.add_argument("--model", choices=sorted(DEFAULT_N), default=s)
    g.add_argument("--N", type=int, default=s, help="grid size")
    g.add_argument("--X", type=float, default=s, help="truncation half-width (p1)")
    g.add_argument("--mu", type=float, default=s, help="override of the Einstein constant")
    g.add_argument("--F", default=s, help="text file with the Ricci potential override")
    g.add_argument("--seed", type=int, default=s)
    g.add_argument("--jobs", type=int, default=s)
    g.add_argument("--out", default=s, help="output directory")
    g.add_argument("--tol", type=float, default=s, help="solver tolerance")
    g.add_argument("-v", "--verbose", action="store_true", default=s)


def build_parser():
    s = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="klab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"klab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the task named in a config file")
    _common(p)

    p = sub.add_parser("continuity", help="continuity path to the Einstein point")
    _common(p)
    p.add_argument("--to-ke", dest="to_ke", action="store_true", default=s)
    p.add_argument("--no-gap", dest="gap", action="store_false", default=s,
                   help="skip the eigenvalue at every node")
    p.add_argument("--trace", default=s)
    p.add_argument("--snapshots", default=s, help="directory for one snapshot per node")

    p = sub.add_parser("flow", help="normalized Kaehler-Ricci flow")
    _common(p)
    p.add_argument("--T", type=float, default=s)
    p.add_argument("--dt", type=float, default=s)
    p.add_argument("--variant", choices=fl.VARIANTS, default=s)
    p.add_argument("--phi0", default=s, help="initial snapshot (default: a constant)")
    p.add_argument("--initial-constant", dest="initial_constant", type=float, default=s)
    p.add_argument("--trace", default=s)
    p.add_argument("--snapshot", default=s, help="write the terminal potential here")
    p.add_argument("--dens-tol", dest="dens_tol", type=float, default=s)
    p.add_argument("--sup-tol", dest="sup_tol", type=float, default=s)

    for name in ("distance", "geodesic"):
        p = sub.add_parser(name, help=f"{name} between two snapshots")
        _common(p)
        p.add_argument("--a", default=s)
        p.add_argument("--b", default=s)
        p.add_argument("--K", type=int, default=s, help="geodesic time steps")
        if name == "distance":
            p.add_argument("--csv", default=s)

    p = sub.add_parser("orbit", help="scan a dilation orbit")
    _common(p)
    p.add_argument("--eta", default=s)
    p.add_argument("--window", type=float, default=s)
    p.add_argument("--steps", type=int, default=s)
    p.add_argument("--csv", default=s)

    p = sub.add_parser("mt-scan", help="supporting-line fit of E against J along rays")
    _common(p)
    p.add_argument("--rays", type=int, default=s)
    p.add_argument("--csv", default=s)

    p = sub.add_parser("alpha", help="exponential integrability of a family")
    _common(p)
    p.add_argument("--family", default=s, help="directory of .klab snapshots")
    p.add_argument("--beta", default=s, help="lo:step:hi")
    p.add_argument("--csv", default=s)

    p = sub.add_parser("functionals", help="energy functionals of a snapshot")
    _common(p)
    p.add_argument("--in", dest="in", default=s)
    p.add_argument("--csv", default=s)

    p = sub.add_parser("acceptance", help="run the acceptance suite")
    _common(p)
    p.add_argument("--compare", default=s, help="directory of a previous run to compare against")
    p.add_argument("--only", default=s, help="comma separated criterion numbers")
    return parser


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config(args.pop("config")) if "config" in args else {}
        task = command
        if command == "run":
            task = file_values.get("task")
            if task not in TASKS:
                raise ConfigError(f"config must name a task, one of {', '.join(TASKS)}")
        cfg = resolve_config(task, file_values, args)
        model = None if task == "acceptance" else build_model(cfg)
        Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        return TASKS[task](cfg, model)
    except (ConfigError, ModelMismatch, NormalizationAmbiguity, ConvexificationFailure) as exc:
        print(f"klab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, PositivityLoss, StepTooLarge, StepRejected, Inconclusive) as exc:
        print(f"klab: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TruncationExceeded as exc:
        print(f"klab: truncation window exceeded: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION


if __name__ == "__main__":
    sys.exit(main())
