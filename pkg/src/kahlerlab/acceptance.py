"""The acceptance suite: ten end-to-end checks at desk scale.

Each criterion returns an :class:`Outcome` made of named checks (value,
bound, comparison) plus optional trace tables.  :func:`run_suite` prints one
pass/fail line per criterion and writes ``acceptance.csv`` together with the
trace tables; wall-clock times go to the log only, so the CSVs are
reproducible byte for byte.
"""

from __future__ import annotations

import filecmp
import logging
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow as fl
from . import group as gr
from . import io as kio
from . import metric as mt
from .functionals import am, mabuchi
from .model import (Potential, legendre_potential, make_model, mean, ricci_potential_of,
                    sample_potential)
from .solver import apriori_report, continuity_run, energy_monotone, solve_node

log = logging.getLogger(__name__)

KE_REFERENCE = 0.3 * np.array([0.0, 0.5, 0.0, -0.2, 0.0, 0.1])
TITLES = {
    1: "functional identities",
    2: "Kaehler-Einstein continuity run",
    3: "a priori diagnostics",
    4: "Calabi-Yau solve and flow",
    5: "metric suite",
    6: "flow lengths",
    7: "orbit suite",
    8: "Moser-Trudinger scan",
    9: "Hormander and alpha",
    10: "determinism",
}


@dataclass
class Check:
    name: str
    value: float
    bound: float
    op: str = "le"

    @property
    def passed(self):
        v, b = self.value, self.bound
        if not np.isfinite(v):
            return False
        return {"le": v <= b, "lt": v < b, "ge": v >= b, "gt": v > b, "eq": v == b}[self.op]


@dataclass
class Outcome:
    number: int
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def title(self):
        return TITLES[self.number]

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, name, value, bound, op="le"):
        self.checks.append(Check(name, float(value), float(bound), op))

    def line(self):
        failed = [c.name for c in self.checks if not c.passed]
        tail = "" if not failed else " (failed: " + ", ".join(failed) + ")"
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.title}{tail}"


def _rng(seed, k):
    return np.random.default_rng([int(seed), int(k)])


def _worse(a, b):
    # NaN propagates, so a missing quantity fails its check
    return b if not np.isfinite(b) or b > a else a


def _pair_offset(u):
    # mean-zero potentials cross each other, so envelopes are nontrivial
    return u - mean(u)


# -- 1 --------------------------------------------------------------------

def criterion_1(seed, count=500):
    out = Outcome(1)
    rng = _rng(seed, 1)
    t0 = time.perf_counter()
    for model in (make_model("torus", 128), make_model("p1", 512)):
        am_gap = chain_gap = trans_gap = e_gap = 0.0
        ent_min = np.inf
        for _ in range(count):
            phi = sample_potential(model, rng)
            rep = mabuchi(phi)
            direct = float(np.sum(phi.samples * phi.masses)) / model.volume
            am_gap = max(am_gap, abs(rep.AM - rep.I_minus_J - direct))
            chain_gap = max(chain_gap, float(np.max(-np.diff(rep.chain(model.dim)))))
            c = rng.uniform(-1.0, 1.0)
            trans_gap = max(trans_gap, abs(mabuchi(phi + c).E_fano - rep.E_fano))
            e_gap = max(e_gap, abs(rep.E_fano - rep.E_second), abs(rep.E_fano - rep.E_csc))
            ent_min = min(ent_min, rep.entropy_ref, rep.entropy_plain)
        k = model.kind
        out.add(f"{k}_am_identity", am_gap, 1e-8)
        out.add(f"{k}_chain_violation", chain_gap, 1e-9)
        out.add(f"{k}_translation_gap", trans_gap, 1e-10)
        out.add(f"{k}_energy_forms_gap", e_gap, 1e-7)
        out.add(f"{k}_entropy_min", ent_min, 0.0, "ge")
    out.add("runtime_within_budget", float(time.perf_counter() - t0 <= 120.0), 1.0, "eq")
    return out


# -- 2 and 3 --------------------------------------------------------------

def _ke_run(N, with_gap):
    base = make_model("p1", N)
    theta = legendre_potential(base, KE_REFERENCE)
    return base, continuity_run(base.rebase(theta), with_gap=with_gap)


def criterion_2(seed):
    out = Outcome(2)
    t0 = time.perf_counter()
    base, trace = _ke_run(512, with_gap=False)
    term = trace.terminal
    out.add("terminal_s", term.point.s, 1.0, "eq")
    out.add("terminal_t", term.point.t, 1.0, "eq")
    f = ricci_potential_of(term.potential)
    out.add("ricci_potential_osc", float(np.ptp(f)), 1e-4)
    # the orbit lives on the AM = 0 slice, so the constant is normalized away
    Phi = term.potential.to_canonical()
    Phi = Phi - am(Phi)
    out.add("d1_to_orbit", gr.d1G(Phi, base.zeros()), 1e-3)
    sols = {}
    for N in (256, 512, 1024, 2048):
        _, tr = _ke_run(N, with_gap=False)
        mid = [nd for nd in tr.nodes if nd.point.t == 1 and nd.point.s == 0.5][0]
        sols[N] = (tr.terminal.potential.to_canonical().samples, mid.potential.to_canonical().samples)
    Ns = sorted(sols)
    rows = []
    for which, label in ((0, "terminal"), (1, "mid")):
        errs = [float(np.max(np.abs(sols[a][which] - sols[b][which][::2]))) for a, b in zip(Ns, Ns[1:])]
        orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(len(errs) - 1)]
        for N, e in zip(Ns[1:], errs):
            rows.append(dict(node=label, N=N, difference=e))
        out.add(f"refinement_order_{label}", min(orders), 1.8, "ge")
    out.add("runtime_within_budget", float(time.perf_counter() - t0 <= 300.0), 1.0, "eq")
    out.tables["continuity_trace"] = trace.rows()
    out.tables["refinement"] = rows
    return out


def criterion_3(seed):
    out = Outcome(3)
    _, trace = _ke_run(512, with_gap=True)
    x = np.arange(64) / 64
    gx, gy = np.meshgrid(x, x, indexing="ij")
    torus = make_model("torus", 64, ricci=_torus_F(gx, gy))
    traces = {"p1": trace, "torus": continuity_run(torus)}
    for name, tr in traces.items():
        rep = apriori_report(tr)
        flags = [r["flags"] for r in rep["rows"]]
        out.add(f"{name}_max_principle_violations", sum("max-principle" in f for f in flags), 0, "eq")
        out.add(f"{name}_poincare_violations", sum("poincare" in f for f in flags), 0, "eq")
        checked = sum(1 for r in rep["rows"] if np.isfinite(r["gap_margin"]))
        out.add(f"{name}_poincare_nodes_checked", checked, 1, "ge")
        ok, energies = energy_monotone(tr)
        out.add(f"{name}_energy_increases", int(np.sum(np.diff(energies) > tr.tol)), 0, "eq")
        out.tables[f"apriori_{name}"] = [{k: v for k, v in r.items()} for r in rep["rows"]]
    return out


# -- 4 --------------------------------------------------------------------

def _torus_F(gx, gy):
    return 0.5 * np.cos(2 * np.pi * gx) + 0.3 * np.sin(2 * np.pi * (gx + gy))


def _cy_setup(N=64):
    x = np.arange(N) / N
    gx, gy = np.meshgrid(x, x, indexing="ij")
    return make_model("torus", N, mu=0.0, ricci=_torus_F(gx, gy))


def criterion_4(seed):
    out = Outcome(4)
    model = _cy_setup()
    out.add("normalization_gap", abs(float(np.sum(model.weights * np.exp(model.ricci_reference)))
                                     - model.volume), 1e-12)
    cy, info = solve_node(model, 0.0, 1.0, tol=1e-12, return_info=True)
    out.add("solve_residual", info.residual, 1e-9)
    p0 = sample_potential(model, _rng(seed, 4))
    traj = fl.krf_run(model, p0, dt=0.05)
    gap = float(np.sum(np.abs(traj.terminal.masses - cy.masses)))
    out.add("flow_density_l1_gap", gap, 1e-5)
    out.add("flow_max_newton_residual", float(traj.diag["newton_residual"].max()), 1e-9)
    out.tables["flow_torus"] = traj.rows()
    return out


# -- 5 --------------------------------------------------------------------

def criterion_5(seed):
    out = Outcome(5)
    rng = _rng(seed, 5)
    iso = 0.0
    for model in (make_model("p1", 512), make_model("torus", 32)):
        for _ in range(5):
            u = sample_potential(model, rng)
            v = sample_potential(model, rng).samples
            iso = max(iso, mt.sphere_isometry_defect(u, v))
    out.add("sphere_isometry_rel_defect", iso, 1e-6)

    p1 = make_model("p1", 512)
    rows = []
    agree = 0.0
    for k in range(5):
        u = _pair_offset(sample_potential(p1, rng, min_density=0.3))
        v = _pair_offset(sample_potential(p1, rng, min_density=0.3))
        rep = mt.d1(u, v, K=0)
        arc = mt.path_length(mt.geodesic(u, v, K=16), "darvas")
        vals = np.array([rep.d1, rep.d1_dtn, arc])
        agree = _worse(agree, float(np.ptp(vals) / vals.min()))
        rows.append(dict(pair=k, pythagorean=rep.d1, initial_speed=rep.d1_dtn, arc_length=arc))
    torus = make_model("torus", 32)
    x = torus.coords[0]
    u = Potential(torus, 0.02 * np.sin(2 * np.pi * x) + 0.01 * np.cos(4 * np.pi * x))
    v = Potential(torus, -0.015 * np.sin(2 * np.pi * x + 1.0) + 0.01)
    rep = mt.d1(u, v, K=0)
    arc = mt.path_length(mt.geodesic(u, v, K=16), "darvas")
    vals = np.array([rep.d1, rep.d1_dtn, arc])
    agree = _worse(agree, float(np.ptp(vals) / vals.min()))
    rows.append(dict(pair="torus", pythagorean=rep.d1, initial_speed=rep.d1_dtn, arc_length=arc))
    out.add("d1_formula_rel_spread", agree, 0.01)

    small = make_model("p1", 256)
    worst = -np.inf
    for _ in range(200):
        a, b, c = (_pair_offset(sample_potential(small, rng)) for _ in range(3))
        worst = max(worst, mt.d1_value(a, c) - mt.d1_value(a, b) - mt.d1_value(b, c))
    out.add("triangle_excess", worst, 1e-12)

    shift = 0.0
    for model in (p1, torus):
        u = sample_potential(model, rng)
        for c in (-0.7, 0.25, 1.5):
            shift = max(shift, abs(mt.d1_value(u, u + c) - abs(c)))
    out.add("constant_shift_gap", shift, 1e-12)

    u = _pair_offset(sample_potential(torus, rng, min_density=0.3))
    v = _pair_offset(sample_potential(torus, rng, min_density=0.3))
    P, sweeps = mt.rooftop(u, v, return_sweeps=True)
    Q = mt.rooftop_oracle(u, v)
    out.add("rooftop_vs_oracle", float(np.max(np.abs(P.samples - Q.samples))), 1e-7)
    out.add("rooftop_contact_fraction", float(np.mean(np.abs(P.samples - np.minimum(u.samples, v.samples)) < 1e-12)), 1.0, "lt")
    out.tables["d1_formulas"] = rows
    return out


# -- 6 --------------------------------------------------------------------

def _length_checks(out, name, traj):
    lengths = fl.flow_lengths(traj)
    cum = fl.cumulative_lengths(traj)
    gaps = fl.step_speed_gaps(traj)
    cross = fl.length_crosscheck(traj)
    half = len(traj.times) // 2
    for w in mt.METRICS:
        total = lengths[f"{w}_len"]
        out.add(f"{name}_{w}_length_finite", float(np.isfinite(total)), 1.0, "eq")
        out.add(f"{name}_{w}_tail_share", (cum[w][-1] - cum[w][half]) / total, 0.01)
        sp_ = traj.diag[f"{w}_speed"]
        out.add(f"{name}_{w}_terminal_speed_ratio", sp_[-1] / sp_.max(), 1e-3)
        out.add(f"{name}_{w}_step_speed_gap", gaps[w]["max_rel_gap"], 0.01)
        out.add(f"{name}_{w}_steps_compared", gaps[w]["steps"], 5, "ge")
        out.add(f"{name}_{w}_length_crosscheck", cross[w]["rel_gap"], 0.01)
    verdict = fl.convergence_verdict(traj)
    out.add(f"{name}_converged", float(verdict["converged"]), 1.0, "eq")


def criterion_6(seed):
    out = Outcome(6)
    p1 = make_model("p1", 512)
    traj = fl.krf_run(p1, sample_potential(p1, _rng(seed, 6)), dt=0.05)
    _length_checks(out, "p1", traj)
    out.add("p1_energy_increase", float(np.max(np.diff(traj.diag["E"]))), 1e-8)
    torus = _cy_setup(32)
    ttraj = fl.krf_run(torus, sample_potential(torus, _rng(seed, 60)), dt=0.05)
    _length_checks(out, "torus", ttraj)
    esc = fl.orbit_escape_path(p1)
    cum = fl.cumulative_lengths(esc)["darvas"]
    t = esc.times
    slope, icpt = np.polyfit(t, cum, 1)
    resid = float(np.max(np.abs(cum - (slope * t + icpt))) / cum[-1])
    out.add("escape_darvas_linearity_defect", resid, 0.01)
    out.add("escape_darvas_slope", slope, 0.0, "gt")
    out.add("escape_converged", float(fl.convergence_verdict(esc)["converged"]), 0.0, "eq")
    out.add("escape_flow_integrand_max", float(esc.diag["darvas_speed"].max()), 1e-3 * slope)
    out.tables["flow_p1"] = traj.rows()
    out.tables["escape_path"] = [dict(time=a, darvas_length=b) for a, b in zip(t, cum)]
    return out


# -- 7 --------------------------------------------------------------------

def criterion_7(seed):
    out = Outcome(7)
    model = make_model("p1", 16384, X=26.0)
    W = gr.window_limit(model)
    eta = model.zeros()
    scan = gr.orbit_scan(eta, np.linspace(-W, W, 41))
    out.add("energy_range_on_orbit", float(np.ptp(scan.E)), 1e-5)
    J0 = float(scan.J[len(scan.J) // 2])
    out.add("J_growth_margin", float(scan.J.max()) - (10 * J0 + 10), 0.0, "gt")
    out.add("F_min_second_difference", float(scan.second_differences().min()), 0.0, "gt")
    eta2 = sample_potential(make_model("p1", 4096, X=26.0), _rng(seed, 7))
    for label, e in (("ke", eta), ("random", eta2)):
        w = gr.window_limit(e.model)
        mins = gr.orbit_minimizers(e, [-w / 2, 0.1, w / 2])
        a = np.array([m[0] for m in mins])
        out.add(f"{label}_minimizer_spread", float(np.ptp(a)), 1e-6)
        out.add(f"{label}_minimizer_interior", float(w - np.max(np.abs(a))), 0.0, "gt")
        scan2 = gr.orbit_scan(e, np.linspace(-w, w, 41))
        out.add(f"{label}_F_strictly_convex", float(scan2.is_strictly_convex()), 1.0, "eq")
    fine = make_model("p1", 65536, X=26.0)
    Wf = gr.window_limit(fine)
    da = 4e-4
    worst = 0.0
    for a in np.arange(-Wf + 0.5, Wf - 0.5 + 1e-9, 1.0):
        pots = [gr.act(a + (k - 1) * da, fine.zeros()) for k in range(3)]
        path = mt.path_from_potentials(np.arange(3) * da, pots)
        worst = max(worst, mt.geodesic_residual(path))
    out.add("orbit_path_geodesic_residual", worst, 1e-6)
    small = make_model("p1", 1024, X=26.0)
    Ws = gr.window_limit(small)
    rng = _rng(seed, 70)
    pots = [gr.act(rng.uniform(-1.5, 1.5), sample_potential(small, rng)) for _ in range(6)]
    consts = []
    for win in (Ws / 2, Ws):
        js = [gr.jG(p, window=win)["value"] for p in pots]
        ds = [gr.d1G(p, small.zeros(), window=win) for p in pots]
        consts.append(gr.equivalence_constant(js, ds))
    out.add("equivalence_constant", consts[1], 1e6)
    out.add("equivalence_window_change", abs(consts[1] - consts[0]) / consts[0], 0.2)
    out.tables["orbit_scan"] = scan.rows()
    return out


# -- 8 --------------------------------------------------------------------

def criterion_8(seed):
    out = Outcome(8)
    model = make_model("p1", 1024)
    s32 = gr.mt_scan(model, n_rays=32, seed=int(seed))
    s64 = gr.mt_scan(model, n_rays=64, seed=int(seed) + 1)
    out.add("slope_32", s32.C, 0.0, "gt")
    out.add("slope_64", s64.C, 0.0, "gt")
    out.add("slope_relative_change", abs(s64.C - s32.C) / s32.C, 0.2)
    ctrl_J = max(r["J"] for r in s32.rows if r["control"])
    out.add("control_slope", abs(s32.control_C), 0.05 * s32.C)
    out.add("control_J_max", ctrl_J, 1.0, "gt")
    out.add("flagged_members", s32.flagged + s64.flagged, 0, "eq")
    out.add("critical_point_defect", max(s32.critical_defect, s64.critical_defect), 1e-5)
    out.tables["mt_scan"] = s32.rows
    return out


# -- 9 --------------------------------------------------------------------

def criterion_9(seed):
    out = Outcome(9)
    R, rho = 1.0, 0.55
    h1 = gr.hormander_check(64, R=R, rho=rho, seed=int(seed))
    h2 = gr.hormander_check(128, R=R, rho=rho, seed=int(seed) + 1)
    out.add("hormander_max", h2.max_value, 1e3)
    out.add("hormander_doubling_ratio", max(h1.max_value, h2.max_value) / min(h1.max_value, h2.max_value), 2.0, "lt")
    model = make_model("p1", 4096, X=26.0)
    W = gr.window_limit(model)
    betas = np.round(np.arange(0.1, 2.0 + 1e-9, 0.1), 10)
    fam = gr.orbit_family(model, np.linspace(0, W, 14))
    rich = gr.orbit_family(model, np.linspace(0, W, 27))
    table = gr.alpha_scan(fam, betas, enriched=rich)
    out.add("alpha_scan_monotone_violation", float(np.max(-np.diff(table.log_sup))), 0.0)
    worst = 0.0
    rows = []
    for beta in (0.75, 1.0, 1.5):
        rate = gr.orbit_growth_rate(model, beta, 3.0, 6.0)
        closed = 4 * beta - 2
        worst = max(worst, abs(rate - closed) / closed)
        rows.append(dict(beta=beta, rate=rate, closed_form=closed))
    out.add("orbit_growth_rel_error", worst, 0.05)
    out.tables["alpha_scan"] = table.rows()
    out.tables["orbit_growth"] = rows
    out.tables["hormander"] = [dict(sample=i, integral=v) for i, v in enumerate(h2.values)]
    return out


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


# -- 10 and the driver ----------------------------------------------------

def _timed(number, seed):
    t0 = time.perf_counter()
    res = CRITERIA[number](seed)
    res.seconds = time.perf_counter() - t0
    return res


def summary_rows(outcomes):
    rows = []
    for o in outcomes:
        for c in o.checks:
            rows.append(dict(criterion=o.number, check=c.name, value=c.value, bound=c.bound,
                             op=c.op, passed=int(c.passed)))
        rows.append(dict(criterion=o.number, check="all", value=float(o.passed), bound=1.0,
                         op="eq", passed=int(o.passed)))
    return rows


def write_outputs(out_dir, outcomes, seed, config):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [kio.write_csv(out_dir / "acceptance.csv", summary_rows(outcomes), config=config, seed=seed)]
    for o in outcomes:
        for name, rows in sorted(o.tables.items()):
            paths.append(kio.write_csv(out_dir / f"c{o.number:02d}_{name}.csv", rows,
                                       config=config, seed=seed))
    return paths


def determinism_check(seed, numbers=(1, 9), compare_dir=None, out_dir=None):
    """Criterion 10.

    Without ``compare_dir`` the cheap criteria ``numbers`` are evaluated
    twice and their CSVs compared byte for byte.  With ``compare_dir`` every
    CSV in ``out_dir`` is compared with the file of the same name there.
    """
    out = Outcome(10)
    if compare_dir is not None:
        names = sorted(p.name for p in Path(out_dir).glob("*.csv") if p.name != "acceptance.csv")
        same = [filecmp.cmp(Path(out_dir) / n, Path(compare_dir) / n, shallow=False)
                if (Path(compare_dir) / n).exists() else False for n in names]
        out.add("files_compared", len(names), 1, "ge")
        out.add("files_differing", len(names) - sum(same), 0, "eq")
        return out
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for rep in range(2):
            d = Path(tmp) / f"run{rep}"
            outcomes = [_timed(n, seed) for n in numbers]
            write_outputs(d, outcomes, seed, {"seed": seed})
            dirs.append(d)
        names = sorted(p.name for p in dirs[0].glob("*.csv"))
        same = [filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False) for n in names]
    out.add("files_compared", len(names), 1, "ge")
    out.add("files_differing", len(names) - sum(same), 0, "eq")
    return out


def run_suite(seed=7, out_dir=None, only=None, jobs=1, compare_dir=None, config=None, echo=print):
    """Run the criteria, print one line each and write the CSVs.

    Returns the list of outcomes.  Criterion 10 compares against
    ``compare_dir`` when given (all CSVs of a previous run); otherwise it
    repeats two cheap criteria in-process.
    """
    numbers = sorted(only) if only else list(range(1, 11))
    config = dict(config or {}, seed=seed, task="acceptance")
    main = [n for n in numbers if n in CRITERIA]
    if jobs > 1 and len(main) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_timed, n, seed) for n in main]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_timed(n, seed) for n in main]
    for o in outcomes:
        log.info("criterion %d took %.1f s", o.number, o.seconds)
        echo(o.line())
    if out_dir is not None:
        write_outputs(out_dir, outcomes, seed, config)
    if 10 in numbers:
        t0 = time.perf_counter()
        res = determinism_check(seed, compare_dir=compare_dir, out_dir=out_dir)
        res.seconds = time.perf_counter() - t0
        echo(res.line())
        outcomes.append(res)
        if out_dir is not None:
            write_outputs(out_dir, outcomes, seed, config)
    return outcomes
