"""Newton solver and driver for the two-parameter continuity method.

The equation at a parameter node (s, t) is

    log(omega_phi / omega) = t f_omega + c_t - s phi,
    c_t = -log(V^{-1} int exp(t f_omega) omega),

over the parameter set A = (-inf, 0] x [0, 1]  union  [0, mu] x {1}.
Its linearization at phi is Laplacian_phi + s; multiplying by the cell
masses makes the Newton matrix L + s diag(m) symmetric.  At s = 0 the
constant mode is fixed by the normalization int phi omega_phi = 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonConvergence, NormalizationAmbiguity, PositivityLoss, StepTooLarge
from .functionals import mabuchi
from .model import Potential, ma_density

log = logging.getLogger(__name__)

MAX_HALVINGS = 30


@dataclass(frozen=True)
class ParamPoint:
    s: float
    t: float


def in_parameter_set(point, mu, eps=1e-14):
    s, t = point.s, point.t
    if -eps <= t <= 1 + eps and s <= eps:
        return True
    return abs(t - 1) <= eps and -eps <= s <= mu + eps


def c_t(model, t):
    """Normalizing constant c_t of the continuity equation."""
    g = t * model.ricci_reference
    top = g.max()
    return -(top + float(np.log(np.sum(model.weights * np.exp(g - top)) / model.volume)))


def node_residual(phi, s, t, ct=None):
    """Pointwise residual of the continuity equation at (s, t)."""
    model = phi.model
    if ct is None:
        ct = c_t(model, t)
    m = phi.masses
    if np.any(m <= 0):
        return np.full(model.shape, np.inf)
    return np.log(m / model.weights) - t * model.ricci_reference - ct + s * phi.samples


@dataclass
class NodeInfo:
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def _sup(r):
    return float(np.max(np.abs(r)))


def _normalize_zero(phi):
    # int phi omega_phi = 0; constants do not change omega_phi
    model = phi.model
    c = -float(np.sum(phi.samples * phi.masses)) / model.volume
    return Potential(model, phi.samples + c)


def _newton_matrix(model, m, s, bordered):
    L = model.stiffness()
    A = L + sp.diags(s * m.ravel()) if s != 0 else L
    if not bordered:
        return A.tocsc()
    col = sp.csc_matrix(m.reshape(-1, 1))
    return sp.bmat([[A, col], [col.T, None]], format="csc")


def newton_solve(residual_fn, matrix_fn, phi0, tol, max_iter, normalize=None, label="node"):
    """Damped Newton iteration shared by the continuity and flow solvers.

    ``residual_fn(phi)`` returns the residual field, ``matrix_fn(phi, r)``
    returns the Newton step.  Each node's residual is measured against
    max(tol, round-off level of its log density); on ``p1`` the round-off
    level exceeds ``tol`` in the exponentially light tail cells.  Steps are
    halved until the potential stays admissible and the largest scaled
    residual decreases, at most ``MAX_HALVINGS`` times.
    """
    def scaled(p, r):
        return float(np.max(np.abs(r) / np.maximum(tol, p.model.log_density_roundoff(p.samples))))

    phi = phi0
    r = residual_fn(phi)
    merit = scaled(phi, r)
    history = [_sup(r)]
    it = 0
    while merit > 1.0:
        if it >= max_iter:
            raise NonConvergence(f"{label}: residual {_sup(r):.3e} after {it} iterations")
        delta = matrix_fn(phi, r)
        alpha = 1.0
        admissible_seen = False
        for _ in range(MAX_HALVINGS + 1):
            trial = Potential(phi.model, phi.samples + alpha * delta)
            if normalize is not None:
                trial = normalize(trial)
            if np.all(trial.masses > 0):
                admissible_seen = True
                r_trial = residual_fn(trial)
                merit_trial = scaled(trial, r_trial)
                if merit_trial < merit:
                    break
            alpha *= 0.5
        else:
            if not admissible_seen:
                raise PositivityLoss(f"{label}: Newton step left the admissible cone")
            raise NonConvergence(f"{label}: no residual decrease after {MAX_HALVINGS} halvings "
                                 f"(residual {_sup(r):.3e})")
        phi, r, merit = trial, r_trial, merit_trial
        history.append(_sup(r))
        it += 1
    return phi, NodeInfo(iterations=it, residual=_sup(r), history=history)


def solve_node(model, s, t, init=None, tol=1e-10, max_iter=60, normalize_zero=True,
               return_info=False):
    """Solve the continuity equation at (s, t) by damped Newton iteration.

    At s = 0 the solution is unique only up to a constant; the constant is
    fixed by int phi omega_phi = 0 unless ``normalize_zero`` is False, in
    which case the call is rejected.
    """
    if not in_parameter_set(ParamPoint(s, t), model.mu):
        raise ConfigError(f"({s}, {t}) lies outside the parameter set")
    if s == 0 and not normalize_zero:
        raise NormalizationAmbiguity("s = 0 needs a normalization of the constant mode")
    phi = model.zeros() if init is None else init
    if not np.all(phi.masses > 0):
        raise PositivityLoss("initial potential is not admissible")
    ct = c_t(model, t)
    zero_mode = s == 0
    if zero_mode:
        phi = _normalize_zero(phi)
    n = phi.samples.size

    def residual_fn(p):
        return node_residual(p, s, t, ct)

    def step_fn(p, r):
        m = p.masses
        rhs = -(m * r).ravel()
        A = _newton_matrix(model, m, s, zero_mode)
        if zero_mode:
            sol = spla.spsolve(A, np.concatenate([rhs, [0.0]]))
            return sol[:n].reshape(model.shape)
        return spla.spsolve(A, rhs).reshape(model.shape)

    phi, info = newton_solve(residual_fn, step_fn, phi, tol, max_iter,
                             normalize=_normalize_zero if zero_mode else None,
                             label=f"node (s={s:g}, t={t:g})")
    return (phi, info) if return_info else phi


def first_eigenpair(base, tol=1e-12, shift=1e-2):
    """Smallest positive eigenvalue of -Laplacian_base and its eigenvector.

    Solves the generalized problem -L v = lam diag(m) v by shift-invert
    Lanczos with a fixed start vector; the constant mode (lam = 0) is
    skipped and the vector is normalized in L2(omega_base).  For a multiple
    eigenvalue the vector is some member of the eigenspace.
    """
    model = base.model
    m = base.masses.ravel()
    if np.any(m <= 0):
        raise PositivityLoss("spectral gap needs positive masses")
    A = (-model.stiffness()).tocsc()
    M = sp.diags(m).tocsc()
    v0 = np.random.default_rng(12345).normal(size=m.size)
    try:
        vals, vecs = spla.eigsh(A, k=3, M=M, sigma=-shift, which="LM", v0=v0, tol=tol)
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence("spectral gap iteration did not converge") from exc
    order = np.argsort(vals)
    lam, v = float(vals[order[1]]), vecs[:, order[1]]
    v = v - np.dot(v, m) / m.sum()
    v = v / np.sqrt(np.dot(v * m, v))
    return lam, v.reshape(model.shape)


def spectral_gap(base, s=None, tol=1e-12, shift=1e-2):
    """Smallest positive eigenvalue of -Laplacian_base on mean-zero fields.

    The optional ``s`` is only recorded by callers; it does not change the
    computation.
    """
    return first_eigenpair(base, tol=tol, shift=shift)[0]


@dataclass
class TraceNode:
    point: ParamPoint
    potential: Potential
    iterations: int
    residual: float
    history: list
    maxphi: float
    minphi: float
    osc: float
    lambda1: float
    energy: float
    min_density: float
    max_density: float

    @property
    def gap_margin(self):
        return self.lambda1 - self.point.s


@dataclass
class ContinuityTrace:
    model: object
    tol: float
    nodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    @property
    def terminal(self):
        return self.nodes[-1]

    def rows(self):
        return [dict(s=n.point.s, t=n.point.t, iters=n.iterations, residual=n.residual,
                     maxphi=n.maxphi, osc=n.osc, lambda1=n.lambda1, gap_margin=n.gap_margin)
                for n in self.nodes]


def default_schedule(mu, s_min=-64.0, s_last=-1.0 / 64, t_steps=16, s_steps=32):
    """Three-stage schedule: s-ladder at t=0, t-ladder, then s from 0 to mu at t=1."""
    k = int(round(np.log2(s_min / s_last)))
    pts = [ParamPoint(s_min / 2.0 ** j, 0.0) for j in range(k + 1)]
    pts += [ParamPoint(s_last, j / t_steps) for j in range(1, t_steps + 1)]
    pts.append(ParamPoint(0.0, 1.0))
    if mu > 0:
        pts += [ParamPoint(mu * j / s_steps, 1.0) for j in range(1, s_steps + 1)]
    return pts


def _record(model, point, phi, info, with_gap):
    rho = ma_density(phi).samples
    lam = spectral_gap(phi) if with_gap else float("nan")
    p = phi.samples
    return TraceNode(point=point, potential=phi, iterations=info.iterations,
                     residual=info.residual, history=info.history,
                     maxphi=float(p.max()), minphi=float(p.min()), osc=float(np.ptp(p)),
                     lambda1=lam, energy=mabuchi(phi).E_fano,
                     min_density=float(rho.min()), max_density=float(rho.max()))


def continuity_run(model, schedule=None, tol=1e-10, init=None, max_bisect=8, with_gap=True):
    """Traverse a schedule of parameter nodes, warm-starting each solve.

    When a solve fails, the step from the previous node is bisected (at most
    ``max_bisect`` levels) before giving up with :class:`StepTooLarge`,
    which carries the partial trace.
    """
    if schedule is None:
        schedule = default_schedule(model.mu)
    for p in schedule:
        if not in_parameter_set(p, model.mu):
            raise ConfigError(f"schedule leaves the parameter set at ({p.s}, {p.t})")
    trace = ContinuityTrace(model=model, tol=tol)
    phi = model.zeros() if init is None else init
    prev = None
    for target in schedule:
        pending = [target]
        depth = 0
        while pending:
            point = pending[-1]
            try:
                sol, info = solve_node(model, point.s, point.t, init=phi, tol=tol, return_info=True)
            except (NonConvergence, PositivityLoss) as exc:
                if prev is None or depth >= max_bisect:
                    raise StepTooLarge(f"continuation failed at ({point.s}, {point.t}): {exc}",
                                       trace=trace) from exc
                mid = ParamPoint(0.5 * (prev.s + point.s), 0.5 * (prev.t + point.t))
                pending.append(mid)
                depth += 1
                continue
            pending.pop()
            phi, prev = sol, point
            node = _record(model, point, sol, info, with_gap)
            trace.nodes.append(node)
            log.info("node s=%+.5f t=%.4f iters=%d res=%.2e max|phi|=%.4g", point.s, point.t,
                     info.iterations, info.residual, max(abs(node.maxphi), abs(node.minphi)))
    return trace


def apriori_report(trace, frozen_C=None, slack=None):
    """Per-node a priori diagnostics with violation flags.

    Columns: oscillation, slack in the maximum-principle bound for s < 0,
    the spectral margin lambda_1 - s, the sup bound constant for s > 0 and
    the Laplacian-bound ratio (n + Laplacian phi) / (C' exp(c osc phi)) with
    (c, C') fitted as a supporting line over the trace.
    """
    if not trace.nodes:
        raise ValueError("empty trace")
    model = trace.model
    tol = trace.tol if slack is None else slack
    fmin, fmax = model.ricci_reference.min(), model.ricci_reference.max()
    n = model.dim
    osc = np.array([nd.osc for nd in trace.nodes])
    top = np.array([np.log(max(nd.max_density, 1e-300)) for nd in trace.nodes])
    c_fit = float(np.polyfit(osc, top, 1)[0]) if np.ptp(osc) > 0 else 0.0
    c_fit = max(c_fit, 0.0)
    log_C = float(np.max(top - c_fit * osc))
    pos = [nd for nd in trace.nodes if nd.point.t == 1 and nd.point.s > 0]
    C_sup = max((max(abs(nd.maxphi), abs(nd.minphi)) / (1 + 1 / nd.point.s) for nd in pos),
                default=0.0)
    C_use = C_sup if frozen_C is None else frozen_C
    rows = []
    for nd in trace.nodes:
        s, t = nd.point.s, nd.point.t
        ct = c_t(model, t)
        flags = []
        row = dict(s=s, t=t, osc=nd.osc, maxphi=nd.maxphi, minphi=nd.minphi, residual=nd.residual)
        if s < 0:
            upper = (-ct - t * fmin) / abs(s)
            lower = (-ct - t * fmax) / abs(s)
            row["sup_slack"] = upper + tol - nd.maxphi
            row["inf_slack"] = nd.minphi - (lower - tol)
            if row["sup_slack"] < 0 or row["inf_slack"] < 0:
                flags.append("max-principle")
        else:
            row["sup_slack"] = float("nan")
            row["inf_slack"] = float("nan")
        if t == 1 and s < model.mu and np.isfinite(nd.lambda1):
            row["gap_margin"] = nd.lambda1 - s
            if row["gap_margin"] <= 0:
                flags.append("poincare")
        else:
            row["gap_margin"] = float("nan")
        if t == 1 and s > 0:
            row["sup_ratio"] = max(abs(nd.maxphi), abs(nd.minphi)) / (C_use * (1 + 1 / s)) \
                if C_use > 0 else 0.0
            if row["sup_ratio"] > 1 + 1e-12:
                flags.append("sup-bound")
        else:
            row["sup_ratio"] = float("nan")
        row["laplacian_ratio"] = float(np.exp(np.log(max(nd.max_density, 1e-300)) - log_C
                                              - c_fit * nd.osc))
        if nd.min_density <= 0:
            flags.append("laplacian-lower")
        row["flags"] = ";".join(flags)
        rows.append(row)
    return {"rows": rows, "laplacian_c": c_fit, "laplacian_C": float(np.exp(log_C)),
            "sup_C": C_sup, "n": n}


def energy_monotone(trace, slack=1e-10):
    """Check the K-energy decreases along increasing s on the segment t = 1, s >= 0."""
    seg = [nd for nd in trace.nodes if nd.point.t == 1 and nd.point.s >= 0]
    seg.sort(key=lambda nd: nd.point.s)
    energies = np.array([nd.energy for nd in seg])
    bad = int(np.sum(np.diff(energies) > slack))
    return bad == 0, energies
