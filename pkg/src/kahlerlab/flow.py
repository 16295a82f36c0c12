"""Kaehler-Ricci flow as a parabolic Monge-Ampere equation.

The default ``normalized`` variant integrates

    phi_t = -f_phi = log(omega_phi / omega) - f_omega + mu phi + log(V^{-1} int e^{f_omega - mu phi} omega),

where f_phi is the Ricci potential of omega_phi normalized by
int e^{f_phi} omega_phi = V.  The extra constant freezes the constant mode,
which for mu > 0 is exponentially unstable in the ``raw`` variant
phi_t = log(omega_phi / omega) - f_omega + mu phi.  Both variants produce the
same metrics omega_phi(t).

Time stepping is implicit Euler.  Each step is a Monge-Ampere type node
solved with the damped Newton core of :mod:`kahlerlab.solver`; the
normalizing constant contributes a rank-one term to the Jacobian, handled
by the Sherman-Morrison formula.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, Inconclusive, NonConvergence, PositivityLoss, StepRejected
from .functionals import mabuchi
from .metric import METRICS, PathRecord, path_speeds
from .model import P1, Potential, as_potential, ricci_potential_of
from .solver import newton_solve

log = logging.getLogger(__name__)

VARIANTS = ("normalized", "raw")
MAX_DT_HALVINGS = 20
DIAGNOSTICS = ("E", "calabi_speed", "calabi_l1", "darvas_speed", "mabuchi_speed",
               "densL1_increment", "newton_residual")
CALABI_MASS_FRACTION = 1e-4


def t_min(mu):
    """Shortest run length for which a verdict is issued."""
    return 20.0 / mu if mu > 0 else 20.0


def _lognorm(model, p):
    expo = model.ricci_reference - model.mu * p
    top = expo.max()
    return float(top + np.log(np.sum(model.weights * np.exp(expo - top)) / model.volume))


def _weights_q(model, p):
    # derivative of the normalizing constant is -mu q
    expo = model.ricci_reference - model.mu * p
    e = model.weights * np.exp(expo - expo.max())
    return e / e.sum()


def velocity(phi, variant="normalized"):
    """Right-hand side of the flow at phi."""
    model, p = phi.model, phi.samples
    m = phi.masses
    if np.any(m <= 0):
        raise PositivityLoss("potential left the admissible cone")
    v = np.log(m / model.weights) - model.ricci_reference + model.mu * p
    if variant == "normalized":
        v = v + _lognorm(model, p)
    return v


def _step(prev, dt, variant, tol, max_iter):
    model = prev.model
    mu = model.mu
    L = model.stiffness()
    old = prev.samples

    def residual_fn(p):
        if np.any(p.masses <= 0):
            return np.full(model.shape, np.inf)
        return (p.samples - old) / dt - velocity(p, variant)

    def step_fn(p, r):
        m = p.masses.ravel()
        A = (sp.diags(m * (1.0 - dt * mu)) - dt * L).tocsc()
        lu = spla.splu(A)
        rhs = -(m * dt * r.ravel())
        y = lu.solve(rhs)
        if variant == "normalized" and mu != 0:
            u = dt * mu * m
            q = _weights_q(model, p.samples).ravel()
            z = lu.solve(u)
            y = y - z * (q @ y) / (1.0 + q @ z)
        return y.reshape(model.shape)

    return newton_solve(residual_fn, step_fn, prev, tol, max_iter, label="flow step")


def _advance(prev, dt, variant, tol, max_iter, depth=0):
    """One step of size dt, split into halves on failure."""
    try:
        return _step(prev, dt, variant, tol, max_iter)
    except (NonConvergence, PositivityLoss) as exc:
        if depth >= MAX_DT_HALVINGS:
            raise
        log.info("step of size %.3g rejected (%s); halving", dt, exc)
        mid, _ = _advance(prev, 0.5 * dt, variant, tol, max_iter, depth + 1)
        return _advance(mid, 0.5 * dt, variant, tol, max_iter, depth + 1)


def node_diagnostics(phi):
    """Closed-form speed integrands at phi: norms of s - n mu and of f_phi."""
    model = phi.model
    m = phi.masses
    f = ricci_potential_of(phi)
    Lf = model.ddc(f)
    if model.kind == P1:
        # log density carries round-off of relative size eps / m, which the
        # Laplacian and the 1/m weight amplify in the light tail cells
        Lf = np.where(m > CALABI_MASS_FRACTION * m.max(), Lf, 0.0)
    return {
        "E": mabuchi(phi).E_fano,
        "calabi_speed": float(np.sqrt(np.sum(Lf ** 2 / m))),
        "calabi_l1": float(np.sum(np.abs(Lf))),
        "darvas_speed": float(np.sum(np.abs(f) * m)) / model.volume,
        "mabuchi_speed": float(np.sqrt(np.sum(f * f * m))),
    }


@dataclass
class FlowTrajectory:
    """Times, stored potentials and per-node diagnostics of a flow run.

    ``diag[name][k]`` belongs to node k.  Speeds are the closed-form
    integrands evaluated at the node; for implicit Euler the step from k-1
    to k moves with exactly the velocity of node k.  ``kind`` is "flow" for
    integrated trajectories and "path" for manufactured ones, whose speeds
    come from the potentials alone.
    """

    model: object
    times: np.ndarray
    samples: np.ndarray
    diag: dict
    header: dict = field(default_factory=dict)
    kind: str = "flow"

    def __len__(self):
        return len(self.times)

    def potential(self, k):
        return Potential(self.model, self.samples[k])

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    @property
    def terminal(self):
        return self.potential(-1)

    def as_path(self):
        return PathRecord(self.model, self.times, self.samples, kind=self.kind)

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            row = {"time": float(t)}
            row.update({name: float(self.diag[name][k]) for name in DIAGNOSTICS})
            out.append(row)
        return out


def krf_run(model, phi0=None, T=None, dt=0.05, variant="normalized", tol=1e-10,
            max_iter=40, initial_constant=0.0):
    """Integrate the flow from phi0 (default: the constant ``initial_constant``).

    Steps are implicit Euler of size dt; dt must satisfy dt * mu < 1, which
    keeps the Newton matrix positive definite.  A step whose Newton solve
    fails is split in halves, at most 20 times; after that
    :class:`StepRejected` carries the partial trajectory.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown flow variant {variant!r}")
    if not dt > 0 or (model.mu > 0 and dt * model.mu >= 1.0):
        raise ConfigError(f"time step {dt} violates dt * mu < 1")
    T = t_min(model.mu) if T is None else float(T)
    if phi0 is None:
        phi0 = Potential(model, np.full(model.shape, float(initial_constant)))
    phi0 = as_potential(model, phi0)
    if not phi0.is_admissible():
        raise PositivityLoss("initial potential is not admissible")
    steps = int(round(T / dt))
    if steps < 1:
        raise ConfigError("run shorter than one step")
    times = [0.0]
    samples = [phi0.samples]
    diag = {name: [] for name in DIAGNOSTICS}

    def record(phi, prev, res):
        d = node_diagnostics(phi)
        d["densL1_increment"] = 0.0 if prev is None else float(np.sum(np.abs(phi.masses - prev.masses)))
        d["newton_residual"] = res
        for name in DIAGNOSTICS:
            diag[name].append(d[name])

    record(phi0, None, 0.0)
    header = dict(variant=variant, dt=dt, T=T, mu=model.mu, initial_constant=float(initial_constant))
    phi = phi0
    for k in range(steps):
        try:
            new, info = _advance(phi, dt, variant, tol, max_iter)
        except (NonConvergence, PositivityLoss) as exc:
            partial = FlowTrajectory(model, np.array(times), np.stack(samples),
                                     {n: np.array(v) for n, v in diag.items()}, header)
            raise StepRejected(f"flow step {k} failed after {MAX_DT_HALVINGS} halvings: {exc}",
                               trajectory=partial) from exc
        record(new, phi, info.residual)
        times.append((k + 1) * dt)
        samples.append(new.samples)
        phi = new
    return FlowTrajectory(model, np.array(times), np.stack(samples),
                          {n: np.array(v) for n, v in diag.items()}, header)


def _step_speeds(traj):
    """Speeds attached to each step (entries 1..K for a flow)."""
    if traj.kind == "flow":
        return {"calabi": traj.diag["calabi_speed"][1:],
                "darvas": traj.diag["darvas_speed"][1:],
                "mabuchi": traj.diag["mabuchi_speed"][1:]}
    return path_speeds(traj.as_path())


def flow_lengths(traj):
    """Calabi, Darvas and Mabuchi lengths of the trajectory.

    For a flow these are sums of dt times the closed-form integrands; for a
    manufactured path they come from the metric speeds of the potentials.
    """
    if len(traj) < 2:
        raise ValueError("need at least two nodes")
    dts = np.diff(traj.times)
    sp_ = _step_speeds(traj)
    return {f"{w}_len": float(np.sum(dts * sp_[w])) for w in METRICS}


def cumulative_lengths(traj):
    dts = np.diff(traj.times)
    sp_ = _step_speeds(traj)
    return {w: np.concatenate([[0.0], np.cumsum(dts * sp_[w])]) for w in METRICS}


def length_crosscheck(traj, rule="right"):
    """Closed-form lengths against the metric lengths of the potential path.

    The path speeds use only the stored potentials and the metric formulas.
    With ``rule="right"`` each increment velocity is measured at the later
    node, which is where implicit Euler evaluates it; ``"mid"`` averages the
    two ends and differs from the closed form by O(dt).  Returns, per metric,
    both lengths and their relative gap.
    """
    closed = flow_lengths(traj)
    sp_ = path_speeds(traj.as_path(), rule=rule)
    dts = np.diff(traj.times)
    out = {}
    for w in METRICS:
        a = closed[f"{w}_len"]
        b = float(np.sum(dts * sp_[w]))
        out[w] = {"closed": a, "path": b, "rel_gap": abs(a - b) / max(abs(a), 1e-300)}
    return out


SPEED_FLOORS = {"mabuchi": 1e-6, "darvas": 1e-6, "calabi": 1e-2}


def step_speed_gaps(traj, floors=None):
    """Per-step relative gap between closed-form and path speeds.

    Steps whose closed-form speed is below the floor of its metric are
    skipped: they sit at the Newton tolerance (or, for the Calabi integrand
    on ``p1``, at the round-off level of the tail densities).  Returns the
    largest gap per metric and the number of compared steps.
    """
    floors = dict(SPEED_FLOORS, **(floors or {}))
    sp_ = path_speeds(traj.as_path(), rule="right")
    out = {}
    for w in METRICS:
        cf = traj.diag[f"{w}_speed"][1:]
        sel = cf > floors[w]
        gap = float(np.max(np.abs(sp_[w][sel] - cf[sel]) / cf[sel])) if sel.any() else 0.0
        out[w] = {"max_rel_gap": gap, "steps": int(sel.sum())}
    return out


def _tail_slope(t, s):
    ok = s > 0
    if ok.sum() < 2:
        return float("-inf")
    return float(np.polyfit(t[ok], np.log(s[ok]), 1)[0])


def convergence_verdict(traj, T_min=None, tail=0.25, dens_tol=1e-3, sup_tol=1e-3):
    """Judge convergence from the tail of a trajectory.

    The run counts as converged when, over the last ``tail`` fraction of
    its duration, every stored potential stays within ``sup_tol`` of the
    terminal one in sup norm and its masses within ``dens_tol * V`` in L1.
    Raises :class:`Inconclusive` for runs shorter than ``T_min``.
    """
    model = traj.model
    T_min = t_min(model.mu) if T_min is None else T_min
    if traj.duration < T_min - 1e-12:
        raise Inconclusive(f"duration {traj.duration:g} below T_min = {T_min:g}")
    t = traj.times
    start = t[-1] - tail * traj.duration
    idx = np.nonzero(t >= start - 1e-12)[0]
    end = traj.samples[-1]
    m_end = model.masses(end)
    sup_gap = max(float(np.max(np.abs(traj.samples[k] - end))) for k in idx)
    dens_gap = max(float(np.sum(np.abs(model.masses(traj.samples[k]) - m_end))) for k in idx)
    dens_gap /= model.volume
    sp_ = _step_speeds(traj)
    tt = t[1:]
    sel = tt >= start - 1e-12
    slopes = {w: _tail_slope(tt[sel], sp_[w][sel]) for w in METRICS}
    converged = dens_gap <= dens_tol and sup_gap <= sup_tol
    evidence = dict(flow_lengths(traj), dens_gap=dens_gap, sup_gap=sup_gap,
                    dens_tol=dens_tol, sup_tol=sup_tol, tail=tail, T_min=T_min,
                    **{f"{w}_tail_slope": s for w, s in slopes.items()})
    return {"converged": bool(converged), "evidence": evidence}


def orbit_escape_path(model, T=None, dt=0.25, rate=None):
    """The path t -> act(rate t, 0) along the dilation orbit (not a flow).

    The default rate reaches the truncation window at time T.  Each member
    is Kaehler-Einstein, so the flow integrands vanish along the path while
    its Darvas length grows linearly.
    """
    from .group import act, window_limit

    T = t_min(model.mu) if T is None else float(T)
    rate = window_limit(model) / T if rate is None else rate
    steps = int(round(T / dt))
    times = dt * np.arange(steps + 1)
    pots = [act(rate * t, model.zeros()) for t in times]
    diag = {name: [] for name in DIAGNOSTICS}
    prev = None
    for p in pots:
        d = node_diagnostics(p)
        d["densL1_increment"] = 0.0 if prev is None else float(np.sum(np.abs(p.masses - prev.masses)))
        d["newton_residual"] = 0.0
        for name in DIAGNOSTICS:
            diag[name].append(d[name])
        prev = p
    return FlowTrajectory(model, times, np.stack([p.samples for p in pots]),
                          {n: np.array(v) for n, v in diag.items()},
                          dict(kind="orbit_escape", rate=rate, dt=dt, T=T), kind="path")
