"""Rooftop envelopes, the d1 distance, geodesics, path lengths and the Calabi distance.

Speeds of a velocity field v at a potential phi:

    mabuchi   (int v^2 omega_phi)^{1/2}
    darvas    V^{-1} int |v| omega_phi
    calabi    (int (Laplacian_phi v)^2 omega_phi)^{1/2}

The Calabi speed is the L2(omega) speed of 2 sqrt(density), which is why
the Calabi distance is the chordal angle on a sphere of radius 2 sqrt(V).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import legendre as lg
from .errors import ModelMismatch, NonConvergence
from .functionals import am
from .model import P1, TORUS, Potential

log = logging.getLogger(__name__)

METRICS = ("mabuchi", "calabi", "darvas")


def _check_pair(u, v):
    if not u.model.same_grid(v.model) or not np.array_equal(u.model.offset, v.model.offset):
        raise ModelMismatch("potentials live on different models")


# -- speeds --------------------------------------------------------------

def speed(phi, v, which):
    """Length of the tangent vector v at phi under one of the three metrics."""
    model = phi.model
    m = np.maximum(phi.masses, 0.0)
    v = np.asarray(v, float)
    if which == "mabuchi":
        return float(np.sqrt(np.sum(v * v * m)))
    if which == "darvas":
        return float(np.sum(np.abs(v) * m)) / model.volume
    if which == "calabi":
        Lv = model.ddc(v)
        ok = m > 0
        return float(np.sqrt(np.sum(Lv[ok] ** 2 / m[ok])))
    raise ValueError(f"unknown metric {which!r}")


def sphere_isometry_defect(phi, v, eps=1e-4):
    """Relative gap between the Calabi norm of v and the L2 speed of 2 sqrt(density).

    The density derivative is taken by central differences in eps, so the
    check is independent of the closed-form Calabi integrand.
    """
    model = phi.model
    w = model.weights
    plus = 2.0 * np.sqrt((phi.masses + eps * model.ddc(v)) / w)
    minus = 2.0 * np.sqrt((phi.masses - eps * model.ddc(v)) / w)
    deriv = (plus - minus) / (2 * eps)
    lhs = float(np.sum(deriv ** 2 * w))
    rhs = speed(phi, v, "calabi") ** 2
    return abs(lhs - rhs) / max(rhs, 1e-300)


# -- rooftop envelope ----------------------------------------------------

def _lower_hull(x, y):
    """Indices of the lower convex hull of points sorted by x."""
    idx = []
    for i in range(len(x)):
        while len(idx) >= 2:
            i1, i2 = idx[-2], idx[-1]
            if (x[i2] - x[i1]) * (y[i] - y[i1]) - (y[i2] - y[i1]) * (x[i] - x[i1]) <= 0:
                idx.pop()
            else:
                break
        idx.append(i)
    return np.array(idx)


def _conj(xs, ys, p):
    """max_j (p xs_j - ys_j) for sorted xs, via the lower hull."""
    hull = _lower_hull(xs, ys)
    hx, hy = xs[hull], ys[hull]
    slopes = np.diff(hy) / np.diff(hx)
    k = np.searchsorted(slopes, p)
    return p * hx[k] - hy[k]


def _rooftop_p1(model, g):
    # largest discrete convex function below g with face slopes in [0, 2]
    x = model.coords
    big = model.reference_potential + g
    hull = _lower_hull(x, big)
    slopes = np.diff(big[hull]) / np.diff(x[hull])
    knots = np.unique(np.concatenate([[0.0, 2.0], np.clip(slopes, 0.0, 2.0)]))
    gstar = _conj(x, big, knots)
    env = _conj(knots, gstar, x)
    return np.minimum(env, big) - model.reference_potential


def _rooftop_torus(model, g, tol, omega, max_sweeps):
    # psh constraint at a node: w + L u >= 0, i.e. u <= (sum of neighbours + 2 w) / 4
    lift = 2.0 * model.weights
    w = g.copy()
    n = model.N
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    colors = [((ii + jj) % 2) == c for c in (0, 1)]
    for sweep in range(max_sweeps):
        change = 0.0
        for mask in colors:
            nb = np.roll(w, 1, 0) + np.roll(w, -1, 0) + np.roll(w, 1, 1) + np.roll(w, -1, 1)
            target = 0.25 * (nb + lift)
            new = np.minimum(g, w + omega * (target - w))
            delta = np.where(mask, new - w, 0.0)
            change = max(change, float(np.max(np.abs(delta))))
            w = w + delta
        if change < tol:
            return w, sweep + 1
    raise NonConvergence(f"rooftop PSOR did not converge in {max_sweeps} sweeps")


def rooftop(u, v, tol=1e-13, omega=None, max_sweeps=200000, return_sweeps=False):
    """Largest omega-psh potential below min(u, v).

    On ``p1`` discrete omega-psh potentials are exactly the convex functions
    of x whose slopes stay in [0, 2], so the envelope is a restricted convex
    hull.  On the torus the obstacle problem is solved by red-black
    projected SOR started from the obstacle, which decreases monotonically
    to the largest subsolution.
    """
    _check_pair(u, v)
    model = u.model
    g = np.minimum(u.samples, v.samples)
    if model.kind == P1:
        out = Potential(model, _rooftop_p1(model, g))
        return (out, 0) if return_sweeps else out
    if omega is None:
        omega = 2.0 / (1.0 + np.sin(np.pi / model.N))
    w, sweeps = _rooftop_torus(model, g, tol, omega, max_sweeps)
    out = Potential(model, w)
    return (out, sweeps) if return_sweeps else out


def rooftop_oracle(u, v, tol=1e-13, max_sweeps=100000):
    """Slow lexicographic projected Gauss-Seidel for the torus obstacle problem."""
    _check_pair(u, v)
    model = u.model
    g = np.minimum(u.samples, v.samples)
    w = g.tolist()
    gl = g.tolist()
    lift = (2.0 * model.weights).tolist()
    n = model.N
    for _ in range(max_sweeps):
        change = 0.0
        for i in range(n):
            up, dn = w[(i - 1) % n], w[(i + 1) % n]
            row = w[i]
            for j in range(n):
                val = 0.25 * (up[j] + dn[j] + row[(j - 1) % n] + row[(j + 1) % n] + lift[i][j])
                val = min(gl[i][j], val)
                change = max(change, abs(val - row[j]))
                row[j] = val
        if change < tol:
            return Potential(model, np.array(w))
    raise NonConvergence("oracle did not converge")


# -- geodesics and paths -------------------------------------------------

@dataclass
class PathRecord:
    """A discretized curve of potentials with per-time speeds."""

    model: object
    times: np.ndarray
    samples: np.ndarray
    speeds: dict = field(default_factory=dict)
    kind: str = "path"

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if not self.speeds:
            self.speeds = path_speeds(self)

    def __len__(self):
        return len(self.times)

    def potential(self, k):
        return Potential(self.model, self.samples[k])

    @property
    def endpoints(self):
        return self.potential(0), self.potential(-1)


def path_from_potentials(times, potentials, kind="path"):
    model = potentials[0].model
    return PathRecord(model, np.asarray(times, float),
                      np.stack([p.samples for p in potentials]), kind=kind)


def path_speeds(path, rule="mid"):
    """Per-step speeds of the increment velocity (phi_{k+1} - phi_k) / dt.

    Entry k describes the step from time k to time k+1.  The velocity is
    measured at both ends and averaged (``rule="mid"``), or at the left or
    right end only.
    """
    if rule not in ("mid", "left", "right"):
        raise ValueError(f"unknown rule {rule!r}")
    out = {w: [] for w in METRICS}
    t = path.times
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        vel = (path.samples[k + 1] - path.samples[k]) / dt
        a, b = path.potential(k), path.potential(k + 1)
        for w in METRICS:
            if rule == "mid":
                out[w].append(0.5 * (speed(a, vel, w) + speed(b, vel, w)))
            else:
                out[w].append(speed(a if rule == "left" else b, vel, w))
    return {w: np.array(v) for w, v in out.items()}


def path_length(path, which):
    """Trapezoidal length of a path under one of the three metrics."""
    if which not in METRICS:
        raise ValueError(f"unknown metric {which!r}")
    return float(np.sum(np.diff(path.times) * path.speeds[which]))


def geodesic(u, v, K=32):
    """Geodesic from u to v sampled at K+1 equally spaced times.

    Conjugates are interpolated linearly in t and transformed back to
    potentials.  The transform reproduces the endpoints only up to the grid
    error, so that discrepancy is removed by a correction linear in t, which
    leaves the second time derivative untouched.
    """
    _check_pair(u, v)
    model = u.model
    du, dv = lg.dual_of(u), lg.dual_of(v)
    times = np.linspace(0.0, 1.0, K + 1)
    profs = np.stack([lg.evaluate([du, dv], [1 - t, t], model)[0] for t in times])
    err0 = lg.symmetric_profile(u) - profs[0]
    err1 = lg.symmetric_profile(v) - profs[-1]
    profs += (1 - times)[:, None] * err0[None, :] + times[:, None] * err1[None, :]
    samples = np.stack([lg.broadcast(model, p) for p in profs])
    samples[0], samples[-1] = u.samples, v.samples
    return PathRecord(model, times, samples, kind="geodesic")


def initial_speed(u, v):
    """Initial velocity of the geodesic from u to v, sampled at the nodes of u."""
    _check_pair(u, v)
    model = u.model
    du, dv = lg.dual_of(u), lg.dual_of(v)
    _, q = lg.evaluate([du], [1.0], model)
    diff = dv.conjugate(q) - du.conjugate(q)
    vel = -diff if model.kind == P1 else -2.0 * diff
    return lg.broadcast(model, vel)


def residual_mask(model, phi):
    """Nodes where the pointwise geodesic equation is meaningful.

    The lumped end cells of ``p1`` and cells whose mass is at the round-off
    floor carry no pointwise information and are skipped.
    """
    mask = np.ones(model.shape, bool)
    if model.kind == P1:
        mask[0] = mask[-1] = False
        m = model.masses(phi)
        mask &= m > 10.0 * model.mass_floor(phi)
    return mask


def geodesic_residual(path, return_field=False):
    """Max over interior times and nodes of |phi_tt - |grad phi_t|^2_phi|."""
    t = path.times
    if len(t) < 3:
        raise ValueError("need at least three times")
    dts = np.diff(t)
    if np.ptp(dts) > 1e-12 * dts.mean():
        raise ValueError("geodesic residual needs equally spaced times")
    dt = dts[0]
    model = path.model
    worst = 0.0
    fields = []
    for k in range(1, len(t) - 1):
        prev, cur, nxt = path.samples[k - 1], path.samples[k], path.samples[k + 1]
        acc = (nxt - 2 * cur + prev) / dt ** 2
        vel = (nxt - prev) / (2 * dt)
        m = model.masses(cur)
        res = np.abs(acc - model.gradient_mass(vel) / m)
        res = np.where(residual_mask(model, cur), res, 0.0)
        fields.append(res)
        worst = max(worst, float(res.max()))
    return (worst, np.stack(fields)) if return_field else worst


def chord(u, v, K=32):
    """Straight segment (1-t) u + t v, a path but not a geodesic in general."""
    _check_pair(u, v)
    times = np.linspace(0.0, 1.0, K + 1)
    samples = (1 - times)[:, None] * u.samples.ravel()[None, :] + times[:, None] * v.samples.ravel()[None, :]
    return PathRecord(u.model, times, samples.reshape((K + 1,) + u.model.shape), kind="chord")


# -- distances -----------------------------------------------------------

@dataclass
class DistanceReport:
    d1: float
    d1_dtn: float
    mixed_lower: float
    mixed_upper: float
    dC: float
    geodesic_residual_max: float

    def as_dict(self):
        return dict(d1=self.d1, d1_dtn=self.d1_dtn, mixed_lower=self.mixed_lower,
                    mixed_upper=self.mixed_upper, dC=self.dC,
                    geodesic_residual_max=self.geodesic_residual_max)


def d1_value(u, v):
    """Pythagorean value AM(u) + AM(v) - 2 AM(P(u, v))."""
    P = rooftop(u, v)
    return am(u) + am(v) - 2.0 * am(P)


def _has_dual(phi):
    try:
        lg.symmetric_profile(phi)
    except Exception:
        return False
    return True


def d1(u, v, K=16, with_geodesic=True):
    """Darvas distance of u and v with companion quantities.

    ``mixed_lower`` is V^{-1} int |u - v| (omega_u + omega_v) / 2 and
    ``mixed_upper`` is V^{-1} int |u - v| (omega_u + omega_v); both are
    comparable to d1 with a constant depending only on the dimension.
    ``d1_dtn`` is V^{-1} int |du/dt(0)| omega_u for the geodesic from u to v.
    """
    _check_pair(u, v)
    model = u.model
    V = model.volume
    diff = np.abs(u.samples - v.samples)
    mixed = float(np.sum(diff * (u.masses + v.masses))) / V
    d_main = d1_value(u, v)
    dtn = float("nan")
    res = float("nan")
    if with_geodesic and _has_dual(u) and _has_dual(v):
        vel = initial_speed(u, v)
        dtn = float(np.sum(np.abs(vel) * u.masses)) / V
        if K >= 2:
            res = geodesic_residual(geodesic(u, v, K))
    return DistanceReport(d1=d_main, d1_dtn=dtn, mixed_lower=0.5 * mixed, mixed_upper=mixed,
                          dC=calabi_distance(u, v), geodesic_residual_max=res)


def calabi_distance(u, v):
    """Spherical distance 2 sqrt(V) arccos(V^{-1} int sqrt(f_u f_v) omega)."""
    _check_pair(u, v)
    model = u.model
    V = model.volume
    cos = float(np.sum(np.sqrt(np.maximum(u.masses, 0) * np.maximum(v.masses, 0)))) / V
    return 2.0 * np.sqrt(V) * float(np.arccos(np.clip(cos, -1.0, 1.0)))


def calabi_distance_masses(model, mu, mv):
    """Calabi distance between two mass distributions of total mass V."""
    V = model.volume
    cos = float(np.sum(np.sqrt(np.maximum(mu, 0) * np.maximum(mv, 0)))) / V
    return 2.0 * np.sqrt(V) * float(np.arccos(np.clip(cos, -1.0, 1.0)))
