"""Dilation orbits on the sphere and the functionals built from them.

The dilation z -> e^a z acts on circle-invariant potentials by the shift
x -> x + 2a.  Pulling back omega_phi gives the potential

    act(a, phi) = psi(x + 2a) - psi(x) + phi(x + 2a) + const,

where the constant keeps AM unchanged, so AM(act(a, phi)) = AM(phi) and
act(0, phi) = phi.  Shifts by whole grid steps are exact; other shifts
interpolate phi with a cubic spline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize, minimize_scalar

from .errors import ConfigError, TruncationExceeded
from .functionals import aubin, am, mabuchi, supporting_line
from .metric import d1_value
from .model import P1, Potential, psi_round, round_slope
from .solver import first_eigenpair

log = logging.getLogger(__name__)


def _require_p1(model):
    if model.kind != P1:
        raise ConfigError("orbit machinery is defined on the p1 model only")
    if not model.is_canonical:
        raise ConfigError("orbit machinery expects potentials on the canonical model")


def window_limit(model):
    """Largest admissible |a|: the shift 2|a| must stay below X/2."""
    return model.X / 4.0


def _extend(x, s, y):
    """Values at y of the samples s, continued past the ends in powers of e^(-|x|).

    Potentials that are smooth on the sphere are smooth functions of
    |z|^2 = e^x near z = 0 (and of e^(-x) near infinity), so the three end
    samples fix the continuation c0 + c1 e^(-|x|) + c2 e^(-2|x|) up to
    terms of order e^(-3|x|).
    """
    out = np.empty_like(y)
    left, right = y < x[0], y > x[-1]
    inside = ~(left | right)
    out[inside] = CubicSpline(x, s)(y[inside]) if inside.any() else 0.0
    if left.any():
        out[left] = _end_series(x[:3] - x[0], s[:3], y[left] - x[0])
    if right.any():
        out[right] = _end_series(x[-1] - x[-3:], s[-3:], x[-1] - y[right])
    return out


def _end_series(d, vals, e):
    # fit vals at offsets d (0, h, 2h inward) with 1, e^d, e^(2d); evaluate at offsets e
    A = np.exp(np.outer(d, [0.0, 1.0, 2.0]))
    coef = np.linalg.solve(A, vals)
    return np.exp(np.outer(e, [0.0, 1.0, 2.0])) @ coef


def _shifted(phi, shift):
    model = phi.model
    x, h = model.coords, model.h
    s = phi.samples
    k = shift / h
    kr = int(round(k))
    y = x + shift
    if abs(k - kr) < 1e-9:
        idx = np.arange(len(x)) + kr
        inside = (idx >= 0) & (idx < len(x))
        out = np.empty_like(x)
        out[inside] = s[idx[inside]]
        if (~inside).any():
            out[~inside] = _extend(x, s, y[~inside])
        return out
    return _extend(x, s, y)


def act(a, phi, check=True):
    """Pullback of omega_phi by the dilation z -> e^a z, on the AM slice of phi."""
    model = phi.model
    _require_p1(model)
    if check and abs(a) > window_limit(model) + 1e-12:
        raise TruncationExceeded(f"|a| = {abs(a):.4g} exceeds the window X/4 = {window_limit(model):.4g}")
    x = model.coords
    raw = psi_round(x + 2 * a) - psi_round(x) + _shifted(phi, 2 * a)
    pot = Potential(model, raw)
    c = am(phi) - am(pot)
    return Potential(model, raw + c)


def am_constant(a, model):
    """Constant added by ``act(a, 0)``; close to -2a."""
    x = model.coords
    raw = Potential(model, psi_round(x + 2 * a) - psi_round(x))
    return -am(raw)


@dataclass
class OrbitScan:
    a: np.ndarray
    F: np.ndarray
    E: np.ndarray
    J: np.ndarray
    const: np.ndarray

    def rows(self):
        return [dict(a=a, F=f, E=e, J=j, const=c)
                for a, f, e, j, c in zip(self.a, self.F, self.E, self.J, self.const)]

    def second_differences(self):
        return np.diff(self.F, 2)

    def is_strictly_convex(self):
        return bool(np.all(self.second_differences() > 0))

    def argmin(self):
        return float(self.a[int(np.argmin(self.F))])


def orbit_scan(eta, a_grid):
    """Tabulate F_eta(a) = (I - J)(act(a, eta)), E and J along the orbit."""
    _require_p1(eta.model)
    a_grid = np.asarray(a_grid, float)
    F, E, J, C = [], [], [], []
    for a in a_grid:
        p = act(a, eta)
        ij = aubin(p)
        F.append(ij["I_minus_J"])
        J.append(ij["J"])
        E.append(mabuchi(p).E_fano)
        C.append(am_constant(a, eta.model))
    return OrbitScan(a_grid, np.array(F), np.array(E), np.array(J), np.array(C))


def _orbit_minimize(fun, window, coarse=81):
    grid = np.linspace(-window, window, coarse)
    vals = np.array([fun(a) for a in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == coarse - 1:
        raise TruncationExceeded("orbit minimizer sits at the window edge")
    lo, hi = grid[i - 1], grid[i + 1]
    res = minimize_scalar(fun, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10 * max(1.0, window)})
    a, v = (float(res.x), float(res.fun)) if res.fun <= vals[i] else (float(grid[i]), float(vals[i]))
    return a, v


def orbit_minimizers(eta, starts, window=None):
    """Local minimization of F_eta from each start inside the window.

    Returns the list of (a, F) pairs; a unique minimizer shows up as all
    pairs agreeing.
    """
    model = eta.model
    _require_p1(model)
    window = window_limit(model) if window is None else window

    def fun(v):
        return aubin(act(float(v[0]), eta, check=False))["I_minus_J"]

    out = []
    for a0 in starts:
        res = minimize(fun, x0=[a0], method="L-BFGS-B", bounds=[(-window, window)],
                       options={"ftol": 1e-15, "gtol": 1e-12})
        a = float(res.x[0])
        if abs(abs(a) - window) < 1e-9:
            raise TruncationExceeded("orbit minimizer sits at the window edge")
        out.append((a, float(res.fun)))
    return out


def jG(phi, window=None, coarse=81):
    """J_G(phi) = min over the orbit of J, with the minimizing parameter."""
    model = phi.model
    _require_p1(model)
    window = window_limit(model) if window is None else window
    if window > window_limit(model) + 1e-12:
        raise TruncationExceeded("search window exceeds the truncation limit")
    a, v = _orbit_minimize(lambda a: aubin(act(a, phi, check=False))["J"], window, coarse)
    return {"value": v, "minimizer": a}


def d1G(u, v, window=None, coarse=81):
    """Quotient distance min over a of d1(u, act(a, v))."""
    model = u.model
    _require_p1(model)
    window = window_limit(model) if window is None else window
    if window > window_limit(model) + 1e-12:
        raise TruncationExceeded("search window exceeds the truncation limit")
    a, val = _orbit_minimize(lambda a: d1_value(u, act(a, v, check=False)), window, coarse)
    return max(val, 0.0)


def equivalence_constant(jg_values, d1g_values):
    """Smallest C >= 1 with J_G / C - C <= d1G <= C J_G + C on all samples."""
    C = 1.0
    for j, d in zip(jg_values, d1g_values):
        C = max(C, d / (j + 1.0), 0.5 * (-d + np.sqrt(d * d + 4.0 * j)))
    return C


def futaki_derivative(phi, delta=None):
    """Centered difference of a -> E(act(a, phi)) at a = 0.

    The default step is half a grid spacing, so that both shifts are exact
    index shifts.
    """
    model = phi.model
    _require_p1(model)
    delta = 0.5 * model.h if delta is None else delta
    ep = mabuchi(act(delta, phi)).E_fano
    em = mabuchi(act(-delta, phi)).E_fano
    return (ep - em) / (2 * delta)


# -- the perpendicular slice ---------------------------------------------

_EIGEN = {}


def first_eigenfunction(model):
    """Invariant first eigenfunction of -Laplacian on the round reference (unit L2 norm)."""
    _require_p1(model)
    key = (model.N, model.X)
    if key not in _EIGEN:
        lam, vec = first_eigenpair(model.zeros(), tol=1e-12)
        # fix the sign so the vector increases with x, like the height function
        if vec[-1] < vec[0]:
            vec = -vec
        _EIGEN[key] = (lam, vec)
    return _EIGEN[key]


def perp_component(phi):
    """Coefficient of phi along the first eigenfunction."""
    model = phi.model
    _, e = first_eigenfunction(model)
    return float(np.sum(phi.samples * e * model.weights))


def perp_project(phi, return_flag=False):
    """Remove the first-eigenspace component of phi in L2(omega).

    If the full removal leaves the admissible cone, the largest admissible
    fraction of it is removed instead and the flag is set.
    """
    model = phi.model
    _, e = first_eigenfunction(model)
    c = perp_component(phi)
    out = Potential(model, phi.samples - c * e)
    flag = False
    if not out.is_admissible():
        flag = True
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if Potential(model, phi.samples - mid * c * e).is_admissible():
                lo = mid
            else:
                hi = mid
        out = Potential(model, phi.samples - lo * c * e)
        log.warning("perp_project: only %.3f of the eigen-component removed", lo)
    return (out, flag) if return_flag else out


def ij_relative(base, target):
    """(I - J) of omega_target measured from omega_base."""
    model = base.model
    V = model.volume
    u = target.samples - base.samples
    mb, mt = base.masses, target.masses
    I = float(np.sum(u * (mb - mt))) / V
    J = float(np.sum(u * mb)) / V - float(np.sum(u * (mb + mt))) / (2 * V)
    return I - J


def critical_point_defect(phi, delta=None):
    """Derivative at a = 0 of a -> (I - J)(omega_phi, act(a, 0)).

    It vanishes when phi is perpendicular to the first eigenspace of the
    round metric.
    """
    model = phi.model
    delta = 0.5 * model.h if delta is None else delta
    zero = model.zeros()
    fp = ij_relative(phi, act(delta, zero))
    fm = ij_relative(phi, act(-delta, zero))
    return (fp - fm) / (2 * delta)


# -- Legendre rays -------------------------------------------------------

@dataclass(frozen=True)
class RayProfile:
    """Convex function g(p) = sum c_k sqrt((p - p_k)^2 + e_k^2) on [0, 2]."""

    c: tuple
    centers: tuple
    widths: tuple

    def _terms(self, p):
        p = np.asarray(p, float)[..., None]
        c, pk, ek = (np.asarray(v) for v in (self.c, self.centers, self.widths))
        r = np.sqrt((p - pk) ** 2 + ek ** 2)
        return c, pk, ek, r, p

    def value(self, p):
        c, pk, ek, r, p = self._terms(p)
        return np.sum(c * r, axis=-1)

    def d1(self, p):
        c, pk, ek, r, p = self._terms(p)
        return np.sum(c * (p - pk) / r, axis=-1)

    def d2(self, p):
        c, pk, ek, r, p = self._terms(p)
        return np.sum(c * ek ** 2 / r ** 3, axis=-1)


def random_ray(rng, terms=3, even=False):
    c = rng.exponential(1.0, size=terms)
    pk = rng.uniform(0.2, 1.8, size=terms)
    ek = rng.uniform(0.15, 0.6, size=terms)
    if even:
        c = np.concatenate([c, c])
        pk = np.concatenate([pk, 2.0 - pk])
        ek = np.concatenate([ek, ek])
    return RayProfile(tuple(c), tuple(pk), tuple(ek))


def _round_conjugate(p):
    return p * np.log(p / (2 - p)) + 2.0 * np.log((2 - p) / 2.0)


def ray_potential(model, g, r):
    """Potential whose Legendre transform is psi* + r g, a geodesic ray in r."""
    _require_p1(model)
    x = model.coords
    # q + r g'(p(q)) is increasing in q and |g'| <= sum c, so bisection on a
    # fixed bracket is safe where Newton can overshoot
    span = r * float(np.sum(g.c)) + 1.0
    lo, hi = x - span, x + span
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        above = mid + r * g.d1(round_slope(mid)) > x
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    q = 0.5 * (lo + hi)
    p = round_slope(q)
    big = p * x - _round_conjugate(p) - r * g.value(p)
    return Potential(model, big - model.reference_potential)


@dataclass
class MTScan:
    rows: list
    C: float
    D: float
    control_C: float
    flagged: int
    critical_defect: float


def mt_scan(model, n_rays=32, radii=None, seed=0, terms=3, control_radii=None, probe_radius=0.25):
    """Sample (J, E) along Legendre rays in the perpendicular slice.

    The rays use inversion-symmetric profiles g(p) = g(2 - p), which keeps
    every member exactly perpendicular to the (odd) first eigenfunction
    while staying admissible for all radii; each member still passes through
    :func:`perp_project`.  Returns the supporting-line fit E >= C J - D, the
    slope of the same fit for control rays along the dilation orbit, and the
    largest critical-point defect over generic (non-symmetric) ray members
    of radius ``probe_radius`` after projection.
    """
    _require_p1(model)
    rng = np.random.default_rng(seed)
    radii = np.linspace(0.25, 3.0, 12) if radii is None else np.asarray(radii, float)
    rows = []
    flagged = 0
    worst = 0.0
    for k in range(n_rays):
        g = random_ray(rng, terms=terms, even=True)
        probe = random_ray(rng, terms=terms)
        for r in radii:
            phi, flag = perp_project(ray_potential(model, g, r), return_flag=True)
            phi = phi - am(phi)
            flagged += int(flag)
            rep = mabuchi(phi)
            rows.append(dict(ray=k, r=float(r), J=rep.J, E=rep.E_fano, control=0, flag=int(flag)))
        phi, flag = perp_project(ray_potential(model, probe, probe_radius), return_flag=True)
        if not flag:
            worst = max(worst, abs(critical_point_defect(phi)))
    zero = model.zeros()
    rows.append(dict(ray=-1, r=0.0, J=0.0, E=mabuchi(zero).E_fano, control=0, flag=0))
    Js = np.array([row["J"] for row in rows])
    Es = np.array([row["E"] for row in rows])
    C, D = supporting_line(Js, Es)
    lim = window_limit(model)
    control_radii = np.linspace(0.0, lim, 13) if control_radii is None else control_radii
    ctrl = []
    for a in control_radii:
        p = act(a, zero)
        rep = mabuchi(p)
        ctrl.append((rep.J, rep.E_fano))
        rows.append(dict(ray=-2, r=float(a), J=rep.J, E=rep.E_fano, control=1, flag=0))
    cJ, cE = np.array(ctrl).T
    Cc, _ = supporting_line(cJ, cE)
    return MTScan(rows=rows, C=C, D=D, control_C=Cc, flagged=flagged, critical_defect=worst)


# -- integrability -------------------------------------------------------

def orbit_family(model, a_values):
    """Sup-normalized pullbacks act(a, 0)."""
    out = []
    for a in a_values:
        p = act(a, model.zeros())
        out.append(p - float(p.samples.max()))
    return out


def log_exp_integral(phi, beta):
    """log of int exp(-beta phi) omega, evaluated without overflow."""
    model = phi.model
    e = -beta * phi.samples
    top = e.max()
    return float(top + np.log(np.sum(model.weights * np.exp(e - top))))


@dataclass
class AlphaTable:
    beta: np.ndarray
    log_sup: np.ndarray
    log_sup_enriched: np.ndarray
    stable_beta: float

    def rows(self):
        return [dict(beta=b, log_sup=s, log_sup_enriched=e)
                for b, s, e in zip(self.beta, self.log_sup, self.log_sup_enriched)]


def alpha_scan(family, beta_grid, enriched=None, ratio=2.0):
    """Sup over the family of int exp(-beta phi) omega for each beta.

    Members are sup-normalized first.  When an enriched family is given, the
    reported ``stable_beta`` is the largest beta of the grid up to which the
    sup grows by less than ``ratio`` under enrichment.  This certifies
    integrability over the sampled family only.
    """
    beta_grid = np.asarray(beta_grid, float)

    def sup_curve(fam):
        fam = [p - float(p.samples.max()) for p in fam]
        return np.array([max(log_exp_integral(p, b) for p in fam) for b in beta_grid])

    base = sup_curve(family)
    rich = sup_curve(list(family) + list(enriched)) if enriched is not None else base.copy()
    ok = rich - base < np.log(ratio)
    stable = float("nan")
    if ok[0]:
        k = len(ok) if ok.all() else int(np.argmin(ok))
        stable = float(beta_grid[k - 1])
    return AlphaTable(beta_grid, base, rich, stable)


def orbit_growth_rate(model, beta, a_lo, a_hi):
    """Slope in a of log int exp(-beta phi_a) omega along the orbit family."""
    fam = orbit_family(model, [a_lo, a_hi])
    return (log_exp_integral(fam[1], beta) - log_exp_integral(fam[0], beta)) / (a_hi - a_lo)


@dataclass
class HormanderReport:
    R: float
    rho: float
    values: np.ndarray
    max_value: float
    disc_area: float


def _polar_rule(rho, n_r, n_theta):
    t, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * rho * (t + 1)
    wr = 0.5 * rho * w * r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    z = r[:, None] * np.exp(1j * th[None, :])
    wt = wr[:, None] * np.full(n_theta, 2 * np.pi / n_theta)[None, :]
    return z, wt


def subharmonic_sample(rng, R, points=4):
    """Random smooth subharmonic function on the disc of radius R.

    A sum of smoothed logarithmic kernels of random positive point masses,
    shifted to be nonpositive on the disc and scaled so the value at the
    center is at least -1.
    """
    r = R * np.sqrt(rng.uniform(size=points))
    th = rng.uniform(0, 2 * np.pi, size=points)
    centers = r * np.exp(1j * th)
    mass = rng.exponential(1.0, size=points)
    eps = R * rng.uniform(0.05, 0.4, size=points)
    denom = 4 * R * R + eps ** 2

    def psi(z):
        z = np.asarray(z)[..., None]
        return np.sum(0.5 * mass * np.log((np.abs(z - centers) ** 2 + eps ** 2) / denom), axis=-1)

    c0 = float(psi(0.0))
    scale = min(1.0, 1.0 / abs(c0)) if c0 < 0 else 1.0
    return lambda z: scale * psi(z)


def hormander_check(samples, R=1.0, rho=None, seed=0, n_r=48, n_theta=96, family=None):
    """Max of int_{B_rho} exp(-psi) dA over sampled subharmonic psi <= 0 with psi(0) >= -1."""
    rho = 0.5 * R if rho is None else rho
    if not (0.5 * R <= rho < np.exp(-0.5) * R):
        raise ConfigError(f"rho must lie in [R/2, e^(-1/2) R), got {rho}")
    z, wt = _polar_rule(rho, n_r, n_theta)
    if family is None:
        rng = np.random.default_rng(seed)
        family = [subharmonic_sample(rng, R) for _ in range(samples)]
    vals = np.array([float(np.sum(np.exp(-f(z)) * wt)) for f in family])
    return HormanderReport(R=R, rho=rho, values=vals, max_value=float(vals.max()),
                           disc_area=float(np.sum(wt)))


def disc_integral(f, rho, n_r=48, n_theta=96):
    """Polar quadrature of exp(-f) over the disc of radius rho."""
    z, wt = _polar_rule(rho, n_r, n_theta)
    return float(np.sum(np.exp(-f(z)) * wt))
