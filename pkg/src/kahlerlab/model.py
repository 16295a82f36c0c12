"""Model geometries, potentials and pointwise geometric operators.

Two reference Kaehler curves are discretized with a finite-volume scheme.

``torus``
    Periodic N x N lattice on the unit square, flat metric with unit
    density against the coordinate area form, so the volume is 1.
``p1``
    Circle-invariant metrics on the Riemann sphere written in the fiber
    coordinate x = log|z|^2 and truncated to [-X, X] with N+1 nodes.  The
    reference potential 2 log(1 + e^x) is the round metric with Ric = omega.

Every node owns a dual cell.  A potential phi determines the cell masses

    m = w + L phi

of omega_phi, where w holds the reference masses and L is the discrete
i dd^c operator, which does not depend on the metric.  On ``p1`` the two end
cells extend to -inf and +inf and carry the exponentially small tails, with
phi continued as a constant beyond the last node.  With this choice the
total mass is conserved exactly and all identities that follow from
integration by parts hold to round-off.  Everything else (densities,
Laplacians, curvature, energy functionals) is expressed through w, L and
the gradient form G below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ModelMismatch

log = logging.getLogger(__name__)

TORUS = "torus"
P1 = "p1"
KINDS = (TORUS, P1)
DEGENERATE_DENSITY = 1e-8
_EPS = np.finfo(float).eps


def psi_round(x):
    """Round reference potential 2 log(1 + e^x), evaluated without overflow."""
    return 2.0 * np.logaddexp(0.0, x)


def round_slope(x):
    """Derivative of the round potential; this is the moment coordinate in (0, 2)."""
    return 2.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def _p1_reference_masses(x, h):
    # Face slopes of psi lose all precision near +X when differenced
    # directly, so the right half works with the deficit 2 - slope, using
    # psi(x) - 2x = psi(-x).
    a, b = x[:-1], x[1:]
    left = 0.5 * (a + b) < 0
    slope = np.where(left, (psi_round(b) - psi_round(a)) / h, np.nan)
    deficit = np.where(left, np.nan, (psi_round(-a) - psi_round(-b)) / h)
    slope = np.where(left, slope, 2.0 - deficit)
    deficit = np.where(left, 2.0 - slope, deficit)
    s = np.concatenate([[0.0], slope, [2.0]])
    d = np.concatenate([[2.0], deficit, [0.0]])
    return 2.0 * np.pi * np.where(x < 0, np.diff(s), -np.diff(d))


@dataclass(frozen=True, eq=False)
class ModelGeometry:
    """A discretized reference Kaehler structure.

    Attributes
    ----------
    kind : {"torus", "p1"}
    N, X : grid size and (``p1`` only) truncation half-width.
    h : grid spacing.
    mu : Einstein constant used by the curvature-dependent equations.
    coords : x array (``p1``) or the pair of (x, y) arrays (``torus``).
    weights : reference cell masses w; they sum to ``volume``.
    volume : V, the total mass of omega.
    reference_potential : samples of the local reference potential.
    ricci_reference : samples of the Ricci potential f_omega.
    offset : potential of this reference relative to the canonical one;
        nonzero only for models produced by :meth:`rebase`.
    """

    kind: str
    N: int
    X: float
    h: float
    mu: float
    coords: object
    weights: np.ndarray
    volume: float
    reference_potential: np.ndarray
    ricci_reference: np.ndarray
    offset: np.ndarray
    base: "ModelGeometry | None" = field(default=None, repr=False)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def dim(self):
        """Complex dimension n (always 1 for the shipped models)."""
        return 1

    @property
    def canonical(self):
        """The unrebased model this one derives from (itself if unrebased)."""
        return self if self.base is None else self.base

    @property
    def is_canonical(self):
        return self.base is None

    @property
    def stencil_scale(self):
        """Largest absolute row sum of L, used for round-off estimates."""
        return 4.0 if self.kind == TORUS else 8.0 * np.pi / self.h

    @property
    def descriptor(self):
        return (self.kind, self.N, self.X, self.mu, self.volume)

    def same_grid(self, other):
        return self.kind == other.kind and self.N == other.N and self.X == other.X

    # -- discrete operators ------------------------------------------------

    def ddc(self, v):
        """Cell masses of i dd^c v (the operator L)."""
        v = np.asarray(v, dtype=float)
        if self.kind == TORUS:
            return 0.5 * (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1)
                          + np.roll(v, -1, 1) - 4.0 * v)
        flux = np.zeros(v.shape[0] + 1)
        flux[1:-1] = np.diff(v) / self.h
        return 2.0 * np.pi * np.diff(flux)

    def gradient_mass(self, v):
        """Cell masses of i dv ^ d-bar v; sums to -<v, L v>."""
        v = np.asarray(v, dtype=float)
        if self.kind == TORUS:
            out = np.zeros_like(v)
            for axis in (0, 1):
                fwd = np.roll(v, -1, axis) - v
                out += fwd ** 2 + np.roll(fwd, 1, axis) ** 2
            return 0.25 * out
        sq = np.zeros(v.shape[0] + 1)
        sq[1:-1] = np.diff(v) ** 2
        return np.pi * (sq[:-1] + sq[1:]) / self.h

    def stiffness(self):
        """Sparse matrix of L acting on flattened samples."""
        return _stiffness_cache(self)

    def masses(self, phi):
        return self.weights + self.ddc(phi)

    def mass_floor(self, phi):
        """Round-off floor for cell masses of ``phi``."""
        scale = 1.0 + np.max(np.abs(phi)) + np.max(np.abs(self.offset))
        return 64.0 * _EPS * scale * self.stencil_scale

    def log_density_roundoff(self, phi):
        """Node-wise estimate of the round-off error in log density of ``phi``."""
        phi = np.asarray(phi, dtype=float)
        m = self.masses(phi)
        scale = 1.0 + np.max(np.abs(phi)) + np.max(np.abs(self.offset))
        return 8.0 * _EPS * scale * self.stencil_scale / np.abs(m)

    def integrate(self, g, phi=None):
        """Integral of g against omega (or omega_phi when phi is given)."""
        m = self.weights if phi is None else self.masses(phi)
        return float(np.sum(np.asarray(g) * m))

    def zeros(self):
        return Potential(self, np.zeros(self.shape))

    def potential(self, samples):
        return Potential(self, samples)

    def rebase(self, theta):
        """Return the model whose reference metric is omega_theta.

        Potentials on the new model are measured from omega_theta; the Ricci
        potential of the new reference is computed from the old one, so all
        curvature identities carry over.
        """
        theta = np.asarray(getattr(theta, "samples", theta), dtype=float)
        m = self.masses(theta)
        if np.any(m <= 0):
            raise ConfigError("rebasing potential is not admissible")
        f_new = ricci_potential_of(Potential(self, theta))
        return ModelGeometry(
            kind=self.kind, N=self.N, X=self.X, h=self.h, mu=self.mu,
            coords=self.coords, weights=m, volume=self.volume,
            reference_potential=self.reference_potential + theta,
            ricci_reference=f_new, offset=self.offset + theta,
            base=self.canonical)


_STIFFNESS = {}


def _stiffness_cache(model):
    key = (model.kind, model.N, model.X)
    if key not in _STIFFNESS:
        if model.kind == TORUS:
            n = model.N
            d1 = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)],
                          [-1, 0, 1], format="lil")
            d1[0, n - 1] = 1.0
            d1[n - 1, 0] = 1.0
            eye = sp.identity(n, format="csr")
            mat = 0.5 * (sp.kron(d1.tocsr(), eye) + sp.kron(eye, d1.tocsr()))
        else:
            n = model.N + 1
            c = 2.0 * np.pi / model.h
            main = -2.0 * c * np.ones(n)
            main[0] = main[-1] = -c
            mat = sp.diags([c * np.ones(n - 1), main, c * np.ones(n - 1)], [-1, 0, 1])
        _STIFFNESS[key] = mat.tocsc()
    return _STIFFNESS[key]


def make_model(kind, N, X=12.0, mu=None, ricci=None):
    """Build a model geometry.

    Parameters
    ----------
    kind : "torus" or "p1"
    N : even grid size, at least 8.
    X : truncation half-width for "p1" (at least 8).
    mu : optional override of the Einstein constant (used for synthetic
        runs such as mu = -1 on the torus).
    ricci : optional override of the Ricci potential f_omega.  It is shifted
        by a constant so that the integral of exp(f_omega) equals V.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if int(N) != N or N < 8 or N % 2:
        raise ConfigError(f"grid too small/odd: N={N} (need even N >= 8)")
    N = int(N)
    if kind == TORUS:
        h = 1.0 / N
        x = np.arange(N) * h
        gx, gy = np.meshgrid(x, x, indexing="ij")
        weights = np.full((N, N), h * h)
        volume = 1.0
        ref = 0.5 * (gx ** 2 + gy ** 2)
        coords = (gx, gy)
        mu_default = 0.0
        X = 0.0
    else:
        X = float(X)
        if not X >= 8.0:
            raise ConfigError(f"truncation too small: X={X} (need X >= 8)")
        x = np.linspace(-X, X, N + 1)
        h = 2.0 * X / N
        weights = _p1_reference_masses(x, h)
        volume = 4.0 * np.pi
        ref = psi_round(x)
        coords = x
        mu_default = 1.0
    f = np.zeros(weights.shape)
    if ricci is not None:
        f = np.asarray(ricci, dtype=float).reshape(weights.shape)
        f = f - np.log(np.sum(weights * np.exp(f)) / volume)
    return ModelGeometry(
        kind=kind, N=N, X=X, h=h, mu=float(mu_default if mu is None else mu),
        coords=coords, weights=weights, volume=volume, reference_potential=ref,
        ricci_reference=f, offset=np.zeros(weights.shape))


@dataclass(frozen=True, eq=False)
class Potential:
    """Samples of a relative Kaehler potential on a model grid.

    On ``p1`` the end samples double as the asymptotic constants of phi.
    """

    model: ModelGeometry
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float).reshape(self.model.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __add__(self, other):
        other = getattr(other, "samples", other)
        return Potential(self.model, self.samples + other)

    __radd__ = __add__

    def __sub__(self, other):
        other = getattr(other, "samples", other)
        return Potential(self.model, self.samples - other)

    def __mul__(self, c):
        return Potential(self.model, self.samples * c)

    __rmul__ = __mul__

    @property
    def masses(self):
        return self.model.masses(self.samples)

    def is_admissible(self):
        m = self.masses
        return bool(np.all(m > -self.model.mass_floor(self.samples))
                    and np.all(m[self.model.weights > 1e3 * self.model.mass_floor(self.samples)] > 0))

    def to_canonical(self):
        """The same Kaehler form as a potential on the canonical model."""
        return Potential(self.model.canonical, self.samples + self.model.offset)


def as_potential(model, phi):
    """Coerce arrays to potentials and check the model matches."""
    if isinstance(phi, Potential):
        if phi.model is not model and not (phi.model.same_grid(model)
                                           and np.array_equal(phi.model.offset, model.offset)):
            raise ModelMismatch("potential belongs to a different model")
        return phi
    return Potential(model, phi)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Monge-Ampere density omega_phi / omega with positivity flags."""

    model: ModelGeometry
    samples: np.ndarray
    nonpositive: np.ndarray
    degenerate: np.ndarray

    @property
    def ok(self):
        return not self.nonpositive.any()

    def integral(self):
        return float(np.sum(self.samples * self.model.weights))


def ma_density(phi):
    """Monge-Ampere density of ``phi``, flagging nodes where it fails to be positive."""
    model = phi.model
    m = phi.masses
    rho = m / model.weights
    floor = model.mass_floor(phi.samples)
    resolved = model.weights > 1e3 * floor
    nonpos = (m <= -floor) | (resolved & (rho <= 0))
    degenerate = resolved & (rho > 0) & (rho <= DEGENERATE_DENSITY)
    if nonpos.any():
        log.debug("density nonpositive at %d nodes", int(nonpos.sum()))
    return DensityField(model, rho, nonpos, degenerate)


def density_from_masses(model, m):
    rho = m / model.weights
    return DensityField(model, rho, rho <= 0, (rho > 0) & (rho <= DEGENERATE_DENSITY))


def laplacian_at(base, v):
    """Laplacian of v with respect to omega_base."""
    return base.model.ddc(v) / base.masses


def grad_norm_sq(base, v):
    """Pointwise |grad v|^2 measured by omega_base."""
    return base.model.gradient_mass(v) / base.masses


def log_density(phi):
    m = phi.masses
    if np.any(m <= 0):
        raise ValueError("density is not positive")
    return np.log(m / phi.model.weights)


def ricci_mass(phi):
    """Cell masses of Ric(omega_phi)."""
    model = phi.model
    ref = model.mu * model.weights + model.ddc(model.ricci_reference)
    return ref - model.ddc(log_density(phi))


def scalar_curvature(phi):
    """Scalar curvature tr_{omega_phi} Ric(omega_phi); its mean is n mu."""
    dens = ma_density(phi)
    if dens.degenerate.any():
        log.warning("density below %.0e: curvature unreliable", DEGENERATE_DENSITY)
    return ricci_mass(phi) / phi.masses


def ricci_potential_of(phi):
    """Ricci potential of omega_phi, normalized so exp(f) integrates to V."""
    model = phi.model
    f, p = model.ricci_reference, phi.samples
    expo = f - model.mu * p
    top = expo.max()
    lognorm = top + np.log(np.sum(model.weights * np.exp(expo - top)) / model.volume)
    return f - log_density(phi) - model.mu * p - lognorm


def reference_ricci_defect(model):
    """Max deviation of Ric(omega)/omega from mu away from the end cells.

    The curvature is recomputed from the reference masses in holomorphic
    coordinates, independently of the stored Ricci potential; on ``p1`` the
    deviation is a grid error.
    """
    model = model.canonical
    if model.kind == TORUS:
        return 0.0
    x, h = model.coords, model.h
    g = np.log(model.weights / (2 * np.pi * h)) - x
    flux = np.concatenate([[0.0], np.diff(g) / h, [-2.0]])
    ric = -2 * np.pi * np.diff(flux)
    # the end cells hold lumped tails, so nodes next to them are skipped too
    return float(np.max(np.abs(ric / model.weights - model.mu)[2:-2]))


def green_kernel_min(model):
    """Minimum of the zero-mean discrete Green kernel of the Laplacian.

    The kernel G(x, .) solves L G(x, .) = w - V e_x with zero mean, so that
    phi(x) - mean(phi) = -V^{-1} sum_y G(x, y) (L phi)_y.
    """
    model = model.canonical
    V, w = model.volume, model.weights
    if model.kind == TORUS:
        n = model.N
        k = 2 * np.pi * np.fft.fftfreq(n)
        lam = (np.cos(k)[:, None] + np.cos(k)[None, :] - 2.0)
        rhs = w.copy()
        rhs[0, 0] -= V
        lam[0, 0] = 1.0
        hat = np.fft.fft2(rhs) / lam
        hat[0, 0] = 0.0
        g = np.real(np.fft.ifft2(hat))
        g -= np.sum(g * w) / V
        return float(g.min())
    L = model.stiffness().toarray()
    n = L.shape[0]
    border = np.zeros((n + 1, n + 1))
    border[:n, :n] = L
    border[:n, n] = w
    border[n, :n] = w
    rhs = np.zeros((n + 1, n))
    rhs[:n, :] = w[:, None] - V * np.eye(n)
    sol = np.linalg.solve(border, rhs)[:n]
    return float(sol.min())


def green_mean_value_bound(model):
    """Constant A with sup phi <= V^{-1} int phi omega + n A for admissible phi."""
    return -green_kernel_min(model)


def mean(phi, against=None):
    """V^{-1} integral of phi against omega (or omega_against)."""
    model = phi.model
    return model.integrate(phi.samples, None if against is None else against.samples) / model.volume


def moment_coordinate(model):
    """Reference moment coordinate p = d(psi + offset)/dx on ``p1`` (cell centered)."""
    if model.kind != P1:
        raise ConfigError("moment coordinate is defined on p1 only")
    return round_slope(model.coords)


def legendre_potential(model, coef, const=0.0):
    """Potential sum_k coef[k] P_{k+1}(p - 1) on ``p1``, p the reference moment coordinate.

    It is a smooth function on the sphere and defined the same way on every
    grid, which makes it the natural input for refinement studies.
    """
    if model.kind != P1:
        raise ConfigError("legendre_potential is defined on p1 only")
    p = round_slope(model.coords) - 1.0
    v = np.polynomial.legendre.legval(p, np.concatenate([[0.0], np.asarray(coef, float)]))
    return Potential(model, v + const)


def sample_potential(model, rng, min_density=None, modes=6, symmetric=False, even=False):
    """Random smooth admissible potential.

    On the torus a trigonometric polynomial is used (independent of y when
    ``symmetric``); on ``p1`` a polynomial in the moment coordinate, which is
    smooth on the sphere and flat at both ends.  The amplitude is scaled so
    the minimum density is ``min_density`` (random in [0.05, 0.8] when None).
    With ``even`` the ``p1`` potential is invariant under the inversion
    z -> 1/z, i.e. even in x.
    """
    if min_density is None:
        min_density = rng.uniform(0.05, 0.8)
    if model.kind == TORUS:
        gx, gy = model.coords
        v = np.zeros(model.shape)
        for _ in range(modes):
            kx = rng.integers(0, 4)
            ky = 0 if symmetric else rng.integers(0, 4)
            if kx == 0 and ky == 0:
                kx = 1
            ph = rng.uniform(0, 2 * np.pi)
            v += rng.normal() / (kx * kx + ky * ky) * np.cos(2 * np.pi * (kx * gx + ky * gy) + ph)
    else:
        coef = rng.normal(size=modes) / np.arange(1, modes + 1)
        if even:
            coef[0::2] = 0.0
        v = legendre_potential(model, coef).samples
    lap = model.ddc(v) / model.weights
    lo = lap.min()
    if lo >= 0:
        v, lap = -v, -lap
        lo = lap.min()
    scale = (1.0 - min_density) / (-lo)
    return Potential(model, scale * v + rng.normal())
