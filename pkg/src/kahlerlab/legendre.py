"""Legendre duality for symmetric potentials.

A circle-invariant Kaehler potential on ``p1`` is a convex function Psi of
x = log|z|^2 whose slope p = Psi'(x) sweeps the moment interval (0, 2).  A
y-invariant potential on the torus becomes the convex function
U(x) = x^2/2 + phi/2 with U'' equal to the density.  In both cases the
Legendre transform U*(p) linearizes geodesics, so this module stores each
convex function through its inverse gradient map x(q) and its conjugate
U*(q), with q a monotone reparametrization of the slope:

``p1``     q = log(p / (2 - p)), which is x itself for the round metric,
           so the tails stay well resolved;
``torus``  q = p.

Each dual object is built from the face slopes of the discrete potential,
which are second-order accurate derivatives at the face midpoints.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import ConvexificationFailure
from .model import P1, TORUS

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _p_of_q(q, kind):
    if kind == P1:
        return 2.0 / (1.0 + np.exp(-q))
    return q


def _dp_dq(q, kind):
    if kind == P1:
        e = np.exp(-np.abs(q))
        return 2.0 * e / (1.0 + e) ** 2
    return np.ones_like(q)


def symmetric_profile(phi):
    """The 1-D profile of a symmetric potential, or raise if there is none."""
    model = phi.model
    if model.kind == P1:
        return phi.samples
    s = phi.samples
    scale = 1.0 + np.max(np.abs(s))
    if np.max(np.abs(s - s[:, :1])) > 1e-12 * scale:
        raise ConvexificationFailure("torus potential is not y-invariant; no Legendre representation")
    return s[:, 0].copy()


class DualData:
    """Inverse gradient map x(q) and conjugate U*(q) of one convex function."""

    def __init__(self, kind, q, x, anchor_index, anchor_value):
        if np.any(np.diff(q) <= 0):
            raise ConvexificationFailure("slopes are not strictly increasing (degenerate density)")
        self.kind = kind
        self.q = q
        self.x = x
        spline = CubicSpline(q, x)
        if np.any(spline(q, 1) <= 0):
            spline = PchipInterpolator(q, x)
        self.spline = spline
        self.dspline = spline.derivative()
        # outside the data the map continues with slope 1 (p1 tails) or
        # with the end slope (torus, never reached in practice)
        self.lo_slope = 1.0 if kind == P1 else float(self.dspline(q[0]))
        self.hi_slope = 1.0 if kind == P1 else float(self.dspline(q[-1]))
        # cumulative integral of x(q) p'(q) between consecutive knots
        a, b = q[:-1], q[1:]
        seg = self._segment_integral(a, b)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.cum = cum - cum[anchor_index] + anchor_value

    def xmap(self, q):
        q = np.asarray(q, float)
        out = self.spline(np.clip(q, self.q[0], self.q[-1]))
        out = np.where(q < self.q[0], self.x[0] + self.lo_slope * (q - self.q[0]), out)
        return np.where(q > self.q[-1], self.x[-1] + self.hi_slope * (q - self.q[-1]), out)

    def dxmap(self, q):
        q = np.asarray(q, float)
        out = self.dspline(np.clip(q, self.q[0], self.q[-1]))
        out = np.where(q < self.q[0], self.lo_slope, out)
        return np.where(q > self.q[-1], self.hi_slope, out)

    def _segment_integral(self, a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = self.xmap(nodes) * _dp_dq(nodes, self.kind)
        return half * (vals @ _GL_WEIGHTS)

    def conjugate(self, q):
        """U*(q), the Legendre transform evaluated at slope p(q)."""
        q = np.asarray(q, float)
        k = np.clip(np.searchsorted(self.q, q) - 1, 0, len(self.q) - 1)
        return self.cum[k] + self._segment_integral(self.q[k], q)


def dual_of(phi):
    """Dual data of the symmetric potential ``phi``."""
    model = phi.model
    prof = symmetric_profile(phi)
    if model.kind == P1:
        m = model.masses(prof) / (2.0 * np.pi)
        if np.any(m[1:-1] <= 0):
            raise ConvexificationFailure("potential is not strictly convex in x")
        left = np.cumsum(m)[:-1]
        right = np.cumsum(m[::-1])[::-1][1:]
        q = np.log(left) - np.log(right)
        xf = 0.5 * (model.coords[:-1] + model.coords[1:])
        psi = model.reference_potential + prof
        i0 = len(q) // 2
        p0 = left[i0]
        anchor = p0 * xf[i0] - 0.5 * (psi[i0] + psi[i0 + 1])
        return DualData(P1, q, xf, i0, anchor)
    n, h = model.N, model.h
    x = np.arange(n) * h
    u = 0.5 * x ** 2 + 0.5 * prof
    ks = np.arange(-2, 3)
    xe = (x[None, :] + ks[:, None]).ravel()
    ue = (u[None, :] + ks[:, None] * x[None, :] + 0.5 * ks[:, None] ** 2).ravel()
    slopes = np.diff(ue) / h
    xf = 0.5 * (xe[:-1] + xe[1:])
    i0 = len(slopes) // 2
    anchor = slopes[i0] * xf[i0] - 0.5 * (ue[i0] + ue[i0 + 1])
    return DualData(TORUS, slopes, xf, i0, anchor)


def invert(duals, weights, xs):
    """Solve sum_i weights[i] x_i(q) = xs for q, node by node."""
    grid = np.unique(np.concatenate([d.q for d in duals]))
    lo = grid[0] - 40.0 if duals[0].kind == P1 else grid[0]
    hi = grid[-1] + 40.0 if duals[0].kind == P1 else grid[-1]
    grid = np.concatenate([[lo], grid, [hi]])
    xt = sum(w * d.xmap(grid) for w, d in zip(weights, duals))
    q = np.interp(xs, xt, grid)
    for _ in range(8):
        f = sum(w * d.xmap(q) for w, d in zip(weights, duals)) - xs
        df = sum(w * d.dxmap(q) for w, d in zip(weights, duals))
        step = f / df
        q = q - step
        if np.max(np.abs(step)) < 1e-15 * (1.0 + np.max(np.abs(q))):
            break
    return q


def evaluate(duals, weights, model):
    """Profile of the convex function whose conjugate is sum_i weights[i] U*_i.

    Returns the 1-D profile of the potential (relative to the model
    reference) and the node slopes q.
    """
    if model.kind == P1:
        xs = model.coords
    else:
        xs = np.arange(model.N) * model.h
    q = invert(duals, weights, xs)
    ustar = sum(w * d.conjugate(q) for w, d in zip(weights, duals))
    p = _p_of_q(q, model.kind)
    big = p * xs - ustar
    if model.kind == P1:
        return big - model.reference_potential, q
    return 2.0 * big - xs ** 2, q


def conjugate_at(duals, weights, q):
    return sum(w * d.conjugate(q) for w, d in zip(weights, duals))


def broadcast(model, prof):
    """Turn a 1-D profile back into model samples."""
    if model.kind == P1:
        return prof
    return np.repeat(prof[:, None], model.N, axis=1)
