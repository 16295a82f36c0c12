"""Energy functionals on the space of Kaehler potentials.

All functionals are normalized by the volume V and evaluated with the cell
masses of the model.  In complex dimension one the mixed wedge products
that appear in the Aubin functionals reduce to omega + omega_phi, so each
quantity is an exact finite sum and the algebraic identities between them
hold to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import xlogy

from .errors import ModelMismatch
from .model import DensityField, Potential, ricci_potential_of


@dataclass(frozen=True)
class FunctionalReport:
    """All energy functionals of one potential."""

    I: float
    J: float
    I_minus_J: float
    AM: float
    entropy_ref: float
    entropy_plain: float
    E_fano: float
    E_second: float
    E_csc: float

    def as_dict(self):
        return asdict(self)

    def chain(self, n=1):
        """The six members of the I/J comparison chain, smallest first."""
        I, J, IJ = self.I, self.J, self.I_minus_J
        return np.array([IJ / n ** 2, I / (n * (n + 1)), J / n, IJ, n * I / (n + 1), n * J])


def _mixed_sum(model, m):
    # sum over l of omega^{n-l} ^ omega_phi^l, as cell masses (n = 1)
    return model.weights + m


def aubin(phi):
    """Aubin functionals I, J and I - J of ``phi``."""
    model, p = phi.model, phi.samples
    V, w, m = model.volume, model.weights, phi.masses
    n = model.dim
    I = float(np.sum(p * (w - m))) / V
    J = float(np.sum(p * w)) / V - float(np.sum(p * _mixed_sum(model, m))) / ((n + 1) * V)
    return {"I": I, "J": J, "I_minus_J": I - J}


def am(phi):
    """Aubin-Mabuchi functional; translation equivariant and monotone."""
    model, p = phi.model, phi.samples
    n = model.dim
    return float(np.sum(p * _mixed_sum(model, phi.masses))) / ((n + 1) * model.volume)


def am_difference(u, v):
    """AM(v) - AM(u) written as a single integral of v - u."""
    if not u.model.same_grid(v.model):
        raise ModelMismatch("potentials live on different models")
    model = u.model
    diff = v.samples - u.samples
    return float(np.sum(diff * (u.masses + v.masses))) / (2 * model.volume)


def _entropy_masses(model, m, ref_masses):
    m = np.maximum(m, 0.0)
    return float(np.sum(xlogy(m, m / ref_masses))) / model.volume


def entropy(nu, chi, rtol=1e-6):
    """Relative entropy V^{-1} int log(chi/nu) chi omega^n of two densities."""
    model = chi.model
    V = model.volume
    tot_nu, tot_chi = nu.integral(), chi.integral()
    if abs(tot_nu - V) > rtol * V or abs(tot_chi - V) > rtol * V:
        raise ValueError(f"densities must integrate to V (got {tot_nu:.8g}, {tot_chi:.8g})")
    w = model.weights
    return _entropy_masses(model, chi.samples * w, nu.samples * w)


def reference_measure(model):
    """The density e^{f_omega} of the normalized Ricci-potential measure."""
    f = np.exp(model.ricci_reference)
    return DensityField(model, f, np.zeros(f.shape, bool), np.zeros(f.shape, bool))


def mabuchi(phi):
    """K-energy of ``phi`` in its three standard forms, plus I, J and AM."""
    model, p = phi.model, phi.samples
    V, w, mu, n = model.volume, model.weights, model.mu, model.dim
    m = phi.masses
    ij = aubin(phi)
    a = am(phi)
    ent_ref = _entropy_masses(model, m, w * np.exp(model.ricci_reference))
    ent_plain = _entropy_masses(model, m, w)
    e_fano = ent_ref - mu * a + mu * float(np.sum(p * m)) / V
    e_second = ent_ref - mu * ij["I_minus_J"]
    ric_ref = mu * w + model.ddc(model.ricci_reference)
    e_csc = ent_plain + n * mu * a - float(np.sum(p * ric_ref)) / V
    return FunctionalReport(I=ij["I"], J=ij["J"], I_minus_J=ij["I_minus_J"], AM=a,
                            entropy_ref=ent_ref, entropy_plain=ent_plain,
                            E_fano=e_fano, E_second=e_second, E_csc=e_csc)


def kenergy(phi):
    return mabuchi(phi).E_fano


def kenergy_gradient(phi, v):
    """Directional derivative of the K-energy at phi in direction v.

    Equals -V^{-1} int v Laplacian_phi(f_phi) omega_phi.
    """
    model = phi.model
    f = ricci_potential_of(phi)
    return -float(np.sum(np.asarray(v) * model.ddc(f))) / model.volume


def j_relative(base, phi):
    """J functional with omega_base as the reference metric.

    ``j_relative(base, phi)`` measures omega_phi from omega_base.  Duality:
    ``aubin(phi)['I_minus_J'] == j_relative(phi, zero)``.
    """
    if not base.model.same_grid(phi.model):
        raise ModelMismatch("potentials live on different models")
    model = base.model
    u = phi.samples - base.samples
    mb, mp = base.masses, phi.masses
    n = model.dim
    V = model.volume
    return float(np.sum(u * mb)) / V - float(np.sum(u * (mb + mp))) / ((n + 1) * V)


def supporting_line(x, y, upper_fraction=0.5):
    """Fit y >= C x - D from below.

    The slope C is a least-squares fit through the lower convex hull
    vertices of the point cloud whose x lies in the top ``upper_fraction``
    of the range; D is then the smallest offset that puts every point on or
    above the line.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    hull = []
    for xi, yi in zip(xs, ys):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (yi - y1) - (y2 - y1) * (xi - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append((xi, yi))
    hx, hy = np.array(hull).T
    cut = hx.min() + (1 - upper_fraction) * (hx.max() - hx.min())
    sel = hx >= cut
    if sel.sum() < 2:
        sel = np.ones_like(hx, bool)
    C = float(np.polyfit(hx[sel], hy[sel], 1)[0]) if sel.sum() >= 2 else 0.0
    D = float(np.max(C * x - y))
    return C, D
