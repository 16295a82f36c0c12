import numpy as np
import pytest

from kahlerlab.errors import ConfigError, NormalizationAmbiguity
from kahlerlab.functionals import am
from kahlerlab.group import d1G
from kahlerlab.model import legendre_potential, ma_density, make_model, ricci_potential_of, sample_potential
from kahlerlab.solver import (ParamPoint, apriori_report, c_t, continuity_run, default_schedule,
                              energy_monotone, first_eigenpair, in_parameter_set, node_residual,
                              solve_node, spectral_gap)

KE_REFERENCE = 0.3 * np.array([0.0, 0.5, 0.0, -0.2, 0.0, 0.1])


def _torus_F(N):
    x = np.arange(N) / N
    gx, gy = np.meshgrid(x, x, indexing="ij")
    return 0.5 * np.cos(2 * np.pi * gx) + 0.3 * np.sin(2 * np.pi * (gx + gy))


@pytest.fixture(scope="module")
def ke_trace():
    base = make_model("p1", 256)
    model = base.rebase(legendre_potential(base, KE_REFERENCE))
    return base, continuity_run(model)


# -- parameter set -------------------------------------------------------------

def test_parameter_set():
    assert in_parameter_set(ParamPoint(-3.0, 0.5), 1.0)
    assert in_parameter_set(ParamPoint(0.5, 1.0), 1.0)
    assert not in_parameter_set(ParamPoint(0.5, 0.5), 1.0)
    assert not in_parameter_set(ParamPoint(1.5, 1.0), 1.0)
    assert not in_parameter_set(ParamPoint(-1.0, 1.5), 1.0)


def test_default_schedule_stays_in_set():
    pts = default_schedule(1.0)
    assert pts[0] == ParamPoint(-64.0, 0.0) and pts[-1] == ParamPoint(1.0, 1.0)
    assert all(in_parameter_set(p, 1.0) for p in pts)


def test_schedule_leaving_set_is_rejected(p1):
    with pytest.raises(ConfigError):
        continuity_run(p1, [ParamPoint(-1.0, 0.0), ParamPoint(0.5, 0.5)])


# -- single nodes -----------------------------------------------------------------

@pytest.mark.parametrize("s", [-64.0, -1.0, -1.0 / 64, 0.0])
def test_t_zero_nodes_are_exactly_zero(p1, torus, s):
    for model in (p1, torus):
        phi = solve_node(model, s, 0.0)
        assert np.all(phi.samples == 0.0)


def test_zero_s_without_normalization(torus):
    with pytest.raises(NormalizationAmbiguity):
        solve_node(torus, 0.0, 1.0, normalize_zero=False)


def test_calabi_yau_fixed_point():
    F = _torus_F(32)
    model = make_model("torus", 32, mu=0.0, ricci=F)
    phi, info = solve_node(model, 0.0, 1.0, tol=1e-11, return_info=True)
    assert info.residual <= 1e-11
    rho = ma_density(phi).samples
    # the density reproduces exp(F + c) with the normalizing constant c_1
    assert np.max(np.abs(rho - np.exp(model.ricci_reference + c_t(model, 1.0)))) <= 1e-10
    assert abs(float(np.sum(phi.samples * phi.masses))) < 1e-12


def test_newton_tail_is_quadratic():
    model = make_model("torus", 32, mu=0.0, ricci=_torus_F(32))
    _, info = solve_node(model, 0.0, 1.0, tol=1e-13, return_info=True)
    h = np.array(info.history)
    tail = [(a, b) for a, b in zip(h, h[1:]) if a < 1e-3 and b > 1e-14]
    assert tail
    kappa = max(b / a ** 2 for a, b in tail)
    # kappa carries the stencil scale 1/h^2 of the residual operator
    assert np.isfinite(kappa) and kappa < 100.0 / model.h ** 2


def test_negative_s_uniqueness(rng):
    model = make_model("torus", 32, mu=0.0, ricci=_torus_F(32))
    tol = 1e-11
    a = solve_node(model, -1.0, 0.7, init=sample_potential(model, rng), tol=tol)
    b = solve_node(model, -1.0, 0.7, init=sample_potential(model, rng), tol=tol)
    assert np.max(np.abs(a.samples - b.samples)) <= 10 * tol


def test_maximum_principle_bound(rng):
    model = make_model("torus", 32, mu=0.0, ricci=_torus_F(32))
    for s in (-8.0, -1.0, -0.125):
        t = 0.6
        phi = solve_node(model, s, t, tol=1e-11)
        ct = c_t(model, t)
        bound = (-ct - t * model.ricci_reference.min()) / abs(s)
        assert phi.samples.max() <= bound + 1e-11
        assert np.max(np.abs(node_residual(phi, s, t))) <= 1e-11


# -- spectra ---------------------------------------------------------------------

def test_round_sphere_first_eigenvalue(p1):
    lam, vec = first_eigenpair(p1.zeros())
    assert abs(lam - 1.0) < 1e-3
    # the invariant eigenfunction is affine in the moment coordinate
    p = 2.0 / (1 + np.exp(-p1.coords))
    inner = np.abs(p1.coords) < 8
    fit = np.polyfit(p[inner], vec[inner], 1)
    assert np.max(np.abs(np.polyval(fit, p[inner]) - vec[inner])) < 1e-2 * np.abs(vec).max()


def test_torus_first_eigenvalue_fourier_oracle(torus):
    h = torus.h
    assert spectral_gap(torus.zeros()) == pytest.approx((1 - np.cos(2 * np.pi * h)) / h ** 2,
                                                         rel=1e-10)


# -- continuity runs -----------------------------------------------------------

def test_full_run_reaches_einstein_point(ke_trace):
    base, trace = ke_trace
    end = trace.terminal
    assert (end.point.s, end.point.t) == (1.0, 1.0)
    assert all(nd.residual <= 1e-9 for nd in trace.nodes)
    f = ricci_potential_of(end.potential)
    assert np.ptp(f) <= 1e-4
    Phi = end.potential.to_canonical()
    assert d1G(Phi - am(Phi), base.zeros()) <= 1e-3


def test_apriori_diagnostics(ke_trace):
    _, trace = ke_trace
    rep = apriori_report(trace)
    flags = [r["flags"] for r in rep["rows"]]
    assert not any(flags)
    margins = [r["gap_margin"] for r in rep["rows"] if np.isfinite(r["gap_margin"])]
    assert margins and min(margins) > 0
    ok, energies = energy_monotone(trace)
    assert ok and len(energies) == 33
    # sup bound with the constant frozen from this run holds on the run
    frozen = apriori_report(trace, frozen_C=rep["sup_C"])
    assert all(r["sup_ratio"] <= 1 + 1e-12 for r in frozen["rows"] if np.isfinite(r["sup_ratio"]))


def test_consecutive_nodes_move_continuously(ke_trace):
    _, trace = ke_trace
    nodes = trace.nodes
    for a, b in zip(nodes, nodes[1:]):
        if a.point.t == 1 and b.point.t == 1 and a.point.s >= 0:
            step = abs(b.point.s - a.point.s)
            gap = np.max(np.abs(b.potential.samples - a.potential.samples))
            assert gap <= 10.0 * step


def test_zero_trace_has_trivial_slacks(p1):
    trace = continuity_run(p1, [ParamPoint(-4.0, 0.0), ParamPoint(-1.0, 0.0)], with_gap=False)
    rep = apriori_report(trace)
    for row in rep["rows"]:
        assert row["osc"] == 0.0 and row["sup_slack"] >= 0 and not row["flags"]


def _ladder(s_last, t_steps=8):
    return [ParamPoint(-64.0, 0.0), ParamPoint(s_last, 0.0)] + \
        [ParamPoint(s_last, j / t_steps) for j in range(1, t_steps + 1)]


def test_subrectangle_bound_with_frozen_constant(p1):
    model = p1.rebase(legendre_potential(p1, KE_REFERENCE))

    def ratios(s_last):
        run = continuity_run(model, _ladder(s_last), with_gap=False)
        return [max(abs(nd.maxphi), abs(nd.minphi)) / (1 + 1 / abs(nd.point.s)) for nd in run.nodes]

    # fitted once on the power-of-two ladders, then frozen
    C = max(max(ratios(-2.0 ** k)) for k in range(-6, 7))
    for k in range(-6, 6):
        assert max(ratios(-2.0 ** (k + 0.5))) <= C
