import math

import numpy as np
import pytest

from hardylab.errors import UsageError
from hardylab.mesh import build_mesh
from hardylab.stabilization import (CostProblem, analytic_lower_bound,
                                    minimize_cost, verify_duhamel)


def test_lower_bound_examples():
    # control-energy branch wins at lambda0 = -10
    b = analytic_lower_bound(-10.0, math.sqrt(0.1), 1.0)
    assert b == pytest.approx(25.0, rel=1e-8)
    # coasting branch: tiny window norm makes holding the mode expensive
    b2 = analytic_lower_bound(-1.0, 1e-6, 1.0)
    assert b2 == pytest.approx(math.expm1(2.0) / 16.0, rel=1e-12)


def test_lower_bound_edge_cases():
    assert analytic_lower_bound(0.5, 1.0, 1.0) is None
    assert analytic_lower_bound(0.0, 1.0, 1.0) is None
    with pytest.raises(UsageError):
        analytic_lower_bound(-1.0, 1.0, -2.0)
    with pytest.raises(UsageError):
        analytic_lower_bound(-1.0, 0.0, 1.0)
    # extreme instability must not overflow
    assert analytic_lower_bound(-1e4, 1.0, 1.0) > 0


def narrow_mask(mesh):
    return (mesh.nodes > 0.46) & (mesh.nodes < 0.54)


def test_minimize_cost_stable_well():
    mesh = build_mesh(1000)
    p = CostProblem(mesh=mesh, mu=0.5, eps=0.1, T=3.0, nt=600, mask=narrow_mask(mesh))
    r = minimize_cost(p)
    assert r.converged
    assert r.J_opt == pytest.approx(0.056521520660240215, rel=1e-9)
    assert r.analytic_lower is None          # lambda0 > 0, nothing to hold down
    assert verify_duhamel(p, r) <= 1e-9


def test_minimize_cost_unstable_well_respects_lower_bound():
    mesh = build_mesh(1000)
    p = CostProblem(mesh=mesh, mu=0.5, eps=0.0125, T=3.0, nt=600, mask=narrow_mask(mesh))
    r = minimize_cost(p)
    assert r.converged
    assert r.lambda0 < 0
    assert r.J_opt == pytest.approx(7.001787018025789, rel=1e-9)
    assert r.analytic_lower == pytest.approx(1.9021011662426024, rel=1e-9)
    assert r.J_opt >= r.analytic_lower - 1e-6 * r.J_opt
    assert verify_duhamel(p, r) <= 1e-9


def test_cost_diverges_as_well_deepens():
    mesh = build_mesh(1000)
    js = []
    for eps in (0.1, 0.0125):
        p = CostProblem(mesh=mesh, mu=0.5, eps=eps, T=3.0, nt=600,
                        mask=narrow_mask(mesh))
        js.append(minimize_cost(p).J_opt)
    assert js[1] / js[0] > 100.0


def test_zero_control_is_feasible_for_stable_dynamics():
    # mu = 0: the free decay cost 0.5 * int ||u||^2 has a closed form, and
    # the optimizer must do at least as well as the zero control
    mesh = build_mesh(400)
    p = CostProblem(mesh=mesh, mu=0.0, eps=0.1, T=0.5, nt=8000)
    r = minimize_cost(p)
    j_free_continuum = -math.expm1(-2.0 * math.pi**2 * 0.5) / (4.0 * math.pi**2)
    j_free_discrete = -math.expm1(-2.0 * r.lambda0 * 0.5) / (4.0 * r.lambda0)
    assert r.J_opt == pytest.approx(0.025291521651948964, rel=1e-9)
    assert r.J_opt <= j_free_discrete
    assert r.J_opt <= j_free_continuum


def test_duhamel_residual_is_small_on_history():
    mesh = build_mesh(200)
    p = CostProblem(mesh=mesh, mu=0.25, eps=0.05, T=0.5, nt=200)
    r = minimize_cost(p)
    assert r.converged
    assert verify_duhamel(p, r) <= 1e-10
    # J history is monotone nonincreasing (conjugate gradient on a quadratic)
    hist = r.J_history
    assert all(a >= b - 1e-12 for a, b in zip(hist, hist[1:]))
