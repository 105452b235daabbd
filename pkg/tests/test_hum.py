import math

import numpy as np
import pytest

from hardylab.errors import UsageError
from hardylab.hum import (check_gramian_symmetry, estimate_CT, gramian_apply,
                          gramian_energy, solve_hum)
from hardylab.mesh import build_mesh
from hardylab.operators import OperatorSpec, TimeGrid, assemble

N, NT, T = 200, 400, 0.5
MESH = build_mesh(N)
TG = TimeGrid(T, NT)
MASK = (MESH.nodes > 0.3) & (MESH.nodes < 0.7)
U0 = np.sin(np.pi * MESH.nodes)


def op_for(mu):
    return OperatorSpec(mu, "shift", N + 1.0)


def test_gramian_is_symmetric_and_nonnegative():
    op = assemble(op_for(0.25), MESH)
    sym = check_gramian_symmetry(op, TG, MASK)
    assert sym <= 1e-11
    rng = np.random.default_rng(1)
    for _ in range(5):
        v = rng.standard_normal(N)
        assert gramian_energy(op, TG, MASK, v) >= 0.0
    # energy is the quadratic form of the apply
    v = rng.standard_normal(N)
    e = gramian_energy(op, TG, MASK, v)
    assert e == pytest.approx(MESH.h * float(v @ gramian_apply(op, TG, MASK, v)),
                              rel=1e-12)


def test_hum_drives_critical_state_to_zero():
    op = assemble(op_for(0.25), MESH)
    res = solve_hum(op, TG, MASK, U0, penalty=1e-8, tol=1e-10)
    assert res.converged
    assert res.cg_iters == 221
    assert res.final_norm == pytest.approx(1.756671323507898e-06, rel=1e-6)
    u0_norm = math.sqrt(MESH.h * float(U0 @ U0))
    assert res.final_norm / u0_norm <= 1e-3
    # the control genuinely beats free decay
    assert res.free_final_norm == pytest.approx(0.0359882637638017, rel=1e-9)
    assert res.final_norm < 1e-3 * res.free_final_norm
    assert res.superposition_residual <= 1e-12
    assert res.el_residual <= 1e-8
    assert res.control_cost > 0


def test_hum_negative_coupling_is_easier():
    op = assemble(op_for(-1.0), MESH)
    res = solve_hum(op, TG, MASK, U0, penalty=1e-8, tol=1e-10)
    assert res.converged
    assert res.final_norm == pytest.approx(4.445546664068098e-09, rel=1e-6)
    assert res.control_cost == pytest.approx(7.4018521814774e-08, rel=1e-6)


def test_penalty_controls_final_norm():
    op = assemble(op_for(0.25), MESH)
    loose = solve_hum(op, TG, MASK, U0, penalty=1e-6, tol=1e-10)
    tight = solve_hum(op, TG, MASK, U0, penalty=1e-8, tol=1e-10)
    assert loose.final_norm == pytest.approx(2.181023895020199e-05, rel=1e-6)
    assert loose.final_norm / tight.final_norm >= 5.0


def test_control_is_supported_in_omega():
    op = assemble(op_for(0.1), MESH)
    res = solve_hum(op, TG, MASK, U0, penalty=1e-8, tol=1e-10)
    assert np.all(res.control[:, ~MASK] == 0.0)
    assert np.any(res.control[:, MASK] != 0.0)


def test_observability_estimate_grows_with_reg_strength():
    mesh = build_mesh(200)
    tg = TimeGrid(1.0, 400)
    mask = (mesh.nodes > 0.3) & (mesh.nodes < 0.7)
    ests = []
    for m in (10, 40):
        op = assemble(OperatorSpec(0.3, "shift", float(m)), mesh)
        ests.append(estimate_CT(op, tg, mask, iters=10).C_T_est)
    assert ests[0] == pytest.approx(3.1745994496766426e-06, rel=1e-9)
    assert ests[1] == pytest.approx(5.6023835900657146e-05, rel=1e-9)
    assert ests[1] / ests[0] >= 10.0


def test_estimate_is_certified_lower_bound():
    # any single Rayleigh ratio is itself a lower bound; more iterations
    # can only improve the estimate
    mesh = build_mesh(100)
    tg = TimeGrid(0.5, 100)
    mask = (mesh.nodes > 0.3) & (mesh.nodes < 0.7)
    op = assemble(OperatorSpec(0.2, "shift", 20.0), mesh)
    e1 = estimate_CT(op, tg, mask, iters=2).C_T_est
    e2 = estimate_CT(op, tg, mask, iters=12).C_T_est
    assert e2 >= e1 > 0


def test_empty_mask_is_rejected():
    op = assemble(op_for(0.0), MESH)
    with pytest.raises(UsageError):
        estimate_CT(op, TG, np.zeros(N, dtype=bool))
    with pytest.raises(UsageError):
        solve_hum(op, TG, np.zeros(N, dtype=bool), U0)
