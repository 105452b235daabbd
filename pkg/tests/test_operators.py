import math

import numpy as np
import pytest

from hardylab.errors import UsageError
from hardylab.mesh import build_mesh
from hardylab.operators import (OperatorSpec, TimeGrid, assemble, check_duality,
                                step_adjoint, step_forward)


def test_spec_validation():
    with pytest.raises(UsageError):
        OperatorSpec(0.25, "none", 0.5)       # raw mode takes no parameter
    with pytest.raises(UsageError):
        OperatorSpec(0.25, "shift", None)
    with pytest.raises(UsageError):
        OperatorSpec(0.25, "quadratic", -0.1)
    with pytest.raises(UsageError):
        OperatorSpec(0.25, "tikhonov", 1.0)
    assert OperatorSpec(0.25, "none").is_raw


def test_potentials():
    m = build_mesh(99)
    d = m.delta
    assert np.allclose(OperatorSpec(0.3, "none").potential(m), 0.3 / d**2)
    assert np.allclose(OperatorSpec(0.3, "shift", 100.0).potential(m),
                       0.3 / (d + 0.01) ** 2)
    assert np.allclose(OperatorSpec(0.3, "quadratic", 0.05).potential(m),
                       0.3 / (d**2 + 0.0025))


def test_assemble_structure():
    m = build_mesh(50)
    op = assemble(OperatorSpec(0.25, "shift", 51.0), m)
    V = OperatorSpec(0.25, "shift", 51.0).potential(m)
    assert np.allclose(op.diag, 2.0 / m.h**2 - V)
    assert np.allclose(op.off, -1.0 / m.h**2)
    # apply == dense matvec
    v = np.sin(3 * np.pi * m.nodes)
    dense = np.diag(op.diag) + np.diag(op.off, 1) + np.diag(op.off, -1)
    assert np.allclose(op.apply(v), dense @ v)


def test_time_grid():
    tg = TimeGrid(0.5, 4)
    assert tg.dt == pytest.approx(0.125)
    assert np.allclose(tg.times, [0, 0.125, 0.25, 0.375, 0.5])
    with pytest.raises(UsageError):
        TimeGrid(-1.0, 4)
    with pytest.raises(UsageError):
        TimeGrid(1.0, 1)


def test_implicit_euler_exact_on_discrete_eigenvector():
    # u0 = sin(pi x) is an exact eigenvector of the discrete Laplacian, so
    # implicit Euler has the closed form u^k = (1 + dt*lam_h)^{-k} u0
    n = 64
    m = build_mesh(n)
    op = assemble(OperatorSpec(0.0, "none"), m)
    tg = TimeGrid(0.3, 50)
    u0 = np.sin(np.pi * m.nodes)
    lam_h = (2.0 - 2.0 * math.cos(math.pi * m.h)) / m.h**2
    traj = step_forward(op, tg, u0)
    exact = u0 * (1.0 + tg.dt * lam_h) ** (-tg.nt)
    assert np.max(np.abs(traj[-1] - exact)) < 1e-13


def test_crank_nicolson_is_second_order():
    n = 64
    m = build_mesh(n)
    op = assemble(OperatorSpec(0.0, "none"), m)
    u0 = np.sin(np.pi * m.nodes)
    lam_h = (2.0 - 2.0 * math.cos(math.pi * m.h)) / m.h**2
    errs = []
    for nt in (50, 100):
        traj = step_forward(op, TimeGrid(0.3, nt), u0, scheme="cn")
        errs.append(float(np.max(np.abs(traj[-1] - u0 * math.exp(-lam_h * 0.3)))))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_adjoint_is_exact_transpose():
    rng = np.random.default_rng(3)
    n = 64
    m = build_mesh(n)
    op = assemble(OperatorSpec(0.25, "shift", n + 1.0), m)
    tg = TimeGrid(0.5, 40)
    u0 = rng.standard_normal(n)
    vT = rng.standard_normal(n)
    u = step_forward(op, tg, u0)
    v = step_adjoint(op, tg, vT)
    lhs = float(u[-1] @ vT)
    rhs = float(u0 @ v[0])
    assert abs(lhs - rhs) <= 1e-13 * abs(lhs)


def test_duality_identity_100_random_instances():
    # sourced duality at the production resolution; residual is relative to
    # the terminal pairing and must sit at the rounding floor
    rng = np.random.default_rng(7)
    n, nt = 200, 500
    m = build_mesh(n)
    worst = 0.0
    for _ in range(100):
        mu = float(rng.uniform(-1.0, 0.3))
        T = float(rng.uniform(0.3, 1.0))
        op = assemble(OperatorSpec(mu, "shift", n + 1.0), m)
        tg = TimeGrid(T, nt)
        u0 = rng.standard_normal(n)
        vT = rng.standard_normal(n)
        f = rng.standard_normal((nt + 1, n))
        a, b = sorted(rng.uniform(0.1, 0.9, size=2))
        mask = (m.nodes > a) & (m.nodes < b)
        u = step_forward(op, tg, u0, f=f, mask=mask)
        v = step_adjoint(op, tg, vT)
        res = check_duality(u, v, f, u0, vT, mask, tg)
        worst = max(worst, res / (m.h * abs(float(u[nt] @ vT)) + 1.0))
    assert worst <= 1e-11


def test_step_forward_shape_checks():
    m = build_mesh(20)
    op = assemble(OperatorSpec(0.0, "none"), m)
    tg = TimeGrid(0.1, 5)
    with pytest.raises(UsageError):
        step_forward(op, tg, np.zeros(7))
    with pytest.raises(UsageError):
        step_forward(op, tg, np.zeros(20), f=np.zeros((3, 20)))
    with pytest.raises(UsageError):
        step_forward(op, tg, np.zeros(20), f=np.zeros((6, 20)), mask=np.ones(3))
