import math

import numpy as np
import pytest

from hardylab.errors import UsageError
from hardylab.mesh import build_mesh
from hardylab.spectral import blowup_sweep, ground_state

MESH = build_mesh(2000)
EPS_SWEEP = (0.1, 0.05, 0.025, 0.0125)

# frozen mu = 0.5 ladder at n = 2000 (quadratic regularization)
LAM0_05 = (4.465031808754222, 2.7778657768032633, 1.1148307148991408,
           -0.8291409894500477)


def test_free_laplacian_ground_state_is_pi_squared():
    p = ground_state(MESH, 0.0, 0.1)
    assert abs(p.lambda0 - math.pi**2) / math.pi**2 < 1e-3
    assert p.residual <= 1e-8
    # eigenfunction matches sin(pi x) after sign/scale alignment
    ref = np.sin(np.pi * MESH.nodes)
    ref /= math.sqrt(MESH.h * float(ref @ ref))
    assert min(np.max(np.abs(p.phi0 - ref)), np.max(np.abs(p.phi0 + ref))) < 1e-3


def test_supercritical_eigenvalue_ladder_frozen():
    for eps, ref in zip(EPS_SWEEP, LAM0_05):
        p = ground_state(MESH, 0.5, eps)
        assert p.lambda0 == pytest.approx(ref, rel=1e-10, abs=1e-10)
        assert p.lambda1 > p.lambda0
        assert p.residual <= 1e-8


def test_ground_state_localizes_toward_boundary():
    # exterior mass decreases as the well deepens
    l2 = []
    h1 = []
    for eps in EPS_SWEEP:
        p = ground_state(MESH, 0.5, eps)
        l2.append(p.loc_l2(0.2))
        h1.append(p.loc_h1(0.2))
    assert l2[0] == pytest.approx(0.9342998876270725, rel=1e-9)
    assert l2[-1] == pytest.approx(0.8736597922508648, rel=1e-9)
    assert h1[0] == pytest.approx(1.6190304680759642, rel=1e-9)
    assert h1[-1] == pytest.approx(0.9870803808229435, rel=1e-9)
    assert all(a > b for a, b in zip(l2, l2[1:]))
    assert all(a > b for a, b in zip(h1, h1[1:]))


def test_near_critical_gap_stays_open():
    p = ground_state(MESH, 0.25, 0.01)
    assert p.lambda0 == pytest.approx(5.598616282758149, rel=1e-10)
    assert p.gap == pytest.approx(24.056185612405066, rel=1e-9)


def test_blowup_sweep_classifies_regimes():
    sw = blowup_sweep(MESH, 0.5, EPS_SWEEP)
    assert sw.regime == "supercritical"
    assert sw.variation() == pytest.approx(2.34456109284693, rel=1e-9)
    lams = [p.lambda0 for p in sw.points]
    assert all(a > b for a, b in zip(lams, lams[1:]))
    assert lams[-1] < 0

    sw2 = blowup_sweep(MESH, 0.2, EPS_SWEEP)
    assert sw2.regime == "subcritical"
    assert sw2.variation() == pytest.approx(0.07825956518364278, rel=1e-9)
    assert sw2.variation() < 0.10

    sw3 = blowup_sweep(MESH, 0.25, EPS_SWEEP)
    assert sw3.regime == "critical"


def test_ground_state_rejects_nonpositive_eps():
    with pytest.raises(UsageError):
        ground_state(build_mesh(20), 0.5, 0.0)
    with pytest.raises(UsageError):
        ground_state(build_mesh(20), 0.5, -0.1)
