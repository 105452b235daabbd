import numpy as np
import pytest

from hardylab.errors import UsageError
from hardylab.hardy import (build_forms, certify, check_norm_equivalence,
                            compute_A0_gamma, find_A1, find_A2, find_A3,
                            find_A4_A5, rayleigh_hardy)
from hardylab.mesh import build_mesh

MESH = build_mesh(500)


def test_rayleigh_frozen_and_above_quarter():
    assert rayleigh_hardy(MESH) == pytest.approx(0.3521402157905083, rel=1e-12)


def test_rayleigh_decreases_under_refinement():
    vals = [rayleigh_hardy(build_mesh(n)) for n in (100, 200, 400)]
    assert vals[0] == pytest.approx(0.401438296174463, rel=1e-12)
    assert vals[0] > vals[1] > vals[2] > 0.25


def test_rayleigh_is_a_true_minimum():
    # any trial function gives a quotient at or above the certified minimum
    forms = build_forms(MESH, 1.5)
    lam = rayleigh_hardy(MESH)
    rng = np.random.default_rng(5)
    for _ in range(25):
        u = rng.standard_normal(MESH.n)
        assert forms.K(u) / forms.W2(u) >= lam - 1e-9


def test_constants_at_critical_coupling():
    A1 = find_A1(MESH, 0.25, 1.5)
    assert A1 == 1.0
    assert find_A2(MESH, 0.25, 1.5, A1) == pytest.approx(8.78771633901062, rel=1e-10)
    A4, A5 = find_A4_A5(MESH, 0.25, 1.5, A1)
    assert A4 == pytest.approx(16.443829188508317, rel=1e-10)
    assert A5 == 1.0
    assert compute_A0_gamma(MESH, 1.5, A1) == pytest.approx(8.78766613965854, rel=1e-8)


def test_A3_vanishes_when_weights_compare():
    # delta^{2-gamma} <= 1 makes the compared form PSD outright
    assert find_A3(MESH, 0.0, 1.5) == 0.0
    assert find_A3(MESH, 0.25, 1.5) == 0.0


def test_A3_positive_near_gamma_two():
    assert find_A3(MESH, 0.25, 1.9) == pytest.approx(147.40107956015427, rel=1e-10)


def test_norm_equivalence_two_sided():
    A1 = find_A1(MESH, 0.25, 1.5)
    A0 = compute_A0_gamma(MESH, 1.5, A1)
    lo, hi = check_norm_equivalence(MESH, 0.25, 1.5, A0, 2000, A1=A1)
    assert lo >= -1e-9 and hi >= -1e-9
    # mu < 0: the middle term flips to the upper side
    lo2, hi2 = check_norm_equivalence(MESH, -0.5, 1.5, A0, 2000)
    assert lo2 >= -1e-9 and hi2 >= -1e-9


def test_norm_equivalence_rejects_supercritical():
    with pytest.raises(UsageError):
        check_norm_equivalence(MESH, 0.3, 1.5, 1.0, 10)


def test_norm_equivalence_frozen_slacks():
    # the certified A0 sits at the boundary of feasibility: the upper slack
    # is near-tight, the lower one is slack by construction at mu = mu*
    A1 = find_A1(MESH, 0.25, 1.5)
    A0 = compute_A0_gamma(MESH, 1.5, A1)
    lo, hi = check_norm_equivalence(MESH, 0.25, 1.5, A0, 2000, A1=A1)
    assert lo == pytest.approx(0.9952449898132332, rel=1e-9)
    assert hi == pytest.approx(0.00011202196904714643, rel=1e-6)


def test_certify_report_is_consistent():
    rep = certify(MESH, 0.25, 1.5)
    assert rep.mesh_n == 500
    assert rep.rayleigh_min == pytest.approx(0.3521402157905083, rel=1e-12)
    assert rep.A1 == 1.0 and rep.A5 == 1.0
    assert rep.converged
