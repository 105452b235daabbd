import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardylab.errors import MeshError, RegionError, UsageError
from hardylab.mesh import build_mesh, build_regions, quad_weights


def test_build_mesh_basic():
    m = build_mesh(9)
    assert m.n == 9
    assert m.h == pytest.approx(0.1)
    assert np.allclose(m.nodes, 0.1 * np.arange(1, 10))
    assert np.allclose(m.delta, np.minimum(m.nodes, 1.0 - m.nodes))


def test_build_mesh_rejects_tiny():
    with pytest.raises((MeshError, UsageError)):
        build_mesh(2)


@given(st.integers(min_value=3, max_value=4000))
@settings(max_examples=30, deadline=None)
def test_mesh_invariants(n):
    m = build_mesh(n)
    assert m.h * (n + 1) == pytest.approx(1.0)
    # interior nodes only, delta symmetric and positive
    assert 0.0 < m.nodes[0] and m.nodes[-1] < 1.0
    assert np.all(m.delta > 0)
    assert np.allclose(m.delta, m.delta[::-1])
    assert np.max(m.delta) <= 0.5 + 1e-15


def test_kink_band_brackets_center():
    m = build_mesh(100)
    band = m.kink_band
    assert band.any()
    assert np.all(np.abs(m.nodes[band] - 0.5) < 2 * m.h)
    assert not band[0] and not band[-1]


def test_quad_weights_integrate_linear_hat():
    # sum w_i f_i reproduces the trapezoid integral for boundary-vanishing f
    m = build_mesh(200)
    f = m.nodes * (1.0 - m.nodes)
    val = float(np.sum(quad_weights(m) * f))
    assert val == pytest.approx(1.0 / 6.0, rel=1e-4)


def test_build_regions_default_geometry():
    m = build_mesh(500)
    masks = build_regions(m)
    assert masks.omega.sum() > masks.omega0.sum() > 0
    # omega0 nodes are a subset of omega nodes
    assert not np.any(masks.omega0 & ~masks.omega)
    # boundary layer and omega0 are disjoint
    assert not np.any(masks.boundary_layer & masks.omega0)
    assert masks.sigma_r0.sum() == 2
    i, j = np.nonzero(masks.sigma_r0)[0]
    assert m.nodes[i] == pytest.approx(0.1, abs=m.h)
    assert m.nodes[j] == pytest.approx(0.9, abs=m.h)
    # O = {delta > r0} \ omega0
    assert np.array_equal(masks.O, masks.O_tilde & ~masks.omega0)


def test_build_regions_rejects_bad_nesting():
    m = build_mesh(200)
    with pytest.raises(RegionError):
        build_regions(m, omega=(0.4, 0.6), omega0=(0.3, 0.7))
    with pytest.raises(RegionError):
        build_regions(m, omega=(0.0, 0.6))
    with pytest.raises(RegionError):
        build_regions(m, r0=0.45)  # layer would swallow omega0


def test_build_regions_needs_resolution():
    # 2h gap rule: a 9-node mesh cannot resolve a sliver of omega \ omega0
    m = build_mesh(9)
    with pytest.raises(RegionError):
        build_regions(m, omega=(0.39, 0.61), omega0=(0.4, 0.6))
