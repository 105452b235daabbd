"""Uniform 1-D mesh on Omega = (0,1) and the region bookkeeping.

Interior nodes x_i = i*h, i = 1..n, h = 1/(n+1); homogeneous Dirichlet data
lives implicitly at x=0 and x=1.  delta(x) = min(x, 1-x) is the boundary
distance; its only kink sits at x = 1/2 and pointwise samplers are expected
to skip the band |x - 1/2| < 2h (see `kink_band`).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, RegionError


@dataclass(frozen=True)
class Mesh1D:
    n: int
    h: float
    nodes: np.ndarray        # shape (n,), x_i = i*h
    delta: np.ndarray        # shape (n,), min(x, 1-x)

    def __post_init__(self):
        if self.n < 3:
            raise MeshError(f"need at least 3 interior nodes, got n={self.n}")

    @property
    def kink_band(self):
        """Boolean mask of nodes within 2h of the delta kink at x=1/2."""
        return np.abs(self.nodes - 0.5) < 2.0 * self.h


def build_mesh(n):
    """Uniform mesh with n interior nodes on (0,1)."""
    if n < 3:
        raise MeshError(f"need at least 3 interior nodes, got n={n}")
    h = 1.0 / (n + 1)
    nodes = h * np.arange(1, n + 1)
    delta = np.minimum(nodes, 1.0 - nodes)
    return Mesh1D(n=n, h=h, nodes=nodes, delta=delta)


def quad_weights(mesh):
    """Trapezoid weights for functions vanishing on the boundary: w_i = h.

    With zero boundary values the trapezoid rule on the closed interval
    reduces to h * sum over interior nodes, so int(fg) ~= sum w_i f_i g_i.
    """
    return np.full(mesh.n, mesh.h)


@dataclass(frozen=True)
class RegionMasks:
    """Node index masks for the control/weight geometry.

    omega         : control region (a, b)
    omega0        : inner observation region (a0, b0), strictly inside omega
    boundary_layer: {delta < r0}
    sigma_r0      : the two nodes nearest delta = r0 on each side
    O             : Omega minus closure(omega0) minus closure(boundary layer)
    O_tilde       : {delta > r0}
    """
    r0: float
    omega: np.ndarray
    omega0: np.ndarray
    boundary_layer: np.ndarray
    sigma_r0: np.ndarray
    O: np.ndarray = field(repr=False, default=None)
    O_tilde: np.ndarray = field(repr=False, default=None)


def build_regions(mesh, omega=(0.3, 0.7), omega0=(0.4, 0.6), r0=0.1):
    """Build all region masks, enforcing the nesting rules.

    Requires omega0 strictly inside omega (gap >= 2h on both ends) and the
    boundary layer {delta < r0} disjoint from closure(omega0).
    """
    a, b = float(omega[0]), float(omega[1])
    a0, b0 = float(omega0[0]), float(omega0[1])
    h = mesh.h
    if not (0.0 < a < b < 1.0):
        raise RegionError(f"omega=({a},{b}) must satisfy 0 < a < b < 1")
    if not (a < a0 < b0 < b):
        raise RegionError(f"omega0=({a0},{b0}) must nest strictly inside omega=({a},{b})")
    if (a0 - a) < 2 * h or (b - b0) < 2 * h:
        raise RegionError(
            f"omega0 endpoint gaps ({a0 - a:.3g}, {b - b0:.3g}) below 2h = {2 * h:.3g}")
    if not (0.0 < r0 < 0.5):
        raise RegionError(f"r0={r0} must lie in (0, 1/2)")
    if r0 >= a0 or r0 >= 1.0 - b0:
        raise RegionError(
            f"boundary layer r0={r0} overlaps closure(omega0)=({a0},{b0})")

    x, d = mesh.nodes, mesh.delta
    m_omega = (x > a) & (x < b)
    m_omega0 = (x > a0) & (x < b0)
    m_layer = d < r0
    m_otilde = d > r0

    # the two nodes nearest delta = r0, one on each side of the interval
    left = np.argmin(np.abs(x - r0))
    right = np.argmin(np.abs(x - (1.0 - r0)))
    m_sigma = np.zeros(mesh.n, dtype=bool)
    m_sigma[left] = True
    m_sigma[right] = True

    m_O = m_otilde & ~m_omega0

    if not m_omega0.any():
        raise RegionError("omega0 contains no mesh nodes; refine the mesh")
    if (m_layer & m_omega0).any():
        raise RegionError("boundary layer intersects omega0")

    return RegionMasks(r0=r0, omega=m_omega, omega0=m_omega0,
                       boundary_layer=m_layer, sigma_r0=m_sigma,
                       O=m_O, O_tilde=m_otilde)
