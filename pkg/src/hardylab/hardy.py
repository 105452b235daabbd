"""Discrete certificates for the weighted Hardy inequality suite.

Every inequality is encoded as a generalized eigenvalue problem
left-form >= lambda * right-form on interior-node vectors; the right-hand
form is always diagonal, so symmetric scaling turns each pencil into a
standard symmetric tridiagonal problem that the Sturm bisection in
`tridiag` handles.  The module reports mesh-level certificates, never
claims about the continuum constants.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericalError, PropertyViolation, UsageError
from .mesh import build_mesh
from .tridiag import bisect_eigenvalue, scaled_standard_form

MU_STAR = 0.25      # critical Hardy coefficient for the boundary distance
R_OMEGA = 1.0       # diameter of (0,1)

# dyadic search grids
A1_GRID = [2.0**k for k in range(4, -9, -1)]
A5_GRID = [2.0**(-k) for k in range(0, 11)]


@dataclass(frozen=True)
class QuadForms:
    """Quadrature matrices for the five integrals in the inequality suite.

    K      : int |u'|^2            tridiagonal (kdiag, koff)
    Wg2    : int delta^{2-gamma} |u'|^2, midpoint delta on each cell
    M      : int u^2               diagonal
    W2     : int u^2 / delta^2     diagonal
    Wgamma : int u^2 / delta^gamma diagonal
    """
    gamma: float
    h: float
    kdiag: np.ndarray
    koff: np.ndarray
    g2diag: np.ndarray
    g2off: np.ndarray
    mdiag: np.ndarray
    w2diag: np.ndarray
    wgdiag: np.ndarray

    def K(self, u):
        return _form_value(self.kdiag, self.koff, u)

    def Wg2(self, u):
        return _form_value(self.g2diag, self.g2off, u)

    def M(self, u):
        return float(np.dot(self.mdiag * u, u))

    def W2(self, u):
        return float(np.dot(self.w2diag * u, u))

    def Wgamma(self, u):
        return float(np.dot(self.wgdiag * u, u))

    def combo(self, cK=0.0, cW2=0.0, cWgamma=0.0, cWg2=0.0, cM=0.0):
        """Tridiagonal (diag, off) for cK*K + cW2*W2 + ... as a matrix."""
        diag = (cK * self.kdiag + cWg2 * self.g2diag
                + cW2 * self.w2diag + cWgamma * self.wgdiag + cM * self.mdiag)
        off = cK * self.koff + cWg2 * self.g2off
        return diag, off


def _form_value(diag, off, u):
    v = diag * u * u
    return float(np.sum(v) + 2.0 * np.dot(off, u[:-1] * u[1:]))


def build_forms(mesh, gamma):
    """Assemble all five quadrature forms on one mesh."""
    if not (0.0 <= gamma < 2.0):
        raise UsageError(f"gamma must lie in [0, 2), got {gamma}")
    h, n = mesh.h, mesh.n
    d = mesh.delta
    # stiffness: (1/h) sum (u_{i+1}-u_i)^2 over the n+1 cells, u=0 at ends
    kdiag = np.full(n, 2.0 / h)
    koff = np.full(n - 1, -1.0 / h)
    # weighted stiffness: midpoint delta per cell, boundary cells included
    xm = h * (np.arange(n + 1) + 0.5)
    dm = np.minimum(xm, 1.0 - xm)
    w = dm ** (2.0 - gamma) / h
    g2diag = w[:-1] + w[1:]
    g2off = -w[1:-1]
    mdiag = np.full(n, h)
    w2diag = h / d**2
    wgdiag = h / d**gamma
    return QuadForms(gamma=gamma, h=h, kdiag=kdiag, koff=koff,
                     g2diag=g2diag, g2off=g2off, mdiag=mdiag,
                     w2diag=w2diag, wgdiag=wgdiag)


def lambda_min_pencil(ldiag, loff, wdiag):
    """Smallest lambda with  L u = lambda W u,  W diagonal positive."""
    sdiag, soff, _ = scaled_standard_form(ldiag, loff, wdiag)
    return bisect_eigenvalue(sdiag, soff, 0)


def rayleigh_hardy(mesh):
    """min over u of int|u'|^2 / int u^2/delta^2 on the mesh.

    Decreases toward the critical value 1/4 under refinement (never
    reaching it: the infimum is not attained).
    """
    if mesh.n < 10:
        raise UsageError(f"rayleigh_hardy needs n >= 10, got n={mesh.n}")
    forms = build_forms(mesh, 1.0)  # gamma irrelevant here
    return lambda_min_pencil(forms.kdiag, forms.koff, forms.w2diag)


def find_A2(mesh, mu, gamma, A1_candidate):
    """Smallest A2 >= 0 making  A1*Wgamma + mu*W2 <= K + A2*M  on the mesh."""
    if not A1_candidate > 0:
        raise UsageError(f"A1 candidate must be positive, got {A1_candidate}")
    forms = build_forms(mesh, gamma)
    ldiag, loff = forms.combo(cK=1.0, cW2=-mu, cWgamma=-A1_candidate)
    lam = lambda_min_pencil(ldiag, loff, forms.mdiag)
    return max(0.0, -lam)


def find_A3(mesh, mu, gamma):
    """Smallest A3 >= 0 with  Wg2 <= R^{2-gamma} (K - mu*W2) + A3*M,  R = 1."""
    forms = build_forms(mesh, gamma)
    r_pow = R_OMEGA ** (2.0 - gamma)
    ldiag, loff = forms.combo(cK=r_pow, cW2=-r_pow * mu, cWg2=-1.0)
    lam = lambda_min_pencil(ldiag, loff, forms.mdiag)
    return max(0.0, -lam)


def _a4_for(forms, mu, A1, A5):
    ldiag, loff = forms.combo(cK=1.0, cW2=-mu, cWg2=-A5, cWgamma=-A5 * A1)
    lam = lambda_min_pencil(ldiag, loff, forms.mdiag)
    return max(0.0, -lam)


def _stable(coarse, fine, floor=1e-6):
    if max(coarse, fine) <= floor:
        return True
    return abs(fine - coarse) < 0.2 * max(coarse, fine)


def find_A4_A5(mesh, mu, gamma, A1):
    """First A5 on the descending dyadic grid whose A4 is refinement-stable.

    A4(A5) is the smallest constant closing
        K - mu*W2 + A4*M >= A5 * (Wg2 + A1*Wgamma)
    on the mesh; stability is judged against the doubled mesh.  Divergence
    across the whole grid (the supercritical signature) raises
    InfeasibleError carrying the sweep.
    """
    forms = build_forms(mesh, gamma)
    fine_mesh = build_mesh(2 * mesh.n)
    fine_forms = build_forms(fine_mesh, gamma)
    tried = []
    for A5 in A5_GRID:
        a4c = _a4_for(forms, mu, A1, A5)
        a4f = _a4_for(fine_forms, mu, A1, A5)
        tried.append((A5, a4c, a4f))
        if _stable(a4c, a4f):
            return a4f, A5
    raise InfeasibleError(
        f"no refinement-stable (A4, A5) pair for mu={mu}, gamma={gamma} "
        f"(supercritical behaviour)", tried=tried)


def find_A1(mesh, mu, gamma):
    """Operative A1: largest dyadic value whose A2 is refinement-stable."""
    fine_mesh = build_mesh(2 * mesh.n)
    tried = []
    for A1 in A1_GRID:
        a2c = find_A2(mesh, mu, gamma, A1)
        a2f = find_A2(fine_mesh, mu, gamma, A1)
        tried.append((A1, a2c, a2f))
        if _stable(a2c, a2f):
            return A1
    raise InfeasibleError(
        f"no dyadic A1 gives a refinement-stable A2 for mu={mu}, gamma={gamma}",
        tried=tried)


def compute_A0_gamma(mesh, gamma, A1, tol_rel=1e-10):
    """Smallest A >= 0 with  K - mu* W2 + A*M >= A1*Wgamma  (bisection on A).

    The defining pencil uses the critical coefficient mu* = 1/4 regardless
    of the run's mu; tolerance on the eigenvalue test is tol_rel * scale.
    """
    if not A1 > 0:
        raise UsageError(f"A1 must be positive, got {A1}")
    forms = build_forms(mesh, gamma)

    def lam_min(A):
        ldiag, loff = forms.combo(cK=1.0, cW2=-MU_STAR, cWgamma=-A1, cM=A)
        return lambda_min_pencil(ldiag, loff, forms.mdiag)

    base_diag, _ = forms.combo(cK=1.0, cW2=-MU_STAR, cWgamma=-A1)
    scale = float(np.max(np.abs(base_diag))) / forms.h  # pencil scale
    tol = tol_rel * max(scale, 1.0)

    if lam_min(0.0) >= -tol:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        if lam_min(hi) >= -tol:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError(
            f"A0 bracket failure: lambda_min still below -{tol:.3e} on "
            f"[{lo:.3e}, {hi:.3e}]")
    while hi - lo > 1e-10 * max(1.0, hi) + 1e-14:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if lam_min(mid) >= -tol:
            hi = mid
        else:
            lo = mid
    return hi


def check_norm_equivalence(mesh, mu, gamma, A0, sample_count, A1=None, seed=0):
    """Sample the two-sided bound on Phi(u) = K - mu*W2 + A0*M.

    lower: (1 - mu+/mu*) (K + A0*M)(u)  [+ (mu+/mu*) A1 Wgamma(u) if A1 given]
    upper: (1 + mu-/mu*) (K + A0*M)(u)
    Returns (min lower slack, min upper slack), both relative to (K+A0*M)(u).
    Raises PropertyViolation if either slack dips below -1e-9.
    """
    if mu > MU_STAR:
        raise UsageError(f"norm equivalence needs mu <= {MU_STAR}, got {mu}")
    forms = build_forms(mesh, gamma)
    mup = max(0.0, mu)
    mum = max(0.0, -mu)
    rng = np.random.default_rng(seed)
    worst_lo = np.inf
    worst_hi = np.inf
    for _ in range(sample_count):
        u = rng.standard_normal(mesh.n)
        base = forms.K(u) + A0 * forms.M(u)
        phi = forms.K(u) - mu * forms.W2(u) + A0 * forms.M(u)
        lower = (1.0 - mup / MU_STAR) * base
        if A1 is not None:
            lower += (mup / MU_STAR) * A1 * forms.Wgamma(u)
        upper = (1.0 + mum / MU_STAR) * base
        worst_lo = min(worst_lo, (phi - lower) / base)
        worst_hi = min(worst_hi, (upper - phi) / base)
    if worst_lo < -1e-9 or worst_hi < -1e-9:
        raise PropertyViolation(
            f"norm equivalence violated: slacks ({worst_lo:.3e}, {worst_hi:.3e})")
    return worst_lo, worst_hi


@dataclass(frozen=True)
class HardyReport:
    mu: float
    gamma: float
    mesh_n: int
    rayleigh_min: float
    A1: float
    A2: float
    A3: float
    A4: float
    A5: float
    A0_gamma: float
    converged: bool


def certify(mesh, mu, gamma):
    """Full constant sweep on one mesh: the report row for the CSV output."""
    ray = rayleigh_hardy(mesh)
    A1 = find_A1(mesh, mu, gamma)
    A2 = find_A2(mesh, mu, gamma, A1)
    A3 = find_A3(mesh, mu, gamma)
    A4, A5 = find_A4_A5(mesh, mu, gamma, A1)
    A0 = compute_A0_gamma(mesh, gamma, A1)
    return HardyReport(mu=mu, gamma=gamma, mesh_n=mesh.n, rayleigh_min=ray,
                       A1=A1, A2=A2, A3=A3, A4=A4, A5=A5, A0_gamma=A0,
                       converged=True)
