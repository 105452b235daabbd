"""Symmetric tridiagonal kernels: solves, Sturm-sequence bisection,
inverse iteration.

These are the only linear-algebra primitives the package needs, so they are
written out explicitly; tests cross-check every eigenvalue path against a
dense LAPACK oracle on small meshes.

Conventions: a matrix T is stored as (diag, off) with diag.shape = (n,) and
off.shape = (n-1,) holding the sub/super diagonal (symmetric).
"""

import numpy as np

from .errors import EigsolveError, SolverBreakdown

# relative zero-pivot threshold for the unpivoted Thomas elimination
PIVOT_RTOL = 1e-14


def thomas_solve(diag, off, rhs, step=None):
    """Solve T x = rhs by unpivoted elimination.

    Raises SolverBreakdown when a pivot falls below 1e-14 * max|diag|
    (possible when a weakly regularized potential makes I + dt*A singular).
    `step` is carried into the exception for time-stepping diagnostics.
    """
    n = diag.shape[0]
    tiny = PIVOT_RTOL * np.max(np.abs(diag))
    c = np.empty(n - 1)
    d = np.empty(n)
    piv = diag[0]
    if abs(piv) <= tiny:
        raise SolverBreakdown(f"zero pivot at row 0 (|{piv:.3e}| <= {tiny:.3e})", step=step)
    if n == 1:
        return np.asarray(rhs, dtype=float) / piv
    c[0] = off[0] / piv
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - off[i - 1] * c[i - 1]
        if abs(piv) <= tiny:
            raise SolverBreakdown(
                f"zero pivot at row {i} (|{piv:.3e}| <= {tiny:.3e})", step=step)
        if i < n - 1:
            c[i] = off[i] / piv
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv
    x = d
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return x


class PrefactoredTridiag:
    """LU factors of a tridiagonal matrix, reused across many solves.

    The forward map (I + dt*A) is factored once per time grid; each time step
    is then two O(n) sweeps.  Same breakdown rule as `thomas_solve`.
    """

    def __init__(self, diag, off):
        n = diag.shape[0]
        tiny = PIVOT_RTOL * np.max(np.abs(diag))
        c = np.empty(max(n - 1, 0))
        invpiv = np.empty(n)
        piv = diag[0]
        if abs(piv) <= tiny:
            raise SolverBreakdown(f"zero pivot at row 0 (|{piv:.3e}| <= {tiny:.3e})")
        invpiv[0] = 1.0 / piv
        if n > 1:
            c[0] = off[0] * invpiv[0]
        for i in range(1, n):
            piv = diag[i] - off[i - 1] * c[i - 1]
            if abs(piv) <= tiny:
                raise SolverBreakdown(f"zero pivot at row {i} (|{piv:.3e}| <= {tiny:.3e})")
            invpiv[i] = 1.0 / piv
            if i < n - 1:
                c[i] = off[i] * invpiv[i]
        self.off = off
        self.c = c
        self.invpiv = invpiv
        self.n = n

    def solve(self, rhs):
        n, off, c, invpiv = self.n, self.off, self.c, self.invpiv
        d = np.empty(n)
        d[0] = rhs[0] * invpiv[0]
        for i in range(1, n):
            d[i] = (rhs[i] - off[i - 1] * d[i - 1]) * invpiv[i]
        for i in range(n - 2, -1, -1):
            d[i] -= c[i] * d[i + 1]
        return d


def solve_shifted_pivoting(diag, off, shift, rhs):
    """Solve (T - shift*I) x = rhs with partial pivoting (one fill diagonal).

    Robust even when shift is within roundoff of an eigenvalue, which is the
    normal situation inside inverse iteration.
    """
    n = diag.shape[0]
    # band rows: l (sub), d (main), u1 (super), u2 (fill)
    d = diag - shift
    u1 = np.concatenate([off, [0.0]])
    u2 = np.zeros(n)
    l = off.copy()
    x = np.asarray(rhs, dtype=float).copy()
    dd = d.copy()
    scale = np.max(np.abs(diag)) + abs(shift) + np.max(np.abs(off), initial=0.0)
    eps_floor = np.finfo(float).eps * max(scale, 1.0)
    perm_mult = np.empty(n - 1)
    swapped = np.zeros(n - 1, dtype=bool)
    for i in range(n - 1):
        if abs(l[i]) > abs(dd[i]):
            # swap rows i, i+1
            dd[i], l[i] = l[i], dd[i]
            u1[i], dd[i + 1] = dd[i + 1], u1[i]
            if i + 1 < n - 1:
                u2[i], u1[i + 1] = u1[i + 1], u2[i]
            x[i], x[i + 1] = x[i + 1], x[i]
            swapped[i] = True
        piv = dd[i]
        if abs(piv) < eps_floor:
            piv = eps_floor if piv >= 0 else -eps_floor
            dd[i] = piv
        m = l[i] / piv
        perm_mult[i] = m
        dd[i + 1] -= m * u1[i]
        if i + 1 < n - 1:
            u1[i + 1] -= m * u2[i]
        x[i + 1] -= m * x[i]
    if abs(dd[n - 1]) < eps_floor:
        dd[n - 1] = eps_floor if dd[n - 1] >= 0 else -eps_floor
    # back substitution
    x[n - 1] /= dd[n - 1]
    if n >= 2:
        x[n - 2] = (x[n - 2] - u1[n - 2] * x[n - 1]) / dd[n - 2]
    for i in range(n - 3, -1, -1):
        x[i] = (x[i] - u1[i] * x[i + 1] - u2[i] * x[i + 2]) / dd[i]
    return x


def sturm_count(diag, off, x):
    """Number of eigenvalues of T strictly below x (Sturm/LDL^T sign count).

    A pivot that lands within pivmin of zero is replaced by -pivmin (an
    exact tie counts as crossed); pivmin is sized so off^2/pivmin can never
    overflow, otherwise one infinite pivot silently resets the count.
    """
    n = diag.shape[0]
    offsq = off * off
    pivmin = np.finfo(float).tiny * max(1.0, float(np.max(offsq, initial=0.0)))
    count = 0
    q = diag[0] - x
    for i in range(1, n + 1):
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0:
            count += 1
        if i < n:
            q = diag[i] - x - offsq[i - 1] / q
    return count


def gershgorin_bounds(diag, off):
    r = np.zeros_like(diag)
    r[:-1] += np.abs(off)
    r[1:] += np.abs(off)
    return float(np.min(diag - r)), float(np.max(diag + r))


def bisect_eigenvalue(diag, off, k, rtol=0.0):
    """k-th smallest eigenvalue (k=0 is the ground value) by Sturm bisection.

    Runs the bisection down to floating-point resolution of the Gershgorin
    interval unless rtol asks for an earlier stop.
    """
    n = diag.shape[0]
    if not 0 <= k < n:
        raise EigsolveError(f"eigenvalue index {k} out of range for n={n}")
    lo, hi = gershgorin_bounds(diag, off)
    span = max(hi - lo, 1.0)
    # floating-point floor: counts become unreliable below ~eps*|T|
    floor = np.finfo(float).eps * max(abs(lo), abs(hi), 1.0)
    tol = max(rtol * span, 0.25 * floor)
    while (hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if sturm_count(diag, off, mid) <= k:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def eigenvalue_range(diag, off, k_lo, k_hi, rtol=0.0):
    """Eigenvalues k_lo..k_hi (inclusive) via repeated bisection."""
    return np.array([bisect_eigenvalue(diag, off, k, rtol=rtol)
                     for k in range(k_lo, k_hi + 1)])


def matvec(diag, off, v):
    out = diag * v
    out[:-1] += off * v[1:]
    out[1:] += off * v[:-1]
    return out


def inverse_iteration(diag, off, lam, max_iter=8, seed=0):
    """Eigenvector for an eigenvalue estimate lam, by shifted inverse iteration.

    Returns (vector, refined_lambda, residual_inf) where residual_inf is
    ||T v - lam v||_inf for the *returned* pair.  The refined lambda is the
    Rayleigh quotient of the converged vector.
    """
    n = diag.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    norm_t = np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off), initial=0.0)
    best = None
    for _ in range(max_iter):
        w = solve_shifted_pivoting(diag, off, lam, v)
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0.0:
            raise EigsolveError("inverse iteration produced a non-finite vector")
        v = w / nw
        rq = float(v @ matvec(diag, off, v))
        res = float(np.max(np.abs(matvec(diag, off, v) - rq * v)))
        if best is None or res < best[2]:
            best = (v.copy(), rq, res)
        if res <= 1e-14 * norm_t:
            break
    v, rq, res = best
    if res > 1e-8 * norm_t:
        raise EigsolveError(
            f"inverse iteration stagnated: residual {res:.3e} vs |T| {norm_t:.3e}")
    return v, rq, res


def eigenpair_smallest(diag, off, k=0, seed=0):
    """Convenience: (lambda_k, v_k, residual) with bisection + inverse iteration."""
    lam = bisect_eigenvalue(diag, off, k)
    v, rq, res = inverse_iteration(diag, off, lam, seed=seed)
    return rq, v, res


def scaled_standard_form(diag, off, wdiag):
    """Reduce the pencil (T, diag(wdiag)) to standard form by symmetric scaling.

    T u = lam * W u  with W = diag(wdiag) > 0 becomes  S y = lam y  with
    S = W^{-1/2} T W^{-1/2} (still tridiagonal), y = W^{1/2} u.
    """
    if np.any(wdiag <= 0):
        raise EigsolveError("weight diagonal must be strictly positive")
    s = 1.0 / np.sqrt(wdiag)
    sdiag = diag * s * s
    soff = off * s[:-1] * s[1:]
    return sdiag, soff, s
