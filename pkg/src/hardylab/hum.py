"""Penalized HUM null control and observability-constant estimation.

The control is constructed the classical way: minimize over terminal adjoint
data vT the functional

    J(vT) = 1/2 <Lambda vT, vT> + <u_free(T), vT> + penalty/2 ||vT||^2,

where Lambda is the controllability Gramian of the implicit-Euler pair
(forward with source on omega, adjoint plain backward).  The minimizer
satisfies (Lambda + penalty I) vT = -u_free(T) and the control is the
adjoint solution restricted to omega.  With the literal-transpose adjoint
the discrete duality identity is exact, so

    <Lambda vT, vT>_h = dt * h * sum_k |v^k on omega|^2

holds to machine precision and Lambda is symmetric PSD by construction.

estimate_CT produces a lower estimate of the observability constant
C_T = sup ||v(0)||^2 / int_0^T int_omega v^2 by evaluating that Rayleigh
ratio along a power-type iteration driven by the squared backward
propagator; every evaluated ratio is a valid lower bound and the iteration
climbs toward the badly observable modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError
from .operators import TimeGrid, TimeStepper, TridiagOperator


@dataclass(frozen=True)
class HumResult:
    vT_star: np.ndarray
    final_norm: float
    free_final_norm: float
    control_cost: float
    el_residual: float
    gram_min_eig_est: float
    superposition_residual: float
    cg_iters: int
    converged: bool
    u_traj: np.ndarray
    control: np.ndarray


@dataclass(frozen=True)
class ObservabilityEstimate:
    C_T_est: float
    iterations: int
    witness: np.ndarray


def _check_mask(mask, n):
    mask = np.asarray(mask)
    if mask.dtype != np.bool_ or mask.shape != (n,):
        raise UsageError("mask must be a boolean array over the mesh nodes")
    return mask


def _adjoint_on_omega(stepper, nt, mask, vT):
    """Backward sweep; returns (v restricted to omega for k=0..nt-1, v^0)."""
    V = np.empty((nt, int(mask.sum())))
    v = np.asarray(vT, dtype=float).copy()
    for k in range(nt - 1, -1, -1):
        v = stepper.solve(v)
        V[k] = v[mask]
    return V, v


def _forward_from_zero(stepper, nt, mask, V, dt, n):
    """Controlled state from u0 = 0 with f^{k+1} = v^k on omega."""
    u = np.zeros(n)
    for k in range(nt):
        rhs = u.copy()
        rhs[mask] += dt * V[k]
        u = stepper.solve(rhs)
    return u


def gramian_apply(op: TridiagOperator, tg: TimeGrid, mask, vT):
    """Apply the controllability Gramian: vT -> y(T).

    y is the state controlled from zero by f = (adjoint of vT) on omega.
    """
    mask = _check_mask(mask, op.n)
    stepper = TimeStepper(op, tg)
    V, _ = _adjoint_on_omega(stepper, tg.nt, mask, vT)
    return _forward_from_zero(stepper, tg.nt, mask, V, tg.dt, op.n)


def gramian_energy(op: TridiagOperator, tg: TimeGrid, mask, vT):
    """<Lambda vT, vT>_h, evaluated as dt*h*sum_k |v^k|_omega^2 (exact)."""
    mask = _check_mask(mask, op.n)
    stepper = TimeStepper(op, tg)
    V, _ = _adjoint_on_omega(stepper, tg.nt, mask, vT)
    return tg.dt * op.h * float(np.sum(V * V))


def check_gramian_symmetry(op, tg, mask, ntrials=5, seed=0):
    """Max relative asymmetry |<La,b> - <a,Lb>| over random pairs."""
    mask = _check_mask(mask, op.n)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(ntrials):
        a = rng.standard_normal(op.n)
        b = rng.standard_normal(op.n)
        La = gramian_apply(op, tg, mask, a)
        Lb = gramian_apply(op, tg, mask, b)
        num = abs(op.h * float(a @ Lb) - op.h * float(b @ La))
        den = max(op.h * abs(float(a @ La)), op.h * abs(float(b @ Lb)), 1e-300)
        worst = max(worst, num / den)
    return worst


def solve_hum(op, tg, mask, u0, penalty=1e-8, tol=1e-10, max_iter=500):
    """Penalized HUM control of u0 to (near) zero at time T.

    Conjugate gradient on (Lambda + penalty I) vT = -u_free(T); each
    iteration is one adjoint and one forward sweep.  The returned
    final_norm is measured on an actual controlled forward run, not
    inferred from the optimality system.
    """
    mask = _check_mask(mask, op.n)
    if not mask.any():
        raise UsageError("HUM control region omega is empty")
    if penalty <= 0:
        raise UsageError(f"penalty must be positive, got {penalty}")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.n,):
        raise UsageError(f"u0 must have shape ({op.n},), got {u0.shape}")

    stepper = TimeStepper(op, tg)
    nt, n, dt, h = tg.nt, op.n, tg.dt, op.h

    # free trajectory endpoint
    u = u0.copy()
    for _ in range(nt):
        u = stepper.solve(u)
    u_free_T = u

    def apply_A(x):
        return gramian_apply(op, tg, mask, x) + penalty * x

    rhs = -u_free_T
    vT = np.zeros(n)
    r = rhs.copy()
    rs = float(r @ r)
    r0n = math.sqrt(rs)
    d = r.copy()
    iters = 0
    converged = r0n == 0.0
    gram_min = math.inf
    for _ in range(max_iter):
        if math.sqrt(rs) <= tol * max(r0n, 1e-300):
            converged = True
            break
        Ad = apply_A(d)
        dAd = float(d @ Ad)
        if dAd <= 0.0:
            raise NumericalError(
                f"HUM operator lost positivity (d'Ad={dAd:.3e})"
            )
        dd = float(d @ d)
        gram_min = min(gram_min, (dAd - penalty * dd) / dd)
        alpha = rs / dAd
        vT += alpha * d
        r -= alpha * Ad
        rs_new = float(r @ r)
        d = r + (rs_new / rs) * d
        rs = rs_new
        iters += 1
    else:
        converged = math.sqrt(rs) <= tol * max(r0n, 1e-300)

    el_residual = math.sqrt(rs) / max(r0n, 1e-300)
    if not math.isfinite(gram_min):
        gram_min = 0.0

    # controlled run from the actual u0 with the recovered control
    V, _ = _adjoint_on_omega(stepper, nt, mask, vT)
    u_traj = np.empty((nt + 1, n))
    f_traj = np.zeros((nt + 1, n))
    u_traj[0] = u0
    u = u0.copy()
    for k in range(nt):
        rhs_k = u.copy()
        rhs_k[mask] += dt * V[k]
        f_traj[k + 1, mask] = V[k]
        u = stepper.solve(rhs_k)
        u_traj[k + 1] = u

    final_norm = math.sqrt(h * float(u @ u))
    free_final_norm = math.sqrt(h * float(u_free_T @ u_free_T))
    control_cost = dt * h * float(np.sum(V * V))

    # superposition identity: u(T) = u_free(T) + Lambda vT (linearity)
    lam_vT = _forward_from_zero(stepper, nt, mask, V, dt, n)
    sup_res = math.sqrt(h * float(np.sum((u - (u_free_T + lam_vT)) ** 2)))

    return HumResult(
        vT_star=vT,
        final_norm=final_norm,
        free_final_norm=free_final_norm,
        control_cost=control_cost,
        el_residual=el_residual,
        gram_min_eig_est=float(gram_min),
        superposition_residual=sup_res,
        cg_iters=iters,
        converged=bool(converged),
        u_traj=u_traj,
        control=f_traj,
    )


def estimate_CT(op, tg, mask, iters=30, seed=0):
    """Lower estimate of the observability constant C_T.

    Evaluates R(vT) = ||v(0)||_h^2 / <Lambda vT, vT>_h along the iteration
    vT <- S^{2 nt} vT (power iteration on the squared backward propagator,
    which concentrates on the slowest / least observable mode) and returns
    the largest ratio seen.  Any evaluated ratio is a certified lower bound.
    """
    mask = _check_mask(mask, op.n)
    if not mask.any():
        raise UsageError("omega is empty; the ratio is unbounded")
    stepper = TimeStepper(op, tg)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.n)
    best = 0.0
    witness = x.copy()
    for _ in range(iters):
        nrm = math.sqrt(op.h * float(x @ x))
        if nrm == 0.0 or not np.isfinite(nrm):
            raise NumericalError("power iterate degenerated in estimate_CT")
        x /= nrm
        V, v0 = _adjoint_on_omega(stepper, tg.nt, mask, x)
        num = op.h * float(v0 @ v0)
        den = tg.dt * op.h * float(np.sum(V * V))
        if den <= 0.0:
            raise NumericalError("Gramian energy vanished in estimate_CT")
        if num / den > best:
            best = num / den
            witness = x.copy()
        # one more backward sweep completes the S^{2 nt} application
        y = v0
        for _ in range(tg.nt):
            y = stepper.solve(y)
        x = y
    return ObservabilityEstimate(C_T_est=best, iterations=iters, witness=witness)
