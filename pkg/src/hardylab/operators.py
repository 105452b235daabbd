"""Discrete operator -Delta - V and the forward/adjoint heat steppers.

The potential V carries the inverse-square boundary singularity mu/delta^2,
optionally regularized by the distance shift mu/(delta + 1/m)^2 or the
quadratic smoothing mu/(delta^2 + eps^2).  Time stepping is implicit Euler by
default; the backward (adjoint) stepper is the literal transpose of the
forward propagator so the discrete duality identity holds to roundoff, which
is what the control Gramian needs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolverBreakdown, UsageError
from .tridiag import PrefactoredTridiag, matvec, sturm_count

REG_MODES = ("none", "shift", "quadratic")


@dataclass(frozen=True)
class OperatorSpec:
    """Potential choice: mu and how (whether) to regularize the singularity.

    reg_mode 'none'      -> V = mu / delta^2            (raw)
             'shift'     -> V = mu / (delta + 1/m)^2    (reg_param = m)
             'quadratic' -> V = mu / (delta^2 + eps^2)  (reg_param = eps)
    """
    mu: float
    reg_mode: str = "none"
    reg_param: float = None

    def __post_init__(self):
        if self.reg_mode not in REG_MODES:
            raise UsageError(f"reg_mode must be one of {REG_MODES}, got {self.reg_mode!r}")
        if self.reg_mode == "none":
            if self.reg_param is not None:
                raise UsageError("reg_mode 'none' takes no reg_param")
        else:
            if self.reg_param is None or not self.reg_param > 0:
                raise UsageError(
                    f"reg_mode {self.reg_mode!r} needs a positive reg_param, "
                    f"got {self.reg_param}")

    @property
    def is_raw(self):
        return self.reg_mode == "none"

    def potential(self, mesh):
        d = mesh.delta
        if self.reg_mode == "none":
            return self.mu / d**2
        if self.reg_mode == "shift":
            return self.mu / (d + 1.0 / self.reg_param) ** 2
        return self.mu / (d**2 + self.reg_param**2)


@dataclass(frozen=True)
class TridiagOperator:
    """Symmetric tridiagonal matrix for -Delta - V on interior nodes."""
    diag: np.ndarray
    off: np.ndarray
    h: float
    raw: bool = False

    @property
    def n(self):
        return self.diag.shape[0]

    def apply(self, v):
        return matvec(self.diag, self.off, v)

    def norm_inf(self):
        return float(np.max(np.abs(self.diag)) + 2.0 * np.max(np.abs(self.off)))

    def is_positive_definite(self):
        return sturm_count(self.diag, self.off, 0.0) == 0


def assemble(spec, mesh):
    """Build the tridiagonal matrix 2/h^2 - V_i on the diagonal, -1/h^2 off."""
    if spec.is_raw and np.min(mesh.delta) < mesh.h * (1.0 - 1e-12):
        # cannot happen on build_mesh() meshes (min delta == h) but guards
        # against hand-rolled geometries where 1/delta^2 is unresolved
        raise UsageError("raw potential needs every node to satisfy delta >= h")
    V = spec.potential(mesh)
    if not np.allclose(V, V[::-1], rtol=1e-13, atol=0.0):
        raise UsageError("potential lost its symmetry about x = 1/2")
    h = mesh.h
    diag = 2.0 / h**2 - V
    off = np.full(mesh.n - 1, -1.0 / h**2)
    return TridiagOperator(diag=diag, off=off, h=h, raw=spec.is_raw)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    nt: int

    def __post_init__(self):
        if not self.T > 0:
            raise UsageError(f"horizon T must be positive, got {self.T}")
        if self.nt < 2:
            raise UsageError(f"need nt >= 2 time steps, got {self.nt}")

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def times(self):
        return self.dt * np.arange(self.nt + 1)


class TimeStepper:
    """Prefactored solver for (I + c*dt*A) x = rhs, shared by both sweeps.

    Construction runs the unpivoted elimination once (PrefactoredTridiag) so
    near-singular systems fail loudly with the zero-pivot contract; the
    per-step solves then go through LAPACK's banded routine, which is the
    same factorization vectorized.
    """

    def __init__(self, op, tg, scheme="ie"):
        if scheme not in ("ie", "cn"):
            raise UsageError(f"scheme must be 'ie' or 'cn', got {scheme!r}")
        self.op = op
        self.tg = tg
        self.scheme = scheme
        dt = tg.dt
        c = dt if scheme == "ie" else 0.5 * dt
        mdiag = 1.0 + c * op.diag
        moff = c * op.off
        # breakdown contract: zero pivot at threshold 1e-14 * max|diag|
        PrefactoredTridiag(mdiag, moff)
        n = op.n
        ab = np.zeros((3, n))
        ab[0, 1:] = moff
        ab[1, :] = mdiag
        ab[2, :-1] = moff
        self._ab = ab
        self._mdiag = mdiag
        self._moff = moff

    def solve(self, rhs):
        return solve_banded((1, 1), self._ab, rhs, check_finite=False)


def _masked_source(f, mask, n, nt):
    if f is None:
        return None
    f = np.asarray(f, dtype=float)
    if f.shape != (nt + 1, n):
        raise UsageError(
            f"control trajectory must have shape {(nt + 1, n)}, got {f.shape}")
    if mask is not None:
        sel = np.asarray(getattr(mask, "omega", mask))
        if sel.shape != (n,):
            raise UsageError(f"mask must have shape ({n},), got {sel.shape}")
        f = f * sel
    return f


def step_forward(op, tg, u0, f=None, mask=None, scheme="ie"):
    """March u_t + A u = f from u0; returns all levels, shape (nt+1, n).

    Implicit Euler: (I + dt A) u^{k+1} = u^k + dt f^{k+1} -- the source is
    sampled at the *new* level, which is what makes the adjoint pairing
    exact.  scheme='cn' switches to Crank-Nicolson (trapezoid source) for
    convergence studies; the duality identity is implicit-Euler only.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.n,):
        raise UsageError(f"u0 must have shape ({op.n},), got {u0.shape}")
    try:
        stepper = TimeStepper(op, tg, scheme=scheme)
    except SolverBreakdown as exc:
        # the system matrix is shared by every level, so a breakdown would
        # first bite at step 1
        raise SolverBreakdown(f"(I + dt*A) factorization broke down: {exc}",
                              step=1) from exc
    f = _masked_source(f, mask, op.n, tg.nt)
    dt = tg.dt
    traj = np.empty((tg.nt + 1, op.n))
    traj[0] = u0
    u = u0.copy()
    for k in range(tg.nt):
        if scheme == "ie":
            rhs = u if f is None else u + dt * f[k + 1]
        else:
            rhs = u - 0.5 * dt * op.apply(u)
            if f is not None:
                rhs = rhs + 0.5 * dt * (f[k] + f[k + 1])
        u = stepper.solve(rhs)
        traj[k + 1] = u
    return traj


def step_adjoint(op, tg, vT):
    """Backward sweep v^k = (I + dt A)^{-1} v^{k+1}, the exact transpose.

    A is symmetric, so transposing the forward propagator means running the
    same solves in reverse order; no separate discretization of the backward
    equation is introduced.
    """
    vT = np.asarray(vT, dtype=float)
    if vT.shape != (op.n,):
        raise UsageError(f"vT must have shape ({op.n},), got {vT.shape}")
    try:
        stepper = TimeStepper(op, tg, scheme="ie")
    except SolverBreakdown as exc:
        raise SolverBreakdown(f"(I + dt*A) factorization broke down: {exc}",
                              step=tg.nt) from exc
    traj = np.empty((tg.nt + 1, op.n))
    traj[tg.nt] = vT
    v = vT.copy()
    for k in range(tg.nt - 1, -1, -1):
        v = stepper.solve(v)
        traj[k] = v
    return traj


def check_duality(u_traj, v_traj, f, u0, vT, mask, tg):
    """Residual of the discrete duality identity (the Euler-Lagrange pairing).

    <u^N, vT>_h = <u0, v^0>_h + dt * sum_k <f^{k+1}, v^k>_h
    where the source at level k+1 pairs with the adjoint at level k --
    exactly the telescoping structure of the implicit-Euler transpose.
    Returns the absolute residual.
    """
    u_traj = np.asarray(u_traj, dtype=float)
    v_traj = np.asarray(v_traj, dtype=float)
    if u_traj.shape != v_traj.shape:
        raise UsageError(
            f"trajectory shapes differ: {u_traj.shape} vs {v_traj.shape}")
    nt = tg.nt
    if u_traj.shape[0] != nt + 1:
        raise UsageError(
            f"trajectories have {u_traj.shape[0]} levels, time grid wants {nt + 1}")
    n = u_traj.shape[1]
    h = 1.0 / (n + 1)
    f = _masked_source(f, mask, n, nt)
    dt = tg.dt
    lhs = h * float(np.dot(u_traj[nt], vT))
    rhs = h * float(np.dot(u0, v_traj[0]))
    if f is not None:
        # sum_{k=0}^{nt-1} <f^{k+1}, v^k>
        rhs += dt * h * float(np.sum(f[1:] * v_traj[:-1]))
    return abs(lhs - rhs)
