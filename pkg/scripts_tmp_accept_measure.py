import math
import os
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from hardylab.hardy import find_A1, rayleigh_hardy
from hardylab.hum import check_gramian_symmetry, estimate_CT, solve_hum
from hardylab.mesh import build_mesh, build_regions
from hardylab.operators import OperatorSpec, TimeGrid, assemble, step_adjoint
from hardylab.spectral import blowup_sweep, ground_state
from hardylab.stabilization import CostProblem, minimize_cost
from hardylab.weights import (build_weights, check_boundary_flux, empirical_carleman,
                              find_lambda0)
from dataclasses import replace

t0 = time.time()

def tick(label):
    global t0
    now = time.time()
    print(f"--- {label}: {now - t0:.2f}s")
    t0 = now

# 1 rayleigh
vals = {}
for n in (500, 1000, 2000, 4000):
    vals[n] = rayleigh_hardy(build_mesh(n))
print("c1 rayleigh:", vals)
tick("c1")

# 2 spectral sanity
m2000 = build_mesh(2000)
pt = ground_state(m2000, 0.0, 1.0)
op0 = assemble(OperatorSpec(0.0, "quadratic", 1.0), m2000)
norm_inf = float(np.max(np.abs(op0.diag)) + 2.0 * np.max(np.abs(op0.off)))
print("c2 lambda0:", pt.lambda0, "rel err vs pi^2:", abs(pt.lambda0 - math.pi**2) / math.pi**2)
print("c2 residual:", pt.residual, "scaled gate 1e-10*|A|:", 1e-10 * norm_inf)
tick("c2")

# 3+4 supercritical sweep
sweep = blowup_sweep(m2000, 0.5, [0.1, 0.05, 0.025, 0.0125])
lams = [p.lambda0 for p in sweep.points]
locs = [p.loc_h1(0.2) for p in sweep.points]
print("c3 lams:", lams)
print("c4 loc_h1:", locs, "drop:", locs[0] / locs[-1])
sub = blowup_sweep(m2000, 0.2, [0.1, 0.05, 0.025, 0.0125])
print("c3 subcritical variation:", sub.variation())
tick("c3+c4")

# 6 control triple
mesh = build_mesh(200)
masks = build_regions(mesh)
tg = TimeGrid(0.5, 400)
u0 = np.sin(np.pi * mesh.nodes)
u0n = math.sqrt(mesh.h * float(u0 @ u0))
for mu in (-1.0, 0.1, 0.25):
    op = assemble(OperatorSpec(mu, "shift", 201.0), mesh)
    res = solve_hum(op, tg, masks.omega, u0, penalty=1e-8, tol=1e-10)
    sym = check_gramian_symmetry(op, tg, masks.omega)
    print(f"c6 mu={mu}: rel={res.final_norm / u0n:.3e} iters={res.cg_iters} "
          f"conv={res.converged} sym={sym:.3e}")
    if mu == 0.25:
        res6 = solve_hum(op, tg, masks.omega, u0, penalty=1e-6, tol=1e-10)
        print(f"c7 penalties: {res6.final_norm:.6e} -> {res.final_norm:.6e} "
              f"ratio {res6.final_norm / res.final_norm:.2f}")
tick("c6+c7")

# 8 estimate_CT sweep + cost sweep
m1000 = build_mesh(1000)
masks1000 = build_regions(m1000)
cts = []
for m in (10, 20, 40, 80):
    op = assemble(OperatorSpec(0.3, "shift", float(m)), m1000)
    cts.append(estimate_CT(op, tg, masks1000.omega, iters=10).C_T_est)
print("c8 CT:", cts, "growth:", cts[-1] / cts[0])
narrow = (m1000.nodes > 0.46) & (m1000.nodes < 0.54)
js = []
for eps in (0.1, 0.05, 0.025, 0.0125):
    p = CostProblem(mesh=m1000, mu=0.5, eps=eps, T=3.0, nt=600, mask=narrow)
    r = minimize_cost(p)
    ok_low = r.analytic_lower is None or r.J_opt >= r.analytic_lower - 1e-6 * max(1.0, abs(r.J_opt))
    js.append(r.J_opt)
    print(f"c8 eps={eps}: J={r.J_opt:.6e} lower={r.analytic_lower} ok_low={ok_low} "
          f"conv={r.converged}")
print("c8 cost growth:", js[-1] / js[0])
tick("c8")

# 9 weights: lambda0 + flux stability
m500 = build_mesh(500)
p5, f5 = build_weights(m500, build_regions(m500))
search = find_lambda0(p5, f5, sample_count=100_000)
rep = search.reports[search.grid.index(search.lambda0)]
names = {e.name for e in rep.entries if e.kind == "assert"}
print("c9 lambda0:", search.lambda0, "asserted pass:", rep.all_asserted_pass)
print("c9 assert names:", sorted(names))
m4000 = build_mesh(4000)
p40, f40 = build_weights(m4000, build_regions(m4000))
fl5 = check_boundary_flux(p5, f5)
fl40 = check_boundary_flux(p40, f40)
ratio = 10.0 ** abs(fl40.log10_max_ratio - fl5.log10_max_ratio)
print("c9 flux log10:", fl5.log10_max_ratio, fl40.log10_max_ratio, "ratio:", ratio)
tick("c9")

# 10 empirical on odd grid, 20 runs, nt doubling, k=1 record
m201 = build_mesh(201)
masks201 = build_regions(m201)
params, fields = build_weights(m201, masks201, R=2.0)
op = assemble(OperatorSpec(0.25, "shift", 202.0), m201)
A1 = find_A1(m201, 0.25, 1.5)
rng = np.random.default_rng(0)
vts = [rng.standard_normal(201) for _ in range(20)]
maxes = {}
for nt in (400, 800):
    tgn = TimeGrid(0.5, nt)
    trajs = [step_adjoint(op, tgn, v) for v in vts]
    chk = empirical_carleman(params, fields, trajs, tgn, A1=A1)
    finite = [v for v in chk.log10_ratios if not math.isnan(v)]
    maxes[nt] = max(finite)
    print(f"c10 nt={nt}: trivial={chk.trivial_runs} n_finite={len(finite)} "
          f"max_log10={max(finite)}")
print("c10 doubling delta log10:", abs(maxes[800] - maxes[400]),
      "gate:", math.log10(2.0))
tg400 = TimeGrid(0.5, 400)
trajs = [step_adjoint(op, tg400, v) for v in vts]
lg3 = empirical_carleman(params, fields, trajs, tg400, A1=A1).log10_ratios[0]
lg1 = empirical_carleman(replace(params, theta_k=1), fields, trajs, tg400,
                         A1=A1).log10_ratios[0]
print("c10 k-record factor:", 10.0 ** (lg1 - lg3))
print("c10 A1:", A1)
tick("c10")

# 11 oracle equivalence
from hardylab.tridiag import bisect_eigenvalue, inverse_iteration
rng = np.random.default_rng(11)
worst = 0.0
for _ in range(50):
    n = int(rng.integers(20, 201))
    mu = float(rng.uniform(-1.0, 1.0))
    eps = float(rng.uniform(0.02, 0.5))
    mm = build_mesh(n)
    opx = assemble(OperatorSpec(mu, "quadratic", eps), mm)
    dense = np.diag(opx.diag) + np.diag(opx.off, 1) + np.diag(opx.off, -1)
    ev = np.linalg.eigvalsh(dense)
    for k in range(3):
        lam = bisect_eigenvalue(opx.diag, opx.off, k)
        v, rq, res = inverse_iteration(opx.diag, opx.off, lam, seed=1)
        worst = max(worst, abs(lam - ev[k]), abs(rq - ev[k]))
print("c11 worst |diff|:", worst)
tick("c11")
print("total ok")
