"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy scenario runs (criteria 6 and 8) are marked slow but run by
default; `pytest -m "not slow"` skips them.
"""

import time

import numpy as np
import pytest

from fsicontrol import dual, optimize, primal
from fsicontrol.config import (DESK_2D, TINY_2D, build_problem, load_config,
                               load_config_text)
from fsicontrol.fem import NCOMP
from fsicontrol.problem import TargetSpec

from conftest import random_direction, random_state


def _report(num, ok, msg):
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {msg}")
    assert ok, f"criterion {num}: {msg}"


# ----------------------------------------------------------------------------


def test_criterion_1_adjoint_gradient_against_fd():
    """Tiny config (8x4 fluid cells, 4x1 flag, degree 1, N=10, k=0.05):
    <grad j, dq> matches central differences for >= 5 random directions."""
    t0 = time.perf_counter()
    cfg = load_config_text(TINY_2D)
    prob = build_problem(cfg)
    lv = prob.levels[0]
    assert lv.dm.degree == 1 and prob.scheme.n_steps == 10
    assert prob.scheme.k == pytest.approx(0.05)
    N = prob.scheme.n_steps
    rng = np.random.default_rng(42)
    q0 = 1.0 + 0.2 * rng.standard_normal(N)

    def j_of(q):
        traj, _ = primal.run_forward(prob, 0, q)
        return optimize.evaluate_functional(prob, 0, traj, q)

    traj, _ = primal.run_forward(prob, 0, q0)
    Z, _ = dual.run_backward(prob, 0, traj)
    g = optimize.evaluate_gradient(prob, 0, Z, q0)
    worst = 0.0
    for _ in range(5):
        dq = rng.standard_normal(N)
        dq /= np.linalg.norm(dq)
        an = float(g @ dq)
        best = np.inf
        for h in (1e-3, 1e-4, 1e-5):
            fd = (j_of(q0 + h * dq) - j_of(q0 - h * dq)) / (2 * h)
            best = min(best, abs(fd - an) / max(abs(fd), abs(an), 1e-30))
        worst = max(worst, best)
    dt = time.perf_counter() - t0
    _report(1, worst <= 1e-4 and dt <= 120,
            f"worst FD mismatch {worst:.2e} (tol 1e-4), runtime {dt:.0f}s (limit 120s)")


def test_criterion_2_transpose_consistency(tiny_problem, rng):
    prob = tiny_problem
    lv = prob.levels[0]
    sch = prob.scheme
    N = sch.n_steps
    q = 1.5 * np.ones(N)
    traj, _ = primal.run_forward(prob, 0, q)
    worst = 0.0
    for n in (1, N // 2, N):
        blocks = lv.jacobian_blocks(traj.get(n), traj.get(n - 1), sch.theta, sch.k)
        fwd = lv.full_operator(blocks, transpose=False)
        adj = lv.full_operator(blocks, transpose=True)
        for _ in range(10):
            x = rng.standard_normal(lv.n_nodes * NCOMP)
            y = rng.standard_normal(lv.n_nodes * NCOMP)
            a = float(fwd(x) @ y)
            b = float(x @ adj(y))
            worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-30))
    _report(2, worst <= 1e-10, f"adjoint identity worst rel err {worst:.2e} (tol 1e-10)")


def test_criterion_3_form_derivatives(tiny_problem, rng):
    prob = tiny_problem
    lv = prob.levels[0]
    sch = prob.scheme
    Un = random_state(lv, rng)
    Um = random_state(lv, rng)
    comps = {"p": [0], "v": [1, 2], "u": [3, 4]}
    worst = 0.0
    checked = []
    for name in ("A_F", "A_S", "A_ALE", "A_p", "A_div", "F_TR", "time", "relation", "lps"):
        terms = lv.FORM_TERMS[name]
        for wrt, cc in comps.items():
            apply = lv.assemble_form_derivative(name, wrt, Un, Um, sch.theta, sch.k)
            d = random_direction(lv, rng)
            dm = np.zeros_like(d)
            dm[:, cc] = d[:, cc]
            an = apply(d.reshape(-1))
            h = 1e-6
            fd = (lv.residual(Un + h * dm, Um, 0, sch.theta, sch.k, terms=terms)
                  - lv.residual(Un - h * dm, Um, 0, sch.theta, sch.k, terms=terms)) / (2 * h)
            scale = max(np.linalg.norm(an), np.linalg.norm(fd))
            if scale <= 1e-12:
                continue  # identically zero derivative (e.g. dA_S/dp)
            rel = np.linalg.norm(fd - an) / scale
            worst = max(worst, rel)
            checked.append(f"{name}/{wrt}")
    _report(3, worst <= 1e-6,
            f"{len(checked)} form/variable pairs, worst FD mismatch {worst:.2e} (tol 1e-6)")


def test_criterion_4_condensation_equivalence(tiny_problem):
    prob = tiny_problem
    lv = prob.levels[0]
    sch = prob.scheme
    saved = prob.solver.newton_tol, prob.solver.gmres_tol, prob.solver.richardson_tol
    try:
        prob.solver.newton_tol = 1e-12
        prob.solver.gmres_tol = 1e-10
        ps = primal.PrimalLevelSolver(prob, 0)
        U_c, _ = ps.step(lv.zero_state(), 2.0, 1)
        U_d, rn = primal.step_direct(prob, 0, lv.zero_state(), 2.0, 1, tol=1e-13)
        err_primal = np.abs(U_c - U_d).max() / max(1.0, np.abs(U_d).max())

        # dual: Richardson with the substituted solid multiplier vs a dense
        # transposed solve in the original variables
        traj, _ = primal.run_forward(prob, 0, 2.0 * np.ones(sch.n_steps))
        n = 2
        Un, Um = traj.get(n), traj.get(n - 1)
        b = dual.dual_step_rhs(prob, 0, traj, n, None)
        prob.solver.richardson_tol = 1e-11
        ds = dual.DualLevelSolver(prob, 0)
        Z, _ = ds.solve_step(n, Un, Um, b)
        Z_ref = dual.dual_step_dense_oracle(prob, 0, Un, Um, b)
        err_dual = np.abs(Z - Z_ref).max() / max(1.0, np.abs(Z_ref).max())
    finally:
        (prob.solver.newton_tol, prob.solver.gmres_tol,
         prob.solver.richardson_tol) = saved
    ok = err_primal <= 1e-8 and err_dual <= 1e-8
    _report(4, ok, f"primal condensed-vs-direct {err_primal:.2e}, "
                   f"dual substituted-vs-dense {err_dual:.2e} (tol 1e-8)")


def test_criterion_5_exact_preconditioner_limit():
    cfg = load_config_text(TINY_2D)
    cfg.flags.ale_coupling = False
    cfg.flags.convection = False
    cfg.flags.solid_model = "linear"
    cfg.solver.gmres_tol = 1e-10
    cfg.solver.newton_tol = 1e-6
    cfg.solver.richardson_tol = 1e-6
    prob = build_problem(cfg)
    N = prob.scheme.n_steps
    traj, fstats = primal.run_forward(prob, 0, np.ones(N))
    newton = max(s.newton_steps for s in fstats)
    Z, dstats = dual.run_backward(prob, 0, traj)
    rich = max(s.richardson_steps for s in dstats)
    _report(5, newton <= 1 and rich <= 1,
            f"linear limit: max Newton {newton}, max Richardson {rich} (want 1)")


@pytest.mark.slow
def test_criterion_6_iteration_count_envelopes():
    """Desk scenario, levels 1 and 2 of the 3-level hierarchy, q = 0."""
    t0 = time.perf_counter()
    cfg = load_config("configs/desk2d_forward.cfg")
    prob = build_problem(cfg)
    N = prob.scheme.n_steps
    q = np.zeros(N)
    means = {}
    for lev in (1, 2):
        traj, fstats = primal.run_forward(prob, lev, q)
        Z, dstats = dual.run_backward(prob, lev, traj)
        means[lev] = dict(
            newton=np.mean([s.newton_steps for s in fstats]),
            mom=np.mean([s.means()[0] for s in fstats]),
            rich=np.mean([s.richardson_steps for s in dstats]),
            dmom=np.mean([s.means()[2] for s in dstats]),
        )
        print(f"  level {lev}: newton {means[lev]['newton']:.2f}, "
              f"gmres(momentum) {means[lev]['mom']:.2f}, "
              f"richardson {means[lev]['rich']:.2f}, "
              f"dual gmres(momentum) {means[lev]['dmom']:.2f}")
    dt = time.perf_counter() - t0
    ok = all(2.0 <= means[lev]["newton"] <= 6.0 for lev in (1, 2))
    ok &= all(2.0 <= means[lev]["rich"] <= 6.0 for lev in (1, 2))
    growth = means[2]["mom"] / means[1]["mom"]
    growth_d = means[2]["dmom"] / means[1]["dmom"]
    ok &= growth <= 2.0 and growth_d <= 2.0
    ok &= dt <= 15 * 60
    _report(6, ok, f"newton {means[1]['newton']:.2f}/{means[2]['newton']:.2f}, "
                   f"richardson {means[1]['rich']:.2f}/{means[2]['rich']:.2f} in [2,6]; "
                   f"momentum growth x{growth:.2f} (dual x{growth_d:.2f}) <= 2; "
                   f"runtime {dt:.0f}s (limit 900s)")


def test_criterion_7_time_scheme_order():
    from test_primal import _oscillator_problem, _solid_eigpair

    T = 0.64
    errors = []
    lam = None
    for k in (0.04, 0.02, 0.01, 0.005):
        N = int(round(T / k))
        prob = _oscillator_problem(k, N)
        if lam is None:
            lam, w = _solid_eigpair(prob)
        lv = prob.levels[0]
        U0 = lv.zero_state()
        U0[:, 3:5] = w.reshape(-1, 2)
        traj, _ = primal.run_forward(prob, 0, np.zeros(N), U0=U0)
        UN = traj.get(N)
        a_N = float(UN[:, 3:5].ravel() @ w) / float(w @ w)
        errors.append(abs(a_N - np.cos(np.sqrt(lam) * T)))
    orders = [float(np.log2(e1 / e2)) for e1, e2 in zip(errors, errors[1:])]
    _report(7, min(orders) >= 1.9,
            f"observed orders {['%.2f' % o for o in orders]} (want >= 1.9)")


@pytest.mark.slow
def test_criterion_8_optimization_progress():
    """Desk tracking run over the 2-level hierarchy."""
    t0 = time.perf_counter()
    cfg = load_config("configs/desk2d.cfg")
    prob = build_problem(cfg)
    N = prob.scheme.n_steps
    res0 = optimize.optimize_on_level(prob, 0, np.zeros(N), tol_factor=8e-3, max_iter=40)
    res1 = optimize.optimize_on_level(prob, 1, res0.q, tol_factor=0.4, max_iter=10,
                                      history=res0.history,
                                      iteration_offset=res0.history[-1].iteration + 1)
    hist = res1.history
    total_iters = res0.iterations + res1.iterations
    j0 = hist[0].j
    g0 = hist[0].grad_norm
    j_red = j0 / min(r.j for r in hist)
    g_red = g0 / min(r.grad_norm for r in hist)
    # strictly decreasing within each level
    mono = True
    for lev in (0, 1):
        js = [r.j for r in hist if r.level == lev]
        mono &= all(b < a for a, b in zip(js, js[1:]))
    dt = time.perf_counter() - t0
    n_l1 = sum(1 for r in hist if r.level == 1) - 1
    print(f"  level-0 iters {res0.iterations}, level-1 iters {res1.iterations}; "
          f"j {j0:.3e} -> {min(r.j for r in hist):.3e} (x{j_red:.0f}); "
          f"grad x{g_red:.0f}")
    ok = (total_iters <= 60 and j_red >= 10.0 and g_red >= 100.0 and mono
          and n_l1 >= 0 and dt <= 60 * 60)
    _report(8, ok, f"{total_iters} BFGS iterations, j reduced x{j_red:.0f} (>=10), "
                   f"grad reduced x{g_red:.0f} (>=100), monotone {mono}, "
                   f"runtime {dt:.0f}s (limit 3600s)")


def test_criterion_9_rest_state_fixed_point():
    cfg = load_config_text(TINY_2D)
    cfg.functional.u_target = TargetSpec(kind="zero")
    prob = build_problem(cfg)
    lv = prob.levels[0]
    sch = prob.scheme
    N = sch.n_steps
    r = lv.residual(lv.zero_state(), lv.zero_state(), 0.0, sch.theta, sch.k)
    traj, _ = primal.run_forward(prob, 0, np.zeros(N))
    traj_max = max(np.abs(traj.get(n)).max() for n in range(N + 1))
    Z, _ = dual.run_backward(prob, 0, traj)
    dual_max = max(np.abs(Zn).max() for Zn in Z)
    rng = np.random.default_rng(0)
    q = rng.standard_normal(N)
    g = optimize.evaluate_gradient(prob, 0, Z, q)
    g_err = np.abs(g - prob.functional.alpha * sch.k * q).max()
    ok = (np.linalg.norm(r) <= 1e-12 and traj_max <= 1e-12 and dual_max <= 1e-12
          and g_err <= 1e-12)
    _report(9, ok, f"residual {np.linalg.norm(r):.1e}, trajectory {traj_max:.1e}, "
                   f"dual {dual_max:.1e}, grad-alpha*k*q {g_err:.1e} (all <= 1e-12)")
