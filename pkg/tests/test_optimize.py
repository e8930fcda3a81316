import numpy as np
import pytest

from fsicontrol import dual, optimize, primal
from fsicontrol.config import TINY_2D, build_problem, load_config_text
from fsicontrol.problem import TargetSpec


def test_functional_zero_for_matching_targets(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.u_target, fc.alpha
    try:
        fc.u_target = TargetSpec(kind="zero")
        fc.alpha = 0.0
        traj, _ = primal.run_forward(prob, 0, np.zeros(N))
        assert optimize.evaluate_functional(prob, 0, traj, np.zeros(N)) == 0.0
    finally:
        fc.u_target, fc.alpha = saved


def test_functional_pure_regularization(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    sch = prob.scheme
    fc = prob.functional
    saved = fc.u_target, fc.alpha
    try:
        fc.u_target = TargetSpec(kind="zero")
        fc.alpha = 2.5
        traj, _ = primal.run_forward(prob, 0, np.zeros(N))
        c = 0.7
        # zero trajectory stored; apply constant control only to the penalty
        j = optimize.evaluate_functional(prob, 0, traj, c * np.ones(N))
        assert j == pytest.approx(0.5 * fc.alpha * sch.T * c * c, rel=1e-12)
    finally:
        fc.u_target, fc.alpha = saved


def test_functional_matches_postprocessing_oracle(tiny_problem):
    """j from evaluate_functional equals an independent quadrature of the
    stored trajectory."""
    prob = tiny_problem
    N = prob.scheme.n_steps
    sch = prob.scheme
    lv = prob.levels[0]
    fc = prob.functional
    q = 1.2 * np.ones(N)
    traj, _ = primal.run_forward(prob, 0, q)
    j = optimize.evaluate_functional(prob, 0, traj, q)

    # oracle: per-element quadrature with trapezoid-consistent time weights
    dm = lv.dm
    phi, _ = dm.basis.tabulate(dm.quad.points)
    total = 0.0
    for n in range(N + 1):
        U = traj.get(n)
        t = sch.time(n)
        tgt = fc.u_target.value(t)
        acc = 0.0
        for e in dm.obs_elems:
            nodes = dm.elem_nodes[e]
            area = dm.elem_hx[e] * dm.elem_hy[e]
            for qq, w in enumerate(dm.quad.weights):
                uy = float(phi[qq] @ U[nodes, 3 + fc.u_component])
                acc += w * area * 0.5 * (uy - tgt) ** 2
        total += sch.weight(n) * acc
    total += 0.5 * fc.alpha * sch.k * float(q @ q)
    assert j == pytest.approx(total, rel=1e-12)


def test_gradient_without_dual_is_regularization_only(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    sch = prob.scheme
    q = np.linspace(0.1, 1.0, N)
    Z = [np.zeros(prob.levels[0].n_nodes * 5) for _ in range(N + 1)]
    g = optimize.evaluate_gradient(prob, 0, Z, q)
    assert np.allclose(g, prob.functional.alpha * sch.k * q, atol=1e-16)


def test_lbfgs_empty_history_is_steepest_descent(rng):
    state = optimize.LbfgsState(weight=0.1)
    g = rng.standard_normal(12)
    d = optimize.lbfgs_direction(state, g)
    assert np.allclose(d, -g)


def test_lbfgs_quadratic_newton_like(rng):
    """On j = q^T D q / 2 the two-loop recursion with exact line search
    reaches the minimum in at most dim steps."""
    k = 0.05
    n = 6
    D = np.diag(np.linspace(1.0, 9.0, n))
    state = optimize.LbfgsState(weight=k, memory=20)
    q = rng.standard_normal(n)
    g = D @ q
    for it in range(n + 1):
        d = optimize.lbfgs_direction(state, g)
        assert state.dot(d, g) < 0
        # exact line search for the quadratic
        alpha = -(state.dot(d, g)) / state.dot(d, D @ d)
        q_new = q + alpha * d
        g_new = D @ q_new
        state.update(alpha * d, g_new - g)
        q, g = q_new, g_new
        if np.linalg.norm(g) < 1e-12:
            break
    assert np.linalg.norm(D @ q) <= 1e-10


def test_lbfgs_direction_is_descent(rng):
    state = optimize.LbfgsState(weight=0.02)
    g = rng.standard_normal(30)
    for _ in range(8):
        s = rng.standard_normal(30)
        y = rng.standard_normal(30)
        state.update(s, y)
    d = optimize.lbfgs_direction(state, g)
    assert state.dot(d, g) < 0


def test_lbfgs_skips_noncurvature_pairs():
    state = optimize.LbfgsState(weight=1.0)
    s = np.ones(4)
    y = -np.ones(4)  # <s, y> < 0
    assert not state.update(s, y)
    assert len(state.pairs) == 0


def test_optimizer_already_optimal_zero_iterations(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.u_target, fc.alpha
    try:
        fc.u_target = TargetSpec(kind="zero")
        fc.alpha = 1.0
        res = optimize.optimize_on_level(prob, 0, np.zeros(N), tol_factor=0.1, max_iter=5)
        assert res.iterations == 0
        assert res.history[0].grad_norm == 0.0
    finally:
        fc.u_target, fc.alpha = saved


def test_optimizer_drives_control_to_zero_with_zero_targets(tiny_problem):
    """Zero targets, zero data: the unique minimizer is q = 0."""
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.u_target, fc.alpha
    rng = np.random.default_rng(3)
    try:
        fc.u_target = TargetSpec(kind="zero")
        fc.alpha = 1.0
        q0 = 1e-3 * rng.standard_normal(N)
        res = optimize.optimize_on_level(prob, 0, q0, tol_factor=1e-9, max_iter=60)
        assert np.linalg.norm(res.q) <= 1e-8
    finally:
        fc.u_target, fc.alpha = saved


def test_accepted_iterates_strictly_decreasing(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.alpha
    try:
        fc.alpha = 1e-6
        res = optimize.optimize_on_level(prob, 0, np.zeros(N), tol_factor=1e-3, max_iter=8)
    finally:
        fc.alpha = saved
    js = [r.j for r in res.history]
    assert all(b < a for a, b in zip(js, js[1:]))


def test_hierarchy_single_level_equals_level_run(tiny_problem):
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.alpha
    try:
        fc.alpha = 1e-6
        res_h = optimize.optimize_on_hierarchy(prob, np.zeros(N), tol_factor=0.2,
                                               max_iter_per_level=6, levels=[0])
        res_l = optimize.optimize_on_level(prob, 0, np.zeros(N), tol_factor=0.2, max_iter=6)
    finally:
        fc.alpha = saved
    assert np.allclose(res_h.q, res_l.q, atol=1e-14)
    assert [r.j for r in res_h.history] == [r.j for r in res_l.history]


def test_hierarchy_warm_start_helps(tiny_problem_2l):
    """Fine-level iterations after a coarse warm start do not exceed a cold
    fine-level run."""
    prob = tiny_problem_2l
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.alpha
    try:
        fc.alpha = 1e-6
        warm = optimize.optimize_on_hierarchy(prob, np.zeros(N), tol_factor=0.05,
                                              max_iter_per_level=25, levels=[0, 1])
        warm_fine_iters = sum(1 for r in warm.history[1:] if r.level == 1 and r.step_scale > 0)
        cold = optimize.optimize_on_hierarchy(prob, np.zeros(N), tol_factor=0.05,
                                              max_iter_per_level=25, levels=[1])
        cold_iters = cold.iterations
        assert np.isfinite(warm.history[-1].grad_norm)
        assert warm_fine_iters <= cold_iters
    finally:
        fc.alpha = saved


def test_alpha_monotonicity(tiny_problem):
    """Larger Tikhonov weight gives a smaller achieved control norm."""
    prob = tiny_problem
    N = prob.scheme.n_steps
    fc = prob.functional
    saved = fc.alpha
    norms = []
    try:
        for alpha in (1e-6, 1e-4, 1e-2):
            fc.alpha = alpha
            res = optimize.optimize_on_level(prob, 0, np.zeros(N), tol_factor=5e-2,
                                             max_iter=12)
            norms.append(np.linalg.norm(res.q))
    finally:
        fc.alpha = saved
    assert norms[0] > norms[1] > norms[2]
