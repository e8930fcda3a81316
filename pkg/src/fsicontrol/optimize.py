"""Reduced functional, adjoint gradient, and the limited-memory BFGS loop.

The control is piecewise constant in time, one value per step.  Inner
products on control space are L2(I)-weighted (factor k) so gradient norms and
BFGS curvature are consistent across time grids; step control accepts only
strict descent in the functional, halving the step otherwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dual as dualmod
from . import primal as primalmod
from .fem import NCOMP
from .forms import EntanglementError
from .linalg import SolverError
from .problem import Problem


def evaluate_functional(problem: Problem, level: int, traj, q: np.ndarray) -> float:
    """j = sum_n w_n (tracking misfit at t_n) + alpha/2 * k * sum_n q_n^2."""
    sch = problem.scheme
    lv = problem.levels[level]
    fc = problem.functional
    j = 0.0
    for n in range(sch.n_steps + 1):
        j += sch.weight(n) * lv.tracking_value(traj.get(n), n, sch.time(n), fc)
    j += 0.5 * fc.alpha * sch.k * float(np.sum(np.asarray(q) ** 2))
    return j


def evaluate_gradient(problem: Problem, level: int, Z: list, q: np.ndarray) -> np.ndarray:
    """Coefficient gradient: (grad j)_n = alpha k q_n + k <g_q, z^v_n>_{Gamma_q}."""
    sch = problem.scheme
    lv = problem.levels[level]
    alpha = problem.functional.alpha
    g = np.empty(sch.n_steps)
    for n in range(1, sch.n_steps + 1):
        zv = Z[n].reshape(-1, NCOMP)[:, 1:3]
        g[n - 1] = alpha * sch.k * q[n - 1] + sch.k * float(np.sum(lv.g_q * zv))
    return g


# ----------------------------------------------------------------------------
# limited-memory BFGS (two-loop recursion, curvature-guarded)


@dataclass
class LbfgsState:
    weight: float  # time-step size: <a,b> = weight * a.b
    memory: int = 20
    pairs: list = field(default_factory=list)

    def dot(self, a, b) -> float:
        return self.weight * float(np.dot(a, b))

    def update(self, s: np.ndarray, y: np.ndarray) -> bool:
        sy = self.dot(s, y)
        if sy <= 1e-14 * np.sqrt(max(self.dot(s, s) * self.dot(y, y), 1e-300)):
            return False  # skip pairs violating the curvature condition
        self.pairs.append((s.copy(), y.copy(), 1.0 / sy))
        if len(self.pairs) > self.memory:
            self.pairs.pop(0)
        return True


def lbfgs_direction(state: LbfgsState, g: np.ndarray) -> np.ndarray:
    """Two-loop recursion; returns a descent direction (steepest descent when
    the history is empty)."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(state.pairs):
        a = rho * state.dot(s, q)
        q -= a * y
        alphas.append(a)
    if state.pairs:
        s, y, rho = state.pairs[-1]
        gamma = state.dot(s, y) / state.dot(y, y)
        q *= gamma
    for (s, y, rho), a in zip(state.pairs, reversed(alphas)):
        b = rho * state.dot(y, q)
        q += (a - b) * s
    d = -q
    if state.dot(d, g) >= 0.0:
        d = -g.copy()
    return d


# ----------------------------------------------------------------------------
# outer loop


@dataclass
class OptRecord:
    iteration: int
    level: int
    j: float
    grad_norm: float
    step_scale: float
    forward_seconds: float
    backward_seconds: float


@dataclass
class OptResult:
    q: np.ndarray
    history: list
    status: str
    iterations: int


class _Evaluator:
    """Caches the per-level solvers so Jacobian reuse carries across the
    optimization loop."""

    def __init__(self, problem: Problem, level: int):
        self.problem = problem
        self.level = level
        self.primal = primalmod.PrimalLevelSolver(problem, level)
        self.forward_stats = []
        self.backward_stats = []

    def forward(self, q):
        t0 = time.perf_counter()
        traj, stats = primalmod.run_forward(self.problem, self.level, q, solver=self.primal)
        dt = time.perf_counter() - t0
        self.forward_stats.append(stats)
        j = evaluate_functional(self.problem, self.level, traj, q)
        return j, traj, dt

    def try_forward(self, q):
        """Forward evaluation for line-search trials; solver failures (mesh
        entanglement, non-convergence at an overdriven control) count as
        'no descent' instead of aborting the optimization."""
        try:
            return self.forward(q)
        except (SolverError, EntanglementError):
            self.primal.needs_assembly = True
            return np.inf, None, 0.0

    def gradient(self, traj, q):
        t0 = time.perf_counter()
        Z, stats = dualmod.run_backward(self.problem, self.level, traj)
        dt = time.perf_counter() - t0
        self.backward_stats.append(stats)
        g = evaluate_gradient(self.problem, self.level, Z, q)
        return g, dt


def optimize_on_level(problem: Problem, level: int, q0: np.ndarray,
                      tol_factor: float = 0.1, max_iter: int = 40,
                      max_halvings: int = 30, history: list | None = None,
                      iteration_offset: int = 0, evaluator: _Evaluator | None = None) -> OptResult:
    """BFGS descent on one level until the control-gradient norm drops by
    tol_factor relative to the starting gradient."""
    sch = problem.scheme
    ev = evaluator or _Evaluator(problem, level)
    history = history if history is not None else []
    q = np.asarray(q0, dtype=float).copy()

    j, traj, tf = ev.forward(q)
    g_coeff, tb = ev.gradient(traj, q)
    ghat = g_coeff / sch.k
    state = LbfgsState(weight=sch.k)
    gnorm = np.sqrt(state.dot(ghat, ghat))
    gnorm0 = gnorm
    it = iteration_offset
    history.append(OptRecord(it, level, j, gnorm, 0.0, tf, tb))
    status = "converged"
    n_accepted = 0
    while gnorm > tol_factor * gnorm0 and gnorm > 0.0:
        if n_accepted >= max_iter:
            status = "budget_exhausted"
            break
        d = lbfgs_direction(state, ghat)
        scale = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            q_try = q + scale * d
            j_try, traj_try, tf = ev.try_forward(q_try)
            if j_try < j:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            status = "line_search_failed"
            break
        g_try, tb = ev.gradient(traj_try, q_try)
        ghat_try = g_try / sch.k
        state.update(scale * d, ghat_try - ghat)
        q, j, ghat, traj = q_try, j_try, ghat_try, traj_try
        gnorm = np.sqrt(state.dot(ghat, ghat))
        it += 1
        n_accepted += 1
        history.append(OptRecord(it, level, j, gnorm, scale, tf, tb))
    return OptResult(q=q, history=history, status=status, iterations=n_accepted)


def optimize_on_hierarchy(problem: Problem, q0: np.ndarray, tol_factor: float = 0.1,
                          max_iter_per_level: int = 40, levels: list[int] | None = None) -> OptResult:
    """Coarse-to-fine optimization; the control (fixed time grid) is carried
    over unchanged as the warm start for the next level."""
    levels = levels if levels is not None else list(range(len(problem.levels)))
    q = np.asarray(q0, dtype=float).copy()
    history: list = []
    total = 0
    status = "converged"
    offset = 0
    for level in levels:
        res = optimize_on_level(problem, level, q, tol_factor=tol_factor,
                                max_iter=max_iter_per_level, history=history,
                                iteration_offset=offset)
        q = res.q
        total += res.iterations
        offset = history[-1].iteration + 1
        status = res.status
        if status == "line_search_failed" and level != levels[-1]:
            # a stalled coarse search is still a usable warm start
            status = "converged"
    return OptResult(q=q, history=history, status=status, iterations=total)
