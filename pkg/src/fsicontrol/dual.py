"""Backward-in-time adjoint solver.

Each dual time step is the transpose of the exact step Jacobian (geometric
couplings included), solved by a preconditioned Richardson iteration.  The
preconditioner drops the fluid geometry derivatives and, after the solid
substitution that removes the adjoint deformation from the momentum block,
decomposes into three sub-solves: adjoint ALE extension, adjoint solid
update, and the transposed coupled momentum block.  The residual always uses
the full transpose, so the converged multipliers are the exact discrete ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .fem import NCOMP
from .primal import StepStats, Trajectory
from .problem import Problem


@dataclass
class DualStepStats:
    step: int
    richardson_steps: int = 0
    assemblies: int = 0
    gmres_extension: float = 0.0
    gmres_update: float = 0.0
    gmres_momentum: float = 0.0
    solves: int = 0

    def add_linear(self, it_ext, it_upd, it_mom):
        self.gmres_extension += it_ext
        self.gmres_update += it_upd
        self.gmres_momentum += it_mom
        self.solves += 1

    def means(self):
        s = max(self.solves, 1)
        return (self.gmres_extension / s, self.gmres_update / s, self.gmres_momentum / s)


class DualLevelSolver:
    def __init__(self, problem: Problem, level: int):
        self.problem = problem
        self.level = level
        self.lv = problem.levels[level]
        self.lv.set_scheme(problem.scheme.k)
        self.ext_chain = problem.ext_chain(level)
        self.upd_chain = problem.upd_chain(level)
        self.mom_chain = None
        lv = self.lv
        dom = lv.dm.node_domain
        udir = np.isin(np.arange(lv.n_nodes), lv.u_dirichlet)
        self.rel_active = (dom > 0) & ~udir
        self.ext_active = (dom == 0) & ~udir

    def _precond(self, r: np.ndarray, s_solid, stats: DualStepStats) -> np.ndarray:
        cfg = self.problem.solver
        sch = self.problem.scheme
        lv = self.lv
        n = lv.n_nodes
        r5 = r.reshape(n, NCOMP)

        # (1) adjoint mesh-motion extension (zero Dirichlet data on the interface)
        rhs = np.zeros((n, 2))
        rhs[self.ext_active] = r5[self.ext_active, 3:5]
        res_e = self.ext_chain.solve(rhs.ravel(), rel_tol=cfg.gmres_tol,
                                     max_iter=cfg.gmres_max_iter, transpose=True)
        zuf = res_e.x.reshape(n, 2)
        zuf[~self.ext_active] = 0.0

        # (2) adjoint solid update; geometry coupling enters through the
        # transposed extension columns on the interface
        eterm = (lv.K_ext.csr_transpose() @ zuf.ravel()).reshape(n, 2)
        rhs2 = np.zeros((n, 2))
        rhs2[self.rel_active] = r5[self.rel_active, 3:5] - eterm[self.rel_active]
        res_u = self.upd_chain.solve(rhs2.ravel(), rel_tol=cfg.gmres_tol,
                                     max_iter=cfg.gmres_max_iter, transpose=True)
        ztilde = res_u.x.reshape(n, 2)
        ztilde[~self.rel_active] = 0.0

        # (3) transposed coupled momentum block
        w = (lv.K_upd.csr_transpose() @ ztilde.ravel()).reshape(n, 2)
        rhs3 = np.zeros((n, 3))
        rhs3[:, 0] = r5[:, 0]
        rhs3[:, 1:3] = r5[:, 1:3] + sch.k * sch.theta * w
        res_m = self.mom_chain.solve(rhs3.ravel(), rel_tol=cfg.gmres_tol,
                                     max_iter=cfg.gmres_max_iter, transpose=True)
        x3 = res_m.x.reshape(n, 3)
        x3.ravel()[~lv.free3] = 0.0

        # recover the adjoint solid deformation from the substituted variable
        s = lv.stress_apply_T(s_solid, x3[:, 1:3].ravel())
        y = lv._upd_lu.solve(s.ravel(), trans="T").reshape(n, 2)
        zus = ztilde - y
        zus[~self.rel_active] = 0.0

        dZ = np.zeros((n, NCOMP))
        dZ[:, 0] = x3[:, 0]
        dZ[:, 1:3] = x3[:, 1:3]
        dZ[:, 3:5] = zuf + zus
        flat = dZ.ravel()
        flat[~lv.free5_flat] = 0.0
        stats.add_linear(res_e.iterations, res_u.iterations, res_m.iterations)
        return flat

    def solve_step(self, n: int, Un, Um, b: np.ndarray):
        """Solve the transposed step system A'(U_n)^T Z = b by Richardson."""
        cfg = self.problem.solver
        sch = self.problem.scheme
        lv = self.lv
        stats = DualStepStats(step=n)

        blocks = lv.jacobian_blocks(Un, Um, sch.theta, sch.k)
        op = lv.full_operator(blocks, transpose=True)
        K = lv.assemble_momentum(Un, Um, sch.theta, sch.k)
        if self.mom_chain is None:
            self.mom_chain = self.problem.momentum_chain(self.level, K)
        else:
            self.mom_chain.levels[-1].matrix = K
            self.mom_chain.refresh()
        stats.assemblies += 1

        # iterate on the free rows; constrained multipliers follow explicitly
        free = lv.free5_flat
        Z = np.zeros_like(b)
        bnorm = float(np.linalg.norm(np.where(free, b, 0.0)))
        if bnorm == 0.0 and float(np.linalg.norm(b)) == 0.0:
            return Z, stats
        r = b - op(Z)
        history = [1.0]
        while bnorm > 0.0:
            dZ = self._precond(r, blocks[2], stats)
            Z = Z + dZ
            r = b - op(Z)
            rel = float(np.linalg.norm(np.where(free, r, 0.0))) / bnorm
            history.append(rel)
            stats.richardson_steps += 1
            if rel <= cfg.richardson_tol:
                break
            if stats.richardson_steps >= cfg.richardson_max_iter:
                raise linalg.SolverError(
                    f"Richardson exceeded {cfg.richardson_max_iter} iterations at step {n}; "
                    f"history {['%.2e' % h for h in history]}")
            if len(history) >= 4 and history[-1] >= history[-4]:
                raise linalg.SolverError(
                    f"Richardson stagnated at step {n}; history {['%.2e' % h for h in history]}")
        # constrained rows: z_c = b_c - (A^T P_free Z)_c, i.e. the current
        # residual entries (Z was zero there during the iteration)
        Z[~free] = r[~free]
        return Z, stats


def dual_step_rhs(problem: Problem, level: int, traj: Trajectory, n: int,
                  Z_next: np.ndarray | None, U_np1: np.ndarray | None = None) -> np.ndarray:
    """Right-hand side of the transposed system at step n: tracking-misfit
    gradient plus the coupling to the already-computed step n+1 multipliers."""
    lv = problem.levels[level]
    sch = problem.scheme
    fc = problem.functional
    Un = traj.get(n)
    b = lv.tracking_rhs(Un, n, sch.time(n), fc, sch.weight(n))
    if Z_next is not None:
        if U_np1 is None:
            U_np1 = traj.get(n + 1)
        c_f, c_s = lv.cross_blocks(U_np1, Un, sch.theta, sch.k)
        zm = np.where(lv.free5_flat, Z_next, 0.0)
        b = b - lv.blocks_apply_T(c_f, c_s, zm)
    return b


def run_backward(problem: Problem, level: int, traj: Trajectory):
    """Solve the dual problem for n = N..0; returns (states list, [DualStepStats])."""
    sch = problem.scheme
    lv = problem.levels[level]
    ds = DualLevelSolver(problem, level)
    N = sch.n_steps
    Z = [None] * (N + 1)
    stats: list[DualStepStats] = []
    Z_next = None
    U_np1 = None
    for n in range(N, 0, -1):
        Un = traj.get(n)
        Um = traj.get(n - 1)
        b = dual_step_rhs(problem, level, traj, n, Z_next, U_np1)
        Zn, st = ds.solve_step(n, Un, Um, b)
        Z[n] = Zn
        stats.append(st)
        Z_next, U_np1 = Zn, Un
    # n = 0: mass-matrix identities only (no control sensitivity)
    b0 = dual_step_rhs(problem, level, traj, 0, Z_next, U_np1).reshape(-1, NCOMP)
    Z0 = np.zeros_like(b0)
    zv = lv.v_mass_lu().solve(b0[:, 1:3].ravel(), trans="T").reshape(-1, 2)
    Z0[:, 1:3] = zv
    zus = lv._upd_lu.solve(b0[:, 3:5].ravel(), trans="T").reshape(-1, 2)
    zus[~ds.rel_active] = 0.0
    Z0[:, 3:5] = zus
    Z[0] = Z0.ravel()
    return Z, stats


# ----------------------------------------------------------------------------
# substitution utilities and the dense oracle


def ztilde_substitute(problem: Problem, level: int, s_solid, Z: np.ndarray) -> np.ndarray:
    """Map original multipliers to the substituted variable:
    ztilde = z_us + M^{-T} (k theta A_S')^T z_v (on the solid update rows)."""
    lv = problem.levels[level]
    n = lv.n_nodes
    Z5 = Z.reshape(n, NCOMP).copy()
    zm = np.where(lv.free5.ravel(), Z, 0.0).reshape(n, NCOMP)
    s = lv.stress_apply_T(s_solid, zm[:, 1:3].ravel())
    y = lv._upd_lu.solve(s.ravel(), trans="T").reshape(n, 2)
    dom = lv.dm.node_domain
    act = (dom > 0) & ~np.isin(np.arange(n), lv.u_dirichlet)
    Z5[act, 3:5] += y[act]
    return Z5.ravel()


def ztilde_recover(problem: Problem, level: int, s_solid, Zt: np.ndarray) -> np.ndarray:
    lv = problem.levels[level]
    n = lv.n_nodes
    Z5 = Zt.reshape(n, NCOMP).copy()
    zm = np.where(lv.free5.ravel(), Zt, 0.0).reshape(n, NCOMP)
    s = lv.stress_apply_T(s_solid, zm[:, 1:3].ravel())
    y = lv._upd_lu.solve(s.ravel(), trans="T").reshape(n, 2)
    dom = lv.dm.node_domain
    act = (dom > 0) & ~np.isin(np.arange(n), lv.u_dirichlet)
    Z5[act, 3:5] -= y[act]
    return Z5.ravel()


def dual_step_dense_oracle(problem: Problem, level: int, Un, Um, b: np.ndarray) -> np.ndarray:
    """Direct transpose solve of the exact step Jacobian (original variables)."""
    import scipy.sparse.linalg as spla

    from .primal import assemble_full_jacobian

    K = assemble_full_jacobian(problem, level, Un, Um)
    lu = spla.splu(K.csr().tocsc())
    return lu.solve(b, trans="T")
