"""Forward solver: theta time stepping with the condensed approximate Newton.

Each Newton update solves three decoupled systems in sequence: the coupled
(p, v) momentum block, the solid velocity-deformation update, and the ALE
extension.  The Jacobian pieces are reused across steps and only reassembled
when the nonlinear contraction rate degrades; the residual is never
approximated, so the accepted states solve the unmodified discrete system.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import forms, linalg
from .fem import NCOMP
from .problem import Problem

_TRAJ_MAGIC = b"FSITRAJ1"


class Trajectory:
    """Ordered states U_0..U_N, in memory or streamed to disk.

    The disk format is a versioned binary: magic, a JSON header line and
    fixed-size float64 records, so single states can be loaded by seeking.
    """

    def __init__(self, n_nodes: int, ncomp: int = NCOMP, path: str | None = None, meta: dict | None = None):
        self.n_nodes = n_nodes
        self.ncomp = ncomp
        self.path = path
        self._states: list[np.ndarray] = []
        self._file = None
        self._count = 0
        self._record = n_nodes * ncomp * 8
        if path is not None:
            self._file = open(path, "wb+")
            header = dict(meta or {})
            header.update(n_nodes=n_nodes, ncomp=ncomp, dtype="float64")
            hb = json.dumps(header).encode()
            self._file.write(_TRAJ_MAGIC)
            self._file.write(len(hb).to_bytes(8, "little"))
            self._file.write(hb)
            self._data_start = self._file.tell()

    def append(self, U: np.ndarray) -> None:
        if self._file is not None:
            self._file.write(np.ascontiguousarray(U, dtype=np.float64).tobytes())
            self._count += 1
        else:
            self._states.append(U.copy())

    def get(self, n: int) -> np.ndarray:
        if self._file is not None:
            self._file.flush()
            self._file.seek(self._data_start + n * self._record)
            buf = self._file.read(self._record)
            return np.frombuffer(buf, dtype=np.float64).reshape(self.n_nodes, self.ncomp).copy()
        return self._states[n]

    def __len__(self) -> int:
        return self._count if self._file is not None else len(self._states)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()

    @classmethod
    def load(cls, path: str) -> "Trajectory":
        f = open(path, "rb")
        if f.read(8) != _TRAJ_MAGIC:
            raise IOError(f"{path}: not a trajectory file")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen).decode())
        obj = cls.__new__(cls)
        obj.n_nodes = header["n_nodes"]
        obj.ncomp = header["ncomp"]
        obj.path = path
        obj._states = []
        obj._file = f
        obj._record = obj.n_nodes * obj.ncomp * 8
        obj._data_start = f.tell()
        f.seek(0, os.SEEK_END)
        obj._count = (f.tell() - obj._data_start) // obj._record
        return obj


@dataclass
class StepStats:
    step: int
    newton_steps: int = 0
    assemblies: int = 0
    gmres_momentum: float = 0.0
    gmres_update: float = 0.0
    gmres_extension: float = 0.0
    solves: int = 0

    def add_linear(self, it_mom, it_upd, it_ext):
        self.gmres_momentum += it_mom
        self.gmres_update += it_upd
        self.gmres_extension += it_ext
        self.solves += 1

    def means(self):
        s = max(self.solves, 1)
        return (self.gmres_momentum / s, self.gmres_update / s, self.gmres_extension / s)


class PrimalLevelSolver:
    """Newton solver bound to one hierarchy level, with persistent matrices."""

    def __init__(self, problem: Problem, level: int):
        self.problem = problem
        self.level = level
        self.lv = problem.levels[level]
        self.lv.set_scheme(problem.scheme.k)
        self.ext_chain = problem.ext_chain(level)
        self.upd_chain = problem.upd_chain(level)
        self.mom_chain: linalg.SubproblemChain | None = None
        self.needs_assembly = True
        dom = self.lv.dm.node_domain
        self.rel_active = (dom > 0) & ~np.isin(np.arange(self.lv.n_nodes), self.lv.u_dirichlet)
        self.ext_active = (dom == 0) & ~np.isin(np.arange(self.lv.n_nodes), self.lv.u_dirichlet)

    # -- Jacobian management ---------------------------------------------------

    def ensure_momentum(self, Un, Um, stats: StepStats, prev_fields=None):
        if not self.needs_assembly and self.mom_chain is not None:
            return
        sch = self.problem.scheme
        K = self.lv.assemble_momentum(Un, Um, sch.theta, sch.k, prev_fields)
        if self.mom_chain is None:
            self.mom_chain = self.problem.momentum_chain(self.level, K)
        else:
            self.mom_chain.levels[-1].matrix = K
            self.mom_chain.refresh()
        self.needs_assembly = False
        stats.assemblies += 1

    # -- linear step -------------------------------------------------------------

    def solve_linear(self, r: np.ndarray, stats: StepStats) -> np.ndarray:
        """Solve the reduced Jacobian system for the Newton increment -r."""
        cfg = self.problem.solver
        lv = self.lv
        sch = self.problem.scheme
        n = lv.n_nodes
        r5 = r.reshape(n, NCOMP)

        # (1) coupled momentum block
        b3 = np.zeros((n, 3))
        b3[:, 0] = -r5[:, 0]
        b3[:, 1:] = -r5[:, 1:3]
        res_m = self.mom_chain.solve(b3.ravel(), rel_tol=cfg.gmres_tol, max_iter=cfg.gmres_max_iter)
        x3 = res_m.x.reshape(n, 3)
        x3.ravel()[~lv.free3] = 0.0
        dv = x3[:, 1:3]

        # (2) solid velocity-deformation update
        mdv = (lv.K_upd.csr() @ dv.ravel()).reshape(n, 2)
        rhs2 = np.zeros((n, 2))
        act = self.rel_active
        rhs2[act] = -r5[:, 3:5][act] + sch.k * sch.theta * mdv[act]
        it_upd = 0
        if cfg.update_by_vector_addition:
            du_rel = lv._upd_lu.solve(rhs2.ravel()).reshape(n, 2)
        else:
            res_u = self.upd_chain.solve(rhs2.ravel(), rel_tol=cfg.gmres_tol,
                                         max_iter=cfg.gmres_max_iter)
            du_rel = res_u.x.reshape(n, 2)
            it_upd = res_u.iterations
        du_rel[~act] = 0.0

        # (3) ALE extension with the interface increment as data
        eterm = (lv.K_ext.csr() @ du_rel.ravel()).reshape(n, 2)
        rhs3 = np.zeros((n, 2))
        ea = self.ext_active
        rhs3[ea] = -r5[:, 3:5][ea] - eterm[ea]
        res_e = self.ext_chain.solve(rhs3.ravel(), rel_tol=cfg.gmres_tol, max_iter=cfg.gmres_max_iter)
        du_f = res_e.x.reshape(n, 2)
        du_f[~ea] = 0.0

        delta = np.zeros((n, NCOMP))
        delta[:, :3] = x3
        delta[:, 3:5] = du_rel + du_f
        delta.ravel()[~lv.free5_flat] = 0.0
        stats.add_linear(res_m.iterations, it_upd, res_e.iterations)
        return delta.ravel()

    # -- one time step -------------------------------------------------------------

    def step(self, Um: np.ndarray, qn: float, n: int, guess: np.ndarray | None = None) -> tuple[np.ndarray, StepStats]:
        cfg = self.problem.solver
        sch = self.problem.scheme
        t_n = sch.time(n)
        stats = StepStats(step=n)
        U = (Um if guess is None else guess).copy()
        if guess is None:
            # predictor: advance the solid deformation by the update relation,
            # so the condensed stress linearization starts on the manifold
            # where it is exact
            act = self.rel_active
            U[act, 3:5] = Um[act, 3:5] + sch.k * Um[act, 1:3]
        self.lv.impose_bcs(U, self.problem.inflow_values(self.level, t_n))
        prev_fields = self.lv.state_fields(Um)
        r = self.lv.residual(U, Um, qn, sch.theta, sch.k, prev_fields=prev_fields)
        rnorm = float(np.linalg.norm(r))
        tol = max(cfg.newton_tol * rnorm, cfg.newton_abs_tol)
        uphill = 0
        while rnorm > tol:
            if stats.newton_steps >= cfg.newton_max_iter:
                raise linalg.SolverError(
                    f"Newton did not converge at step {n}: residual {rnorm:.3e} (target {tol:.3e})")
            self.ensure_momentum(U, Um, stats, prev_fields)
            delta = self.solve_linear(r, stats).reshape(-1, NCOMP)
            # residual halving; a full non-monotone step is kept when no
            # damped step decreases the residual (fresh Jacobian forced next)
            omega = 1.0
            full = None
            chosen = None
            for _ in range(cfg.line_search_max + 1):
                r_try = self.lv.residual(U + omega * delta, Um, qn, sch.theta, sch.k,
                                         prev_fields=prev_fields)
                rn_try = float(np.linalg.norm(r_try))
                if full is None:
                    full = (1.0, r_try, rn_try)
                if rn_try < rnorm:
                    chosen = (omega, r_try, rn_try)
                    break
                omega *= 0.5
            if chosen is None:
                chosen = full
                uphill += 1
                if uphill > 3 or chosen[2] > 1e3 * rnorm:
                    raise linalg.SolverError(
                        f"Newton diverging at step {n}: residual {chosen[2]:.3e} after "
                        f"{stats.newton_steps + 1} iterations")
            else:
                uphill = 0
            omega, r, rn_new = chosen
            rate = rn_new / rnorm if rnorm > 0 else 0.0
            U = U + omega * delta
            rnorm = rn_new
            stats.newton_steps += 1
            if rate > cfg.reassembly_gamma:
                self.needs_assembly = True
        return U, stats


def run_forward(problem: Problem, level: int, q: np.ndarray, store_path: str | None = None,
                solver: PrimalLevelSolver | None = None, U0: np.ndarray | None = None):
    """March the control q through all time steps; returns (Trajectory, [StepStats])."""
    sch = problem.scheme
    if len(q) != sch.n_steps:
        raise ValueError(f"control has {len(q)} entries, schedule needs {sch.n_steps}")
    ps = solver or PrimalLevelSolver(problem, level)
    lv = problem.levels[level]
    if U0 is None:
        U0 = lv.zero_state()
        lv.impose_bcs(U0, problem.inflow_values(level, sch.time(0)))
    traj = Trajectory(lv.n_nodes, NCOMP, path=store_path,
                      meta={"k": sch.k, "n_steps": sch.n_steps, "level": level})
    traj.append(U0)
    stats = []
    U = U0
    for n in range(1, sch.n_steps + 1):
        try:
            U, st = ps.step(U, float(q[n - 1]), n)
        except (linalg.SolverError, forms.EntanglementError) as exc:
            traj.close()
            raise linalg.SolverError(f"forward run aborted at step {n}: {exc}") from exc
        traj.append(U)
        stats.append(st)
    return traj, stats


# ----------------------------------------------------------------------------
# full-Jacobian direct solver (oracle path for condensation-equivalence tests)


def assemble_full_jacobian(problem: Problem, level: int, Un, Um):
    """Exact step Jacobian as one sparse matrix in the 5-component layout."""
    lv = problem.levels[level]
    sch = problem.scheme
    a_f, a_s, s_s = lv.jacobian_blocks(Un, Um, sch.theta, sch.k)
    bm = linalg.BlockMatrix(lv.pattern, NCOMP)
    lv.pattern.scatter(bm.data, lv.dm.fluid_elems, a_f)
    lv.pattern.scatter(bm.data, lv.dm.solid_elems, a_s)
    if len(lv.dm.solid_elems):
        nloc = lv.dm.basis.nloc
        n_s = len(lv.dm.solid_elems)
        emb = np.zeros((n_s, nloc * NCOMP, nloc * NCOMP))
        ev = emb.reshape(n_s, nloc, NCOMP, nloc, NCOMP)
        sv = s_s.reshape(n_s, nloc, 2, nloc, 2)
        for a in range(2):
            for c in range(2):
                ev[:, :, 1 + a, :, 3 + c] = sv[:, :, a, :, c]
        lv.pattern.scatter(bm.data, lv.dm.solid_elems, emb)
    bm.impose_identity_rows([lv.p_fixed, lv.v_dirichlet, lv.v_dirichlet,
                             lv.u_dirichlet, lv.u_dirichlet])
    return bm


def step_direct(problem: Problem, level: int, Um, qn: float, n: int,
                tol: float = 1e-11, max_iter: int = 30):
    """Newton step with the exact (uncondensed) Jacobian and a sparse direct
    solver; reference path for condensation-equivalence checks."""
    import scipy.sparse.linalg as spla

    lv = problem.levels[level]
    sch = problem.scheme
    U = Um.copy()
    lv.impose_bcs(U, problem.inflow_values(level, sch.time(n)))
    r = lv.residual(U, Um, qn, sch.theta, sch.k)
    rnorm = float(np.linalg.norm(r))
    target = max(tol * rnorm, 1e-14)
    it = 0
    while rnorm > target and it < max_iter:
        K = assemble_full_jacobian(problem, level, U, Um)
        lu = spla.splu(K.csr().tocsc())
        delta = lu.solve(-r)
        delta[~lv.free5_flat] = 0.0
        U = U + delta.reshape(-1, NCOMP)
        r = lv.residual(U, Um, qn, sch.theta, sch.k)
        rnorm = float(np.linalg.norm(r))
        it += 1
    return U, rnorm
