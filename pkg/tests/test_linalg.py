import io

import numpy as np
import pytest
import scipy.sparse as sp

from fsicontrol import linalg
from fsicontrol.fem import NCOMP

from conftest import random_state


def test_gmres_identity_one_iteration(rng):
    b = rng.standard_normal(40)
    res = linalg.gmres_solve(lambda x: x, b, rel_tol=1e-12)
    assert res.converged
    assert res.iterations == 1
    assert np.allclose(res.x, b)


def test_gmres_spd_diagonal_finite_termination(rng):
    n = 25
    d = np.arange(1.0, n + 1.0)
    b = rng.standard_normal(n)
    res = linalg.gmres_solve(lambda x: d * x, b, rel_tol=1e-12, max_iter=n,
                             precond=lambda x: x / d)
    assert res.converged
    assert res.iterations <= n
    assert np.linalg.norm(b - d * res.x) <= 1e-12 * np.linalg.norm(b)


def test_gmres_residual_monotone(rng):
    n = 60
    A = sp.random(n, n, density=0.2, random_state=7).toarray() + 3 * np.eye(n)
    b = rng.standard_normal(n)
    hist = []
    linalg.gmres_solve(lambda x: A @ x, b, rel_tol=1e-10, max_iter=n, callback=hist.append)
    assert all(h2 <= h1 + 1e-13 for h1, h2 in zip(hist, hist[1:]))


def test_gmres_zero_rhs():
    res = linalg.gmres_solve(lambda x: 2 * x, np.zeros(5))
    assert res.converged and res.iterations == 0


def test_gmres_reports_stagnation():
    # singular operator that annihilates the rhs direction entirely
    n = 6
    P = np.eye(n)
    P[0, 0] = 0.0
    b = np.zeros(n)
    b[0] = 1.0
    res = linalg.gmres_solve(lambda x: P @ x, b, rel_tol=1e-12, max_iter=10)
    assert not res.converged
    assert res.breakdown
    assert res.residual_norm > 0


def test_block_matrix_adjoint_identity(tiny_problem, rng):
    lv = tiny_problem.levels[0]
    sch = tiny_problem.scheme
    U = random_state(lv, rng)
    K = lv.assemble_momentum(U, lv.zero_state(), sch.theta, sch.k)
    for _ in range(10):
        x = rng.standard_normal(K.shape[0])
        y = rng.standard_normal(K.shape[0])
        a = float(K.apply(x) @ y)
        b = float(x @ K.apply_transpose(y))
        assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)


def test_block_matrix_symmetric_transpose(tiny_problem, rng):
    lv = tiny_problem.levels[0]
    pat = lv.pattern
    n = pat.n_nodes
    data = rng.standard_normal((pat.n_blocks, 2, 2))
    keys = pat.rows.astype(np.int64) * n + pat.cols
    tpos = np.searchsorted(keys, pat.cols.astype(np.int64) * n + pat.rows)
    sym = 0.5 * (data + data[tpos].transpose(0, 2, 1))
    M = linalg.BlockMatrix(pat, 2, sym)
    x = rng.standard_normal(M.shape[0])
    assert np.allclose(M.apply(x), M.apply_transpose(x), atol=1e-13)


def test_block_matrix_coordinate_dump(tiny_problem):
    lv = tiny_problem.levels[0]
    buf = io.StringIO()
    lv.K_upd.dump_coordinate(buf)
    lines = [ln for ln in buf.getvalue().splitlines() if not ln.startswith("#")]
    assert len(lines) == lv.pattern.n_blocks
    first = lines[0].split()
    assert len(first) == 2 + 4  # row, col, 2x2 block


def test_vanka_single_patch_exact(rng):
    n = 12
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    csr = sp.csr_matrix(A)
    cl = linalg.PatchClass(node_lists=np.arange(n)[None, :],
                           dofs=np.arange(n)[None, :], colors=np.zeros(1, dtype=int))
    ps = linalg.VankaPatchSet(classes=[cl], n_colors=1, ncomp=1)
    posmaps = ps.compute_posmaps(csr)
    invs = ps.factorize(csr, posmaps)
    b = rng.standard_normal(n)
    x = linalg.vanka_smooth(csr, ps, invs, np.zeros(n), b, sweeps=1)
    assert np.linalg.norm(b - A @ x) <= 1e-12 * np.linalg.norm(b)


def test_vanka_diagonal_single_node_patches(rng):
    n = 9
    d = np.arange(2.0, n + 2.0)
    csr = sp.csr_matrix(np.diag(d))
    cl = linalg.PatchClass(node_lists=np.arange(n)[:, None],
                           dofs=np.arange(n)[:, None], colors=np.zeros(n, dtype=int))
    ps = linalg.VankaPatchSet(classes=[cl], n_colors=1, ncomp=1)
    posmaps = ps.compute_posmaps(csr)
    invs = ps.factorize(csr, posmaps)
    b = rng.standard_normal(n)
    x = linalg.vanka_smooth(csr, ps, invs, np.zeros(n), b, sweeps=1)
    assert np.allclose(x, b / d)


def test_vanka_singular_patch_reported():
    n = 4
    A = np.ones((n, n))  # rank one: structurally present but singular
    csr = sp.csr_matrix(A)
    cl = linalg.PatchClass(node_lists=np.arange(n)[None, :],
                           dofs=np.arange(n)[None, :], colors=np.zeros(1, dtype=int))
    ps = linalg.VankaPatchSet(classes=[cl], n_colors=1, ncomp=1)
    posmaps = ps.compute_posmaps(csr)
    with pytest.raises(linalg.SingularPatchError):
        ps.factorize(csr, posmaps)


def test_vanka_momentum_smoothing_monotone(tiny_problem, rng):
    """Sweeps on the assembled saddle-point momentum block reduce the
    residual monotonically."""
    lv = tiny_problem.levels[0]
    sch = tiny_problem.scheme
    U = random_state(lv, rng)
    K = lv.assemble_momentum(U, lv.zero_state(), sch.theta, sch.k)
    csr = K.csr()
    ps = lv.patch_mom
    posmaps = ps.compute_posmaps(csr)
    invs = ps.factorize(csr, posmaps)
    r = lv.residual(U, lv.zero_state(), 0.5, sch.theta, sch.k).reshape(-1, NCOMP)
    b = np.concatenate([r[:, 0:1], r[:, 1:3]], axis=1).ravel()
    x = np.zeros_like(b)
    norms = [np.linalg.norm(b)]
    for _ in range(3):
        x = linalg.vanka_smooth(csr, ps, invs, x, b, sweeps=1)
        norms.append(np.linalg.norm(b - csr @ x))
    assert all(n2 < n1 for n1, n2 in zip(norms, norms[1:]))


def test_patch_coverage(tiny_problem_2l):
    for lv in tiny_problem_2l.levels:
        covered = np.zeros(lv.n_nodes, dtype=bool)
        for cl in lv.patch_mom.classes:
            covered[cl.node_lists.ravel()] = True
        assert covered.all()


def test_patch_colors_are_write_disjoint(tiny_problem_2l):
    lv = tiny_problem_2l.levels[1]
    ps = lv.patch_mom
    for color in range(ps.n_colors):
        seen = set()
        for cl in ps.classes:
            for pidx in np.nonzero(cl.colors == color)[0]:
                nodes = set(cl.node_lists[pidx].tolist())
                assert not (nodes & seen)
                seen |= nodes


def test_mg_single_level_equals_direct(tiny_problem, rng):
    chain = tiny_problem.ext_chain(0)
    b = rng.standard_normal(tiny_problem.levels[0].n_nodes * 2)
    x = chain.vcycle(0, b)
    A = chain.csr(0)
    assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)


def test_mg_two_level_contraction_below_half(tiny_problem_2l, rng):
    """Power iteration on the V-cycle error propagation operator of the
    extension (Poisson-like) block."""
    prob = tiny_problem_2l
    chain = prob.ext_chain(1)
    A = chain.csr(1)
    n = A.shape[0]
    e = rng.standard_normal(n)
    free = prob.levels[1].free2
    e[~free] = 0.0
    e /= np.linalg.norm(e)
    rho = None
    for _ in range(12):
        e = e - chain.vcycle(1, A @ e)
        rho = np.linalg.norm(e)
        if rho < 1e-14:
            break
        e /= rho
    assert rho < 0.5


def test_mg_preconditioned_gmres_subproblems_within_50(tiny_problem_2l, rng):
    prob = tiny_problem_2l
    lv = prob.levels[1]
    sch = prob.scheme
    U = random_state(lv, rng, scale=1e-3)
    K = lv.assemble_momentum(U, lv.zero_state(), sch.theta, sch.k)
    mom = prob.momentum_chain(1, K)
    for chain in (mom, prob.ext_chain(1), prob.upd_chain(1)):
        b = rng.standard_normal(chain.csr(len(chain.levels) - 1).shape[0])
        res = chain.solve(b, rel_tol=1e-4, max_iter=50)
        assert res.converged
        assert res.iterations <= 50


def test_prolongation_reproduces_coarse_nodal_fields(tiny_problem_2l):
    prob = tiny_problem_2l
    P = prob.P_scalar[0]
    dmc, dmf = prob.levels[0].dm, prob.levels[1].dm
    f_c = np.sin(3 * dmc.node_xy[:, 0]) + dmc.node_xy[:, 1] ** 2
    f_f = P @ f_c
    # coarse nodes are a subset of fine nodes: values must match exactly there
    coord_map = {(round(float(x), 12), round(float(y), 12)): i
                 for i, (x, y) in enumerate(dmf.node_xy)}
    for i, (x, y) in enumerate(dmc.node_xy):
        j = coord_map[(round(float(x), 12), round(float(y), 12))]
        assert f_f[j] == pytest.approx(f_c[i], abs=1e-13)


def test_prolongation_exact_for_polynomials(tiny_problem_2l):
    # degree-1 space: linear fields interpolate exactly at every fine node
    prob = tiny_problem_2l
    P = prob.P_scalar[0]
    dmc, dmf = prob.levels[0].dm, prob.levels[1].dm
    f_c = 2.0 + 3.0 * dmc.node_xy[:, 0] - dmc.node_xy[:, 1]
    f_f_expect = 2.0 + 3.0 * dmf.node_xy[:, 0] - dmf.node_xy[:, 1]
    assert np.abs(P @ f_c - f_f_expect).max() <= 1e-12
