"""Node-blocked sparse operators, GMRES, Vanka smoothing and geometric multigrid.

The same machinery serves the three primal subproblems and, through exact
transposition (shared data, transposed patch inverses, ``trans='T'`` coarse
solves), the three adjoint subproblems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import BlockPattern, DofMap


class SolverError(RuntimeError):
    pass


class SingularPatchError(SolverError):
    def __init__(self, patch_id, nodes):
        super().__init__(f"singular Vanka patch {patch_id} (nodes {list(nodes)[:8]}...)")
        self.patch_id = patch_id
        self.nodes = nodes


# ----------------------------------------------------------------------------
# block matrix


class BlockMatrix:
    """Node-block sparse matrix: dense (c x c) blocks on the element graph.

    ``apply`` and ``apply_transpose`` share the same stored data so the
    adjoint identity <Ax, y> = <x, A^T y> holds to round-off.
    """

    def __init__(self, pattern: BlockPattern, ncomp: int, data: np.ndarray | None = None):
        self.pattern = pattern
        self.ncomp = ncomp
        self.data = pattern.empty_data(ncomp) if data is None else data
        self._csr = None
        self._csr_T = None

    @property
    def shape(self):
        n = self.pattern.n_nodes * self.ncomp
        return (n, n)

    def invalidate(self):
        self._csr = None
        self._csr_T = None

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = self.pattern.to_bsr(self.data).tocsr()
        return self._csr

    def csr_transpose(self) -> sp.csr_matrix:
        if self._csr_T is None:
            self._csr_T = self.csr().T.tocsr()
        return self._csr_T

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.csr() @ x

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        return self.csr_transpose() @ x

    def impose_identity_rows(self, constrained_by_comp) -> None:
        """Replace rows of constrained (node, comp) dofs by unit rows.

        constrained_by_comp: sequence over comp index of node-id arrays.
        """
        for c, nodes in enumerate(constrained_by_comp):
            if nodes is None or len(nodes) == 0:
                continue
            blocks = self.pattern.row_blocks(nodes)
            self.data[blocks, c, :] = 0.0
            self.data[self.pattern.diag_pos[nodes], c, c] = 1.0
        self.invalidate()

    def dump_coordinate(self, fileobj) -> None:
        """Plain-text (row-node, col-node, block) coordinate dump."""
        fileobj.write(f"# fsicontrol block matrix: {self.pattern.n_nodes} nodes, "
                      f"block {self.ncomp}x{self.ncomp}\n")
        for b in range(self.pattern.n_blocks):
            i, j = self.pattern.rows[b], self.pattern.cols[b]
            flat = " ".join(f"{v:.16g}" for v in self.data[b].ravel())
            fileobj.write(f"{i} {j} {flat}\n")


# ----------------------------------------------------------------------------
# GMRES


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    rel_residual: float
    converged: bool
    breakdown: bool = False


def gmres_solve(apply_op, b, rel_tol=1e-4, max_iter=100, restart=100, precond=None,
                callback=None) -> GmresResult:
    """Right-preconditioned restarted GMRES with Givens rotations.

    The preconditioner must be a *linear* operator (callable); convergence is
    declared on the true residual norm relative to ||b||.  ``callback`` is
    invoked with the residual-norm estimate after every iteration.
    """
    n = len(b)
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return GmresResult(x, 0, 0.0, 0.0, True)
    target = rel_tol * bnorm
    if precond is None:
        precond = lambda v: v

    total_it = 0
    r = b.copy()
    rnorm = bnorm
    breakdown = False
    while total_it < max_iter:
        m = min(restart, max_iter - total_it)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / rnorm
        g[0] = rnorm
        k_used = 0
        for j in range(m):
            # copy: operators may return (a view of) their argument
            w = np.array(apply_op(precond(V[j])), dtype=float, copy=True)
            for i in range(j + 1):
                H[i, j] = np.dot(w, V[i])
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            happy = H[j + 1, j] < 1e-14 * bnorm
            if not happy:
                V[j + 1] = w / H[j + 1, j]
            # apply stored rotations
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                breakdown = True
                k_used = j
                break
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_it += 1
            k_used = j + 1
            if callback is not None:
                callback(abs(g[j + 1]))
            if abs(g[j + 1]) <= target or happy:
                break
        if k_used > 0:
            y = np.zeros(k_used)
            for i in range(k_used - 1, -1, -1):
                y[i] = (g[i] - H[i, i + 1 : k_used] @ y[i + 1 : k_used]) / H[i, i]
            x = x + precond(V[:k_used].T @ y)
        r = b - apply_op(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return GmresResult(x, total_it, rnorm, rnorm / bnorm, True, breakdown)
        if breakdown or k_used == 0:
            # stagnation: report with residual attached
            return GmresResult(x, total_it, rnorm, rnorm / bnorm, False, True)
    return GmresResult(x, total_it, rnorm, rnorm / bnorm, False, breakdown)


# ----------------------------------------------------------------------------
# Vanka patches


@dataclass
class PatchClass:
    node_lists: np.ndarray  # (n_patch, nodes_per_patch)
    dofs: np.ndarray  # (n_patch, s)
    colors: np.ndarray  # (n_patch,)


@dataclass
class VankaPatchSet:
    """Patches: all dofs of one fluid element, or of the 2^d solid elements
    sharing a coarse parent (single solid elements on the coarsest level).
    Patch order is lexicographic by lowest node index; a greedy coloring over
    shared nodes yields write-disjoint groups."""

    classes: list[PatchClass]
    n_colors: int
    ncomp: int

    def color_groups(self):
        """Per color, per class: selected patch indices (None when empty)."""
        if not hasattr(self, "_groups"):
            groups = []
            for color in range(self.n_colors):
                row = []
                for cl in self.classes:
                    sel = np.nonzero(cl.colors == color)[0]
                    row.append(sel if len(sel) else None)
                groups.append(row)
            self._groups = groups
        return self._groups

    @classmethod
    def build(cls, dm: DofMap, ncomp: int, solid_parents: np.ndarray | None = None):
        node_groups: list[np.ndarray] = []
        for e in dm.fluid_elems:
            node_groups.append(np.unique(dm.elem_nodes[e]))
        if len(dm.solid_elems):
            if solid_parents is None:
                for e in dm.solid_elems:
                    node_groups.append(np.unique(dm.elem_nodes[e]))
            else:
                groups: dict[int, list[int]] = {}
                for e in dm.solid_elems:
                    groups.setdefault(int(solid_parents[e]), []).append(e)
                for parent in sorted(groups):
                    es = groups[parent]
                    node_groups.append(np.unique(dm.elem_nodes[es].ravel()))
        node_groups.sort(key=lambda ns: int(ns[0]))
        colors = _greedy_coloring(node_groups, dm.n_nodes)

        by_size: dict[int, list[int]] = {}
        for p, ns in enumerate(node_groups):
            by_size.setdefault(len(ns), []).append(p)
        classes = []
        for size in sorted(by_size):
            idx = by_size[size]
            nl = np.array([node_groups[p] for p in idx])
            dofs = (nl[:, :, None] * ncomp + np.arange(ncomp)[None, None, :]).reshape(len(idx), -1)
            classes.append(PatchClass(node_lists=nl, dofs=dofs, colors=colors[idx]))
        return cls(classes=classes, n_colors=int(colors.max()) + 1 if len(colors) else 0, ncomp=ncomp)

    def compute_posmaps(self, csr: sp.csr_matrix) -> list[np.ndarray]:
        """Data positions of every patch entry in this csr pattern (missing -> -1)."""
        indptr, indices = csr.indptr, csr.indices
        out = []
        for cl in self.classes:
            npch, s = cl.dofs.shape
            pos = np.full((npch, s, s), -1, dtype=np.int64)
            for p in range(npch):
                d = cl.dofs[p]
                for a in range(s):
                    row = d[a]
                    lo, hi = indptr[row], indptr[row + 1]
                    if hi == lo:
                        continue
                    loc = np.searchsorted(indices[lo:hi], d)
                    ok = (loc < hi - lo)
                    okloc = np.where(ok, np.minimum(loc, hi - lo - 1), 0)
                    hit = ok & (indices[lo + okloc] == d)
                    pos[p, a, hit] = lo + loc[hit]
            out.append(pos)
        return out

    def extract(self, csr: sp.csr_matrix, posmaps) -> list[np.ndarray]:
        data = np.append(csr.data, 0.0)
        return [data[pm] for pm in posmaps]

    def factorize(self, csr: sp.csr_matrix, posmaps) -> list[np.ndarray]:
        mats = self.extract(csr, posmaps)
        invs = []
        base = 0
        for cl, m in zip(self.classes, mats):
            try:
                invs.append(np.linalg.inv(m))
            except np.linalg.LinAlgError:
                dets = np.abs(np.linalg.det(m))
                bad = int(np.argmin(dets))
                raise SingularPatchError(base + bad, cl.node_lists[bad]) from None
            base += m.shape[0]
        return invs


def _greedy_coloring(node_groups, n_nodes) -> np.ndarray:
    node_to_patches: list[list[int]] = [[] for _ in range(n_nodes)]
    for p, ns in enumerate(node_groups):
        for n in ns:
            node_to_patches[n].append(p)
    colors = -np.ones(len(node_groups), dtype=int)
    for p, ns in enumerate(node_groups):
        used = set()
        for n in ns:
            for q in node_to_patches[n]:
                if colors[q] >= 0:
                    used.add(colors[q])
        c = 0
        while c in used:
            c += 1
        colors[p] = c
    return colors


def color_columns(patchset: VankaPatchSet, csr) -> list:
    """Per color: (column dof array, column submatrix of csr) so residuals can
    be updated incrementally after each color's write-disjoint patch solves."""
    csc = csr.tocsc()
    out = []
    for color_sel in patchset.color_groups():
        cols = np.concatenate([
            patchset.classes[ci].dofs[sel].ravel()
            for ci, sel in enumerate(color_sel) if sel is not None
        ])
        out.append((cols, csc[:, cols].tocsr()))
    return out


def vanka_smooth(csr, patchset: VankaPatchSet, invs, x, b, sweeps=1, omega=1.0,
                 transpose=False, col_subs=None, return_residual=False):
    """Multiplicative Vanka sweeps (color-sequential, vectorized per color;
    patches within a color are dof-disjoint).

    With ``col_subs`` (from :func:`color_columns`) the residual is maintained
    incrementally: one full matvec per call instead of one per color.
    """
    if transpose:
        invs = [np.swapaxes(m, -1, -2) for m in invs]
    groups = patchset.color_groups()
    r = b - csr @ x
    for sweep in range(sweeps):
        for color, color_sel in enumerate(groups):
            dx_parts = []
            for (ci, sel), inv in zip(enumerate(color_sel), invs):
                if sel is None:
                    continue
                cl = patchset.classes[ci]
                d = cl.dofs[sel]
                upd = omega * np.matmul(inv[sel], r[d][:, :, None])[:, :, 0]
                x[d.ravel()] += upd.ravel()
                dx_parts.append(upd.ravel())
            last = (sweep == sweeps - 1) and (color == len(groups) - 1)
            if col_subs is not None:
                if not (last and not return_residual):
                    r -= col_subs[color][1] @ np.concatenate(dx_parts)
            elif not last:
                r = b - csr @ x
            elif return_residual:
                r = b - csr @ x
    if return_residual:
        return x, r
    return x


# ----------------------------------------------------------------------------
# geometric multigrid chain for one subproblem


@dataclass
class ChainLevel:
    matrix: BlockMatrix | None
    patchset: VankaPatchSet
    fixed_dofs: np.ndarray | None = None  # identity rows to pin after Galerkin coarsening
    invs: list[np.ndarray] | None = None
    invs_T: list[np.ndarray] | None = None
    posmaps: list[np.ndarray] | None = None
    col_subs: list | None = None
    col_subs_T: list | None = None
    _pos_nnz: int = -1


class SubproblemChain:
    """Multigrid-preconditioned GMRES for one subproblem across mesh levels.

    prolongations[l] maps level l -> level l+1 (comp-blocked, with constrained
    rows/columns zeroed).  With galerkin=True coarse operators are triple
    products of the finest matrix; otherwise every level supplies its own
    (rediscretized) matrix.  The coarsest level is solved by sparse LU;
    transposed solves reuse all factored data exactly.
    """

    def __init__(self, levels: list[ChainLevel], prolongations: list[sp.csr_matrix],
                 smooth_steps: int = 2, omega: float = 1.0, galerkin: bool = True):
        self.levels = levels
        self.P = prolongations
        self.smooth_steps = smooth_steps
        self.omega = omega
        self.galerkin = galerkin
        self._lu = None
        self._csr = [None] * len(levels)
        self._csr_T = [None] * len(levels)
        self._canon = [None] * len(levels)  # stable coarse patterns (galerkin)
        self.refresh()

    def _canonical_pattern(self, l: int, shape):
        """Structural union pattern of the level-l Galerkin product (sparse
        products prune accidental zeros, which would invalidate cached patch
        maps; positive symbolic data cannot cancel)."""
        if self._canon[l] is None:
            top = len(self.levels) - 1
            U = sp.csr_matrix(
                (np.ones_like(self.levels[top].matrix.csr().data),
                 self.levels[top].matrix.csr().indices,
                 self.levels[top].matrix.csr().indptr),
                shape=self.levels[top].matrix.csr().shape)
            for m in range(top - 1, l - 1, -1):
                Pb = self.P[m].copy()
                Pb.data = np.ones_like(Pb.data)
                U = (Pb.T @ U @ Pb).tocsr()
                fixed = self.levels[m].fixed_dofs
                if fixed is not None and len(fixed):
                    d = np.zeros(U.shape[0])
                    d[fixed] = 1.0
                    U = (U + sp.diags(d)).tocsr()
            U.sort_indices()
            ncols = U.shape[1]
            rows = np.repeat(np.arange(U.shape[0], dtype=np.int64), np.diff(U.indptr))
            keys = rows * (ncols + 1) + U.indices
            self._canon[l] = (U.indptr.copy(), U.indices.copy(), keys, U.shape)
        return self._canon[l]

    def _align(self, l: int, A: sp.csr_matrix) -> sp.csr_matrix:
        indptr, indices, keys, shape = self._canonical_pattern(l, A.shape)
        A.sort_indices()
        rows = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr))
        akeys = rows * (A.shape[1] + 1) + A.indices
        pos = np.searchsorted(keys, akeys)
        data = np.zeros(len(keys))
        data[pos] = A.data
        return sp.csr_matrix((data, indices, indptr), shape=shape)

    def refresh(self):
        """(Re)build coarse operators and factorizations after the finest
        matrix has been reassembled.  Shared level matrices are never mutated."""
        top = len(self.levels) - 1
        self._csr[top] = self.levels[top].matrix.csr()
        for l in range(top - 1, -1, -1):
            if not self.galerkin:
                self._csr[l] = self.levels[l].matrix.csr()
                continue
            A_c = (self.P[l].T @ self._csr[l + 1] @ self.P[l]).tocsr()
            fixed = self.levels[l].fixed_dofs
            if fixed is not None and len(fixed):
                # constrained rows/cols were masked out of P; pin them
                d = np.zeros(A_c.shape[0])
                d[fixed] = 1.0
                A_c = A_c + sp.diags(d)
            self._csr[l] = self._align(l, A_c.tocsr())
        for l in range(len(self.levels)):
            self._csr_T[l] = None
            lvl = self.levels[l]
            if l == 0:
                self._lu = spla.splu(self._csr[0].tocsc())
                lvl.invs = None
                lvl.invs_T = None
            else:
                if lvl.posmaps is None or lvl._pos_nnz != self._csr[l].nnz:
                    lvl.posmaps = lvl.patchset.compute_posmaps(self._csr[l])
                    lvl._pos_nnz = self._csr[l].nnz
                lvl.invs = lvl.patchset.factorize(self._csr[l], lvl.posmaps)
                lvl.invs_T = None
                lvl.col_subs = color_columns(lvl.patchset, self._csr[l])
                lvl.col_subs_T = None

    def csr(self, l, transpose=False):
        if not transpose:
            return self._csr[l]
        if self._csr_T[l] is None:
            self._csr_T[l] = self._csr[l].T.tocsr()
        return self._csr_T[l]

    def _col_subs(self, l, transpose):
        lvl = self.levels[l]
        if not transpose:
            return lvl.col_subs
        if lvl.col_subs_T is None:
            lvl.col_subs_T = color_columns(lvl.patchset, self.csr(l, True))
        return lvl.col_subs_T

    def vcycle(self, l, b, transpose=False):
        if l == 0:
            return self._lu.solve(b, trans="T" if transpose else "N")
        A = self.csr(l, transpose)
        lvl = self.levels[l]
        subs = self._col_subs(l, transpose)
        x = np.zeros_like(b)
        x, r = vanka_smooth(A, lvl.patchset, lvl.invs, x, b,
                            sweeps=self.smooth_steps, omega=self.omega,
                            transpose=transpose, col_subs=subs, return_residual=True)
        rc = self.P[l - 1].T @ r
        ec = self.vcycle(l - 1, rc, transpose)
        x = x + self.P[l - 1] @ ec
        x = vanka_smooth(A, lvl.patchset, lvl.invs, x, b,
                         sweeps=self.smooth_steps, omega=self.omega,
                         transpose=transpose, col_subs=subs)
        return x

    def precond(self, transpose=False):
        top = len(self.levels) - 1
        return lambda v: self.vcycle(top, v, transpose)

    def solve(self, b, rel_tol=1e-4, max_iter=100, transpose=False) -> GmresResult:
        top = len(self.levels) - 1
        A = self.csr(top, transpose)
        return gmres_solve(lambda v: A @ v, b, rel_tol=rel_tol, max_iter=max_iter,
                           precond=self.precond(transpose))


# ----------------------------------------------------------------------------
# transfer operators


def prolongation_scalar(dm_c: DofMap, dm_f: DofMap) -> sp.csr_matrix:
    """Nodal interpolation from the coarse to the fine space (scalar dofs)."""
    mesh_c = dm_c.mesh
    xb, yb = mesh_c.x_breaks, mesh_c.y_breaks
    grid = mesh_c.cell_id_grid
    ny, nx = grid.shape
    rows, cols, vals = [], [], []
    basis = dm_c.basis
    for nf in range(dm_f.n_nodes):
        x, y = dm_f.node_xy[nf]
        cands_x = set()
        for ix in (np.searchsorted(xb, x - 1e-12) - 1, np.searchsorted(xb, x + 1e-12) - 1):
            if 0 <= ix < nx:
                cands_x.add(int(ix))
        cands_y = set()
        for iy in (np.searchsorted(yb, y - 1e-12) - 1, np.searchsorted(yb, y + 1e-12) - 1):
            if 0 <= iy < ny:
                cands_y.add(int(iy))
        cell = -1
        for iy in cands_y:
            for ix in cands_x:
                if grid[iy, ix] >= 0:
                    cell = grid[iy, ix]
                    cix, ciy = ix, iy
                    break
            if cell >= 0:
                break
        if cell < 0:
            raise SolverError(f"fine node ({x},{y}) not covered by a coarse cell")
        sx = (x - xb[cix]) / (xb[cix + 1] - xb[cix])
        sy = (y - yb[ciy]) / (yb[ciy + 1] - yb[ciy])
        phi, _ = basis.tabulate(np.array([[sx, sy]]))
        nz = np.nonzero(np.abs(phi[0]) > 1e-13)[0]
        rows.extend([nf] * len(nz))
        cols.extend(dm_c.elem_nodes[cell][nz].tolist())
        vals.extend(phi[0][nz].tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(dm_f.n_nodes, dm_c.n_nodes))


def blocked_prolongation(P_scalar: sp.csr_matrix, ncomp: int,
                         free_fine: np.ndarray | None = None,
                         free_coarse: np.ndarray | None = None) -> sp.csr_matrix:
    """Expand a scalar prolongation to the node-blocked layout and zero the
    constrained fine rows / coarse columns."""
    P = sp.kron(P_scalar, sp.identity(ncomp, format="csr"), format="csr")
    if free_fine is not None:
        D = sp.diags(free_fine.astype(float))
        P = D @ P
    if free_coarse is not None:
        D = sp.diags(free_coarse.astype(float))
        P = P @ D
    P.eliminate_zeros()
    return P.tocsr()
