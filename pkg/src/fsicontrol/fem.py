"""Equal-order tensor Lagrange elements on rectangle meshes.

One scalar nodal basis serves all unknowns; every node carries the block
(p, vx, vy, ux, uy), so assembled operators are node-block sparse.  This
module provides basis/quadrature tables, the dof map, block sparsity
patterns with precomputed scatter positions, vectorized element-tensor
contraction helpers, and the local-projection pressure stabilization tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import mesh as meshmod
from .mesh import FacetTag, MeshError, QuadMesh

NCOMP = 5  # (p, vx, vy, ux, uy)
P = 0
V = (1, 2)
U = (3, 4)


def _lagrange_1d(nodes: np.ndarray, s: np.ndarray):
    """Values and derivatives of 1d Lagrange basis on ``nodes`` at ``s``."""
    n = len(nodes)
    vals = np.ones((len(s), n))
    ders = np.zeros((len(s), n))
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            vals[:, i] *= (s - nodes[j]) / (nodes[i] - nodes[j])
        for k in range(n):
            if k == i:
                continue
            term = np.ones_like(s) / (nodes[i] - nodes[k])
            for j in range(n):
                if j in (i, k):
                    continue
                term *= (s - nodes[j]) / (nodes[i] - nodes[j])
            ders[:, i] += term
    return vals, ders


@dataclass
class ElementBasis:
    """Tensor Lagrange basis of given degree on the reference square [0,1]^2.

    Local node (a, b) has index b*(degree+1)+a and sits at (t_a, t_b).
    """

    degree: int

    def __post_init__(self):
        if self.degree < 1:
            raise MeshError("element degree must be >= 1")
        self.nodes_1d = np.linspace(0.0, 1.0, self.degree + 1)
        self.nloc_1d = self.degree + 1
        self.nloc = self.nloc_1d**2

    def tabulate(self, pts: np.ndarray):
        """phi (nq, nloc) and dphi (nq, nloc, 2) at reference points."""
        vx, dx = _lagrange_1d(self.nodes_1d, pts[:, 0])
        vy, dy = _lagrange_1d(self.nodes_1d, pts[:, 1])
        nq = pts.shape[0]
        phi = np.zeros((nq, self.nloc))
        dphi = np.zeros((nq, self.nloc, 2))
        for b in range(self.nloc_1d):
            for a in range(self.nloc_1d):
                i = b * self.nloc_1d + a
                phi[:, i] = vx[:, a] * vy[:, b]
                dphi[:, i, 0] = dx[:, a] * vy[:, b]
                dphi[:, i, 1] = vx[:, a] * dy[:, b]
        return phi, dphi

    def tabulate_1d(self, s: np.ndarray):
        return _lagrange_1d(self.nodes_1d, s)


@dataclass
class QuadratureRule:
    """Tensor Gauss rule on [0,1]^2 (weights sum to 1)."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, n: int) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        X, Y = np.meshgrid(x, x, indexing="ij")
        WX, WY = np.meshgrid(w, w, indexing="ij")
        return cls(
            points=np.column_stack([X.ravel(), Y.ravel()]),
            weights=(WX * WY).ravel(),
        )

    @classmethod
    def gauss_1d(cls, n: int):
        x, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * (x + 1.0), 0.5 * w


def quadrature_for_degree(degree: int) -> QuadratureRule:
    # rational ALE nonlinearities need over-integration: >= 2*degree + 2
    n = degree + 2
    return QuadratureRule.gauss(n)


@dataclass
class ControlBoundary:
    """Precomputed load vector for the control traction on the tagged facets:
    g[node, c] = integral of (basis * n_c) over the control boundary."""

    g: np.ndarray  # (n_nodes, 2)
    length: float


class DofMap:
    """Scalar dof map of the degree-d space plus element geometry tables."""

    def __init__(self, mesh: QuadMesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.basis = ElementBasis(degree)
        self.quad = quadrature_for_degree(degree)
        self.lat = meshmod.node_lattice(mesh, degree)
        self.n_nodes = self.lat.n_nodes
        self.node_xy = self.lat.node_xy
        self.node_domain = self.lat.node_domain

        d = degree
        n_e = mesh.n_cells
        nloc = self.basis.nloc
        self.elem_nodes = np.zeros((n_e, nloc), dtype=int)
        for c, (ix, iy) in enumerate(mesh.cell_ij):
            loc = 0
            for b in range(d + 1):
                for a in range(d + 1):
                    self.elem_nodes[c, loc] = self.lat.ids[d * iy + b, d * ix + a]
                    loc += 1
        if np.any(self.elem_nodes < 0):
            raise MeshError("element references a missing lattice node")
        hx, hy = mesh.cell_sizes()
        self.elem_hx = hx
        self.elem_hy = hy
        self.elem_domain = mesh.cell_domain
        self.fluid_elems = np.nonzero(mesh.cell_domain == meshmod.FLUID)[0]
        self.solid_elems = np.nonzero(mesh.cell_domain == meshmod.SOLID)[0]

        self.phi, self.dphi_ref = self.basis.tabulate(self.quad.points)
        self.tag_nodes = meshmod.nodes_by_tag(self.lat, mesh)

        obs = mesh.geometry.obs
        if obs is not None:
            cx = 0.5 * (mesh.x_breaks[mesh.cell_ij[:, 0]] + mesh.x_breaks[mesh.cell_ij[:, 0] + 1])
            cy = 0.5 * (mesh.y_breaks[mesh.cell_ij[:, 1]] + mesh.y_breaks[mesh.cell_ij[:, 1] + 1])
            inobs = (cx > obs[0]) & (cx < obs[1]) & (cy > obs[2]) & (cy < obs[3])
            self.obs_elems = np.nonzero(inobs)[0]
        else:
            self.obs_elems = np.array([], dtype=int)

        self._dphi_cache: dict = {}
        self._w_cache: dict = {}

    # -- geometry-weighted tables ------------------------------------------

    def weights(self, elems: np.ndarray) -> np.ndarray:
        """Integration weights W[e, q] = w_q * |cell e|."""
        key = elems.tobytes()
        if key not in self._w_cache:
            area = self.elem_hx[elems] * self.elem_hy[elems]
            self._w_cache[key] = self.quad.weights[None, :] * area[:, None]
        return self._w_cache[key]

    def dphi(self, elems: np.ndarray) -> np.ndarray:
        """Physical gradients (n_e, nq, nloc, 2) on the given elements."""
        key = elems.tobytes()
        if key not in self._dphi_cache:
            inv_h = np.stack(
                [1.0 / self.elem_hx[elems], 1.0 / self.elem_hy[elems]], axis=-1
            )  # (n_e, 2)
            self._dphi_cache[key] = (
                self.dphi_ref[None, :, :, :] * inv_h[:, None, None, :]
            )
        return self._dphi_cache[key]

    # -- field evaluation ---------------------------------------------------

    def local_values(self, elems: np.ndarray, nodal: np.ndarray) -> np.ndarray:
        """Gather nodal values: (n_e, nloc, ...) from (n_nodes, ...)."""
        return nodal[self.elem_nodes[elems]]

    def qp_values(self, elems: np.ndarray, nodal: np.ndarray) -> np.ndarray:
        """Interpolate nodal (n, c) to quadrature points: (n_e, nq, c)."""
        loc = self.local_values(elems, nodal)
        return cached_einsum("qi,eic->eqc", self.phi, loc)

    def qp_gradients(self, elems: np.ndarray, nodal: np.ndarray) -> np.ndarray:
        """Gradients at quadrature points: (n_e, nq, c, 2), [c,d] = d field_c / d x_d."""
        loc = self.local_values(elems, nodal)
        return cached_einsum("eqid,eic->eqcd", self.dphi(elems), loc)

    def point_eval(self, x: float, y: float, nodal: np.ndarray) -> np.ndarray:
        """Evaluate a nodal field at a physical point (must lie in a cell)."""
        xb, yb = self.mesh.x_breaks, self.mesh.y_breaks
        ix = int(np.clip(np.searchsorted(xb, x + 1e-14) - 1, 0, len(xb) - 2))
        iy = int(np.clip(np.searchsorted(yb, y + 1e-14) - 1, 0, len(yb) - 2))
        c = self.mesh.cell_id_grid[iy, ix]
        if c < 0:
            raise MeshError(f"point ({x},{y}) is not inside the mesh")
        s = np.array([[(x - xb[ix]) / (xb[ix + 1] - xb[ix]), (y - yb[iy]) / (yb[iy + 1] - yb[iy])]])
        phi, _ = self.basis.tabulate(s)
        return phi[0] @ nodal[self.elem_nodes[c]]

    # -- boundary data ------------------------------------------------------

    def control_boundary(self) -> ControlBoundary:
        g = np.zeros((self.n_nodes, 2))
        # exact 1d mass integrals of the Lagrange basis on [0,1]
        if self.degree == 1:
            wloc = np.array([0.5, 0.5])
        else:
            wloc = np.array([1.0, 4.0, 1.0]) / 6.0
        total = 0.0
        for f in self.mesh.facets_by_tag(FacetTag.CONTROL):
            nodes = meshmod.facet_lattice_nodes(self.lat, f)
            L = f.length
            total += L
            for c in range(2):
                if f.normal[c] != 0.0:
                    np.add.at(g[:, c], nodes, L * wloc * f.normal[c])
        return ControlBoundary(g=g, length=total)

    def inflow_values(self, profile) -> np.ndarray:
        """Evaluate an inflow velocity profile (callable of y) at inflow nodes."""
        nodes = self.tag_nodes[FacetTag.INFLOW]
        return nodes, profile(self.node_xy[nodes, 1])


# ----------------------------------------------------------------------------
# block sparsity pattern and scatter helpers


class BlockPattern:
    """Node-graph sparsity with precomputed element scatter positions.

    Blocks exist exactly for node pairs sharing an element (diagonal
    included); ``elem_pos[e, i, j]`` is the index of block
    (elem_nodes[e,i], elem_nodes[e,j]) in the BSR data array.
    """

    def __init__(self, dm: DofMap):
        self.n_nodes = dm.n_nodes
        en = dm.elem_nodes
        n_e, nloc = en.shape
        ii = np.repeat(en, nloc, axis=1).ravel()
        jj = np.tile(en, (1, nloc)).ravel()
        keys = ii.astype(np.int64) * dm.n_nodes + jj
        # diagonal blocks are guaranteed by (i, i) pairs within each element
        uniq = np.unique(keys)
        self.rows = (uniq // dm.n_nodes).astype(np.int32)
        self.cols = (uniq % dm.n_nodes).astype(np.int32)
        self.n_blocks = len(uniq)
        self.indptr = np.searchsorted(self.rows, np.arange(dm.n_nodes + 1))
        self.elem_pos = np.searchsorted(uniq, keys).reshape(n_e, nloc, nloc)
        self.diag_pos = np.searchsorted(uniq, np.arange(dm.n_nodes, dtype=np.int64) * (dm.n_nodes + 1))
        self._row_block_lists = None

    def row_blocks(self, node_ids: np.ndarray) -> np.ndarray:
        """All block indices whose row is one of ``node_ids``."""
        parts = [np.arange(self.indptr[n], self.indptr[n + 1]) for n in node_ids]
        if not parts:
            return np.array([], dtype=int)
        return np.concatenate(parts)

    def empty_data(self, ncomp: int) -> np.ndarray:
        return np.zeros((self.n_blocks, ncomp, ncomp))

    def to_bsr(self, data: np.ndarray) -> sp.bsr_matrix:
        ncomp = data.shape[1]
        n = self.n_nodes * ncomp
        return sp.bsr_matrix(
            (data, self.cols, self.indptr), shape=(n, n), blocksize=(ncomp, ncomp)
        )

    def scatter(self, data: np.ndarray, elems: np.ndarray, blocks: np.ndarray) -> None:
        """Add element matrices (n_el, nloc*c, nloc*c) into the data array."""
        n_el = len(elems)
        if n_el == 0:
            return
        c = data.shape[1]
        nloc = blocks.shape[1] // c
        blk = blocks.reshape(n_el, nloc, c, nloc, c).transpose(0, 1, 3, 2, 4)
        np.add.at(data, self.elem_pos[elems].ravel(), blk.reshape(-1, c, c))


def scatter_vector(out: np.ndarray, dm: DofMap, elems: np.ndarray, vecs: np.ndarray, comps) -> None:
    """Add element vectors (n_el, nloc, len(comps)) into out (n_nodes, ncomp)."""
    if len(elems) == 0:
        return
    idx = dm.elem_nodes[elems]
    for ci, c in enumerate(comps):
        np.add.at(out[:, c], idx, vecs[:, :, ci])


# ----------------------------------------------------------------------------
# element tensor contraction

_PATH_CACHE: dict = {}


def cached_einsum(subscripts: str, *ops):
    """np.einsum with a memoized contraction path (hot loops reuse shapes)."""
    key = (subscripts, tuple(op.shape for op in ops))
    path = _PATH_CACHE.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *ops, optimize="greedy")[0]
        _PATH_CACHE[key] = path
    return np.einsum(subscripts, *ops, optimize=path)


def _contract_gg(dphi, wdphi, gg):
    """(e,q,i,b),(e,q,j,d),(e,q,a,b,c,d) -> (e,i,a,j,c) via batched matmul."""
    n_el, nq, nloc, _ = dphi.shape
    a, c = gg.shape[2], gg.shape[4]
    G2 = np.ascontiguousarray(gg.transpose(0, 1, 3, 2, 4, 5)).reshape(n_el, nq, 2, a * c * 2)
    X = np.matmul(dphi, G2)  # (e,q,i,(a c d))
    X2 = np.ascontiguousarray(
        X.reshape(n_el, nq, nloc, a, c, 2).transpose(0, 2, 3, 4, 1, 5)
    ).reshape(n_el, nloc * a * c, nq * 2)
    Gw = np.ascontiguousarray(wdphi.transpose(0, 1, 3, 2)).reshape(n_el, nq * 2, nloc)
    M2 = np.matmul(X2, Gw)  # (e,(i a c), j)
    return M2.reshape(n_el, nloc, a, c, nloc).transpose(0, 1, 2, 4, 3)


def element_matrices(W, phi, dphi, nloc, rc, cc, C: dict) -> np.ndarray:
    """Contract qp coefficient tensors against basis tables.

    C may contain 'vv' (e,q,a,c), 'vg' (e,q,a,c,d), 'gv' (e,q,a,b,c),
    'gg' (e,q,a,b,c,d); the result is (n_el, nloc*rc, nloc*cc) with local
    dof index i*rc + a.  All paths are batched matrix products.
    """
    n_el, nq = W.shape
    wphi = W[:, :, None] * phi[None, :, :]  # (e,q,j)
    M = np.zeros((n_el, nloc, rc, nloc, cc))

    def _qp_sum(X, right):
        """X (e,q,R), right (e,q,j) -> (e,R,j) contracting q."""
        Xt = np.ascontiguousarray(X.transpose(0, 2, 1))
        return np.matmul(Xt, right)

    if "vv" in C:
        A = C["vv"].reshape(n_el, nq, rc * cc)
        T = phi[None, :, :, None] * A[:, :, None, :]  # (e,q,i,(ac))
        out = _qp_sum(T.reshape(n_el, nq, nloc * rc * cc), wphi)
        M += out.reshape(n_el, nloc, rc, cc, nloc).transpose(0, 1, 2, 4, 3)
    if "vg" in C:
        A = C["vg"].reshape(n_el, nq, rc * cc, 2)
        X = np.matmul(A, dphi.transpose(0, 1, 3, 2))  # (e,q,(ac),j)
        out = _qp_sum(X.reshape(n_el, nq, rc * cc * nloc), wphi)  # (e,(a c j),i)
        M += out.reshape(n_el, rc, cc, nloc, nloc).transpose(0, 4, 1, 3, 2)
    if "gv" in C:
        A = C["gv"].transpose(0, 1, 3, 2, 4).reshape(n_el, nq, 2, rc * cc)
        X = np.matmul(dphi, A)  # (e,q,i,(ac))
        out = _qp_sum(X.reshape(n_el, nq, nloc * rc * cc), wphi)
        M += out.reshape(n_el, nloc, rc, cc, nloc).transpose(0, 1, 2, 4, 3)
    if "gg" in C:
        wdphi = W[:, :, None, None] * dphi
        M += _contract_gg(dphi, wdphi, C["gg"])
    return M.reshape(n_el, nloc * rc, nloc * cc)


def element_vectors(W, phi, dphi, rv=None, rg=None) -> np.ndarray:
    """Contract residual coefficients: rv (e,q,a) against values, rg (e,q,a,b)
    against gradients; returns (n_el, nloc, rc)."""
    parts = []
    if rv is not None:
        parts.append(cached_einsum("eq,qi,eqa->eia", W, phi, rv))
    if rg is not None:
        parts.append(cached_einsum("eq,eqib,eqab->eia", W, dphi, rg))
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


# ----------------------------------------------------------------------------
# local projection stabilization


@dataclass
class LpsConfig:
    """Pressure stabilization: delta_K = delta0 * |K| / mu_dyn, fluctuation
    with respect to the next-lower local space (Q1 under Q2, constants under
    Q1).  Gradients are taken in the reference configuration."""

    delta0: float = 0.1


def lps_reference_table(dm: DofMap) -> np.ndarray:
    """Fluctuation-gradient table T[q, i, d] on the reference square."""
    basis = dm.basis
    quad = dm.quad
    phi, dphi = dm.phi, dm.dphi_ref
    if dm.degree == 1:
        # projection onto constants kills no gradient
        return dphi.copy()
    low = ElementBasis(1)
    phi_low, dphi_low = low.tabulate(quad.points)
    w = quad.weights
    m_low = np.einsum("q,qa,qb->ab", w, phi_low, phi_low)
    b = np.einsum("q,qa,qi->ai", w, phi_low, phi)
    proj = np.linalg.solve(m_low, b)  # (nlow, nloc)
    return dphi - np.einsum("qad,ai->qid", dphi_low, proj)


def lps_element_matrices(dm: DofMap, cfg: LpsConfig, mu_dyn: float) -> np.ndarray:
    """Per-fluid-element stabilization matrices S_e (n_f, nloc, nloc)."""
    elems = dm.fluid_elems
    T = lps_reference_table(dm)  # (nq, nloc, 2)
    inv_h = np.stack([1.0 / dm.elem_hx[elems], 1.0 / dm.elem_hy[elems]], axis=-1)
    Tp = T[None] * inv_h[:, None, None, :]  # (n_f, nq, nloc, 2)
    W = dm.weights(elems)
    area = dm.elem_hx[elems] * dm.elem_hy[elems]
    delta = cfg.delta0 * area / mu_dyn
    return np.einsum("e,eq,eqid,eqjd->eij", delta, W, Tp, Tp, optimize=True)
