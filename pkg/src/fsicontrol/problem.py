"""Discrete problem glue: per-level operators of the coupled time step.

A :class:`LevelOps` owns the dof map, constraint sets, the state-independent
update/extension operators, the pressure stabilization, the control load
vector, and the assembly routines that turn the kernels of
:mod:`fsicontrol.forms` into residual vectors and node-block matrices.

Unknown layout per node: (p, vx, vy, ux, uy).  Dirichlet conditions are
imposed by identity rows; the dual problem inherits the transposed (column
eliminated) treatment by masking constrained entries before transpose
application.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, forms, linalg
from .fem import NCOMP, DofMap
from .forms import FormFlags, PhysicsParams
from .mesh import FacetTag, MeshHierarchy

ROWMAP5 = {"d": [0], "v": [1, 2], "e": [3, 4], "r": [3, 4]}
COLMAP5 = {"p": [0], "v": [1, 2], "u": [3, 4]}
ROWMAP3 = {"d": [0], "v": [1, 2]}
COLMAP3 = {"p": [0], "v": [1, 2]}
ROWMAP_U = {"e": [0, 1], "r": [0, 1]}
COLMAP_U = {"u": [0, 1]}


@dataclass
class ThetaScheme:
    """Uniform time grid with the shifted one-step theta rule."""

    k: float
    n_steps: int
    theta: float
    t0: float = 0.0

    @classmethod
    def shifted(cls, k: float, n_steps: int, shift: float = 2.0, t0: float = 0.0):
        return cls(k=k, n_steps=n_steps, theta=0.5 + shift * k, t0=t0)

    def time(self, n: int) -> float:
        return self.t0 + n * self.k

    @property
    def T(self) -> float:
        return self.time(self.n_steps)

    def weight(self, n: int) -> float:
        """Trapezoid-consistent tracking weight: k/2 at the ends, k inside."""
        return 0.5 * self.k if n in (0, self.n_steps) else self.k


@dataclass
class TargetSpec:
    """Tracking target: spatially constant profile in time, or per-step nodal
    fields (used by tests that track a stored trajectory)."""

    kind: str = "zero"  # zero | sine | const | nodal
    amplitude: float = 0.0
    frequency: float = 1.0
    t_on: float = 0.0
    values: np.ndarray | None = None  # (N+1, n_nodes, c) for kind='nodal'

    def value(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "const":
            return self.amplitude
        if self.kind == "sine":
            if t < self.t_on:
                return 0.0
            return self.amplitude * np.sin(2.0 * np.pi * self.frequency * t)
        raise ValueError(f"target kind {self.kind} has no scalar value")


@dataclass
class FunctionalConfig:
    """Tracking functional: displacement misfit on the observation window
    (one displacement component) plus optional velocity misfit on the fluid
    domain, plus Tikhonov control regularization."""

    alpha: float = 1e-17
    u_target: TargetSpec | None = None
    u_component: int = 1  # 0 -> ux, 1 -> uy
    v_target: TargetSpec | None = None


def _local_blocks(dm: DofMap, elems: np.ndarray, cdicts, ncomp, row_map, col_map, row_mask=None):
    """Accumulate kernel C-dicts into dense element matrices
    (n_el, nloc*ncomp, nloc*ncomp)."""
    n_el = len(elems)
    nloc = dm.basis.nloc
    out = np.zeros((n_el, nloc * ncomp, nloc * ncomp))
    if n_el == 0:
        return out
    W = dm.weights(elems)
    dphi = dm.dphi(elems)
    view = out.reshape(n_el, nloc, ncomp, nloc, ncomp)
    for cdict in cdicts:
        for (rb, cb), C in cdict.items():
            if rb not in row_map or cb not in col_map:
                continue
            rc, cc = row_map[rb], col_map[cb]
            M = fem.element_matrices(W, dm.phi, dphi, nloc, len(rc), len(cc), C)
            Mv = M.reshape(n_el, nloc, len(rc), nloc, len(cc))
            if row_mask is not None and rb in row_mask:
                Mv = Mv * row_mask[rb][:, :, None, None, None]
            for ai, a in enumerate(rc):
                for ci, c in enumerate(cc):
                    view[:, :, a, :, c] += Mv[:, :, ai, :, ci]
    return out


class LevelOps:
    """All per-level discrete machinery for one mesh of the hierarchy."""

    def __init__(self, mesh, degree: int, prm: PhysicsParams, flags: FormFlags,
                 lps: fem.LpsConfig, solid_parents: np.ndarray | None = None):
        self.mesh = mesh
        self.prm = prm
        self.flags = flags
        self.dm = DofMap(mesh, degree)
        dm = self.dm
        self.pattern = fem.BlockPattern(dm)
        self.n_nodes = dm.n_nodes
        self.ndof = dm.n_nodes * NCOMP

        tags = dm.tag_nodes
        self.v_dirichlet = np.unique(np.concatenate([
            tags[FacetTag.INFLOW], tags[FacetTag.WALL], tags[FacetTag.SOLID_DIRICHLET]]))
        self.u_dirichlet = np.unique(np.concatenate([
            tags[FacetTag.INFLOW], tags[FacetTag.WALL], tags[FacetTag.OUTFLOW],
            tags[FacetTag.CONTROL], tags[FacetTag.SOLID_DIRICHLET]]))
        self.p_fixed = np.nonzero(dm.node_domain == 2)[0]
        self.inflow_nodes = tags[FacetTag.INFLOW]

        # free-dof masks per layout
        self.free5 = np.ones((self.n_nodes, NCOMP), dtype=bool)
        self.free5[self.p_fixed, 0] = False
        self.free5[self.v_dirichlet, 1] = False
        self.free5[self.v_dirichlet, 2] = False
        self.free5[self.u_dirichlet, 3] = False
        self.free5[self.u_dirichlet, 4] = False
        self.free3 = self.free5[:, :3].ravel()
        self.free2 = self.free5[:, 3:].ravel()
        self.free5_flat = self.free5.ravel()

        self.constrained3 = [self.p_fixed, self.v_dirichlet, self.v_dirichlet]
        self.constrained2 = [self.u_dirichlet, self.u_dirichlet]

        # control traction load (rows at constrained v-dofs removed)
        cb = dm.control_boundary()
        gq = cb.g.copy()
        gq[self.v_dirichlet] = 0.0
        self.g_q = gq
        self.control_length = cb.length

        # pressure stabilization (reference-configuration fluctuation gradients)
        self.lps_blocks = fem.lps_element_matrices(dm, lps, prm.mu_dyn)
        data1 = self.pattern.empty_data(1)
        self.pattern.scatter(data1, dm.fluid_elems, self.lps_blocks)
        self.S_lps = self.pattern.to_bsr(data1).tocsr()

        # node-domain ownership of u rows
        en = dm.elem_nodes
        self.fluid_owner = (dm.node_domain[en[dm.fluid_elems]] == 0).astype(float)

        # state-independent operators: velocity-deformation update & extension
        self.K_upd = self._assemble_update()
        self.K_ext = None  # depends on k; built per scheme via set_scheme
        self._upd_lu = spla.splu(self.K_upd.csr().tocsc())

        self.patch_mom = linalg.VankaPatchSet.build(dm, 3, solid_parents)
        self.patch_u = linalg.VankaPatchSet.build(dm, 2, solid_parents)

        self._v_mass_lu = None
        self.k_scheme = None

    # -- constant operators ---------------------------------------------------

    def _assemble_update(self) -> linalg.BlockMatrix:
        dm = self.dm
        sh = (len(dm.solid_elems), len(dm.quad.weights))
        C = {("r", "u"): {"vv": np.broadcast_to(np.eye(2), sh + (2, 2)).copy()}}
        blocks = _local_blocks(dm, dm.solid_elems, [C], 2, ROWMAP_U, COLMAP_U)
        bm = linalg.BlockMatrix(self.pattern, 2)
        self.pattern.scatter(bm.data, dm.solid_elems, blocks)
        fluid_nodes = np.nonzero(dm.node_domain == 0)[0]
        ident = [np.union1d(fluid_nodes, self.u_dirichlet)] * 2
        bm.impose_identity_rows(ident)
        return bm

    def set_scheme(self, k: float) -> None:
        """Build the k-scaled extension operator for the active step size."""
        if self.k_scheme == k:
            return
        dm = self.dm
        sh = (len(dm.fluid_elems), len(dm.quad.weights))
        C = forms.ale_extension_jacobian(sh, k)
        mask = {"e": self.fluid_owner}
        blocks = _local_blocks(dm, dm.fluid_elems, [C], 2, ROWMAP_U, COLMAP_U, mask)
        bm = linalg.BlockMatrix(self.pattern, 2)
        self.pattern.scatter(bm.data, dm.fluid_elems, blocks)
        nonfluid = np.nonzero(dm.node_domain > 0)[0]
        ident = [np.union1d(nonfluid, self.u_dirichlet)] * 2
        bm.impose_identity_rows(ident)
        self.K_ext = bm
        self.k_scheme = k

    def v_mass_lu(self):
        """Factorized global velocity mass matrix (used for the n=0 dual state)."""
        if self._v_mass_lu is None:
            dm = self.dm
            all_elems = np.arange(dm.mesh.n_cells)
            sh = (len(all_elems), len(dm.quad.weights))
            C = {("v", "v"): {"vv": np.broadcast_to(np.eye(2), sh + (2, 2)).copy()}}
            blocks = _local_blocks(dm, all_elems, [C], 2, {"v": [0, 1]}, {"v": [0, 1]})
            bm = linalg.BlockMatrix(self.pattern, 2)
            self.pattern.scatter(bm.data, all_elems, blocks)
            bm.impose_identity_rows([self.v_dirichlet, self.v_dirichlet])
            self._v_mass_lu = spla.splu(bm.csr().tocsc())
        return self._v_mass_lu

    # -- state handling -------------------------------------------------------

    def zero_state(self) -> np.ndarray:
        return np.zeros((self.n_nodes, NCOMP))

    def impose_bcs(self, U: np.ndarray, inflow_values: np.ndarray | None) -> None:
        U[self.p_fixed, 0] = 0.0
        U[self.v_dirichlet, 1] = 0.0
        U[self.v_dirichlet, 2] = 0.0
        if inflow_values is not None and len(self.inflow_nodes):
            U[self.inflow_nodes, 1] = inflow_values
        U[self.u_dirichlet, 3] = 0.0
        U[self.u_dirichlet, 4] = 0.0

    def mask_free(self, r: np.ndarray) -> np.ndarray:
        out = r.reshape(-1)
        out[~self.free5_flat] = 0.0
        return out

    def fields(self, elems: np.ndarray, U: np.ndarray) -> dict:
        dm = self.dm
        return {
            "p": dm.qp_values(elems, U[:, 0:1])[..., 0],
            "v": dm.qp_values(elems, U[:, 1:3]),
            "gv": dm.qp_gradients(elems, U[:, 1:3]),
            "u": dm.qp_values(elems, U[:, 3:5]),
            "gu": dm.qp_gradients(elems, U[:, 3:5]),
        }

    def state_fields(self, U: np.ndarray) -> dict:
        """Fluid/solid qp fields of a state, reusable across evaluations."""
        dm = self.dm
        return {
            "fluid": self.fields(dm.fluid_elems, U) if len(dm.fluid_elems) else None,
            "solid": self.fields(dm.solid_elems, U) if len(dm.solid_elems) else None,
        }

    # -- residual -------------------------------------------------------------

    def residual(self, Un, Um, qn: float, theta: float, k: float, masked=True,
                 prev_fields: dict | None = None, terms=None) -> np.ndarray:
        on = (lambda t: True) if terms is None else (lambda t: t in terms)
        dm = self.dm
        r = np.zeros((self.n_nodes, NCOMP))
        fe, se = dm.fluid_elems, dm.solid_elems
        if prev_fields is None:
            prev_fields = self.state_fields(Um)
        if len(fe):
            fn, fm = self.fields(fe, Un), prev_fields["fluid"]
            try:
                mv, mg, dv = forms.fluid_residual(fn, fm, self.prm, theta, k, self.flags, terms)
            except forms.EntanglementError:
                raise forms.EntanglementError(self._entangled_where(fn)) from None
            Wf, dphi_f = dm.weights(fe), dm.dphi(fe)
            fem.scatter_vector(r, dm, fe, fem.element_vectors(Wf, dm.phi, dphi_f, mv, mg), (1, 2))
            fem.scatter_vector(r, dm, fe, fem.element_vectors(Wf, dm.phi, dphi_f, dv[..., None]), (0,))
            if on("ale"):
                ale = fem.element_vectors(Wf, dm.phi, dphi_f, None, k * fn["gu"])
                fem.scatter_vector(r, dm, fe, ale * self.fluid_owner[..., None], (3, 4))
        if len(se):
            sn, sm = self.fields(se, Un), prev_fields["solid"]
            mv, mg, rel = forms.solid_residual(sn, sm, self.prm, theta, k, self.flags, terms)
            Ws, dphi_s = dm.weights(se), dm.dphi(se)
            fem.scatter_vector(r, dm, se, fem.element_vectors(Ws, dm.phi, dphi_s, mv, mg), (1, 2))
            fem.scatter_vector(r, dm, se, fem.element_vectors(Ws, dm.phi, dphi_s, rel), (3, 4))
        if on("lps"):
            r[:, 0] += k * (self.S_lps @ Un[:, 0])
        if on("control"):
            r[:, 1:3] -= k * qn * self.g_q
        flat = r.reshape(-1)
        if masked:
            flat = flat.copy()
            flat[~self.free5_flat] = 0.0
        return flat

    def _entangled_where(self, fieldset) -> str:
        J = forms.det2(fieldset["gu"] + np.eye(2))
        e, q = np.unravel_index(np.argmin(J), J.shape)
        return f"(element {self.dm.fluid_elems[e]}, J={J[e, q]:.3e})"

    # -- momentum matrix (reduced Jacobian, (p,v) block) -----------------------

    def assemble_momentum(self, Un, Um, theta: float, k: float,
                          prev_fields: dict | None = None) -> linalg.BlockMatrix:
        dm = self.dm
        bm = linalg.BlockMatrix(self.pattern, 3)
        fe, se = dm.fluid_elems, dm.solid_elems
        if prev_fields is None:
            prev_fields = self.state_fields(Um)
        if len(fe):
            fn, fm = self.fields(fe, Un), prev_fields["fluid"]
            C = forms.fluid_jacobian(fn, fm, self.prm, theta, k, self.flags, ale_derivs=False)
            blocks = _local_blocks(dm, fe, [C], 3, ROWMAP3, COLMAP3)
            nloc = dm.basis.nloc
            view = blocks.reshape(len(fe), nloc, 3, nloc, 3)
            view[:, :, 0, :, 0] += k * self.lps_blocks
            self.pattern.scatter(bm.data, fe, blocks)
        if len(se):
            sn, sm = self.fields(se, Un), prev_fields["solid"]
            C = forms.solid_jacobian(sn, sm, self.prm, theta, k, self.flags, condensed=True)
            blocks = _local_blocks(dm, se, [C], 3, ROWMAP3, COLMAP3)
            self.pattern.scatter(bm.data, se, blocks)
        bm.impose_identity_rows(self.constrained3)
        return bm

    # -- full Jacobian element blocks ------------------------------------------

    def jacobian_blocks(self, Un, Um, theta: float, k: float, terms=None):
        """Exact step Jacobian as element blocks.

        Returns (a_fluid, a_solid, s_solid): the full blocks except the solid
        stress u-coupling, which is returned separately (momentum rows x u
        columns, scaled k*theta) so the adjoint solver can reroute it.
        """
        on = (lambda t: True) if terms is None else (lambda t: t in terms)
        dm = self.dm
        fe, se = dm.fluid_elems, dm.solid_elems
        nloc = dm.basis.nloc
        a_fluid = np.zeros((len(fe), nloc * NCOMP, nloc * NCOMP))
        a_solid = np.zeros((len(se), nloc * NCOMP, nloc * NCOMP))
        s_solid = np.zeros((len(se), nloc * 2, nloc * 2))
        if len(fe):
            fn, fm = self.fields(fe, Un), self.fields(fe, Um)
            C = forms.fluid_jacobian(fn, fm, self.prm, theta, k, self.flags,
                                     ale_derivs=self.flags.ale_coupling, terms=terms)
            cdicts = [C]
            if on("ale"):
                cdicts.append(forms.ale_extension_jacobian(fn["p"].shape, k))
            a_fluid = _local_blocks(dm, fe, cdicts, NCOMP, ROWMAP5, COLMAP5,
                                    row_mask={"e": self.fluid_owner})
            if on("lps"):
                view = a_fluid.reshape(len(fe), nloc, NCOMP, nloc, NCOMP)
                view[:, :, 0, :, 0] += k * self.lps_blocks
        if len(se):
            sn, sm = self.fields(se, Un), self.fields(se, Um)
            C = forms.solid_jacobian(sn, sm, self.prm, theta, k, self.flags,
                                     condensed=False, terms=terms)
            stress = {("v", "u"): C.pop(("v", "u"))} if ("v", "u") in C else {}
            a_solid = _local_blocks(dm, se, [C], NCOMP, ROWMAP5, COLMAP5)
            if stress:
                s_solid = _local_blocks(dm, se, [stress], 2, {"v": [0, 1]}, {"u": [0, 1]})
        return a_fluid, a_solid, s_solid

    # -- single-form surface (weak forms and their Gateaux derivatives) ---------

    FORM_TERMS = {
        "A_F": {"convection", "viscous"},
        "A_S": {"solid_stress"},
        "A_ALE": {"ale"},
        "A_p": {"pressure"},
        "A_div": {"divergence"},
        "F_TR": {"transport"},
        "time": {"time", "solid_time"},
        "relation": {"relation"},
        "lps": {"lps"},
    }

    def assemble_form(self, name: str, Un, Um, theta: float, k: float) -> np.ndarray:
        """Residual contribution of a single weak form (masked rows)."""
        return self.residual(Un, Um, 0.0, theta, k, terms=self.FORM_TERMS[name])

    def assemble_form_derivative(self, name: str, wrt: str, Un, Um, theta: float, k: float):
        """Directional Gateaux derivative of one form w.r.t. p, v or u at
        (Un, Um); returns a callable direction -> masked row vector."""
        comps = {"p": [0], "v": [1, 2], "u": [3, 4]}[wrt]
        blocks = self.jacobian_blocks(Un, Um, theta, k, terms=self.FORM_TERMS[name])
        op = self.full_operator(blocks, transpose=False)
        free = self.free5_flat

        def apply(direction):
            d = np.zeros_like(direction).reshape(-1, NCOMP)
            d[:, comps] = direction.reshape(-1, NCOMP)[:, comps]
            d = d.reshape(-1)
            d[~free] = 0.0
            out = op(d)
            out[~free] = 0.0
            return out

        return apply

    def cross_blocks(self, Unp1, Un, theta: float, k: float):
        """Element blocks of d R_{n+1} / d U_n (fluid, solid)."""
        dm = self.dm
        fe, se = dm.fluid_elems, dm.solid_elems
        nloc = dm.basis.nloc
        c_fluid = np.zeros((len(fe), nloc * NCOMP, nloc * NCOMP))
        c_solid = np.zeros((len(se), nloc * NCOMP, nloc * NCOMP))
        if len(fe):
            fp, fn_ = self.fields(fe, Unp1), self.fields(fe, Un)
            C = forms.fluid_cross_jacobian(fp, fn_, self.prm, theta, k, self.flags,
                                           ale_derivs=self.flags.ale_coupling)
            c_fluid = _local_blocks(dm, fe, [C], NCOMP, ROWMAP5, COLMAP5)
        if len(se):
            sn_ = self.fields(se, Un)
            C = forms.solid_cross_jacobian(sn_, self.prm, theta, k, self.flags)
            c_solid = _local_blocks(dm, se, [C], NCOMP, ROWMAP5, COLMAP5)
        return c_fluid, c_solid

    # -- element block application ---------------------------------------------

    def _edofs5(self, elems):
        en = self.dm.elem_nodes[elems]
        return (en[:, :, None] * NCOMP + np.arange(NCOMP)[None, None, :]).reshape(len(elems), -1)

    def blocks_apply(self, blocks_fluid, blocks_solid, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for elems, blk in ((self.dm.fluid_elems, blocks_fluid), (self.dm.solid_elems, blocks_solid)):
            if len(elems) == 0:
                continue
            ed = self._edofs5(elems)
            y = np.einsum("eij,ej->ei", blk, x[ed])
            np.add.at(out, ed, y)
        return out

    def blocks_apply_T(self, blocks_fluid, blocks_solid, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for elems, blk in ((self.dm.fluid_elems, blocks_fluid), (self.dm.solid_elems, blocks_solid)):
            if len(elems) == 0:
                continue
            ed = self._edofs5(elems)
            y = np.einsum("eji,ej->ei", blk, x[ed])
            np.add.at(out, ed, y)
        return out

    def stress_apply_T(self, s_solid, zv_flat: np.ndarray) -> np.ndarray:
        """(k theta A_S')^T applied to a velocity-indexed vector; returns a
        u-indexed nodal field (n_nodes, 2)."""
        out = np.zeros((self.n_nodes, 2))
        se = self.dm.solid_elems
        if len(se) == 0:
            return out
        en = self.dm.elem_nodes[se]
        zl = zv_flat.reshape(self.n_nodes, 2)[en].reshape(len(se), -1)
        y = np.einsum("eji,ej->ei", s_solid, zl)
        np.add.at(out, en, y.reshape(len(se), -1, 2))
        return out

    def stress_apply(self, s_solid, du: np.ndarray) -> np.ndarray:
        """(k theta A_S') applied to a u-indexed nodal field -> v-row field."""
        out = np.zeros((self.n_nodes, 2))
        se = self.dm.solid_elems
        if len(se) == 0:
            return out
        en = self.dm.elem_nodes[se]
        xl = du[en].reshape(len(se), -1)
        y = np.einsum("eij,ej->ei", s_solid, xl)
        np.add.at(out, en, y.reshape(len(se), -1, 2))
        return out

    def full_operator(self, blocks, transpose: bool):
        """Masked step Jacobian as a linear operator on flat 5-comp vectors.

        blocks = (a_fluid, a_solid, s_solid) from :meth:`jacobian_blocks`;
        forward:  x -> P_free A x + P_constr x, transpose the exact adjoint.
        """
        a_f, a_s, s_s = blocks
        free = self.free5_flat

        def fwd(x):
            y = self.blocks_apply(a_f, a_s, x)
            y.reshape(-1, NCOMP)[:, 1:3] += self.stress_apply(s_s, x.reshape(-1, NCOMP)[:, 3:5])
            y[~free] = x[~free]
            return y

        def adj(x):
            xm = np.where(free, x, 0.0)
            y = self.blocks_apply_T(a_f, a_s, xm)
            w = self.stress_apply_T(s_s, xm.reshape(-1, NCOMP)[:, 1:3].ravel())
            y.reshape(-1, NCOMP)[:, 3:5] += w
            y[~free] += x[~free]
            return y

        return adj if transpose else fwd

    # -- tracking terms ---------------------------------------------------------

    def tracking_value(self, U, n: int, t: float, fc: FunctionalConfig) -> float:
        dm = self.dm
        val = 0.0
        if fc.u_target is not None and len(dm.obs_elems):
            comp = 3 + fc.u_component
            uy = dm.qp_values(dm.obs_elems, U[:, comp : comp + 1])[..., 0]
            tgt = self._target_qp(fc.u_target, dm.obs_elems, n, t, comp)
            W = dm.weights(dm.obs_elems)
            val += 0.5 * float(np.sum(W * (uy - tgt) ** 2))
        if fc.v_target is not None and len(dm.fluid_elems):
            v = dm.qp_values(dm.fluid_elems, U[:, 1:3])
            tgt = self._target_qp_vec(fc.v_target, dm.fluid_elems, n, t)
            W = dm.weights(dm.fluid_elems)
            val += 0.5 * float(np.sum(W * np.sum((v - tgt) ** 2, axis=-1)))
        return val

    def tracking_rhs(self, U, n: int, t: float, fc: FunctionalConfig, w: float) -> np.ndarray:
        """w * d(tracking)/dU as a nodal (n_nodes*NCOMP,) vector."""
        dm = self.dm
        out = np.zeros((self.n_nodes, NCOMP))
        if fc.u_target is not None and len(dm.obs_elems):
            comp = 3 + fc.u_component
            uy = dm.qp_values(dm.obs_elems, U[:, comp : comp + 1])[..., 0]
            tgt = self._target_qp(fc.u_target, dm.obs_elems, n, t, comp)
            W = dm.weights(dm.obs_elems)
            vec = fem.element_vectors(W, dm.phi, dm.dphi(dm.obs_elems), (uy - tgt)[..., None])
            fem.scatter_vector(out, dm, dm.obs_elems, w * vec, (comp,))
        if fc.v_target is not None and len(dm.fluid_elems):
            v = dm.qp_values(dm.fluid_elems, U[:, 1:3])
            tgt = self._target_qp_vec(fc.v_target, dm.fluid_elems, n, t)
            W = dm.weights(dm.fluid_elems)
            vec = fem.element_vectors(W, dm.phi, dm.dphi(dm.fluid_elems), v - tgt)
            fem.scatter_vector(out, dm, dm.fluid_elems, w * vec, (1, 2))
        return out.reshape(-1)

    def _target_qp(self, spec: TargetSpec, elems, n, t, comp):
        if spec.kind == "nodal":
            return self.dm.qp_values(elems, spec.values[n][:, None])[..., 0]
        shape = (len(elems), len(self.dm.quad.weights))
        return np.full(shape, spec.value(t))

    def _target_qp_vec(self, spec: TargetSpec, elems, n, t):
        if spec.kind == "nodal":
            return self.dm.qp_values(elems, spec.values[n])
        shape = (len(elems), len(self.dm.quad.weights), 2)
        return np.full(shape, spec.value(t))


# ----------------------------------------------------------------------------


@dataclass
class SolverConfig:
    newton_tol: float = 1e-6
    newton_abs_tol: float = 1e-11
    newton_max_iter: int = 20
    line_search_max: int = 8
    reassembly_gamma: float = 0.05
    gmres_tol: float = 1e-4
    gmres_max_iter: int = 100
    gmres_restart: int = 100
    mg_smooth_steps: int = 2
    vanka_omega: float = 1.0
    richardson_tol: float = 1e-6
    richardson_max_iter: int = 30
    update_by_vector_addition: bool = True


class Problem:
    """Scenario bound to a mesh hierarchy: physics, scheme, functional and
    per-level operators plus transfer chains."""

    def __init__(self, hierarchy: MeshHierarchy, degree: int, prm: PhysicsParams,
                 flags: FormFlags, scheme: ThetaScheme, functional: FunctionalConfig,
                 solver: SolverConfig | None = None, lps: fem.LpsConfig | None = None,
                 inflow_profile=None):
        self.hierarchy = hierarchy
        self.degree = degree
        self.prm = prm
        self.flags = flags
        self.scheme = scheme
        self.functional = functional
        self.solver = solver or SolverConfig()
        self.lps = lps or fem.LpsConfig()
        self.inflow_profile = inflow_profile  # callable (t, y) -> vx

        self.levels: list[LevelOps] = []
        for l, mesh in enumerate(hierarchy.levels):
            parents = hierarchy.parent_maps[l - 1] if l > 0 else None
            lv = LevelOps(mesh, degree, prm, flags, self.lps, parents)
            lv.set_scheme(scheme.k)
            self.levels.append(lv)

        self.P_scalar = []
        self.P_mom = []
        self.P_u = []
        for l in range(len(self.levels) - 1):
            Ps = linalg.prolongation_scalar(self.levels[l].dm, self.levels[l + 1].dm)
            self.P_scalar.append(Ps)
            self.P_mom.append(linalg.blocked_prolongation(
                Ps, 3, self.levels[l + 1].free3, self.levels[l].free3))
            self.P_u.append(linalg.blocked_prolongation(
                Ps, 2, self.levels[l + 1].free2, self.levels[l].free2))

        self._ext_chains: dict[int, linalg.SubproblemChain] = {}
        self._upd_chains: dict[int, linalg.SubproblemChain] = {}

    def inflow_values(self, level: int, t: float) -> np.ndarray | None:
        if self.inflow_profile is None:
            return None
        lv = self.levels[level]
        if len(lv.inflow_nodes) == 0:
            return None
        y = lv.dm.node_xy[lv.inflow_nodes, 1]
        return self.inflow_profile(t, y)

    def _chain(self, cache, level: int, matrix_of) -> linalg.SubproblemChain:
        if level not in cache:
            levels = []
            for l in range(level + 1):
                lv = self.levels[l]
                levels.append(linalg.ChainLevel(
                    matrix=matrix_of(lv), patchset=lv.patch_u,
                    fixed_dofs=np.nonzero(~lv.free2)[0]))
            P = [self.P_u[l] for l in range(level)]
            cache[level] = linalg.SubproblemChain(
                levels, P, smooth_steps=self.solver.mg_smooth_steps,
                omega=self.solver.vanka_omega, galerkin=False)
        return cache[level]

    def ext_chain(self, level: int) -> linalg.SubproblemChain:
        return self._chain(self._ext_chains, level, lambda lv: lv.K_ext)

    def upd_chain(self, level: int) -> linalg.SubproblemChain:
        return self._chain(self._upd_chains, level, lambda lv: lv.K_upd)

    def momentum_chain(self, level: int, K_fine: linalg.BlockMatrix) -> linalg.SubproblemChain:
        levels = []
        for l in range(level + 1):
            lv = self.levels[l]
            m = K_fine if l == level else None
            levels.append(linalg.ChainLevel(
                matrix=m, patchset=lv.patch_mom, fixed_dofs=np.nonzero(~lv.free3)[0]))
        P = [self.P_mom[l] for l in range(level)]
        return linalg.SubproblemChain(
            levels, P, smooth_steps=self.solver.mg_smooth_steps, omega=self.solver.vanka_omega)
