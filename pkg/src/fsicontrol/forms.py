"""Pointwise kernels of the monolithic ALE fluid-structure system.

All functions are vectorized over leading axes (elements, quadrature points).
Residual kernels return coefficient arrays that pair with test-function
values/gradients; Jacobian kernels return coefficient tensors for the generic
element contraction in :mod:`fsicontrol.fem`.

Conventions: gradients are Jacobians, (grad f)[a, b] = d f_a / d x_b; the
momentum row is tested with vector functions (coefficient keys 'v*'/'g*'
pair with test values/gradients), the divergence row with scalars.

Time step t_{n-1} -> t_n, with theta in [1/2, 1] and step size k:

  rho_f (Jbar (v_n - v_{n-1}), phi)_F - rho_f (Jbar grad(vbar) Fbar^{-1} (u_n - u_{n-1}), phi)_F
    + k A_p(U_n) + k theta A_F(U_n) + k (1-theta) A_F(U_{n-1})
    + (rho_s (v_n - v_{n-1}), phi)_S + k theta A_S(U_n) + k (1-theta) A_S(U_{n-1})
    - k (q_n, phi . n)_{Gamma_q}                                  [momentum]
  k A_div(U_n) + k S_lps(p_n)                                     [divergence]
  k A_ale(U_n)                                                    [extension]
  (u_n - u_{n-1} - k theta v_n - k (1-theta) v_{n-1}, psi)_S      [update]

with A_F = rho_f (J grad(v) F^{-1} v, phi) + rho_f nu_f (J (grad(v) F^{-1}
+ F^{-T} grad(v)^T) F^{-T}, grad phi), A_p = -(J p F^{-T}, grad phi),
A_div = (J tr(grad(v) F^{-1}), xi), A_ale = (grad u, grad psi) and the
St. Venant-Kirchhoff term A_S = (F Sigma, grad phi),
Sigma = 2 mu_s E + lambda_s tr(E) I, E = (F^T F - I)/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

I2 = np.eye(2)


class EntanglementError(RuntimeError):
    """det(I + grad u) <= 0 somewhere: the moving mesh has become invalid."""

    def __init__(self, where=""):
        super().__init__(f"non-positive ALE Jacobian determinant {where}".strip())


@dataclass
class PhysicsParams:
    """Material constants (SI units)."""

    rho_f: float = 1000.0  # fluid density, kg/m^3
    nu_f: float = 1e-3  # kinematic viscosity, m^2/s
    rho_s: float = 1000.0  # solid density, kg/m^3
    mu_s: float = 0.5e6  # shear modulus, kg/(m s^2)
    lam_s: float = 2.0e6  # first Lame coefficient, kg/(m s^2)

    def __post_init__(self):
        for name in ("rho_f", "nu_f", "rho_s", "mu_s", "lam_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"physics parameter {name} must be positive")

    @property
    def mu_dyn(self) -> float:
        return self.rho_f * self.nu_f


@dataclass
class FormFlags:
    """Model switches.  Turning ``ale_coupling`` off freezes the fluid
    geometry (F = I, J = 1, no domain-motion transport) so the fluid sees the
    reference domain; ``convection`` toggles the nonlinear transport term;
    ``solid_model`` is 'stvk' or 'linear'."""

    ale_coupling: bool = True
    convection: bool = True
    solid_model: str = "stvk"


# ----------------------------------------------------------------------------
# small tensor algebra (vectorized over leading axes)


def det2(A):
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def inv2(A, det=None):
    if det is None:
        det = det2(A)
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    out[..., 1, 1] = A[..., 0, 0]
    return out / det[..., None, None]


def mm(A, B):
    return A @ B


def mT(A):
    return np.swapaxes(A, -1, -2)


def mv(A, x):
    return np.einsum("...ab,...b->...a", A, x)


@dataclass
class KinematicsEval:
    """Deformation gradient data: F = I + grad u, J = det F, Fi = F^{-1},
    E = (F^T F - I)/2."""

    F: np.ndarray
    J: np.ndarray
    Fi: np.ndarray
    E: np.ndarray


def kinematics(grad_u: np.ndarray, check: bool = True) -> KinematicsEval:
    F = grad_u + I2
    J = det2(F)
    if check and np.any(J <= 0.0):
        raise EntanglementError()
    Fi = inv2(F, J)
    E = 0.5 * (mm(mT(F), F) - I2)
    return KinematicsEval(F=F, J=J, Fi=Fi, E=E)


def frozen_kinematics(shape) -> KinematicsEval:
    F = np.broadcast_to(I2, shape + (2, 2)).copy()
    J = np.ones(shape)
    return KinematicsEval(F=F, J=J, Fi=F.copy(), E=np.zeros(shape + (2, 2)))


def condensed_kinematics(grad_u_prev, grad_v_prev, grad_v_new, theta: float, k: float) -> KinematicsEval:
    """Solid deformation gradient expressed through velocities:
    F = I + grad(u_{n-1} + k theta v_n + k (1-theta) v_{n-1})."""
    g = grad_u_prev + k * theta * grad_v_new + k * (1.0 - theta) * grad_v_prev
    return kinematics(g)


def solid_stress(kin: KinematicsEval, prm: PhysicsParams):
    """Second Piola-Kirchhoff stress and its first Piola product F Sigma."""
    Sig = 2.0 * prm.mu_s * kin.E + prm.lam_s * np.trace(kin.E, axis1=-2, axis2=-1)[..., None, None] * I2
    return Sig, mm(kin.F, Sig)


def linear_solid_stress(grad_u, prm: PhysicsParams):
    eps = 0.5 * (grad_u + mT(grad_u))
    return 2.0 * prm.mu_s * eps + prm.lam_s * np.trace(eps, axis1=-2, axis2=-1)[..., None, None] * I2


def fluid_stress_ale(p, grad_v, kin: KinematicsEval, prm: PhysicsParams):
    """Cauchy stress sigma_f = -p I + rho_f nu_f (grad v F^{-1} + F^{-T} grad v^T)
    and the mapped traction integrand J sigma_f F^{-T}."""
    visc = prm.mu_dyn * (mm(grad_v, kin.Fi) + mm(mT(kin.Fi), mT(grad_v)))
    sigma = -p[..., None, None] * I2 + visc
    piola = kin.J[..., None, None] * mm(sigma, mT(kin.Fi))
    return sigma, piola


# ----------------------------------------------------------------------------
# state containers


def state_kinematics(fields: dict, flags: FormFlags, fluid: bool) -> KinematicsEval:
    key = "_kin_frozen" if (fluid and not flags.ale_coupling) else "_kin"
    if key not in fields:
        if fluid and not flags.ale_coupling:
            fields[key] = frozen_kinematics(fields["gu"].shape[:-2])
        else:
            fields[key] = kinematics(fields["gu"])
    return fields[key]


# ----------------------------------------------------------------------------
# residual kernels


FLUID_TERMS = ("time", "transport", "convection", "viscous", "pressure", "divergence")
SOLID_TERMS = ("solid_time", "solid_stress", "relation")


def fluid_residual(fn: dict, fm: dict, prm: PhysicsParams, theta: float, k: float,
                   flags: FormFlags, terms=None):
    """Momentum/divergence residual coefficients on fluid elements.

    Returns (mv, mg, dv): momentum test-value coefficients (e,q,2), momentum
    test-gradient coefficients (e,q,2,2) and divergence test-value
    coefficients (e,q).  ``terms`` restricts to a subset of FLUID_TERMS.
    """
    on = (lambda t: True) if terms is None else (lambda t: t in terms)
    kn = state_kinematics(fn, flags, True)
    km = state_kinematics(fm, flags, True)
    rho, mu = prm.rho_f, prm.mu_dyn
    jbar = 0.5 * (kn.J + km.J)
    sh = kn.J.shape

    mv = np.zeros(sh + (2,))
    if on("time"):
        mv = mv + rho * jbar[..., None] * (fn["v"] - fm["v"])
    if on("transport") and flags.ale_coupling:
        fbar_i = inv2(0.5 * (kn.F + km.F))
        vbar_g = 0.5 * (fn["gv"] + fm["gv"])
        w = fn["u"] - fm["u"]
        mv = mv - rho * jbar[..., None] * mv_(vbar_g, fbar_i, w)
    if on("convection") and flags.convection:
        mv = mv + k * theta * rho * kn.J[..., None] * mv_(fn["gv"], kn.Fi, fn["v"])
        mv = mv + k * (1.0 - theta) * rho * km.J[..., None] * mv_(fm["gv"], km.Fi, fm["v"])

    mg = np.zeros(sh + (2, 2))
    if on("viscous"):
        mg = mg + k * theta * mu * kn.J[..., None, None] * mm(sym_ale(fn["gv"], kn.Fi), mT(kn.Fi))
        mg = mg + k * (1.0 - theta) * mu * km.J[..., None, None] * mm(sym_ale(fm["gv"], km.Fi), mT(km.Fi))
    if on("pressure"):
        mg = mg - k * (kn.J * fn["p"])[..., None, None] * mT(kn.Fi)

    dv = np.zeros(sh)
    if on("divergence"):
        dv = k * kn.J * np.einsum("...ab,...ba->...", fn["gv"], kn.Fi)
    return mv, mg, dv


def sym_ale(gv, Fi):
    return mm(gv, Fi) + mm(mT(Fi), mT(gv))


def mv_(G, Fi, x):
    return np.einsum("...ab,...bc,...c->...a", G, Fi, x)


def solid_residual(sn: dict, sm: dict, prm: PhysicsParams, theta: float, k: float,
                   flags: FormFlags, terms=None):
    """Momentum/update residual coefficients on solid elements: (mv, mg, rel)."""
    on = (lambda t: True) if terms is None else (lambda t: t in terms)
    sh = sn["v"].shape[:-1]
    mv = np.zeros(sh + (2,))
    if on("solid_time"):
        mv = prm.rho_s * (sn["v"] - sm["v"])
    mg = np.zeros(sh + (2, 2))
    if on("solid_stress"):
        if flags.solid_model == "linear":
            mg = k * theta * linear_solid_stress(sn["gu"], prm)
            mg = mg + k * (1.0 - theta) * linear_solid_stress(sm["gu"], prm)
        else:
            kn = kinematics(sn["gu"])
            km = kinematics(sm["gu"])
            mg = k * theta * solid_stress(kn, prm)[1] + k * (1.0 - theta) * solid_stress(km, prm)[1]
    rel = np.zeros(sh + (2,))
    if on("relation"):
        rel = sn["u"] - sm["u"] - k * theta * sn["v"] - k * (1.0 - theta) * sm["v"]
    return mv, mg, rel


# ----------------------------------------------------------------------------
# Jacobian coefficient tensors
#
# Pair keys are (row, col) with rows 'v' momentum, 'd' divergence, 'e'
# extension, 'r' update; C-dict keys 'vv','vg','gv','gg' as in fem.element_matrices.


def _add(C, pair, kind, val):
    d = C.setdefault(pair, {})
    if kind in d:
        d[kind] = d[kind] + val
    else:
        d[kind] = val


def stress_derivative_tensor(F, Sig, prm: PhysicsParams):
    """D[a,b,c,d]: coefficient of trial gradient G[c,d] in d(F Sigma)[a,b]."""
    sh = F.shape[:-2]
    D = np.zeros(sh + (2, 2, 2, 2))
    FFT = mm(F, mT(F))
    D += np.einsum("ac,...db->...abcd", I2, Sig)
    D += prm.mu_s * np.einsum("...ad,...cb->...abcd", F, F)
    D += prm.mu_s * np.einsum("...ac,bd->...abcd", FFT, I2)
    D += prm.lam_s * np.einsum("...ab,...cd->...abcd", F, F)
    return D


def linear_stress_derivative_tensor(shape, prm: PhysicsParams):
    D = np.zeros(shape + (2, 2, 2, 2))
    D += prm.mu_s * np.einsum("ac,bd->abcd", I2, I2)
    D += prm.mu_s * np.einsum("ad,bc->abcd", I2, I2)
    D += prm.lam_s * np.einsum("ab,cd->abcd", I2, I2)
    return np.broadcast_to(D, shape + (2, 2, 2, 2)).copy() if shape else D


def solid_stress_jacobian(gu, prm: PhysicsParams, flags: FormFlags):
    """Raw derivative of the stress term w.r.t. the deformation gradient."""
    if flags.solid_model == "linear":
        return linear_stress_derivative_tensor(gu.shape[:-2], prm)
    kin = kinematics(gu)
    Sig, _ = solid_stress(kin, prm)
    return stress_derivative_tensor(kin.F, Sig, prm)


def fluid_jacobian(fn, fm, prm, theta, k, flags: FormFlags, ale_derivs: bool, terms=None):
    """Derivatives of the implicit fluid residual terms w.r.t. (p_n, v_n, u_n)."""
    on = (lambda t: True) if terms is None else (lambda t: t in terms)
    kn = state_kinematics(fn, flags, True)
    km = state_kinematics(fm, flags, True)
    rho, mu = prm.rho_f, prm.mu_dyn
    sh = kn.J.shape
    jbar = 0.5 * (kn.J + km.J)
    Fi, J = kn.Fi, kn.J
    FiFiT = mm(Fi, mT(Fi))

    C: dict = {}
    if on("time"):
        _add(C, ("v", "v"), "vv", rho * jbar[..., None, None] * np.broadcast_to(I2, sh + (2, 2)))
    if on("viscous"):
        gg = np.einsum("ac,...db->...abcd", I2, FiFiT) + np.einsum("...da,...bc->...abcd", Fi, Fi)
        _add(C, ("v", "v"), "gg", k * theta * mu * J[..., None, None, None, None] * gg)
    if on("pressure"):
        _add(C, ("v", "p"), "gv", (-k * J)[..., None, None, None] * mT(Fi)[..., None])
    if on("divergence"):
        # coefficient of G[c,d] is k J Fi[d,c]
        _add(C, ("d", "v"), "vg", (k * J)[..., None, None, None] * mT(Fi)[..., None, :, :])

    if on("convection") and flags.convection:
        gvFi = mm(fn["gv"], Fi)
        Fiv = mv(Fi, fn["v"])
        _add(C, ("v", "v"), "vv", k * theta * rho * J[..., None, None] * gvFi)
        _add(
            C,
            ("v", "v"),
            "vg",
            k * theta * rho * J[..., None, None, None] * np.einsum("ac,...d->...acd", I2, Fiv),
        )
    if on("transport") and flags.ale_coupling:
        fbar_i = inv2(0.5 * (kn.F + km.F))
        vbar_g = 0.5 * (fn["gv"] + fm["gv"])
        w = fn["u"] - fm["u"]
        fbw = mv(fbar_i, w)
        gvbF = mm(vbar_g, fbar_i)
        # transport term: derivative w.r.t. v_n (through vbar)
        _add(
            C,
            ("v", "v"),
            "vg",
            -0.5 * rho * jbar[..., None, None, None] * np.einsum("ac,...d->...acd", I2, fbw),
        )

    if ale_derivs and flags.ale_coupling:
        # dJ[G] = J tr(Fi G); coefficient of G[c,d] is dJcd[c,d] = J Fi[d,c]
        dJcd = J[..., None, None] * np.swapaxes(Fi, -1, -2)

        if on("time"):
            # time term through Jbar (dJ_n / 2)
            _add(
                C,
                ("v", "u"),
                "vg",
                0.5 * rho * np.einsum("...cd,...a->...acd", dJcd, fn["v"] - fm["v"]),
            )
        if on("transport"):
            _add(C, ("v", "u"), "vv", -rho * jbar[..., None, None] * gvbF)
            _add(
                C,
                ("v", "u"),
                "vg",
                -0.5 * rho * np.einsum("...cd,...a->...acd", dJcd, mv(gvbF, w))
                + 0.5 * rho * jbar[..., None, None, None] * np.einsum("...ac,...d->...acd", gvbF, fbw),
            )
        if on("convection") and flags.convection:
            gvFi = mm(fn["gv"], Fi)
            Fiv = mv(Fi, fn["v"])
            _add(
                C,
                ("v", "u"),
                "vg",
                k * theta * rho * (
                    np.einsum("...cd,...a->...acd", dJcd, mv(gvFi, fn["v"]))
                    - J[..., None, None, None] * np.einsum("...ac,...d->...acd", gvFi, Fiv)
                ),
            )
        if on("viscous"):
            Vn = sym_ale(fn["gv"], Fi)
            VFiT = mm(Vn, mT(Fi))
            gvFi = mm(fn["gv"], Fi)
            X = mm(mT(Fi), mm(mT(fn["gv"]), mT(Fi)))
            gg_u = (
                np.einsum("...cd,...ab->...abcd", dJcd, VFiT)
                - J[..., None, None, None, None] * np.einsum("...ac,...db->...abcd", gvFi, FiFiT)
                - J[..., None, None, None, None] * np.einsum("...da,...cb->...abcd", Fi, X)
                - J[..., None, None, None, None] * np.einsum("...ad,...bc->...abcd", VFiT, Fi)
            )
            _add(C, ("v", "u"), "gg", k * theta * mu * gg_u)
        if on("pressure"):
            gg_p = (
                np.einsum("...cd,...ba->...abcd", dJcd, Fi)
                - J[..., None, None, None, None] * np.einsum("...da,...bc->...abcd", Fi, Fi)
            )
            _add(C, ("v", "u"), "gg", -k * fn["p"][..., None, None, None, None] * gg_p)
        if on("divergence"):
            trgvFi = np.einsum("...ab,...ba->...", fn["gv"], Fi)
            FigvFi = mm(Fi, mm(fn["gv"], Fi))
            _add(
                C,
                ("d", "u"),
                "vg",
                k * (
                    np.einsum("...cd,...->...cd", dJcd, trgvFi)
                    - J[..., None, None] * np.swapaxes(FigvFi, -1, -2)
                )[..., None, :, :],
            )
    return C


def fluid_explicit_jacobian(fn, prm, theta, k, flags: FormFlags, ale_derivs: bool):
    """Derivatives of k(1-theta) A_F(U_n) w.r.t. U_n (for the cross-step block)."""
    kn = state_kinematics(fn, flags, True)
    rho, mu = prm.rho_f, prm.mu_dyn
    Fi, J = kn.Fi, kn.J
    FiFiT = mm(Fi, mT(Fi))
    c1 = k * (1.0 - theta)
    C: dict = {}
    gg = np.einsum("ac,...db->...abcd", I2, FiFiT) + np.einsum("...da,...bc->...abcd", Fi, Fi)
    _add(C, ("v", "v"), "gg", c1 * mu * J[..., None, None, None, None] * gg)
    if flags.convection:
        gvFi = mm(fn["gv"], Fi)
        Fiv = mv(Fi, fn["v"])
        _add(C, ("v", "v"), "vv", c1 * rho * J[..., None, None] * gvFi)
        _add(C, ("v", "v"), "vg", c1 * rho * J[..., None, None, None] * np.einsum("ac,...d->...acd", I2, Fiv))
    if ale_derivs and flags.ale_coupling:
        dJcd = J[..., None, None] * np.swapaxes(Fi, -1, -2)
        Vn = sym_ale(fn["gv"], Fi)
        VFiT = mm(Vn, mT(Fi))
        gvFi = mm(fn["gv"], Fi)
        X = mm(mT(Fi), mm(mT(fn["gv"]), mT(Fi)))
        gg_u = (
            np.einsum("...cd,...ab->...abcd", dJcd, VFiT)
            - J[..., None, None, None, None] * np.einsum("...ac,...db->...abcd", gvFi, FiFiT)
            - J[..., None, None, None, None] * np.einsum("...da,...cb->...abcd", Fi, X)
            - J[..., None, None, None, None] * np.einsum("...ad,...bc->...abcd", VFiT, Fi)
        )
        _add(C, ("v", "u"), "gg", c1 * mu * gg_u)
        if flags.convection:
            Fiv = mv(Fi, fn["v"])
            _add(
                C,
                ("v", "u"),
                "vg",
                c1 * rho * (
                    np.einsum("...cd,...a->...acd", dJcd, mv(gvFi, fn["v"]))
                    - J[..., None, None, None] * np.einsum("...ac,...d->...acd", gvFi, Fiv)
                ),
            )
    return C


def fluid_cross_jacobian(fnp1, fn, prm, theta, k, flags: FormFlags, ale_derivs: bool):
    """Derivatives of the step-(n+1) fluid residual w.r.t. U_n."""
    knp1 = state_kinematics(fnp1, flags, True)
    kn = state_kinematics(fn, flags, True)
    rho = prm.rho_f
    sh = kn.J.shape
    jbar = 0.5 * (kn.J + knp1.J)

    C = fluid_explicit_jacobian(fn, prm, theta, k, flags, ale_derivs)
    # time derivative: -rho Jbar dv
    _add(C, ("v", "v"), "vv", -rho * jbar[..., None, None] * np.broadcast_to(I2, sh + (2, 2)))
    if flags.ale_coupling:
        fbar_i = inv2(0.5 * (kn.F + knp1.F))
        vbar_g = 0.5 * (fn["gv"] + fnp1["gv"])
        w = fnp1["u"] - fn["u"]
        fbw = mv(fbar_i, w)
        gvbF = mm(vbar_g, fbar_i)
        _add(
            C,
            ("v", "v"),
            "vg",
            -0.5 * rho * jbar[..., None, None, None] * np.einsum("ac,...d->...acd", I2, fbw),
        )
        if ale_derivs:
            dJcd = kn.J[..., None, None] * np.swapaxes(kn.Fi, -1, -2)
            # time term through Jbar_{n+1}
            _add(
                C,
                ("v", "u"),
                "vg",
                0.5 * rho * np.einsum("...cd,...a->...acd", dJcd, fnp1["v"] - fn["v"]),
            )
            # transport term: dw = -du, plus Jbar and Fbar dependencies
            _add(C, ("v", "u"), "vv", rho * jbar[..., None, None] * gvbF)
            _add(
                C,
                ("v", "u"),
                "vg",
                -0.5 * rho * np.einsum("...cd,...a->...acd", dJcd, mv(gvbF, w))
                + 0.5 * rho * jbar[..., None, None, None] * np.einsum("...ac,...d->...acd", gvbF, fbw),
            )
    return C


def solid_jacobian(sn, sm, prm, theta, k, flags: FormFlags, condensed: bool, terms=None):
    """Derivatives of the implicit solid residual terms.

    condensed=True returns the velocity-based stress coupling (k theta)^2 D
    evaluated at the condensed deformation gradient; otherwise the exact
    u-coupling k theta D at u_n.
    """
    sh = sn["v"].shape[:-1]
    on = (lambda t: True) if terms is None else (lambda t: t in terms)
    C: dict = {}
    if on("solid_time"):
        _add(C, ("v", "v"), "vv", prm.rho_s * np.broadcast_to(I2, sh + (2, 2)).copy())
    kt = k * theta
    if not on("solid_stress"):
        pass
    elif condensed:
        if flags.solid_model == "linear":
            D = linear_stress_derivative_tensor(sh, prm)
        else:
            kin = condensed_kinematics(sm["gu"], sm["gv"], sn["gv"], theta, k)
            Sig, _ = solid_stress(kin, prm)
            D = stress_derivative_tensor(kin.F, Sig, prm)
        _add(C, ("v", "v"), "gg", kt * kt * D)
    else:
        D = solid_stress_jacobian(sn["gu"], prm, flags)
        _add(C, ("v", "u"), "gg", kt * D)
    if on("relation"):
        _add(C, ("r", "u"), "vv", np.broadcast_to(I2, sh + (2, 2)).copy())
        _add(C, ("r", "v"), "vv", -kt * np.broadcast_to(I2, sh + (2, 2)).copy())
    return C


def solid_cross_jacobian(sn, prm, theta, k, flags: FormFlags):
    """Derivatives of the step-(n+1) solid residual w.r.t. U_n."""
    sh = sn["v"].shape[:-1]
    eye = np.broadcast_to(I2, sh + (2, 2)).copy()
    C: dict = {}
    _add(C, ("v", "v"), "vv", -prm.rho_s * eye)
    _add(C, ("v", "u"), "gg", k * (1.0 - theta) * solid_stress_jacobian(sn["gu"], prm, flags))
    _add(C, ("r", "u"), "vv", -eye)
    _add(C, ("r", "v"), "vv", -k * (1.0 - theta) * eye)
    return C


def ale_extension_jacobian(sh, k: float):
    """Harmonic extension row: k (grad du, grad psi)."""
    gg = k * np.einsum("ac,bd->abcd", I2, I2)
    return {("e", "u"): {"gg": np.broadcast_to(gg, sh + (2, 2, 2, 2)).copy()}}
