"""Phenomenological crystal plasticity and the nonlinear online hierarchy.

Local constitutive law (per material node): multiplicative split
F = Fe Fp, generalized Hooke's law S = C : E with the Green-Lagrange strain
E = (Fe^T Fe - I)/2, power-law slip kinetics on the 12 FCC {111}<110>
systems driven by the Mandel stress M = Fe^T Fe S, and a saturating
slip-resistance hardening law coupled through the FCC interaction matrix.
The plastic flow is integrated with the exponential map (exactly volume
preserving) and a Newton solve on the 12 slip increments; the consistent
tangent dP/dF follows from the implicit function theorem with the partial
derivatives of the converged residual system taken by central differences.

The online hierarchy distributes a macroscopic deformation gradient to the
leaves of a material network through one rank-one jump per tree node,
solves traction continuity at every node together with the macroscopic
stress controls by Newton iteration, and verifies the Hill-Mandel energy
identity at convergence.

Units: stresses in GPa, slip resistances converted from MPa at
construction; rates in 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve

from . import rotations

__all__ = ["CpParams", "MaterialState", "FCC_SLIP_DIRECTIONS",
           "FCC_SLIP_PLANES", "interaction_classes", "interaction_matrix",
           "make_material", "slip_rate", "cp_stress_update",
           "OnlineSolver", "LoadSegment", "run_program",
           "export_analogous_unit_cell", "LocalNewtonError",
           "OnlineNewtonError"]

# FCC {111}<110> slip systems: (direction, plane normal), Miller indices.
FCC_SLIP_DIRECTIONS = np.array([
    [0, 1, -1], [-1, 0, 1], [1, -1, 0],
    [0, -1, -1], [1, 0, 1], [-1, 1, 0],
    [0, -1, 1], [-1, 0, -1], [1, 1, 0],
    [0, 1, 1], [1, 0, -1], [-1, -1, 0],
], dtype=float)
FCC_SLIP_PLANES = np.array([
    [1, 1, 1], [1, 1, 1], [1, 1, 1],
    [-1, -1, 1], [-1, -1, 1], [-1, -1, 1],
    [1, -1, -1], [1, -1, -1], [1, -1, -1],
    [-1, 1, -1], [-1, 1, -1], [-1, 1, -1],
], dtype=float)

# Interaction class indices into the 7-coefficient list.
_SELF, _COPLANAR, _COLLINEAR, _HIRTH, _GLISSILE_I, _GLISSILE_II, _LOMER = \
    range(7)


class LocalNewtonError(RuntimeError):
    """Local constitutive Newton failed even after time-step substepping."""


class OnlineNewtonError(RuntimeError):
    """Hierarchy Newton failed; carries the per-node residual map."""

    def __init__(self, msg, node_residuals=None):
        self.node_residuals = node_residuals
        super().__init__(msg)


def interaction_classes():
    """12x12 matrix of FCC slip-slip interaction classes (values 0..6).

    Classified geometrically: self; coplanar (same plane); collinear
    (parallel Burgers vectors on different planes); Hirth lock (orthogonal
    Burgers vectors); glissile junction (junction Burgers vector glides in
    a parent plane — class I when in the row system's plane, II when in the
    column system's); Lomer lock otherwise.
    """
    s = FCC_SLIP_DIRECTIONS
    n = FCC_SLIP_PLANES
    cls = np.empty((12, 12), dtype=int)
    for a in range(12):
        for b in range(12):
            if a == b:
                cls[a, b] = _SELF
            elif np.array_equal(n[a], n[b]):
                cls[a, b] = _COPLANAR
            elif np.array_equal(s[a], s[b]) or np.array_equal(s[a], -s[b]):
                cls[a, b] = _COLLINEAR
            elif np.dot(s[a], s[b]) == 0:
                cls[a, b] = _HIRTH
            else:
                # junction Burgers vector: the +/- combination of <110> type
                j = s[a] + s[b]
                if (j ** 2).sum() != 2:
                    j = s[a] - s[b]
                if np.dot(j, n[a]) == 0:
                    cls[a, b] = _GLISSILE_I
                elif np.dot(j, n[b]) == 0:
                    cls[a, b] = _GLISSILE_II
                else:
                    cls[a, b] = _LOMER
    return cls


def interaction_matrix(coefficients):
    """Map 7 interaction coefficients onto the 12x12 FCC class matrix."""
    c = np.asarray(coefficients, dtype=float)
    if c.shape != (7,):
        raise ValueError("expected exactly 7 interaction coefficients")
    return c[interaction_classes()]


@dataclass
class CpParams:
    """Constitutive parameters (AA6022-T4-like aluminum defaults)."""

    h0: float = 1.02            # GPa
    xi_inf: float = 266.0       # MPa
    xi0: float = 76.0           # MPa
    n: float = 20.0
    a: float = 3.7
    gamma0: float = 0.001       # 1/s
    h_int: float = 0.0
    interaction: tuple = (1.0, 1.0, 5.123, 0.574, 1.123, 1.123, 1.0)
    c11: float = 107.3          # GPa
    c12: float = 60.8
    c44: float = 28.3

    def __post_init__(self):
        if min(self.h0, self.xi_inf, self.xi0, self.n, self.a,
               self.gamma0) <= 0 or self.h_int < 0:
            raise ValueError("all parameters must be positive (h_int >= 0)")


def slip_rate(tau, xi, params):
    """Power-law shear rate gamma0 * |tau/xi|^n * sgn(tau)."""
    r = np.asarray(tau, dtype=float) / np.asarray(xi, dtype=float)
    return params.gamma0 * np.abs(r) ** params.n * np.sign(r)


@dataclass
class MaterialState:
    """Evolving state of one material node (sample frame)."""

    F: np.ndarray            # (3, 3) total deformation gradient
    Fp: np.ndarray           # (3, 3), det = 1
    xi: np.ndarray           # (12,) slip resistances, GPa
    gamma_acc: np.ndarray    # (12,) accumulated |slip|
    quat: np.ndarray         # initial orientation (fixed reference)
    dg_prev: np.ndarray | None = None  # warm start for the next local solve

    @classmethod
    def initial(cls, quat, params):
        return cls(F=np.eye(3), Fp=np.eye(3),
                   xi=np.full(12, params.xi0 * 1e-3),
                   gamma_acc=np.zeros(12),
                   quat=np.asarray(quat, dtype=float))

    def copy(self):
        return replace(self, F=self.F.copy(), Fp=self.Fp.copy(),
                       xi=self.xi.copy(), gamma_acc=self.gamma_acc.copy(),
                       quat=self.quat.copy())

    def current_orientation(self):
        """Texture bookkeeping: rotation part of Fe applied to the initial
        orientation."""
        Fe = self.F @ np.linalg.inv(self.Fp)
        u, _, vt = np.linalg.svd(Fe)
        R = u @ vt
        if np.linalg.det(R) < 0:  # guard reflections from degenerate svd
            u[:, -1] *= -1
            R = u @ vt
        return rotations.quat_canonical(
            rotations.quat_multiply(rotations.quat_from_matrix(R), self.quat))


def make_material(params, quat):
    """Precomputed per-orientation arrays for the local update.

    Slip geometry and the cubic stiffness are rotated once from the crystal
    to the sample frame (the plastic configuration stays aligned with the
    sample frame, Fp(0) = I).
    """
    R = rotations.matrix_from_quat(np.asarray(quat, dtype=float))
    s = FCC_SLIP_DIRECTIONS / np.linalg.norm(FCC_SLIP_DIRECTIONS,
                                             axis=1, keepdims=True)
    n = FCC_SLIP_PLANES / np.linalg.norm(FCC_SLIP_PLANES,
                                         axis=1, keepdims=True)
    schmid = np.einsum("ai,aj->aij", s @ R.T, n @ R.T)
    Cv = rotations.rotate_stiffness(
        rotations.cubic_stiffness(params.c11, params.c12, params.c44), quat)
    C4 = rotations.voigt_to_tensor(Cv)
    return {
        "schmid": schmid,
        "schmid_flat": schmid.reshape(12, 9),
        "C4": C4,
        "hmat": interaction_matrix(params.interaction),
        "params": params,
        "quat": np.asarray(quat, dtype=float),
        "xi_inf": params.xi_inf * 1e-3,   # GPa
        "xi0": params.xi0 * 1e-3,
    }


def _kinematics(F, dgamma, Fp_old, mat):
    """Fp update by exponential map, stresses, and resolved shears."""
    Lp_dt = (dgamma @ mat["schmid_flat"]).reshape(3, 3)
    if not np.isfinite(Lp_dt).all() or np.abs(Lp_dt).max() > 20.0:
        raise LocalNewtonError("plastic increment out of range")
    Fp = expm(Lp_dt) @ Fp_old
    Fp_inv = np.linalg.inv(Fp)
    Fe = F @ Fp_inv
    C_el = Fe.T @ Fe
    E = 0.5 * (C_el - np.eye(3))
    S = np.einsum("ijkl,kl->ij", mat["C4"], E)
    M = C_el @ S
    tau = mat["schmid_flat"] @ M.reshape(9)
    P = Fe @ S @ Fp_inv.T
    return P, tau, Fp, Fe


def _implicit_hardening(xi_old, dgamma, mat, tol=1e-13, max_iter=30):
    """Backward-Euler slip resistances.

    Solves xi = xi_old + h0 (1 + h_int) H (|dgamma| * fac(xi)) with
    fac(xi) = |1 - xi/xi_inf|^a sgn(1 - xi/xi_inf) by Newton iteration with
    the analytic Jacobian.
    """
    p = mat["params"]
    xi_inf = mat["xi_inf"]
    adg = np.abs(dgamma)
    if adg.max() == 0.0:
        return xi_old.copy()
    pref = p.h0 * (1.0 + p.h_int)
    H = mat["hmat"]
    xi = xi_old.copy()
    eye = np.eye(12)
    for _ in range(max_iter):
        g = 1.0 - xi / xi_inf
        ag = np.abs(g)
        fac = ag ** p.a * np.sign(g)
        r = xi - xi_old - pref * (H @ (adg * fac))
        if np.max(np.abs(r)) < tol:
            return xi
        dfac = -p.a * ag ** (p.a - 1.0) / xi_inf
        J = eye - pref * H * (adg * dfac)[None, :]
        xi = xi - np.linalg.solve(J, r)
    return xi


def _residual(dgamma, F, Fp_old, xi_old, mat, dt):
    P, tau, Fp, Fe = _kinematics(F, dgamma, Fp_old, mat)
    xi = _implicit_hardening(xi_old, dgamma, mat)
    p = mat["params"]
    r = tau / xi
    rate = p.gamma0 * np.abs(r) ** p.n * np.sign(r)
    return dgamma - dt * rate, P, xi, Fp, Fe


_FD_H = 1e-7


def _jac_dgamma(dgamma, F, Fp_old, xi_old, mat, dt, r0):
    """Forward-difference Jacobian of the slip residual wrt dgamma."""
    J = np.empty((12, 12))
    for k in range(12):
        dp = dgamma.copy(); dp[k] += _FD_H
        rp = _residual(dp, F, Fp_old, xi_old, mat, dt)[0]
        J[:, k] = (rp - r0) / _FD_H
    return J


def _slip_jacobian(dgamma, F, Fp_old, xi_old, mat, dt):
    """Analytic Jacobian of the slip residual wrt dgamma.

    First order in the flow exponential (d expm(A)/dg_l ~ P_l expm(A); the
    commutator correction of order |A| is dropped), hardening sensitivity
    by the implicit function theorem.  Accurate enough for Newton; the
    residual itself stays exact.
    """
    p = mat["params"]
    schmid = mat["schmid"]                       # (12, 3, 3) s x n
    Lp_dt = (dgamma @ mat["schmid_flat"]).reshape(3, 3)
    if not np.isfinite(Lp_dt).all() or np.abs(Lp_dt).max() > 20.0:
        raise LocalNewtonError("plastic increment out of range")
    Fp = expm(Lp_dt) @ Fp_old
    Fp_inv = np.linalg.inv(Fp)
    Fe = F @ Fp_inv
    Ce = Fe.T @ Fe
    S = np.einsum("ijkl,kl->ij", mat["C4"], 0.5 * (Ce - np.eye(3)))
    tau = mat["schmid_flat"] @ (Ce @ S).reshape(9)
    xi = _implicit_hardening(xi_old, dgamma, mat)

    # dFe/dg_l ~ -Fe P_l  =>  dCe_l = -(P_l^T Ce + Ce P_l)
    dCe = -(np.einsum("lba,bc->lac", schmid, Ce)
            + np.einsum("ab,lbc->lac", Ce, schmid))
    dS = np.einsum("ijkl,mkl->mij", mat["C4"], 0.5 * dCe)
    dM = np.einsum("lab,bc->lac", dCe, S) + np.einsum("ab,lbc->lac", Ce, dS)
    dtau = np.einsum("lab,kab->kl", dM, schmid)   # d tau_k / dg_l

    # d xi / dg by IFT on xi = xi_old + pref H (|dg| fac(xi))
    pref = p.h0 * (1.0 + p.h_int)
    H = mat["hmat"]
    xi_inf = mat["xi_inf"]
    g = 1.0 - xi / xi_inf
    ag = np.abs(g)
    fac = ag ** p.a * np.sign(g)
    dfac = -p.a * ag ** (p.a - 1.0) / xi_inf
    adg = np.abs(dgamma)
    Jh = np.eye(12) - pref * H * (adg * dfac)[None, :]
    rhs = pref * H * (np.sign(dgamma) * fac)[None, :]
    dxi = np.linalg.solve(Jh, rhs)                # d xi_k / dg_l

    r = tau / xi
    pref2 = dt * p.gamma0 * p.n * np.abs(r) ** (p.n - 1.0)
    return np.eye(12) - pref2[:, None] * (
        dtau / xi[:, None] - (tau / xi ** 2)[:, None] * dxi)


def _solve_substep(F, Fp_old, xi_old, mat, dt, dg0=None, tol=1e-11,
                   max_iter=40):
    """Newton on the 12 slip increments; returns (dgamma, P, xi, Fp, Fe)."""
    dg = np.zeros(12) if dg0 is None else np.asarray(dg0, dtype=float).copy()
    R, P, xi, Fp, Fe = _residual(dg, F, Fp_old, xi_old, mat, dt)
    nrm = np.max(np.abs(R))
    if dg0 is not None and not np.isfinite(nrm):
        dg = np.zeros(12)
        R, P, xi, Fp, Fe = _residual(dg, F, Fp_old, xi_old, mat, dt)
        nrm = np.max(np.abs(R))
    lu = None
    for _ in range(max_iter):
        if nrm < tol:
            return dg, P, xi, Fp, Fe
        if lu is None:
            J = _slip_jacobian(dg, F, Fp_old, xi_old, mat, dt)
            try:
                lu = lu_factor(J)
            except (ValueError, np.linalg.LinAlgError) as e:
                raise LocalNewtonError(f"singular slip Jacobian: {e}")
        step = lu_solve(lu, -R)
        # backtracking line search on the residual norm
        lam = 1.0
        for _ls in range(30):
            trial = dg + lam * step
            try:
                Rt, Pt, xit, Fpt, Fet = _residual(trial, F, Fp_old, xi_old,
                                                  mat, dt)
                nt = np.max(np.abs(Rt))
            except (LocalNewtonError, FloatingPointError,
                    np.linalg.LinAlgError):
                nt = np.inf
            if not np.isfinite(nt):
                lam *= 0.5
                continue
            if nt < nrm:
                # chord strategy: keep the factorized Jacobian while the
                # full step contracts fast, refresh otherwise
                if lam < 1.0 or nt > 0.2 * nrm:
                    lu = None
                dg, R, P, xi, Fp, Fe, nrm = trial, Rt, Pt, xit, Fpt, Fet, nt
                break
            lam *= 0.5
        else:
            raise LocalNewtonError("line search stalled")
    raise LocalNewtonError(f"no convergence, residual {nrm:.3e}")


def _consistent_tangent(dg, F, Fp_old, xi_old, mat, dt):
    """dP/dF at the converged substep via the implicit function theorem.

    With residual R(dg, F) = 0 at the solution,
    dP/dF = dP/dF|_dg - dP/ddg (dR/ddg)^-1 dR/dF; all partials by central
    differences.
    """
    JPF = np.empty((9, 9))
    JRF = np.empty((12, 9))
    for k in range(9):
        i, j = divmod(k, 3)
        Fp_ = F.copy(); Fp_[i, j] += _FD_H
        Fm_ = F.copy(); Fm_[i, j] -= _FD_H
        rp, Pp = _residual(dg, Fp_, Fp_old, xi_old, mat, dt)[:2]
        rm, Pm = _residual(dg, Fm_, Fp_old, xi_old, mat, dt)[:2]
        JPF[:, k] = (Pp - Pm).reshape(9) / (2.0 * _FD_H)
        JRF[:, k] = (rp - rm) / (2.0 * _FD_H)
    JPg = np.empty((9, 12))
    JRg = np.empty((12, 12))
    for k in range(12):
        dp = dg.copy(); dp[k] += _FD_H
        dm = dg.copy(); dm[k] -= _FD_H
        rp, Pp = _residual(dp, F, Fp_old, xi_old, mat, dt)[:2]
        rm, Pm = _residual(dm, F, Fp_old, xi_old, mat, dt)[:2]
        JPg[:, k] = (Pp - Pm).reshape(9) / (2.0 * _FD_H)
        JRg[:, k] = (rp - rm) / (2.0 * _FD_H)
    dPdF = JPF - JPg @ np.linalg.solve(JRg, JRF)
    return dPdF.reshape(3, 3, 3, 3)


def cp_stress_update(state, F_new, dt, material, compute_tangent=True):
    """Advance one material node to deformation gradient ``F_new``.

    Returns ``(P, dPdF, new_state)`` with the first Piola-Kirchhoff stress
    (3, 3), the consistent tangent (3, 3, 3, 3) (or None), and the updated
    state.  On Newton failure the step is split into 2, 4, ... 1024
    substeps along the straight path in F before giving up.  With
    substepping the tangent is that of the final substep (the previous
    substate is treated as fixed).
    """
    F0 = np.asarray(state.F, dtype=float)
    F1 = np.asarray(F_new, dtype=float)
    for level in range(11):
        k = 2 ** level
        Fp, xi = state.Fp.copy(), state.xi.copy()
        gacc = np.zeros(12)
        dg0 = None if state.dg_prev is None else state.dg_prev / k
        try:
            for j in range(1, k + 1):
                Fj = F0 + (j / k) * (F1 - F0)
                Fp_prev, xi_prev = Fp, xi
                dg, P, xi, Fp, Fe = _solve_substep(Fj, Fp, xi, material,
                                                   dt / k, dg0=dg0)
                dg0 = dg
                gacc += np.abs(dg)
        except LocalNewtonError:
            continue
        tangent = None
        if compute_tangent:
            tangent = _consistent_tangent(dg, Fj, Fp_prev, xi_prev,
                                          material, dt / k)
        new_state = replace(state, F=F1.copy(), Fp=Fp, xi=xi,
                            gamma_acc=state.gamma_acc + gacc,
                            dg_prev=dg.copy())
        # stash the converged-step arguments so callers can form the
        # consistent tangent later without redoing the Newton solve
        new_state._tangent_args = (dg, Fj, Fp_prev, xi_prev, material, dt / k)
        return P, tangent, new_state
    raise LocalNewtonError("local Newton failed after 10 substepping levels")


# --------------------------------------------------------------------------
# Online hierarchy
# --------------------------------------------------------------------------

def _node_normal(theta, phi):
    t = np.pi * theta
    p = 2.0 * np.pi * phi
    return np.array([np.cos(p) * np.sin(t), np.sin(p) * np.sin(t),
                     np.cos(t)])


class OnlineSolver:
    """Newton solver for a material network of crystal-plasticity nodes.

    Unknowns per step: one 3-vector jump per tree node plus the
    deformation-gradient components under stress control.  Residuals:
    traction continuity of the weighted child stresses at every tree node,
    plus the macroscopic stress controls.
    """

    def __init__(self, params, cp_params, quats=None):
        self.params = params
        self.cp_params = cp_params
        N = params.depth
        self.L = 2 ** N
        self.M = self.L - 1
        if quats is None:
            quats = np.array([rotations.quat_from_tait_bryan(*e)
                              for e in params.euler])
        self.quats = np.asarray(quats, dtype=float)
        self.materials = [make_material(cp_params, q) for q in self.quats]
        self.states = [MaterialState.initial(q, cp_params)
                       for q in self.quats]
        self.weights = params.weights()
        wsum = self.weights.sum()
        if wsum <= 0:
            raise ValueError("total network weight must be positive")
        self.vol = self.weights / wsum

        # tree bookkeeping: per node, its normal, child leaf sets, and the
        # jump coefficients c[i, j] entering leaf i's deformation gradient
        self.normals = np.empty((self.M, 3))
        self.cmat = np.zeros((self.L, self.M))
        self.gmat = np.zeros((self.M, self.L))
        for l in range(N):
            for pnode in range(2 ** l):
                j = 2 ** l - 1 + pnode
                self.normals[j] = _node_normal(*params.angles[j])
                shift = N - l - 1
                under = np.arange(self.L) >> (shift + 1) == pnode
                child1 = under & ((np.arange(self.L) >> shift) % 2 == 0)
                child2 = under & ~child1
                W1 = self.weights[child1].sum()
                W2 = self.weights[child2].sum()
                f1 = W1 / (W1 + W2)
                self.cmat[child1, j] = 1.0 - f1
                self.cmat[child2, j] = -f1
                self.gmat[j, child1] = self.weights[child1] / W1
                self.gmat[j, child2] = -self.weights[child2] / W2
        self.F_macro = np.eye(3)
        self.a = np.zeros((self.M, 3))

    def leaf_deformations(self, F_macro, a):
        """F_i = F_macro + sum_j c_ij a_j x N_j."""
        jumps = np.einsum("jm,jn->jmn", a, self.normals)   # (M, 3, 3)
        return F_macro[None] + np.einsum("ij,jmn->imn", self.cmat, jumps)

    def step(self, control_mask, F_values, P_targets, dt, tol=1e-10,
             max_iter=30, commit=True):
        """Advance one macroscopic time step.

        ``control_mask`` (3, 3) bool: True where the F component is
        prescribed (value from ``F_values``); elsewhere the corresponding
        first Piola-Kirchhoff component is driven to ``P_targets``.
        Returns a dict with macro F, macro P, per-leaf stresses, the
        Hill-Mandel relative residual, and Newton diagnostics.

        Near the elastic-plastic transition a full-step implicit update can
        admit several local slip solutions, leaving the hierarchy Newton
        without a root on the sampled branch.  On failure the increment is
        split into 2, 4, ... 16 rate-preserving sub-increments (each with a
        proportional share of ``dt``) so the solution tracks the branch
        that is continuous in the load path.
        """
        control_mask = np.asarray(control_mask, dtype=bool)
        F_target = self.F_macro.copy()
        F_target[control_mask] = \
            np.asarray(F_values, dtype=float)[control_mask]
        backup = (list(self.states), self.F_macro.copy(), self.a.copy())
        F0 = self.F_macro.copy()
        err = None
        for level in range(5):
            k = 2 ** level
            try:
                iters = 0
                for j in range(1, k + 1):
                    Fj = F0 + (j / k) * (F_target - F0)
                    out = self._step_once(control_mask, Fj, P_targets,
                                          dt / k, tol, max_iter)
                    iters += out["iterations"]
                out["iterations"] = iters
                if not commit:
                    self.states, self.F_macro, self.a = backup
                return out
            except OnlineNewtonError as e:
                err = e
                self.states, self.F_macro, self.a = \
                    list(backup[0]), backup[1].copy(), backup[2].copy()
        raise OnlineNewtonError(
            f"no convergence after sub-increment splitting: {err}",
            node_residuals=getattr(err, "node_residuals", None))

    def _step_once(self, control_mask, F_values, P_targets, dt, tol,
                   max_iter):
        """Single-increment hierarchy Newton; commits state on success."""
        control_mask = np.asarray(control_mask, dtype=bool)
        free = ~control_mask
        free_idx = np.argwhere(free)
        n_free = len(free_idx)
        n_unk = 3 * self.M + n_free

        # constant map from unknowns to flattened leaf deformations
        D = np.zeros((self.L, 9, n_unk))
        for j in range(self.M):
            for k in range(3):
                col = 3 * j + k
                D[:, 3 * k:3 * k + 3, col] = \
                    self.cmat[:, j, None] * self.normals[j][None, :]
        for c, (r, s) in enumerate(free_idx):
            D[:, 3 * r + s, 3 * self.M + c] = 1.0

        F_macro = self.F_macro.copy()
        F_macro[control_mask] = np.asarray(F_values, dtype=float)[control_mask]
        a = self.a.copy()
        u = np.concatenate([a.reshape(-1), F_macro[free]])

        scale = max(1e-3, self.cp_params.c44 * 1e-2)

        def unpack(u):
            a = u[:3 * self.M].reshape(self.M, 3)
            Fm = F_macro.copy()
            Fm[free] = u[3 * self.M:]
            return a, Fm

        def evaluate(u):
            # stresses only; tangents are formed lazily from the stashed
            # converged-step arguments when the Jacobian is assembled
            a_cur, Fm = unpack(u)
            Fs = self.leaf_deformations(Fm, a_cur)
            Ps, new_states = [], []
            for i in range(self.L):
                P, _, st = cp_stress_update(self.states[i], Fs[i], dt,
                                            self.materials[i],
                                            compute_tangent=False)
                Ps.append(P); new_states.append(st)
            Ps = np.array(Ps)
            r_nodes = np.einsum("ji,irs,js->jr", self.gmat, Ps,
                                self.normals)
            P_macro = np.einsum("i,irs->rs", self.vol, Ps)
            r_macro = (P_macro - np.asarray(P_targets, dtype=float))[free]
            r = np.concatenate([r_nodes.reshape(-1), r_macro])
            return r, r_nodes, P_macro, Ps, new_states, Fs, Fm, a_cur

        try:
            ev = evaluate(u)
        except LocalNewtonError as e:
            raise OnlineNewtonError(f"leaf update failed at start: {e}")
        r_nodes = ev[1]
        best = np.inf
        stalled = 0
        for it in range(max_iter):
            r = ev[0]
            res = np.max(np.abs(r)) / scale
            if res < tol:
                _, r_nodes, P_macro, Ps, new_states, Fs, Fm, a_cur = ev
                hm = self._hill_mandel(Fs, Ps, Fm, P_macro)
                self.states = new_states
                self.F_macro = Fm
                self.a = a_cur
                return {"F": Fm, "P": P_macro, "leaf_F": Fs, "leaf_P": Ps,
                        "hill_mandel": hm, "iterations": it,
                        "node_residuals": np.abs(r_nodes).max(axis=1)}
            # bail out early when the residual stops contracting: near the
            # yield transition that signals a local-branch discontinuity
            # which only a smaller increment resolves
            if res > 0.5 * best:
                stalled += 1
                if stalled >= 3:
                    raise OnlineNewtonError(
                        f"hierarchy Newton stagnated (residual {res:.3e})",
                        node_residuals=np.abs(r_nodes).max(axis=1))
            else:
                stalled = 0
            best = min(best, res)
            # Jacobian from the leaf tangents: AD[i] = dP_i/du (flattened)
            As = [_consistent_tangent(*st._tangent_args) for st in ev[4]]
            AD = np.einsum("iab,ibv->iav",
                           np.array(As).reshape(self.L, 9, 9), D)
            AD4 = AD.reshape(self.L, 3, 3, n_unk)
            Jn = np.einsum("ji,irsv,js->jrv", self.gmat, AD4, self.normals)
            Jm = np.einsum("i,irsv->rsv", self.vol, AD4)[free]
            J = np.concatenate([Jn.reshape(3 * self.M, n_unk), Jm])
            try:
                du = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError as e:
                raise OnlineNewtonError(f"singular hierarchy Jacobian: {e}",
                                        np.abs(r_nodes).max(axis=1))
            # damped update: backtrack when leaves fail or the residual
            # norm grows
            lam = 1.0
            nrm = np.max(np.abs(r))
            for _ls in range(25):
                try:
                    trial = evaluate(u + lam * du)
                except (LocalNewtonError, np.linalg.LinAlgError):
                    lam *= 0.5
                    continue
                if np.max(np.abs(trial[0])) < nrm:
                    u = u + lam * du
                    ev = trial
                    r_nodes = ev[1]
                    break
                lam *= 0.5
            else:
                raise OnlineNewtonError(
                    "hierarchy line search stalled",
                    node_residuals=np.abs(r_nodes).max(axis=1))
        raise OnlineNewtonError(
            f"no convergence in {max_iter} iterations "
            f"(residual {res:.3e})",
            node_residuals=np.abs(r_nodes).max(axis=1))

    def macro_tangent(self, dt, tol=1e-10):
        """Homogenized tangent dP_macro/dF_macro (3, 3, 3, 3) at the
        current converged state, by static condensation of the jump
        unknowns (Schur complement of the traction-continuity block)."""
        Fs = self.leaf_deformations(self.F_macro, self.a)
        As = []
        for i in range(self.L):
            _, A, _ = cp_stress_update(self.states[i], Fs[i], dt,
                                       self.materials[i])
            As.append(A.reshape(9, 9))
        As = np.array(As)
        nx = 3 * self.M
        Dx = np.zeros((self.L, 9, nx))
        for j in range(self.M):
            for k in range(3):
                Dx[:, 3 * k:3 * k + 3, 3 * j + k] = \
                    self.cmat[:, j, None] * self.normals[j][None, :]
        ADx = np.einsum("iab,ibv->iav", As, Dx).reshape(self.L, 3, 3, nx)
        A4 = As.reshape(self.L, 3, 3, 3, 3)
        Jxx = np.einsum("ji,irsv,js->jrv", self.gmat, ADx,
                        self.normals).reshape(nx, nx)
        JxF = np.einsum("ji,irstu,js->jrtu", self.gmat, A4,
                        self.normals).reshape(nx, 9)
        Bx = np.einsum("i,irsv->rsv", self.vol, ADx).reshape(9, nx)
        BF = np.einsum("i,irstu->rstu", self.vol, A4).reshape(9, 9)
        dPdF = BF - Bx @ np.linalg.solve(Jxx, JxF)
        return dPdF.reshape(3, 3, 3, 3)

    def _hill_mandel(self, Fs, Ps, F_macro, P_macro):
        """Relative gap in sum_i v_i P_i : dF_i = P_macro : dF_macro."""
        dF = Fs - np.array([s.F for s in self.states])
        dFm = F_macro - self.F_macro
        lhs = np.einsum("i,irs,irs->", self.vol, Ps, dF)
        rhs = np.einsum("rs,rs->", P_macro, dFm)
        den = max(abs(rhs), np.abs(Ps).max() * np.abs(dF).max(), 1e-12)
        return abs(lhs - rhs) / den


# --------------------------------------------------------------------------
# Load programs
# --------------------------------------------------------------------------

@dataclass
class LoadSegment:
    """One loading leg driving a single F component at a constant rate.

    ``target`` stops the leg at a prescribed F value; ``until_zero_stress``
    stops it when the monitored P component crosses zero (unloading legs).
    All other F components are stress-free (P target 0).
    """

    component: tuple          # (row, col) of the driven F component
    rate: float               # dF/dt, 1/s
    target: float | None = None
    until_zero_stress: bool = False


def default_cyclic_program():
    """Uniaxial cyclic tension: load to F11 = 1.3, unload to zero stress,
    reload to F11 = 1.3."""
    return [LoadSegment((0, 0), 1.0, target=1.3),
            LoadSegment((0, 0), -1.0, until_zero_stress=True),
            LoadSegment((0, 0), 1.0, target=1.3)]


def shear_program(target=0.3):
    """Simple shear: drive F21 to ``target`` with all stresses free."""
    return [LoadSegment((1, 0), 1.0, target=target)]


def run_program(solver, program, dt=1e-3, snapshot_every=50, max_steps=20000):
    """Time-march a load program; returns (history, texture_snapshots).

    ``history`` is a dict of 1-D arrays: t, the driven F components F11 and
    F21, the full macro F and P tensors per step, and the Hill-Mandel
    residuals.  ``texture_snapshots`` is a list of (t, quats (L, 4),
    weights (L,)) captured every ``snapshot_every`` steps and at segment
    boundaries.  On hierarchy-Newton failure the time step is halved (up to
    8 times) for the failing step.
    """
    hist = {"t": [], "F": [], "P": [], "hill_mandel": []}
    snaps = []
    t = 0.0
    control = np.zeros((3, 3), dtype=bool)
    P_targets = np.zeros((3, 3))

    def snapshot():
        quats = np.array([s.current_orientation() for s in solver.states])
        snaps.append((t, quats, solver.vol.copy()))

    snapshot()
    steps = 0
    for seg in program:
        control[:] = False
        control[seg.component] = True
        while True:
            if steps >= max_steps:
                raise OnlineNewtonError("max step count exceeded")
            value = solver.F_macro[seg.component]
            if seg.target is not None:
                remaining = seg.target - value
                if remaining * np.sign(seg.rate) <= 1e-12:
                    break
            dt_step = dt
            new_value = value + seg.rate * dt_step
            if seg.target is not None:
                overshoot = (new_value - seg.target) * np.sign(seg.rate)
                if overshoot > 0:
                    new_value = seg.target
                    dt_step = (new_value - value) / seg.rate
            F_values = solver.F_macro.copy()
            F_values[seg.component] = new_value
            out = None
            sub_dt, sub_val = dt_step, new_value
            for attempt in range(9):
                try:
                    out = solver.step(control, F_values, P_targets, sub_dt)
                    break
                except OnlineNewtonError:
                    sub_dt *= 0.5
                    sub_val = value + seg.rate * sub_dt
                    F_values[seg.component] = sub_val
            if out is None:
                raise OnlineNewtonError("step failed after halving retries")
            t += sub_dt
            steps += 1
            hist["t"].append(t)
            hist["F"].append(out["F"].copy())
            hist["P"].append(out["P"].copy())
            hist["hill_mandel"].append(out["hill_mandel"])
            if steps % snapshot_every == 0:
                snapshot()
            if seg.until_zero_stress and \
                    out["P"][seg.component] * np.sign(seg.rate) >= 0.0:
                break
        snapshot()
    return ({k: np.array(v) for k, v in hist.items()}, snaps)


# --------------------------------------------------------------------------
# Analogous unit cell
# --------------------------------------------------------------------------

def export_analogous_unit_cell(params, dims, elastic_constants=None):
    """Voxelized unit cell realizing the network's weights and interfaces.

    Recursive binary space partition of the unit cube: at each tree node
    the current voxel subdomain is split by a plane with normal N(theta,
    phi) into child volumes proportional to the child subtree weights
    (quantile split along the projection onto the normal).  Leaves carry
    the network's per-leaf orientations; per-leaf voxel volume fractions
    match the softplus weights within voxelization error.

    Returns an :class:`polyhom.rve.Rve`; ``elastic_constants`` defaults to
    the constitutive defaults of :class:`CpParams`.
    """
    from . import rve as rvemod

    if np.isscalar(dims):
        dims = (int(dims),) * 3
    weights = params.weights()
    if weights.sum() <= 0:
        raise ValueError("total network weight must be positive")
    N = params.depth
    L = 2 ** N
    axes = [(np.arange(n) + 0.5) / n for n in dims]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    ids = np.zeros(centers.shape[0], dtype=int)

    def split(voxels, l, p):
        """Assign the voxel index set to leaves below tree node (l, p)."""
        if l == N:
            ids[voxels] = p
            return
        j = 2 ** l - 1 + p
        normal = _node_normal(*params.angles[j])
        shift = N - l - 1
        leaves = np.arange(L)
        under1 = leaves >> shift == 2 * p
        under2 = leaves >> shift == 2 * p + 1
        W1 = weights[under1].sum()
        W2 = weights[under2].sum()
        f1 = W1 / (W1 + W2)
        proj = centers[voxels] @ normal
        order = np.argsort(proj, kind="stable")
        n1 = int(round(f1 * len(voxels)))
        split(voxels[order[:n1]], l + 1, 2 * p)
        split(voxels[order[n1:]], l + 1, 2 * p + 1)

    split(np.arange(centers.shape[0]), 0, 0)
    grain_ids = ids.reshape(dims)
    quats = np.array([rotations.quat_from_tait_bryan(*e)
                      for e in params.euler])
    if elastic_constants is None:
        d = CpParams()
        elastic_constants = (d.c11, d.c12, d.c44)
    C = rotations.cubic_stiffness(*elastic_constants)
    return rvemod.Rve(grain_ids=grain_ids,
                      orientations=quats,
                      stiffness=np.broadcast_to(C, (L, 6, 6)).copy(),
                      elastic_constants=np.asarray(elastic_constants,
                                                   dtype=float),
                      meta={"source": "analogous-unit-cell"})
