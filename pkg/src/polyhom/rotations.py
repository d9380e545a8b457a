"""Quaternion / Tait-Bryan orientation algebra and Voigt stiffness handling.

Conventions used throughout the package:

* Quaternions are scalar-first ``(q0, q1, q2, q3)``, unit norm, canonicalized
  to ``q0 >= 0``.  ``q`` and ``-q`` encode the same rotation.
* Tait-Bryan angles ``(alpha, beta, gamma)`` are extrinsic X-Y-Z
  (roll-pitch-yaw): ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)``.
* Voigt order is ``(11, 22, 33, 23, 13, 12)`` with engineering shear strain
  (``gamma = 2*eps``), so stiffness matrices carry no factor-of-two entries.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "quat_canonical",
    "quat_multiply",
    "quat_from_matrix",
    "matrix_from_quat",
    "quat_from_tait_bryan",
    "tait_bryan_from_quat",
    "random_quat",
    "geodesic_distance",
    "cubic_symmetry_quats",
    "to_fcc_fundamental_zone",
    "rodrigues_from_quat",
    "cubic_stiffness",
    "equilibrium_direction",
    "rotate_stiffness",
    "voigt_to_tensor",
    "tensor_to_voigt",
    "isotropic_stiffness",
]

# Voigt index pairs, order (11, 22, 33, 23, 13, 12).
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def quat_canonical(q):
    """Normalize and flip sign so that q0 >= 0."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_multiply(qa, qb):
    """Hamilton product qa * qb (apply qb first, then qa)."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    w1, x1, y1, z1 = qa[..., 0], qa[..., 1], qa[..., 2], qa[..., 3]
    w2, x2, y2, z2 = qb[..., 0], qb[..., 1], qb[..., 2], qb[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def _to_scalar_last(q):
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., 1:], q[..., :1]], axis=-1)


def _to_scalar_first(q):
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[..., 3:], q[..., :3]], axis=-1)


def quat_from_matrix(R):
    q = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    return quat_canonical(_to_scalar_first(q))


def matrix_from_quat(q):
    return Rotation.from_quat(_to_scalar_last(q)).as_matrix()


def quat_from_tait_bryan(alpha, beta, gamma):
    """Quaternion of the extrinsic X-Y-Z rotation Rz(gamma) Ry(beta) Rx(alpha)."""
    rot = Rotation.from_euler("xyz", np.stack(
        np.broadcast_arrays(alpha, beta, gamma), axis=-1))
    return quat_canonical(_to_scalar_first(rot.as_quat()))


def tait_bryan_from_quat(q):
    """Extrinsic X-Y-Z angles (alpha, beta, gamma) of a quaternion."""
    ang = Rotation.from_quat(_to_scalar_last(q)).as_euler("xyz")
    return ang


def random_quat(rng, n=None):
    """Uniform random rotation quaternion(s) (canonicalized)."""
    size = () if n is None else (n,)
    u1, u2, u3 = rng.random(size), rng.random(size), rng.random(size)
    q = np.stack(
        [
            np.sqrt(u1) * np.cos(2 * np.pi * u3),
            np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
            np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
            np.sqrt(u1) * np.sin(2 * np.pi * u3),
        ],
        axis=-1,
    )
    return quat_canonical(q)


def geodesic_distance(qa, qb):
    """Rotation-space distance 2*arccos(|<qa, qb>|), in [0, pi]."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = np.abs(np.sum(qa * qb, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def misorientation_angle(qa, qb):
    """Smallest rotation angle between orientations under cubic symmetry.

    Minimizes the geodesic distance over the 24 symmetric equivalents of
    ``qb``; needed whenever orientations may straddle the fundamental-zone
    boundary.  Broadcasts over leading dimensions.
    """
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    equiv = quat_multiply(qb[..., None, :], CUBIC_SYMMETRY_QUATS)
    dot = np.abs(np.sum(qa[..., None, :] * equiv, axis=-1)).max(axis=-1)
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def _build_cubic_symmetry():
    mats = []
    # 24 proper rotations of the cube: signed permutation matrices, det +1.
    from itertools import permutations, product

    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if np.linalg.det(m) > 0.5:
                mats.append(m)
    assert len(mats) == 24
    return quat_canonical(np.array([quat_from_matrix(m) for m in mats]))


CUBIC_SYMMETRY_QUATS = _build_cubic_symmetry()


def cubic_symmetry_quats():
    """The 24 rotational symmetry operators of the cubic lattice."""
    return CUBIC_SYMMETRY_QUATS.copy()


def to_fcc_fundamental_zone(q):
    """Canonical representative of q over the 24 cubic symmetry operators.

    Right-multiplies by each symmetry operator and keeps the variant with
    maximal q0 (after sign canonicalization).  Idempotent and constant on
    symmetry orbits.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = np.atleast_2d(q)
    # variants[n, k, 4] = q[n] * sym[k]
    variants = quat_canonical(
        quat_multiply(q2[:, None, :], CUBIC_SYMMETRY_QUATS[None, :, :]))
    best = np.argmax(variants[..., 0], axis=-1)
    out = variants[np.arange(q2.shape[0]), best]
    return out[0] if single else out


def rodrigues_from_quat(q):
    """Rodrigues vector axis*tan(angle/2); q0 is clipped away from zero."""
    q = quat_canonical(q)
    q0 = np.clip(q[..., :1], 1e-12, None)
    return q[..., 1:] / q0


def cubic_stiffness(c11, c12, c44):
    """Cubic single-crystal stiffness matrix in Voigt notation (GPa).

    Raises ValueError for triples violating positive definiteness
    (requires c11 > |c12|, c11 + 2 c12 > 0, c44 > 0).
    """
    if not (c11 > abs(c12) and c11 + 2 * c12 > 0 and c44 > 0):
        raise ValueError(
            "cubic stiffness not positive definite: "
            f"C11={c11}, C12={c12}, C44={c44} "
            f"(need C11>|C12|: {c11 > abs(c12)}, "
            f"C11+2*C12>0: {c11 + 2 * c12 > 0}, C44>0: {c44 > 0})"
        )
    C = np.zeros((6, 6))
    C[:3, :3] = c12
    np.fill_diagonal(C[:3, :3], c11)
    C[3, 3] = C[4, 4] = C[5, 5] = c44
    return C


def isotropic_stiffness(lam, mu):
    """Isotropic stiffness from Lame constants, Voigt engineering-shear form."""
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    np.fill_diagonal(C[:3, :3], lam + 2.0 * mu)
    C[3, 3] = C[4, 4] = C[5, 5] = mu
    return C


def equilibrium_direction(theta, phi):
    """Unit interface normal N(theta, phi).

    N = (cos(2*pi*phi) sin(pi*theta), sin(2*pi*phi) sin(pi*theta),
    cos(pi*theta)).  Angles are dimensionless and periodic.
    """
    t = np.pi * np.asarray(theta, dtype=float)
    p = 2.0 * np.pi * np.asarray(phi, dtype=float)
    return np.stack(
        [np.cos(p) * np.sin(t), np.sin(p) * np.sin(t), np.cos(t)], axis=-1)


def voigt_to_tensor(C):
    """6x6 Voigt stiffness (engineering shear) -> full 3x3x3x3 tensor."""
    C = np.asarray(C, dtype=float)
    T = np.zeros((3, 3, 3, 3))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            v = C[I, J]
            T[i, j, k, l] = v
            T[j, i, k, l] = v
            T[i, j, l, k] = v
            T[j, i, l, k] = v
    return T


def tensor_to_voigt(T):
    """Full 3x3x3x3 stiffness tensor -> 6x6 Voigt (engineering shear)."""
    C = np.zeros((6, 6))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            C[I, J] = T[i, j, k, l]
    return C


def rotate_stiffness(C, q):
    """Rotate a Voigt stiffness by quaternion q (crystal -> sample frame).

    Equivalent to the 4th-order rotation C'_ijkl = R_ip R_jq R_kr R_ls C_pqrs.
    """
    R = matrix_from_quat(q)
    T = voigt_to_tensor(C)
    Tr = np.einsum("ip,jq,kr,ls,pqrs->ijkl", R, R, R, R, T, optimize=True)
    return tensor_to_voigt(Tr)
