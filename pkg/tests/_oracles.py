"""Independent reference implementations used as test oracles.

Everything here is deliberately written from first principles with different
formulations than the library code (index loops, partitioned solves, dense
matrices) so agreement is meaningful.
"""

import numpy as np

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

# Voigt component groups for a laminate with interface normal along z:
# traction-continuous components (33, 23, 13) and in-plane strain
# components (11, 22, 12).
_N = [2, 3, 4]
_M = [0, 1, 5]


def laminate_stiffness(C1, C2, f1):
    """Exact stiffness of a rank-1 laminate of two phases, normal = z.

    Derived by the classical partitioned continuity conditions: in-plane
    strains equal across phases, out-of-plane tractions continuous, strain
    averages match the macroscopic strain.  Valid for arbitrary anisotropic
    phases.
    """
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    f2 = 1.0 - f1
    Cbar = np.zeros((6, 6))
    for j in range(6):
        ebar = np.zeros(6)
        ebar[j] = 1.0
        # unknowns: out-of-plane strains x1, x2 of the two phases
        A = np.zeros((6, 6))
        b = np.zeros(6)
        A[:3, :3] = C1[np.ix_(_N, _N)]
        A[:3, 3:] = -C2[np.ix_(_N, _N)]
        b[:3] = (C2[np.ix_(_N, _M)] - C1[np.ix_(_N, _M)]) @ ebar[_M]
        A[3:, :3] = f1 * np.eye(3)
        A[3:, 3:] = f2 * np.eye(3)
        b[3:] = ebar[_N]
        x = np.linalg.solve(A, b)
        e1, e2 = ebar.copy(), ebar.copy()
        e1[_N] = x[:3]
        e2[_N] = x[3:]
        Cbar[:, j] = f1 * (C1 @ e1) + f2 * (C2 @ e2)
    return 0.5 * (Cbar + Cbar.T)


def rotate_stiffness_loops(C, R):
    """4th-order stiffness rotation by explicit index loops (Voigt in/out)."""
    C = np.asarray(C, dtype=float)
    R = np.asarray(R, dtype=float)
    T = np.zeros((3, 3, 3, 3))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            for a, b in ((i, j), (j, i)):
                for c, d in ((k, l), (l, k)):
                    T[a, b, c, d] = C[I, J]
    Tr = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    s = 0.0
                    for p in range(3):
                        for q in range(3):
                            for r in range(3):
                                for t in range(3):
                                    s += (R[i, p] * R[j, q] * R[k, r]
                                          * R[l, t] * T[p, q, r, t])
                    Tr[i, j, k, l] = s
    out = np.zeros((6, 6))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            out[I, J] = Tr[i, j, k, l]
    return out


def dense_gatv2(theta, bias, att, x, edges, slope=0.2):
    """Dense-matrix reference for the attention layer.

    ``theta`` (out, in), ``bias`` (out,), ``att`` (out,); ``x`` (n, in);
    ``edges`` undirected (E, 2).  Returns (x', alpha) with alpha the dense
    (n, n) attention matrix (rows sum to 1 over the neighborhood).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    adj = np.eye(n, dtype=bool)
    for i, j in np.asarray(edges, dtype=int).reshape(-1, 2):
        adj[i, j] = adj[j, i] = True
    h = x @ np.asarray(theta).T + np.asarray(bias)
    scores = np.full((n, n), -np.inf)
    for i in range(n):
        for j in range(n):
            if adj[i, j]:
                z = h[i] + h[j]
                z = np.where(z > 0, z, slope * z)
                scores[i, j] = z @ np.asarray(att)
    alpha = np.zeros((n, n))
    for i in range(n):
        row = scores[i] - scores[i][adj[i]].max()
        e = np.where(adj[i], np.exp(row), 0.0)
        alpha[i] = e / e.sum()
    return alpha @ h, alpha


def brute_force_adjacency(ids):
    """Face-neighbor grain pairs by explicit voxel loops with periodic wrap."""
    ids = np.asarray(ids)
    nx, ny, nz = ids.shape
    pairs = set()
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                a = ids[x, y, z]
                for dx, dy, dz in ((1, 0, 0), (0, 1, 0), (0, 0, 1),
                                   (-1, 0, 0), (0, -1, 0), (0, 0, -1)):
                    b = ids[(x + dx) % nx, (y + dy) % ny, (z + dz) % nz]
                    if a != b:
                        pairs.add((min(a, b), max(a, b)))
    return np.array(sorted(pairs), dtype=int) if pairs \
        else np.empty((0, 2), dtype=int)


def flood_fill_periodic_flag(ids, g):
    """Periodicity flag by explicit flood fill: a grain is periodic when
    its voxel graph uses a wrapping face adjacency on any axis."""
    ids = np.asarray(ids)
    mask = ids == g
    nx, ny, nz = ids.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mask[x, y, z]:
                    continue
                if ((x == nx - 1 and mask[0, y, z])
                        or (y == ny - 1 and mask[x, 0, z])
                        or (z == nz - 1 and mask[x, y, 0])):
                    return 1
    return 0


def voigt_reuss(Cs, fracs):
    """Upper and lower mixture bounds (stiffness / compliance averages)."""
    Cs = np.asarray(Cs, dtype=float)
    fracs = np.asarray(fracs, dtype=float)
    voigt = np.einsum("g,gij->ij", fracs, Cs)
    reuss = np.linalg.inv(
        np.einsum("g,gij->ij", fracs, np.linalg.inv(Cs)))
    return voigt, reuss


def loewner_geq(A, B, tol=1e-9):
    """A >= B in the Loewner order within tolerance."""
    return np.linalg.eigvalsh(0.5 * (A + A.T) - 0.5 * (B + B.T)).min() >= -tol


def random_spd_voigt(rng, scale=100.0):
    """Random symmetric positive definite 6x6 (Voigt-like) matrix."""
    M = rng.normal(size=(6, 6))
    return scale * (M @ M.T / 6.0 + np.eye(6))
