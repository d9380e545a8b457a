"""Linear-elastic FFT homogenizer on periodic voxel grids.

Basic fixed-point scheme (strain-controlled) with the periodic Green operator
of an isotropic reference medium and continuous frequencies.  Used to produce
ground-truth homogenized stiffness labels for voxel microstructures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotations

__all__ = ["FftProblem", "FftConvergenceError", "solve_load_case",
           "homogenized_stiffness", "isotropic_projection"]

_VOIGT_I = np.array([0, 1, 2, 1, 0, 0])
_VOIGT_J = np.array([0, 1, 2, 2, 2, 1])


class FftConvergenceError(RuntimeError):
    def __init__(self, residuals):
        self.residuals = residuals
        super().__init__(
            f"FFT scheme did not converge in {len(residuals)} iterations; "
            f"last residuals {residuals[-3:]}")


def isotropic_projection(C):
    """Closest isotropic (lam, mu) to a Voigt stiffness matrix."""
    T = rotations.voigt_to_tensor(C)
    k = np.einsum("iijj->", T) / 9.0
    mu = (np.einsum("ijij->", T) - 3.0 * k) / 10.0
    return k - 2.0 * mu / 3.0, mu


@dataclass
class FftProblem:
    """Voxel grid of grain ids plus per-grain sample-frame stiffness."""

    grain_ids: np.ndarray          # (nx, ny, nz) int
    grain_stiffness: np.ndarray    # (G, 6, 6) Voigt, sample frame
    tol: float = 1e-8
    max_iter: int = 2500
    reference: tuple | None = None  # (lam0, mu0); default: Voigt-average proj.
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.grain_ids = np.asarray(self.grain_ids)
        self.grain_stiffness = np.asarray(self.grain_stiffness, dtype=float)
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")

    def voxel_stiffness(self):
        if "Cvox" not in self._cache:
            self._cache["Cvox"] = self.grain_stiffness[self.grain_ids]
        return self._cache["Cvox"]

    def voigt_average(self):
        counts = np.bincount(self.grain_ids.ravel(),
                             minlength=self.grain_stiffness.shape[0])
        frac = counts / counts.sum()
        return np.einsum("g,gij->ij", frac, self.grain_stiffness)


def _frequencies(shape):
    # integer frequencies per axis (cell length 1)
    return np.meshgrid(*[np.fft.fftfreq(n, d=1.0 / n) for n in shape],
                       indexing="ij")


def _nyquist_mask(shape):
    """True on planes where any even axis hits its unpaired Nyquist mode."""
    mask = np.zeros(shape, dtype=bool)
    for ax, n in enumerate(shape):
        if n % 2 == 0:
            idx = [slice(None)] * 3
            idx[ax] = n // 2
            mask[tuple(idx)] = True
    return mask


def _sym_tensor_from_voigt(v, shear_factor):
    """(6, ...) voigt -> (3, 3, ...) symmetric tensor.

    ``shear_factor`` is 0.5 for engineering strain, 1.0 for stress.
    """
    t = np.zeros((3, 3) + v.shape[1:], dtype=v.dtype)
    t[0, 0], t[1, 1], t[2, 2] = v[0], v[1], v[2]
    t[1, 2] = t[2, 1] = shear_factor * v[3]
    t[0, 2] = t[2, 0] = shear_factor * v[4]
    t[0, 1] = t[1, 0] = shear_factor * v[5]
    return t


def _run_scheme(problem, eps_macro_voigt, lam0, mu0):
    ids_shape = problem.grain_ids.shape
    Cvox = problem.voxel_stiffness()
    kx, ky, kz = _frequencies(ids_shape)
    xi = np.stack([2 * np.pi * kx, 2 * np.pi * ky, 2 * np.pi * kz])
    xi2 = (xi ** 2).sum(axis=0)
    xi2[0, 0, 0] = 1.0  # avoid 0/0; zero frequency handled separately
    coef = (lam0 + mu0) / (mu0 * (lam0 + 2.0 * mu0))
    nyq = _nyquist_mask(ids_shape)
    nvox = np.prod(ids_shape)

    eps = np.zeros((6,) + ids_shape)
    eps[:] = np.asarray(eps_macro_voigt, dtype=float).reshape(6, 1, 1, 1)
    residuals = []
    for _ in range(problem.max_iter):
        sig = np.einsum("xyzab,bxyz->axyz", Cvox, eps)
        res, sbar_t = _equilibrium_residual(sig, xi, nyq)
        residuals.append(res)
        if res < problem.tol:
            return sbar_t, residuals
        eps -= _green_apply(sig, xi, xi2, coef, mu0, nyq)
        # re-impose the macroscopic mean
        mean = eps.reshape(6, -1).mean(axis=-1)
        eps += (np.asarray(eps_macro_voigt) - mean).reshape(6, 1, 1, 1)
    raise FftConvergenceError(residuals)


def _equilibrium_residual(sig, xi, nyq):
    """Normalized stress-divergence residual over resolved (non-Nyquist) modes."""
    sig_t = _sym_tensor_from_voigt(sig, 1.0)
    sig_hat = np.fft.fftn(sig_t, axes=(2, 3, 4))
    a = np.einsum("ijxyz,jxyz->ixyz", sig_hat, xi)
    a[:, nyq] = 0.0
    nvox = sig_t.shape[2] * sig_t.shape[3] * sig_t.shape[4]
    sbar = np.real(sig_hat[:, :, 0, 0, 0]) / nvox
    res = np.sqrt((np.abs(a) ** 2).sum() / nvox) / max(
        np.linalg.norm(sbar), 1e-30)
    return res, sig_t.reshape(3, 3, -1).mean(axis=-1)


def _green_apply(sig, xi, xi2, coef, mu0, nyq):
    """Strain correction Gamma0 : sigma for a Voigt stress field (6, grid).

    The Green operator is zeroed on Nyquist planes (unpaired modes of even
    axes) to keep it an even function of frequency on the discrete grid.
    """
    sig_hat = np.fft.fftn(_sym_tensor_from_voigt(sig, 1.0), axes=(2, 3, 4))
    a = np.einsum("ijxyz,jxyz->ixyz", sig_hat, xi)
    axx = np.einsum("ixyz,ixyz->xyz", a, xi)
    corr = (xi[:, None] * a[None, :] + xi[None, :] * a[:, None]) \
        / (2.0 * mu0 * xi2) \
        - coef * (xi[:, None] * xi[None, :]) * (axx / xi2 ** 2)
    corr[:, :, 0, 0, 0] = 0.0
    corr[:, :, nyq] = 0.0
    eps_t = np.real(np.fft.ifftn(corr, axes=(2, 3, 4)))
    out = np.empty_like(sig)
    out[:3] = eps_t[(0, 1, 2), (0, 1, 2)]
    out[3] = 2.0 * eps_t[1, 2]
    out[4] = 2.0 * eps_t[0, 2]
    out[5] = 2.0 * eps_t[0, 1]
    return out


def _run_krylov(problem, eps_macro_voigt, lam0, mu0):
    """Krylov solve of (I + Gamma0 dC) eps = eps_macro, then residual check."""
    from scipy.sparse.linalg import LinearOperator, bicgstab

    ids_shape = problem.grain_ids.shape
    Cvox = problem.voxel_stiffness()
    kx, ky, kz = _frequencies(ids_shape)
    xi = np.stack([2 * np.pi * kx, 2 * np.pi * ky, 2 * np.pi * kz])
    xi2 = (xi ** 2).sum(axis=0)
    xi2[0, 0, 0] = 1.0
    coef = (lam0 + mu0) / (mu0 * (lam0 + 2.0 * mu0))
    nyq = _nyquist_mask(ids_shape)
    C0 = isotropic_stiffness_matrix(lam0, mu0)
    dC = Cvox - C0

    shape = (6,) + ids_shape
    size = int(np.prod(shape))

    def matvec(x):
        e = x.reshape(shape)
        de = np.einsum("xyzab,bxyz->axyz", dC, e)
        return (e + _green_apply(de, xi, xi2, coef, mu0, nyq)).ravel()

    b = np.zeros(shape)
    b[:] = np.asarray(eps_macro_voigt, dtype=float).reshape(6, 1, 1, 1)
    op = LinearOperator((size, size), matvec=matvec)
    x, info = bicgstab(op, b.ravel(), rtol=min(1e-12, problem.tol * 1e-3),
                       atol=0.0, maxiter=problem.max_iter)
    eps = x.reshape(shape)
    sig = np.einsum("xyzab,bxyz->axyz", Cvox, eps)
    res, sbar_t = _equilibrium_residual(sig, xi, nyq)
    if info != 0 or res > problem.tol:
        raise FftConvergenceError([res])
    return sbar_t, [res]


def isotropic_stiffness_matrix(lam, mu):
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    np.fill_diagonal(C[:3, :3], lam + 2.0 * mu)
    C[3, 3] = C[4, 4] = C[5, 5] = mu
    return C


def solve_load_case(problem, eps_macro_voigt, method="basic"):
    """Volume-average stress (Voigt 6-vector) for a macroscopic strain.

    ``method`` is "basic" (default; fixed-point iteration) or "krylov"
    (Krylov solve of the Lippmann-Schwinger equation with the same Green
    operator, useful at high stiffness contrast).  Retries once with a softer
    reference medium (halved mu0) before raising
    :class:`FftConvergenceError`.
    """
    if problem.reference is not None:
        lam0, mu0 = problem.reference
    else:
        lam0, mu0 = isotropic_projection(problem.voigt_average())
    run = _run_krylov if method == "krylov" else _run_scheme
    try:
        sbar_t, _ = run(problem, eps_macro_voigt, lam0, mu0)
    except FftConvergenceError:
        sbar_t, _ = run(problem, eps_macro_voigt, lam0, mu0 * 0.5)
    return sbar_t[_VOIGT_I, _VOIGT_J]


def homogenized_stiffness(problem, return_asym=False, method="basic"):
    """Assemble the homogenized Voigt stiffness from six unit-strain cases."""
    C = np.zeros((6, 6))
    for J in range(6):
        e = np.zeros(6)
        e[J] = 1.0
        C[:, J] = solve_load_case(problem, e, method=method)
    asym = np.linalg.norm(C - C.T) / max(np.linalg.norm(C), 1e-30)
    Csym = 0.5 * (C + C.T)
    return (Csym, asym) if return_asym else Csym
