import numpy as np
import pytest

from polyhom import fft, rotations as rot

import _oracles


def _bilayer(n=8):
    """Two half-space grains stacked along z."""
    ids = np.zeros((n, n, n), dtype=int)
    ids[:, :, n // 2:] = 1
    return ids


class TestSolveLoadCase:
    def test_homogeneous(self):
        C = rot.cubic_stiffness(107.3, 60.8, 28.3)
        prob = fft.FftProblem(np.zeros((8, 8, 8), dtype=int), C[None])
        eps = np.array([1e-3, 0, 0, 0, 0, 2e-3])
        sig = fft.solve_load_case(prob, eps)
        assert np.allclose(sig, C @ eps, atol=1e-12)

    def test_bilayer_matches_laminate(self):
        rng = np.random.default_rng(0)
        C1 = rot.isotropic_stiffness(70.0, 30.0)
        C2 = rot.isotropic_stiffness(30.0, 15.0)
        prob = fft.FftProblem(_bilayer(8), np.array([C1, C2]))
        ref = _oracles.laminate_stiffness(C1, C2, 0.5)
        for J in range(6):
            e = np.zeros(6)
            e[J] = 1.0
            sig = fft.solve_load_case(prob, e)
            assert np.abs(sig - ref[:, J]).max() / np.abs(ref).max() < 1e-6

    def test_checkerboard_within_bounds(self):
        C1 = rot.isotropic_stiffness(70.0, 30.0)
        C2 = rot.isotropic_stiffness(20.0, 10.0)
        n = 8
        x, y, z = np.meshgrid(*(np.arange(n),) * 3, indexing="ij")
        ids = ((x // 4 + y // 4 + z // 4) % 2).astype(int)
        prob = fft.FftProblem(ids, np.array([C1, C2]))
        Cbar = fft.homogenized_stiffness(prob)
        voigt, reuss = _oracles.voigt_reuss([C1, C2], [0.5, 0.5])
        assert _oracles.loewner_geq(voigt, Cbar, tol=1e-6)
        assert _oracles.loewner_geq(Cbar, reuss, tol=1e-6)

    def test_nonconvergence_error(self):
        C1 = rot.isotropic_stiffness(70.0, 30.0)
        C2 = rot.isotropic_stiffness(30.0, 15.0)
        prob = fft.FftProblem(_bilayer(8), np.array([C1, C2]),
                              tol=1e-14, max_iter=2)
        with pytest.raises(fft.FftConvergenceError) as e:
            fft.solve_load_case(prob, np.array([1.0, 0, 0, 0, 0, 0]))
        assert len(e.value.residuals) >= 1


class TestHomogenizedStiffness:
    def test_homogeneous(self):
        C = rot.cubic_stiffness(107.3, 60.8, 28.3)
        prob = fft.FftProblem(np.zeros((8, 8, 8), dtype=int), C[None])
        Cbar = fft.homogenized_stiffness(prob)
        assert np.allclose(Cbar, C, atol=1e-10)

    def test_spd_and_symmetric(self):
        rng = np.random.default_rng(1)
        quats = rot.random_quat(rng, 5)
        C0 = rot.cubic_stiffness(107.3, 60.8, 28.3)
        Cs = np.array([rot.rotate_stiffness(C0, q) for q in quats])
        ids = rng.integers(0, 5, size=(8, 8, 8))
        prob = fft.FftProblem(ids, Cs)
        Cbar, asym = fft.homogenized_stiffness(prob, return_asym=True)
        assert asym < 1e-6
        assert np.linalg.eigvalsh(Cbar).min() > 0

    def test_polycrystal_within_bounds(self):
        rng = np.random.default_rng(2)
        quats = rot.random_quat(rng, 4)
        C0 = rot.cubic_stiffness(107.3, 60.8, 28.3)
        Cs = np.array([rot.rotate_stiffness(C0, q) for q in quats])
        ids = rng.integers(0, 4, size=(8, 8, 8))
        prob = fft.FftProblem(ids, Cs)
        Cbar = fft.homogenized_stiffness(prob)
        counts = np.bincount(ids.ravel(), minlength=4)
        voigt, reuss = _oracles.voigt_reuss(Cs, counts / counts.sum())
        assert _oracles.loewner_geq(voigt, Cbar, tol=1e-5)
        assert _oracles.loewner_geq(Cbar, reuss, tol=1e-5)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        quats = rot.random_quat(rng, 3)
        C0 = rot.cubic_stiffness(107.3, 60.8, 28.3)
        Cs = np.array([rot.rotate_stiffness(C0, q) for q in quats])
        ids = rng.integers(0, 3, size=(8, 8, 8))
        Ca = fft.homogenized_stiffness(fft.FftProblem(ids, Cs))
        shifted = np.roll(ids, (3, 1, 5), axis=(0, 1, 2))
        Cb = fft.homogenized_stiffness(fft.FftProblem(shifted, Cs))
        assert np.abs(Ca - Cb).max() / np.abs(Ca).max() < 1e-5

    def test_krylov_matches_basic(self):
        C1 = rot.isotropic_stiffness(70.0, 30.0)
        C2 = rot.isotropic_stiffness(30.0, 15.0)
        prob = fft.FftProblem(_bilayer(8), np.array([C1, C2]))
        Ca = fft.homogenized_stiffness(prob, method="basic")
        Cb = fft.homogenized_stiffness(prob, method="krylov")
        assert np.abs(Ca - Cb).max() / np.abs(Ca).max() < 1e-6

    def test_isotropic_projection(self):
        lam, mu = 63.0, 27.5
        C = rot.isotropic_stiffness(lam, mu)
        lam0, mu0 = fft.isotropic_projection(C)
        assert lam0 == pytest.approx(lam, rel=1e-12)
        assert mu0 == pytest.approx(mu, rel=1e-12)
