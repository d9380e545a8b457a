import numpy as np
import pytest

from polyhom import rotations as rot

import _oracles


class TestCubicStiffness:
    def test_table_values(self):
        C = rot.cubic_stiffness(107.3, 60.8, 28.3)
        assert np.allclose(np.diag(C), [107.3] * 3 + [28.3] * 3)
        off = C[:3, :3] - np.diag([107.3] * 3)
        assert np.allclose(off[off != 0], 60.8)
        assert np.count_nonzero(C) == 12

    def test_zero_c12_pattern(self):
        C = rot.cubic_stiffness(1.0, 0.0, 0.5)
        assert np.allclose(C, np.diag([1, 1, 1, 0.5, 0.5, 0.5]))

    def test_eigenvalue_oracle(self):
        C = rot.cubic_stiffness(107.3, 60.8, 28.3)
        ev = np.sort(np.linalg.eigvalsh(C))
        expect = np.sort([107.3 + 2 * 60.8, 107.3 - 60.8, 107.3 - 60.8,
                          28.3, 28.3, 28.3])
        assert np.allclose(ev, expect, atol=1e-10)

    @pytest.mark.parametrize("bad", [(1.0, 2.0, 0.5), (1.0, -0.6, 0.5),
                                     (1.0, 0.2, -1.0)])
    def test_rejects_non_pd(self, bad):
        with pytest.raises(ValueError):
            rot.cubic_stiffness(*bad)


class TestEquilibriumDirection:
    def test_poles(self):
        assert np.allclose(rot.equilibrium_direction(0.0, 0.37), [0, 0, 1],
                           atol=1e-15)
        assert np.allclose(rot.equilibrium_direction(0.5, 0.0), [1, 0, 0],
                           atol=1e-15)
        assert np.allclose(rot.equilibrium_direction(0.5, 0.25), [0, 1, 0],
                           atol=1e-15)

    def test_unit_norm_property(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(-5, 5, 10_000)
        p = rng.uniform(-5, 5, 10_000)
        N = rot.equilibrium_direction(t, p)
        assert np.abs(np.linalg.norm(N, axis=-1) - 1.0).max() < 1e-12


class TestRotateStiffness:
    def test_identity(self):
        rng = np.random.default_rng(1)
        C = _oracles.random_spd_voigt(rng)
        C = 0.5 * (C + C.T)
        q = np.array([1.0, 0, 0, 0])
        assert np.allclose(rot.rotate_stiffness(C, q), C, atol=1e-12)

    def test_isotropy(self):
        C = rot.isotropic_stiffness(60.0, 26.0)
        rng = np.random.default_rng(2)
        for q in rot.random_quat(rng, 5):
            assert np.allclose(rot.rotate_stiffness(C, q), C, atol=1e-10)

    def test_cubic_symmetry_90deg_z(self):
        C = rot.cubic_stiffness(107.3, 60.8, 28.3)
        q = rot.quat_from_matrix(
            np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]]))
        assert np.allclose(rot.rotate_stiffness(C, q), C, atol=1e-10)

    def test_index_loop_oracle(self):
        rng = np.random.default_rng(3)
        C = rot.cubic_stiffness(150.0, 80.0, 40.0)
        q = rot.random_quat(rng)
        R = rot.matrix_from_quat(q)
        assert np.allclose(rot.rotate_stiffness(C, q),
                           _oracles.rotate_stiffness_loops(C, R), atol=1e-10)

    def test_composition(self):
        rng = np.random.default_rng(4)
        C = rot.cubic_stiffness(200.0, 100.0, 60.0)
        q1, q2 = rot.random_quat(rng, 2)
        lhs = rot.rotate_stiffness(rot.rotate_stiffness(C, q1), q2)
        rhs = rot.rotate_stiffness(C, rot.quat_multiply(q2, q1))
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_symmetry_preserved(self):
        rng = np.random.default_rng(5)
        C = 0.5 * (_oracles.random_spd_voigt(rng)
                   + _oracles.random_spd_voigt(rng).T)
        C = 0.5 * (C + C.T)
        Cr = rot.rotate_stiffness(C, rot.random_quat(rng))
        assert np.abs(Cr - Cr.T).max() < 1e-10


class TestGeodesicDistance:
    def test_identical_and_double_cover(self):
        rng = np.random.default_rng(6)
        q = rot.random_quat(rng)
        assert rot.geodesic_distance(q, q) == pytest.approx(0.0, abs=1e-12)
        assert rot.geodesic_distance(q, -q) == pytest.approx(0.0, abs=1e-7)

    def test_quarter_turn(self):
        qz = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
        d = rot.geodesic_distance(np.array([1.0, 0, 0, 0]), qz)
        assert d == pytest.approx(np.pi / 2, abs=1e-12)

    def test_symmetry_and_left_invariance(self):
        rng = np.random.default_rng(7)
        qa, qb, g = rot.random_quat(rng, 3)
        assert rot.geodesic_distance(qa, qb) == pytest.approx(
            rot.geodesic_distance(qb, qa), abs=1e-14)
        d0 = rot.geodesic_distance(qa, qb)
        d1 = rot.geodesic_distance(rot.quat_multiply(g, qa),
                                   rot.quat_multiply(g, qb))
        assert d1 == pytest.approx(d0, abs=1e-10)


class TestFundamentalZone:
    def test_identity(self):
        q = np.array([1.0, 0, 0, 0])
        assert np.allclose(rot.to_fcc_fundamental_zone(q), q, atol=1e-14)

    def test_orbit_constancy_brute_force(self):
        rng = np.random.default_rng(8)
        for q in rot.random_quat(rng, 10):
            variants = rot.quat_multiply(q[None, :],
                                         rot.CUBIC_SYMMETRY_QUATS)
            reps = rot.to_fcc_fundamental_zone(variants)
            assert np.abs(reps - reps[0]).max() < 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        q = rot.random_quat(rng, 50)
        once = rot.to_fcc_fundamental_zone(q)
        twice = rot.to_fcc_fundamental_zone(once)
        assert np.abs(once - twice).max() < 1e-12

    def test_24_operators(self):
        assert rot.CUBIC_SYMMETRY_QUATS.shape == (24, 4)
        # all distinct rotations
        d = rot.geodesic_distance(rot.CUBIC_SYMMETRY_QUATS[:, None],
                                  rot.CUBIC_SYMMETRY_QUATS[None, :])
        assert (d + np.eye(24)).min() > 1e-6


class TestQuatConversions:
    def test_tait_bryan_round_trip(self):
        rng = np.random.default_rng(10)
        ang = rng.uniform(-np.pi, np.pi, size=(20, 3))
        q = rot.quat_from_tait_bryan(ang[:, 0], ang[:, 1], ang[:, 2])
        back = rot.tait_bryan_from_quat(q)
        q2 = rot.quat_from_tait_bryan(back[:, 0], back[:, 1], back[:, 2])
        for a, b in zip(q, q2):
            assert np.allclose(rot.matrix_from_quat(a),
                               rot.matrix_from_quat(b), atol=1e-10)

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(11)
        for q in rot.random_quat(rng, 20):
            assert np.allclose(rot.quat_from_matrix(rot.matrix_from_quat(q)),
                               q, atol=1e-12)

    def test_canonical_sign(self):
        rng = np.random.default_rng(12)
        q = rot.random_quat(rng, 100)
        assert (q[:, 0] >= 0).all()
        assert np.abs(np.linalg.norm(q, axis=1) - 1).max() < 1e-12

    def test_voigt_tensor_round_trip(self):
        rng = np.random.default_rng(13)
        C = _oracles.random_spd_voigt(rng)
        C = 0.5 * (C + C.T)
        assert np.allclose(rot.tensor_to_voigt(rot.voigt_to_tensor(C)), C,
                           atol=1e-13)

    def test_misorientation_across_fz_boundary(self):
        rng = np.random.default_rng(14)
        q = rot.random_quat(rng)
        sym = rot.CUBIC_SYMMETRY_QUATS[7]
        equivalent = rot.quat_multiply(q, sym)
        assert rot.misorientation_angle(q, equivalent) == pytest.approx(
            0.0, abs=1e-7)
