import numpy as np
import pytest

from polyhom import rve, rotations as rot


class TestGenerate:
    def test_single_grain(self):
        ids, seeds = rve.generate_rve(6, 1, seed=0)
        assert (ids == 0).all()

    def test_two_opposite_corner_seeds(self):
        seeds = np.array([[0.01, 0.01, 0.01], [0.51, 0.51, 0.51]])
        ids = rve._periodic_voronoi_ids(seeds, (8, 8, 8))
        counts = np.bincount(ids.ravel(), minlength=2)
        assert abs(counts[0] - counts[1]) / counts.sum() < 0.10

    def test_voxel_conservation(self):
        ids, _ = rve.generate_rve((6, 8, 10), 7, seed=1)
        counts = np.bincount(ids.ravel(), minlength=7)
        assert counts.sum() == 6 * 8 * 10
        assert counts.min() > 0

    def test_brute_force_nearest_seed(self):
        rng = np.random.default_rng(2)
        seeds = rng.uniform(0, 1, size=(3, 3))
        dims = (5, 5, 5)
        ids = rve._periodic_voronoi_ids(seeds, dims)
        for x in range(5):
            for y in range(5):
                for z in range(5):
                    c = (np.array([x, y, z]) + 0.5) / 5.0
                    d = c[None] - seeds
                    d -= np.round(d)
                    assert ids[x, y, z] == np.argmin((d ** 2).sum(axis=1))

    def test_lattice_translation_invariance(self):
        rng = np.random.default_rng(3)
        seeds = rng.uniform(0, 1, size=(4, 3))
        a = rve._periodic_voronoi_ids(seeds, (6, 6, 6))
        b = rve._periodic_voronoi_ids(seeds + np.array([1.0, -2.0, 3.0]),
                                      (6, 6, 6))
        assert (a == b).all()

    def test_validation(self):
        with pytest.raises(ValueError):
            rve.generate_rve(3, 2)
        with pytest.raises(ValueError):
            rve.generate_rve(8, 0)


class TestTexture:
    def test_zero_scatter_single_component(self):
        q = rot.random_quat(np.random.default_rng(4))
        spec = rve.TextureSpec(
            components=[rve.TextureComponent(q, 1e9, 0.0)])
        quats = rve.assign_texture(30, spec, seed=0)
        ref = rot.to_fcc_fundamental_zone(q)
        assert np.abs(quats - ref[None]).max() < 1e-10

    def test_background_only_near_uniform(self):
        # background-only draws must match a reference uniform draw of the
        # same size up to sampling noise
        spec = rve.TextureSpec(components=[])
        quats = rve.assign_texture(20_000, spec, seed=1)
        from polyhom import metrics, sampling
        h = sampling.build_histogram(quats)
        ref = sampling.build_histogram(
            rot.random_quat(np.random.default_rng(99), 20_000))
        assert metrics.texture_index(h, ref) < 0.2

    def test_strong_component_concentration(self):
        q = rot.random_quat(np.random.default_rng(5))
        sigma = np.radians(5.0)
        spec = rve.TextureSpec(
            components=[rve.TextureComponent(q, 5e5, sigma)])
        quats = rve.assign_texture(500, spec, seed=2)
        mis = rot.misorientation_angle(quats, np.tile(q, (500, 1)))
        assert (mis <= 3.0 * sigma + 1e-9).mean() >= 0.99

    def test_weights_below_one_rejected(self):
        with pytest.raises(ValueError):
            rve.TextureSpec(components=[], background_weight=0.5)


class TestElasticTriples:
    def test_all_pass_cubic_preconditions(self):
        triples = rve.sample_elastic_triples(500, seed=0)
        for c11, c12, c44 in triples:
            rot.cubic_stiffness(c11, c12, c44)  # must not raise

    def test_reproducible(self):
        a = rve.sample_elastic_triples(50, seed=3)
        b = rve.sample_elastic_triples(50, seed=3)
        assert (a == b).all()

    def test_zener_spans_both_sides(self):
        t = rve.sample_elastic_triples(500, seed=4)
        A = 2 * t[:, 2] / (t[:, 0] - t[:, 1])
        assert (A < 1).any() and (A > 1).any()


class TestRveContainer:
    def test_round_trip(self, tmp_path):
        spec = rve.TextureSpec(components=[])
        r = rve.make_rve(6, 5, spec, (107.3, 60.8, 28.3), seed=0)
        path = tmp_path / "r.npz"
        rve.save_rve(r, path)
        r2 = rve.load_rve(path)
        assert (r2.grain_ids == r.grain_ids).all()
        assert (r2.orientations == r.orientations).all()
        assert (r2.stiffness == r.stiffness).all()

    def test_volume_fractions(self):
        spec = rve.TextureSpec(components=[])
        r = rve.make_rve(6, 5, spec, (107.3, 60.8, 28.3), seed=1)
        vf = r.volume_fractions()
        assert vf.sum() == pytest.approx(1.0, abs=1e-12)
        assert (vf > 0).all()

    def test_sample_frame_stiffness(self):
        spec = rve.TextureSpec(components=[])
        r = rve.make_rve(6, 3, spec, (107.3, 60.8, 28.3), seed=2)
        Cs = r.sample_frame_stiffness()
        for g in range(3):
            ref = rot.rotate_stiffness(r.stiffness[g], r.orientations[g])
            assert np.allclose(Cs[g], ref, atol=1e-12)
