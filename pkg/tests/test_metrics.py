import numpy as np
import pytest

from polyhom import metrics, sampling, rotations as rot


def _hist(density):
    return sampling.OdfHistogram(density=np.asarray(density, dtype=float))


class TestTextureIndex:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        h = sampling.build_histogram(rot.random_quat(rng, 100))
        assert metrics.texture_index(h, h) == 0.0

    def test_doubling_is_exactly_one(self):
        rng = np.random.default_rng(1)
        ref = sampling.build_histogram(rot.random_quat(rng, 100))
        pred = _hist(2.0 * ref.density)
        assert metrics.texture_index(pred, ref) == 1.0

    def test_spreadsheet_recomputation(self):
        rng = np.random.default_rng(2)
        d_ref = rng.uniform(0, 2, 512)
        d_pred = rng.uniform(0, 2, 512)
        got = metrics.texture_index(_hist(d_pred), _hist(d_ref))
        num = sum((p - r) ** 2 for p, r in zip(d_pred, d_ref))
        den = sum(r ** 2 for r in d_ref)
        assert abs(got - num / den) < 1e-12

    def test_partition_mismatch(self):
        a = sampling.OdfHistogram(density=np.ones(8), bins_per_axis=2)
        b = sampling.OdfHistogram(density=np.ones(27), bins_per_axis=3)
        with pytest.raises(ValueError):
            metrics.texture_index(a, b)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            metrics.texture_index(_hist(np.ones(512)), _hist(np.zeros(512)))


class TestRelativeErrors:
    def test_identical(self):
        x = np.linspace(-3, 5, 50)
        assert metrics.relative_errors(x, x) == (0.0, 0.0)

    def test_constant_shift(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=40)
        c = 0.37
        M = np.abs(x).max()
        mean_rel, max_rel = metrics.relative_errors(x, x + c)
        assert mean_rel == pytest.approx(c / M, abs=1e-14)
        assert max_rel == pytest.approx(c / M, abs=1e-14)

    def test_spreadsheet_recomputation(self):
        rng = np.random.default_rng(4)
        ref = rng.normal(size=100)
        pred = ref + rng.normal(scale=0.1, size=100)
        mean_rel, max_rel = metrics.relative_errors(ref, pred)
        M = max(abs(v) for v in ref)
        errs = [abs(r - p) for r, p in zip(ref, pred)]
        assert abs(mean_rel - (sum(errs) / len(errs)) / M) < 1e-12
        assert abs(max_rel - max(errs) / M) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            metrics.relative_errors(np.ones(3), np.ones(4))
        with pytest.raises(ValueError):
            metrics.relative_errors(np.zeros(3), np.ones(3))
        with pytest.raises(ValueError):
            metrics.relative_errors(np.empty(0), np.empty(0))
