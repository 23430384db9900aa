"""Grid segmentation, perturbation sampling, and surrogate recovery tests."""
import numpy as np
import pytest
from scipy.stats import spearmanr

from cactiscan.lime import LimeConfig, SaliencyMap, explain, sample_perturbations, segment_grid


class TestSegmentGrid:
    def test_exact_division(self):
        grid = segment_grid(256, 256, 8, 8)
        assert grid.num_segments == 64
        sizes = np.bincount(grid.ids.ravel(), minlength=64)
        assert np.all(sizes == 32 * 32)

    def test_remainder_goes_to_last(self):
        grid = segment_grid(10, 10, 3, 3)
        col_widths = sorted(set(np.bincount(grid.ids[0] % 3)))
        assert col_widths == [3, 4]  # widths {3,3,4}

    def test_every_pixel_covered(self):
        grid = segment_grid(17, 13, 4, 5)
        assert set(np.unique(grid.ids)) == set(range(20))

    def test_bounds_partition_image(self):
        grid = segment_grid(10, 10, 3, 3)
        covered = np.zeros((10, 10), dtype=int)
        for s in range(grid.num_segments):
            y0, x0, y1, x1 = grid.bounds(s)
            covered[y0:y1, x0:x1] += 1
            assert np.all(grid.ids[y0:y1, x0:x1] == s)
        assert np.all(covered == 1)

    def test_zero_rows_rejected(self):
        with pytest.raises(ValueError):
            segment_grid(10, 10, 0, 3)


class TestSamplePerturbations:
    def test_deterministic(self):
        a = sample_perturbations(64, 16, seed=3)
        b = sample_perturbations(64, 16, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_first_row_all_ones(self):
        m = sample_perturbations(32, 9, seed=0)
        assert np.all(m[0] == 1.0)

    def test_column_means_binomial_bound(self):
        m = sample_perturbations(256, 64, seed=42)
        means = m.mean(axis=0)
        assert np.all(means >= 0.35) and np.all(means <= 0.65)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            sample_perturbations(16, 16, seed=0)


def planted_model(weights: np.ndarray, grid_rows=8, grid_cols=8, baseline=0.5):
    """Synthetic predictor: class-0 probability is linear in the tile masks.

    A masked tile is entirely baseline-valued, so one representative pixel
    per tile recovers the mask (test images stay away from the baseline).
    """
    grid = segment_grid(256, 256, grid_rows, grid_cols)
    corners = np.array([grid.bounds(s)[:2] for s in range(grid.num_segments)])

    def fn(batch: np.ndarray) -> np.ndarray:
        probs = []
        for img in batch:
            mask = (img[corners[:, 0], corners[:, 1], 0] != baseline).astype(np.float64)
            p = float(weights @ mask)
            probs.append([p, 1.0 - p])
        return np.asarray(probs)

    return fn


@pytest.fixture(scope="module")
def bright_image():
    rng = np.random.default_rng(0)
    # away from the 0.5 baseline everywhere so masked tiles are detectable
    return (rng.random((256, 256, 3)) * 0.3 + 0.65).astype(np.float32)


class TestExplain:
    def test_planted_linear_recovery(self, bright_image):
        rng = np.random.default_rng(17)
        true_w = rng.uniform(0.0005, 0.002, size=64)
        planted = rng.choice(64, size=8, replace=False)
        true_w[planted] = rng.uniform(0.08, 0.12, size=8)
        true_w = true_w / true_w.sum()

        sal = explain(planted_model(true_w), bright_image, target_class=0,
                      cfg=LimeConfig(seed=42))
        top8 = set(np.argsort(sal.weights)[-8:])
        assert top8 == set(planted)
        rho, _ = spearmanr(sal.weights, true_w)
        assert rho >= 0.9
        assert sal.r2 >= 0.95

    def test_planted_subset_mean_top_k_exact(self, bright_image):
        # probability = mean of a planted segment subset's indicators
        planted = [3, 17, 22, 40, 41, 55, 60, 63]
        true_w = np.zeros(64)
        true_w[planted] = 1.0 / len(planted)
        sal = explain(planted_model(true_w), bright_image, target_class=0,
                      cfg=LimeConfig(seed=42))
        top = set(np.argsort(sal.weights)[-len(planted):])
        assert top == set(planted)
        assert sal.weights[planted].min() > np.delete(sal.weights, planted).max()
        assert sal.r2 >= 0.95

    def test_constant_model_zero_weights(self, bright_image):
        def constant(batch):
            return np.tile([0.7, 0.3], (len(batch), 1))

        sal = explain(constant, bright_image, target_class=0, cfg=LimeConfig(seed=1))
        assert np.all(np.abs(sal.weights) < 1e-3)
        assert sal.intercept == pytest.approx(0.7, abs=1e-3)

    def test_ridge_shrinks_weights_monotonically(self, bright_image):
        rng = np.random.default_rng(2)
        true_w = rng.uniform(0, 0.03, size=64)
        model = planted_model(true_w)
        norms = []
        for lam in (1e-3, 1.0, 100.0, 10000.0):
            sal = explain(model, bright_image, target_class=0,
                          cfg=LimeConfig(seed=5, ridge_lambda=lam))
            norms.append(float(np.linalg.norm(sal.weights)))
        assert all(a >= b for a, b in zip(norms, norms[1:]))

    def test_deterministic_output(self, bright_image):
        def noisy(batch):
            # deterministic pseudo-model with structure
            vals = np.asarray([img.mean() for img in batch])
            return np.stack([vals, 1 - vals], axis=1)

        a = explain(noisy, bright_image, 0, LimeConfig(seed=9))
        b = explain(noisy, bright_image, 0, LimeConfig(seed=9))
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.intercept == b.intercept and a.r2 == b.r2

    def test_batching_does_not_change_result(self, bright_image):
        def fn(batch):
            vals = np.asarray([img.mean() for img in batch])
            return np.stack([vals, 1 - vals], axis=1)

        a = explain(fn, bright_image, 0, LimeConfig(seed=4, batch_size=7))
        b = explain(fn, bright_image, 0, LimeConfig(seed=4, batch_size=64))
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)

    def test_weight_vector_length(self, bright_image):
        def fn(batch):
            return np.tile([0.5, 0.5], (len(batch), 1))

        sal = explain(fn, bright_image, 0, LimeConfig(rows=4, cols=6, samples=64, seed=0))
        assert sal.weights.shape == (24,)

    def test_lambda_zero_rejected(self, bright_image):
        with pytest.raises(ValueError):
            explain(lambda b: np.tile([1.0, 0.0], (len(b), 1)), bright_image, 0,
                    LimeConfig(ridge_lambda=0.0))

    def test_model_graph_target_by_name(self):
        from cactiscan.models import build_lightweight_cnn

        model = build_lightweight_cnn(3, seed=42, input_size=32)
        rng = np.random.default_rng(1)
        img = rng.random((32, 32, 3)).astype(np.float32)
        sal = explain(model, img, "Healthy", LimeConfig(rows=2, cols=2, samples=8, seed=0))
        assert sal.target_label == "Healthy"
        assert sal.weights.shape == (4,)
        with pytest.raises(ValueError, match="unknown class"):
            explain(model, img, "Bogus", LimeConfig(rows=2, cols=2, samples=8, seed=0))


class TestSaliencyOutput:
    def _saliency(self):
        grid = segment_grid(8, 8, 2, 2)
        return SaliencyMap(weights=np.array([1.0, -0.5, 0.0, 0.25]),
                           target_class=0, target_label="Affected",
                           intercept=0.1, r2=0.99, grid=grid)

    def test_json_lists_bounds_and_weights(self):
        import json

        sal = self._saliency()
        doc = json.loads(sal.to_json())
        assert doc["target_label"] == "Affected"
        assert len(doc["segments"]) == 4
        assert doc["segments"][0]["bounds"] == [0, 0, 4, 4]

    def test_pgm_header_and_extent(self):
        sal = self._saliency()
        pgm = sal.to_pgm()
        lines = pgm.strip().split("\n")
        assert lines[0] == "P2" and lines[1] == "8 8" and lines[2] == "255"
        assert len(lines) == 3 + 8
        vals = [int(v) for v in lines[3].split()]
        assert all(0 <= v <= 255 for v in vals)
