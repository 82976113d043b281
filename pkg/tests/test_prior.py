"""Episode generator checks: determinism, label signal, class coverage."""

import numpy as np
import pytest

from bpfn import rng
from bpfn.prior import (Episode, PriorConfig, gaussian_mixture_episode,
                        make_classification_data, mlp_teacher_episode,
                        sample_episode)


def nearest_centroid_accuracy(ep: Episode) -> float:
    """Oracle: classify queries by the closest per-class support centroid."""
    c = ep.n_classes
    centroids = np.stack([ep.support_x[ep.support_y == k].mean(axis=0)
                          for k in range(c)])
    d2 = ((ep.query_x[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float((d2.argmin(axis=1) == ep.query_y).mean())


def one_nn_accuracy(ep: Episode) -> float:
    d2 = ((ep.query_x[:, None, :] - ep.support_x[None]) ** 2).sum(axis=-1)
    return float((ep.support_y[d2.argmin(axis=1)] == ep.query_y).mean())


class TestEpisodeType:
    def test_feature_width_must_match(self):
        with pytest.raises(ValueError):
            Episode(np.zeros((3, 4)), np.zeros(3), np.zeros((2, 5)))

    def test_support_required(self):
        with pytest.raises(ValueError):
            Episode(np.zeros((0, 4)), np.zeros(0), np.zeros((2, 4)))


class TestPriorConfig:
    def test_defaults_valid(self):
        PriorConfig()

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            PriorConfig(d_range=(5, 2))

    def test_class_cap(self):
        with pytest.raises(ValueError):
            PriorConfig(c_range=(2, 11))


class TestSampleEpisode:
    def test_same_seed_byte_identical(self):
        cfg = PriorConfig()
        a = sample_episode(cfg, seed=99)
        b = sample_episode(cfg, seed=99)
        assert a.support_x.tobytes() == b.support_x.tobytes()
        assert a.query_x.tobytes() == b.query_x.tobytes()
        assert np.array_equal(a.support_y, b.support_y)
        assert np.array_equal(a.query_y, b.query_y)

    def test_distinct_seeds_differ(self):
        cfg = PriorConfig()
        a = sample_episode(cfg, seed=1)
        b = sample_episode(cfg, seed=2)
        assert a.support_x.tobytes() != b.support_x.tobytes()

    def test_degenerate_class_range(self):
        cfg = PriorConfig(c_range=(2, 2))
        for seed in range(20):
            ep = sample_episode(cfg, seed)
            assert ep.n_classes == 2

    def test_class_coverage_in_support(self):
        cfg = PriorConfig(c_range=(2, 10))
        for seed in range(100):
            ep = sample_episode(cfg, seed)
            present = set(np.unique(ep.support_y).tolist())
            assert present == set(range(ep.n_classes)), f"seed {seed}"

    def test_label_signal_across_families(self):
        """Mean 1-NN oracle accuracy beats chance + 0.1 over 100 episodes."""
        cfg = PriorConfig()
        edge = []
        for seed in range(100):
            ep = sample_episode(cfg, seed + 1000)
            edge.append(one_nn_accuracy(ep) - 1.0 / ep.n_classes)
        assert np.mean(edge) > 0.1

    def test_ranges_respected(self):
        cfg = PriorConfig(d_range=(3, 5), c_range=(2, 3),
                          n_support_range=(10, 20), n_query_range=(4, 6))
        for seed in range(30):
            ep = sample_episode(cfg, seed)
            assert 3 <= ep.n_features <= 5
            assert 2 <= ep.n_classes <= 3
            assert 10 <= ep.n_support <= 20
            assert 4 <= ep.n_query <= 6


class TestGaussianFamily:
    def test_separated_clusters_are_learnable(self):
        """Means at +/- 3 e1 with sigma 0.1: nearest centroid >= 99%."""
        d = 6
        means = np.zeros((2, d))
        means[0, 0], means[1, 0] = 3.0, -3.0
        stds = np.full((2, d), 0.1)
        accs = [nearest_centroid_accuracy(
            gaussian_mixture_episode(means, stds, 40, 200, seed))
            for seed in range(10)]
        assert np.mean(accs) >= 0.99

    def test_coverage_with_minimal_support(self):
        means = rng.normal(5, (4, 3), std=2.0)
        stds = np.full((4, 3), 0.5)
        ep = gaussian_mixture_episode(means, stds, 4, 10, seed=0)
        assert set(np.unique(ep.support_y).tolist()) == {0, 1, 2, 3}

    def test_support_smaller_than_classes_rejected(self):
        with pytest.raises(ValueError):
            gaussian_mixture_episode(np.zeros((5, 2)), np.ones((5, 2)),
                                     3, 4, seed=0)


class TestTeacherFamily:
    def test_coverage_even_for_many_classes(self):
        for seed in range(30):
            ep = mlp_teacher_episode(d=8, c=10, n_support=60, n_query=20,
                                     seed=seed)
            assert set(np.unique(ep.support_y).tolist()) == set(range(10))

    def test_deterministic(self):
        a = mlp_teacher_episode(5, 3, 30, 10, seed=7)
        b = mlp_teacher_episode(5, 3, 30, 10, seed=7)
        assert a.support_x.tobytes() == b.support_x.tobytes()
        assert np.array_equal(a.query_y, b.query_y)

    def test_labels_carry_signal(self):
        accs = [one_nn_accuracy(
            mlp_teacher_episode(4, 3, 80, 40, seed=s, noise=0.2))
            for s in range(20)]
        assert np.mean(accs) > 1 / 3 + 0.1


class TestDatasetFactory:
    def test_gaussian_every_class_present(self):
        x, y = make_classification_data("gaussian", 500, 8, 4, seed=3)
        assert x.shape == (500, 8)
        assert set(np.unique(y).tolist()) == {0, 1, 2, 3}

    def test_informative_columns_only(self):
        informative = [2, 5]
        x, y = make_classification_data("gaussian", 4000, 7, 2, seed=4,
                                        informative=np.array(informative),
                                        noise=0.5)
        gap = np.abs(x[y == 0].mean(axis=0) - x[y == 1].mean(axis=0))
        assert gap[informative].min() > 3 * np.delete(gap, informative).max()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_classification_data("tree", 10, 2, 2, seed=0)
