from itertools import combinations

import numpy as np
import pytest

from patchlab.errors import InvalidInputError
from patchlab.stats import ClusteredSample, cluster_permutation_test


def sample(clusters, label=""):
    return ClusteredSample(tuple(tuple(c) for c in clusters), label)


def enumeration_oracle(base_clusters, attack_clusters):
    """Independent exhaustive recount of the exact two-sided tail."""
    pooled = list(base_clusters) + list(attack_clusters)
    n_attack = len(attack_clusters)

    def stat(attack_idx):
        attack = [pooled[i] for i in attack_idx]
        base = [pooled[i] for i in range(len(pooled)) if i not in attack_idx]
        ra = sum(sum(c) for c in attack) / sum(len(c) for c in attack)
        rb = sum(sum(c) for c in base) / sum(len(c) for c in base)
        return ra - rb

    observed = abs(stat(set(range(len(base_clusters), len(pooled)))))
    hits = total = 0
    for idx in combinations(range(len(pooled)), n_attack):
        total += 1
        if abs(stat(set(idx))) >= observed - 1e-12:
            hits += 1
    return hits / total


class TestClusterPermutationTest:
    def test_identical_multisets_give_p_one(self):
        clusters = [[0, 1, 0], [1, 1, 0], [0, 0, 0]]
        res = cluster_permutation_test(sample(clusters), sample(clusters), n_perm=499, seed=1)
        assert res.p_value == 1.0
        assert res.statistic == 0.0

    def test_full_separation_exact_tail(self):
        base = [[0] * 8 for _ in range(5)]
        attack = [[1] * 8 for _ in range(5)]
        res = cluster_permutation_test(sample(base), sample(attack), exact=True)
        # only the two extreme splits of C(10,5) reach |stat| = 1
        assert res.p_value == pytest.approx(2 / 252)
        assert res.p_value == pytest.approx(enumeration_oracle(base, attack))
        assert res.exact

    def test_full_separation_sampled_small_p(self):
        base = [[0] * 8 for _ in range(5)]
        attack = [[1] * 8 for _ in range(5)]
        res = cluster_permutation_test(sample(base), sample(attack), n_perm=999, seed=3)
        assert res.p_value < 0.05
        assert res.p_value >= 1 / 1000

    def test_exact_matches_enumeration_on_ragged_clusters(self):
        rng = np.random.default_rng(8)
        base = [rng.integers(0, 2, int(rng.integers(2, 7))).tolist() for _ in range(4)]
        attack = [rng.integers(0, 2, int(rng.integers(2, 7))).tolist() for _ in range(5)]
        res = cluster_permutation_test(sample(base), sample(attack), exact=True)
        assert res.p_value == pytest.approx(enumeration_oracle(base, attack))

    def test_seeded_determinism(self):
        base = [[0, 1, 0], [0, 0, 1]]
        attack = [[1, 1, 0], [1, 0, 1]]
        a = cluster_permutation_test(sample(base), sample(attack), n_perm=499, seed=9)
        b = cluster_permutation_test(sample(base), sample(attack), n_perm=499, seed=9)
        assert a.p_value == b.p_value

    def test_seed_stability_at_10k(self):
        rng = np.random.default_rng(4)
        base = [rng.integers(0, 2, 8).tolist() for _ in range(6)]
        attack = [(rng.integers(0, 2, 8) | (rng.random(8) < 0.3)).astype(int).tolist() for _ in range(6)]
        p1 = cluster_permutation_test(sample(base), sample(attack), n_perm=10_000, seed=1).p_value
        p2 = cluster_permutation_test(sample(base), sample(attack), n_perm=10_000, seed=2).p_value
        assert abs(p1 - p2) < 0.02

    def test_p_in_unit_interval(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            base = [rng.integers(0, 2, 5).tolist() for _ in range(3)]
            attack = [rng.integers(0, 2, 5).tolist() for _ in range(3)]
            res = cluster_permutation_test(sample(base), sample(attack), n_perm=199, seed=trial)
            assert 0.0 < res.p_value <= 1.0

    def test_frame_order_within_cluster_irrelevant(self):
        base = [[0, 0, 1, 1], [1, 0, 0, 0]]
        attack = [[1, 1, 1, 0], [0, 1, 1, 1]]
        shuffled_base = [c[::-1] for c in base]
        shuffled_attack = [[c[2], c[0], c[3], c[1]] for c in attack]
        a = cluster_permutation_test(sample(base), sample(attack), n_perm=299, seed=5)
        b = cluster_permutation_test(sample(shuffled_base), sample(shuffled_attack), n_perm=299, seed=5)
        assert a.p_value == b.p_value
        assert a.statistic == b.statistic

    def test_validation_errors(self):
        with pytest.raises(InvalidInputError):
            ClusteredSample((), "empty")
        with pytest.raises(InvalidInputError):
            ClusteredSample(((),), "empty-cluster")
        with pytest.raises(InvalidInputError):
            ClusteredSample(((0, 2),), "non-binary")
        with pytest.raises(InvalidInputError):
            cluster_permutation_test(sample([[1]]), sample([[0]]), n_perm=5)

    def test_single_cluster_each_is_enough(self):
        res = cluster_permutation_test(sample([[0, 0]]), sample([[1, 1]]), n_perm=99, seed=0)
        assert 0.0 < res.p_value <= 1.0
