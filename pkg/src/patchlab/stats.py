"""Cluster-level permutation test for attack-vs-baseline frame rates.

Frames within a trial are temporally correlated, so frames are never
treated as independent: whole trials (clusters) are shuffled between the
baseline and attack groups. The statistic is the difference of
micro-averaged rates, which depends on clusters only through their sums —
reordering frames inside a trial cannot change the p-value.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class ClusteredSample:
    """Binary frame outcomes grouped into trials."""

    clusters: tuple[tuple[int, ...], ...]
    label: str = ""

    def __post_init__(self):
        clusters = tuple(tuple(int(v) for v in c) for c in self.clusters)
        if not clusters:
            raise InvalidInputError(f"sample {self.label!r} has no clusters")
        for c in clusters:
            if len(c) == 0:
                raise InvalidInputError(f"sample {self.label!r} contains an empty cluster")
            if any(v not in (0, 1) for v in c):
                raise InvalidInputError(f"sample {self.label!r} has non-binary outcomes")
        object.__setattr__(self, "clusters", clusters)


def _rate_difference(sums: np.ndarray, sizes: np.ndarray, in_attack: np.ndarray) -> float:
    """attack micro-rate minus baseline micro-rate for one assignment."""
    attack_n = sizes[in_attack].sum()
    base_n = sizes[~in_attack].sum()
    return sums[in_attack].sum() / attack_n - sums[~in_attack].sum() / base_n


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    p_value: float
    n_perm: int
    seed: int | None
    exact: bool

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "exact": self.exact,
        }


def cluster_permutation_test(
    baseline: ClusteredSample,
    attack: ClusteredSample,
    n_perm: int = 1999,
    seed: int = 0,
    exact: bool = False,
) -> PermutationResult:
    """Two-sided permutation p-value for the rate difference.

    Sampled mode draws n_perm random reassignments of trials to groups and
    uses the add-one estimator p = (1 + hits) / (1 + n_perm), so p is never
    zero. Exact mode enumerates every group split of the pooled trials and
    returns the exact tail fraction (the identity split counts itself).
    """
    if not exact and n_perm < 99:
        raise InvalidInputError(f"n_perm must be >= 99, got {n_perm}")
    n_base = len(baseline.clusters)
    n_attack = len(attack.clusters)
    if n_base + n_attack < 2:
        raise InvalidInputError("need at least 2 clusters in total")

    pooled = list(baseline.clusters) + list(attack.clusters)
    sums = np.array([sum(c) for c in pooled], dtype=np.float64)
    sizes = np.array([len(c) for c in pooled], dtype=np.float64)
    n_total = len(pooled)

    observed_mask = np.zeros(n_total, dtype=bool)
    observed_mask[n_base:] = True
    observed = _rate_difference(sums, sizes, observed_mask)

    if exact:
        hits = 0
        total = 0
        for attack_idx in combinations(range(n_total), n_attack):
            mask = np.zeros(n_total, dtype=bool)
            mask[list(attack_idx)] = True
            if abs(_rate_difference(sums, sizes, mask)) >= abs(observed) - 1e-12:
                hits += 1
            total += 1
        return PermutationResult(
            statistic=observed, p_value=hits / total, n_perm=total, seed=None, exact=True
        )

    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(n_total)
        mask = np.zeros(n_total, dtype=bool)
        mask[perm[:n_attack]] = True
        if abs(_rate_difference(sums, sizes, mask)) >= abs(observed) - 1e-12:
            hits += 1
    return PermutationResult(
        statistic=observed,
        p_value=(1 + hits) / (1 + n_perm),
        n_perm=n_perm,
        seed=seed,
        exact=False,
    )
