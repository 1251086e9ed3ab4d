"""Empirical laws of a scalar process at one grid time.

Drivers only see a law through its mean and its W1 distance to the Dirac mass
at zero; both are 1-Lipschitz in W1, which is what keeps a mean-dependent
driver Lipschitz in the law.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _ordered_sum(x: np.ndarray) -> float:
    # contiguous 1-d add.reduce is numpy's pairwise summation: fixed order
    return float(np.add.reduce(np.ascontiguousarray(x, dtype=float)))


@dataclass(frozen=True)
class EmpiricalLaw:
    """Equal-weight empirical measure of ``samples``."""

    samples: np.ndarray
    sorted_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).ravel()
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    def sorted(self) -> np.ndarray:
        if self.sorted_cache is None:
            object.__setattr__(self, "sorted_cache", np.sort(self.samples, kind="stable"))
        return self.sorted_cache


def w1(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    """Wasserstein-1 distance between two equal-size empirical laws.

    For equal weights the optimal coupling pairs order statistics, so the
    distance is the mean absolute difference of the sorted samples.
    """
    if len(a) != len(b):
        raise ValueError(f"w1 needs equal sample counts, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise ValueError("w1 of empty laws is undefined")
    return _ordered_sum(np.abs(a.sorted() - b.sorted())) / len(a)


def law_stats(law: EmpiricalLaw) -> dict[str, float]:
    """Mean and W1 distance to the Dirac mass at 0."""
    n = len(law)
    if n == 0:
        raise ValueError("law_stats needs at least one sample")
    return {
        "mean": _ordered_sum(law.samples) / n,
        "w1_to_dirac0": _ordered_sum(np.abs(law.samples)) / n,
    }
