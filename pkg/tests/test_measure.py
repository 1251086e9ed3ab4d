import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrbsde.measure import EmpiricalLaw, law_stats, w1


def law(*xs):
    return EmpiricalLaw(np.array(xs, dtype=float))


def test_w1_examples():
    assert w1(law(0, 1), law(0, 3)) == 1.0
    a = law(0.3, -2.0, 5.5)
    assert w1(a, a) == 0.0
    assert w1(law(-1, 1), law(0, 0)) == 1.0


def test_w1_unequal_counts_rejected():
    with pytest.raises(ValueError):
        w1(law(0, 1), law(0, 1, 2))


def test_law_stats_examples():
    assert law_stats(law(-2, 2)) == {"mean": 0.0, "w1_to_dirac0": 2.0}
    assert law_stats(law(3)) == {"mean": 3.0, "w1_to_dirac0": 3.0}


def test_w1_to_dirac_of_standard_normal():
    x = np.random.default_rng(5).standard_normal(100_000)
    stats = law_stats(EmpiricalLaw(x))
    se = np.std(np.abs(x)) / math.sqrt(x.size)
    assert abs(stats["w1_to_dirac0"] - math.sqrt(2 / math.pi)) <= 5 * se


def test_sorted_cache_is_sorted_permutation():
    a = law(3, -1, 2, -1)
    s = a.sorted()
    assert np.all(np.diff(s) >= 0)
    assert sorted(a.samples.tolist()) == s.tolist()


finite = st.floats(-1e3, 1e3, allow_nan=False)
vecs = arrays(float, 12, elements=finite)


@settings(max_examples=200, deadline=None)
@given(vecs, vecs, vecs)
def test_triangle_inequality(a, b, c):
    la, lb, lc = EmpiricalLaw(a), EmpiricalLaw(b), EmpiricalLaw(c)
    assert w1(la, lc) <= w1(la, lb) + w1(lb, lc) + 1e-9


@settings(max_examples=200, deadline=None)
@given(vecs, vecs, finite)
def test_translation_invariance_and_symmetry(a, b, shift):
    d = w1(EmpiricalLaw(a), EmpiricalLaw(b))
    assert w1(EmpiricalLaw(a + shift), EmpiricalLaw(b + shift)) == pytest.approx(d, abs=1e-9)
    assert w1(EmpiricalLaw(b), EmpiricalLaw(a)) == d
    assert d >= 0


@settings(max_examples=200, deadline=None)
@given(vecs, vecs)
def test_mean_is_one_lipschitz_in_w1(a, b):
    la, lb = EmpiricalLaw(a), EmpiricalLaw(b)
    gap = abs(law_stats(la)["mean"] - law_stats(lb)["mean"])
    assert gap <= w1(la, lb) + 1e-9
    gap_abs = abs(law_stats(la)["w1_to_dirac0"] - law_stats(lb)["w1_to_dirac0"])
    assert gap_abs <= w1(la, lb) + 1e-9
