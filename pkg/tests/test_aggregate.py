from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensibound.aggregate import apo_bounds, ate_bounds, cate_bounds

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestCateBounds:
    def test_point_identified_inputs_collapse(self):
        lo, hi = cate_bounds(0.3, 0.3, 0.7, 0.7)
        assert hi - lo == 0.0
        assert lo == pytest.approx(0.4)

    def test_direct_substitution(self):
        assert cate_bounds(0.0, 1.0, -1.0, 2.0) == (-2.0, 2.0)

    def test_width_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            l0, l1 = rng.normal(size=2)
            w0, w1 = rng.uniform(0, 3, size=2)
            lo, hi = cate_bounds(l0, l0 + w0, l1, l1 + w1)
            assert hi - lo == pytest.approx(w0 + w1)

    def test_unordered_pair_rejected(self):
        with pytest.raises(ValueError):
            cate_bounds(1.0, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            cate_bounds(0.0, 1.0, 2.0, 1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            cate_bounds(0.0, np.nan, 0.0, 1.0)

    @given(l0=finite, w0=st.floats(0, 10), l1=finite, w1=st.floats(0, 10),
           t0=st.floats(0, 1), t1=st.floats(0, 1))
    def test_validity_property(self, l0, w0, l1, w1, t0, t1):
        # any per-arm selection inside the intervals lands inside the CATE interval
        lo, hi = cate_bounds(l0, l0 + w0, l1, l1 + w1)
        v0 = l0 + t0 * w0
        v1 = l1 + t1 * w1
        assert lo - 1e-9 <= v1 - v0 <= hi + 1e-9


class TestMeans:
    def test_single_element(self):
        assert apo_bounds([(0.2, 0.8)]) == (0.2, 0.8)

    def test_permutation_invariance(self):
        a = [(0.0, 1.0), (1.0, 2.0), (-1.0, 0.5)]
        assert apo_bounds(a) == apo_bounds(list(reversed(a)))

    def test_arithmetic_mean(self):
        assert ate_bounds([(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]) == (1.0, 2.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            apo_bounds([])
        with pytest.raises(ValueError):
            ate_bounds([])

    def test_validity_under_random_selection(self):
        rng = np.random.default_rng(1)
        bounds = [(lo, lo + w) for lo, w in
                  zip(rng.normal(size=50), rng.uniform(0, 2, size=50))]
        lo, hi = apo_bounds(bounds)
        for _ in range(1000):
            picks = [l + rng.random() * (h - l) for l, h in bounds]
            assert lo - 1e-12 <= np.mean(picks) <= hi + 1e-12
