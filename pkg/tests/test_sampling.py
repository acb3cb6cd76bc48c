import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import water_fill_oracle
from subtransfer.datamodel import RegressionDataset, SubsampleSelection
from subtransfer.errors import RateOutOfRange, SingularGram, ValidationError
from subtransfer.sampling import (
    SamplingProbabilities,
    combined_select,
    leverage_norms,
    merge_selections,
    optimal_probabilities,
    osmac_probabilities,
    poisson_sample,
    target_guided_select,
    uniform_probabilities,
    water_fill,
)
from subtransfer.simulation import gen_external, gen_target, replication_rng, toy_osmac_scenario


def _external_with_residuals(res):
    # one intercept column and beta_T = 0, so residuals are the responses
    res = np.asarray(res, dtype=float)
    return RegressionDataset(np.ones((res.size, 1)), res), np.zeros(1)


class TestPoisson:
    def test_all_ones(self):
        sel = poisson_sample(SamplingProbabilities(np.ones(7), 7.0), np.random.default_rng(3))
        np.testing.assert_array_equal(sel.indices, np.arange(7))
        np.testing.assert_array_equal(sel.weights, np.ones(7))

    def test_certain_row_always_in(self):
        pi = np.full(50, 1e-12)
        pi[0] = 1.0
        probs = SamplingProbabilities(pi, pi.sum())
        for seed in range(20):
            assert 0 in poisson_sample(probs, np.random.default_rng(seed)).indices

    def test_weights_are_rho_over_pi(self, rng):
        pi = rng.uniform(0.1, 1.0, 40)
        probs = SamplingProbabilities(pi, pi.sum())
        sel = poisson_sample(probs, rng)
        np.testing.assert_allclose(sel.weights, (pi.sum() / 40) / pi[sel.indices], rtol=1e-15)

    def test_zero_probability_never_drawn(self, rng):
        pi = np.array([0.0, 1.0, 0.0, 0.5])
        for _ in range(20):
            sel = poisson_sample(SamplingProbabilities(pi, 1.5), rng)
            assert not np.isin([0, 2], sel.indices).any()

    def test_reproducible(self):
        probs = uniform_probabilities(1000, 100)
        a = poisson_sample(probs, np.random.default_rng(11))
        b = poisson_sample(probs, np.random.default_rng(11))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_mean_size(self):
        n_B, p = 10_000, 0.05
        probs = uniform_probabilities(n_B, n_B * p)
        sizes = [len(poisson_sample(probs, np.random.default_rng(s))) for s in range(1000)]
        assert 497 <= np.mean(sizes) <= 503

    def test_bad_probabilities(self):
        with pytest.raises(ValidationError):
            SamplingProbabilities([0.5, 1.2], 1.7)
        with pytest.raises(ValidationError):
            SamplingProbabilities([0.5, 0.5], 2.0)


class TestUniform:
    def test_values(self):
        np.testing.assert_allclose(uniform_probabilities(10, 2).pi, 0.2)
        np.testing.assert_array_equal(uniform_probabilities(10, 10).pi, 1.0)

    @pytest.mark.parametrize("r", [11, 0, -1])
    def test_out_of_range(self, r):
        with pytest.raises(RateOutOfRange):
            uniform_probabilities(10, r)


class TestLeverage:
    def test_identity(self):
        t = leverage_norms(np.eye(2))
        np.testing.assert_allclose(t, [1.0, 1.0], rtol=1e-14)

    def test_three_rows(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        t = leverage_norms(X)
        np.testing.assert_allclose(t, np.sqrt(2 / 3) * np.ones(3), rtol=1e-14)
        assert np.sum(t ** 2) == pytest.approx(2.0)

    def test_scale_invariant(self, rng):
        X = rng.normal(size=(30, 4))
        np.testing.assert_allclose(leverage_norms(5 * X), leverage_norms(X), rtol=1e-12)

    def test_matches_hat_diagonal(self, rng):
        X = rng.normal(size=(25, 3))
        H = X @ np.linalg.pinv(X)
        np.testing.assert_allclose(leverage_norms(X) ** 2, np.diag(H), rtol=1e-10)

    def test_singular(self):
        X = np.ones((5, 2))
        with pytest.raises(SingularGram):
            leverage_norms(X)


class TestWaterFill:
    def test_equal_scores(self):
        pi, H, g = water_fill(np.ones(10), 5)
        np.testing.assert_allclose(pi, 0.5)
        assert g == 0

    def test_one_large_score(self):
        s = np.array([1, 1, 1, 1, 100.0])
        pi, H, g = water_fill(s, 4)
        np.testing.assert_allclose(pi, [0.75, 0.75, 0.75, 0.75, 1.0], atol=1e-12)
        np.testing.assert_allclose(pi, water_fill_oracle(s, 4), atol=1e-6)
        assert g == 1
        # cap on the r*s scale: r * S / (r - g)
        assert H == pytest.approx(4 * 4 / 3)

    def test_full_size(self, rng):
        pi, H, g = water_fill(rng.exponential(size=8), 8)
        np.testing.assert_array_equal(pi, 1.0)

    def test_too_few_positive(self):
        with pytest.raises(RateOutOfRange):
            water_fill([0.0, 0.0, 1.0], 2)

    def test_oracle_small(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 13))
            s = rng.lognormal(sigma=1.5, size=n)
            r = rng.uniform(0.5, n - 0.01)
            pi, _, _ = water_fill(s, r)
            np.testing.assert_allclose(pi, water_fill_oracle(s, r), atol=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=60), st.floats(0.01, 0.99))
    def test_constraints(self, s, frac):
        s = np.asarray(s)
        r = max(frac * s.size, 0.5)
        pi, H, g = water_fill(s, r)
        assert pi.max() <= 1.0
        assert abs(pi.sum() - r) <= 1e-8 * s.size
        order = np.argsort(s, kind="stable")
        assert np.all(np.diff(pi[order]) >= -1e-15)
        assert np.count_nonzero(pi == 1.0) >= g


class TestOptimal:
    def test_uses_leverage(self, rng):
        X = rng.standard_t(3, size=(200, 3))
        probs = optimal_probabilities(X, 40)
        np.testing.assert_allclose(probs.pi, water_fill(leverage_norms(X), 40)[0], rtol=1e-14)
        np.testing.assert_allclose(probs.scores, leverage_norms(X))

    def test_identity_design_equal(self):
        X = np.vstack([np.eye(4)] * 5)
        np.testing.assert_allclose(optimal_probabilities(X, 6).pi, 0.3, rtol=1e-12)

    def test_large_constraints(self, rng):
        X = np.column_stack([np.ones(20000), rng.standard_t(2, size=(20000, 5))])
        probs = optimal_probabilities(X, 9600)
        assert probs.pi.max() <= 1.0
        assert abs(probs.pi.sum() - 9600) <= 1e-8 * 20000
        assert probs.n_capped > 0


class TestOsmac:
    def test_uniform_when_symmetric(self):
        X = np.vstack([np.eye(3)] * 4)
        y = np.tile([1.0, -1.0, 1.0], 4)
        probs = osmac_probabilities(X, y, np.zeros(3), 3)
        np.testing.assert_allclose(probs.pi, 0.25, rtol=1e-12)

    def test_proportional_to_residual(self):
        X = np.vstack([np.eye(2)] * 10)
        y = np.ones(20)
        y[0] = 10.0
        probs = osmac_probabilities(X, y, np.zeros(2), 2)
        assert probs.pi[0] == pytest.approx(10 * probs.pi[1], rel=1e-12)

    def test_zero_residuals_fall_back(self):
        X = np.vstack([np.eye(2)] * 5)
        probs = osmac_probabilities(X, X @ [1.0, 2.0], [1.0, 2.0], 4)
        assert probs.fallback_uniform
        np.testing.assert_allclose(probs.pi, 0.4)

    def test_toy_contamination(self):
        # residual-driven probabilities concentrate on shifted rows; with an
        # intercept in the design a least-squares pilot on the external rows
        # absorbs part of the shift, so the true coefficients serve as pilot
        sc = toy_osmac_scenario(7)
        fracs = []
        for k in range(500):
            rng = replication_rng(7, k)
            gen_target(sc, rng)
            ext, gamma = gen_external(sc, rng)
            pilot = sc.beta_true
            for r in (20, 40, 80, 160):
                sel = poisson_sample(osmac_probabilities(ext.X, ext.y, pilot, r), rng)
                fracs.append(np.mean(gamma[sel.indices] != 0))
        assert np.mean(fracs) == pytest.approx(0.79, abs=0.05)


class TestTargetGuided:
    def test_smallest_residuals(self):
        ext, b = _external_with_residuals([5, -1, 3, 0.5])
        np.testing.assert_array_equal(target_guided_select(ext, b, 2).indices, [1, 3])

    def test_all(self):
        ext, b = _external_with_residuals([5, -1, 3, 0.5])
        sel = target_guided_select(ext, b, 4)
        np.testing.assert_array_equal(sel.indices, np.arange(4))
        np.testing.assert_array_equal(sel.weights, 1.0)

    def test_tie_goes_to_lower_index(self):
        res = np.full(9, 10.0)
        res[2], res[7] = 0.5, -0.5
        ext, b = _external_with_residuals(res)
        np.testing.assert_array_equal(target_guided_select(ext, b, 1).indices, [2])

    @pytest.mark.parametrize("r", [0, 5, 1.5])
    def test_bad_size(self, r):
        ext, b = _external_with_residuals([1, 2, 3, 4])
        with pytest.raises(RateOutOfRange):
            target_guided_select(ext, b, r)

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_permutation_equivariant(self, data):
        n = data.draw(st.integers(2, 30))
        res = np.array(data.draw(st.lists(st.floats(-100, 100), min_size=n, max_size=n)))
        # distinct magnitudes so the tie-break does not matter
        res = res + np.arange(n) * 1e-3 * np.sign(res + 0.5)
        if np.unique(np.abs(res)).size < n:
            return
        r = data.draw(st.integers(1, n))
        perm = np.array(data.draw(st.permutations(range(n))))
        ext, b = _external_with_residuals(res)
        pext, _ = _external_with_residuals(res[perm])
        a = target_guided_select(ext, b, r).indices
        p = target_guided_select(pext, b, r).indices
        np.testing.assert_array_equal(np.sort(perm[p]), a)


class TestCombined:
    def setup_method(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(60), rng.normal(size=60)])
        self.ext = RegressionDataset(X, X @ [1.0, 2.0] + rng.normal(size=60))
        self.beta = np.array([1.0, 2.0])

    def test_c_one_is_target_guided(self):
        sel = combined_select(self.ext, self.beta, None, 12, 1.0, np.random.default_rng(0))
        tg = target_guided_select(self.ext, self.beta, 12)
        np.testing.assert_array_equal(sel.indices, tg.indices)

    def test_c_zero_is_poisson(self):
        probs = optimal_probabilities(self.ext.X, 12)
        sel = combined_select(self.ext, self.beta, probs, 12, 0.0, np.random.default_rng(4))
        ref = poisson_sample(probs, np.random.default_rng(4))
        np.testing.assert_array_equal(sel.indices, ref.indices)
        np.testing.assert_array_equal(sel.weights, ref.weights)

    def test_union_sizes_and_collision_weight(self):
        probs = uniform_probabilities(60, 10)
        sel = combined_select(self.ext, self.beta, probs, 20, 0.5, np.random.default_rng(8))
        tg = target_guided_select(self.ext, self.beta, 10)
        rs = poisson_sample(probs, np.random.default_rng(8))
        assert len(sel) == len(np.union1d(tg.indices, rs.indices))
        in_tg = np.isin(sel.indices, tg.indices)
        np.testing.assert_array_equal(sel.weights[in_tg], 1.0)
        np.testing.assert_allclose(sel.weights[~in_tg], 1.0 / 6.0 / (10 / 60))

    def test_wrong_size_probabilities(self):
        probs = uniform_probabilities(60, 12)
        with pytest.raises(ValidationError):
            combined_select(self.ext, self.beta, probs, 20, 0.5, np.random.default_rng(0))

    def test_disjoint_merge(self):
        tg = SubsampleSelection.unit([0, 1, 2], 20)
        rs = SubsampleSelection([5, 9], [3.0, 4.0], 2.0, 0.1)
        out = merge_selections(tg, rs, 20, 5)
        assert len(out) == len(tg) + len(rs)
        np.testing.assert_array_equal(out.weights, [1, 1, 1, 3, 4])
        assert out.rate == pytest.approx(math.fsum([5]) / 20)
