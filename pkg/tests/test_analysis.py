import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bibit import analysis as an
from bibit.errors import DomainError


class TestMismatch:
    def test_rows_and_determinism(self):
        cfg = an.MismatchSimConfig(samples=20_000, seed=3)
        rows = an.simulate_mismatch(cfg)
        assert [r["Q"] for r in rows] == list(range(1, 9))
        assert rows == an.simulate_mismatch(cfg)

    @settings(max_examples=5)
    @given(st.integers(0, 2**31))
    def test_monotone_in_q(self, seed):
        rates = [r["rate"] for r in an.simulate_mismatch(an.MismatchSimConfig(samples=100_000, seed=seed))]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_one_bit_closed_form(self):
        # with q(x) = sign(x), the mismatch is P(X_T between X and sign X); quadrature is exact here
        assert an.mismatch_rate_quadrature(1) == pytest.approx(0.14169, abs=5e-5)

    def test_quadrature_matches_simulation(self):
        rows = an.simulate_mismatch(an.MismatchSimConfig(samples=200_000, q_values=(1, 3, 8), seed=1))
        for r in rows:
            assert abs(r["rate"] - an.mismatch_rate_quadrature(r["Q"])) < 0.004

    def test_quadrature_monotone(self):
        vals = [an.mismatch_rate_quadrature(q) for q in range(1, 9)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("kw", [{"samples": 10}, {"q_values": ()}, {"q_values": (9,)}, {"sigma1": 0.0},
                                    {"shards": 0}])
    def test_config_errors(self, kw):
        with pytest.raises(DomainError):
            an.MismatchSimConfig(**kw)


class TestThreshold:
    def test_k2_is_half(self):
        tau = an.threshold_curve([2], samples=20_000)[0]["tau"]
        assert abs(tau - 0.5) < 0.01

    def test_strictly_decreasing(self):
        taus = [r["tau"] for r in an.threshold_curve([2, 4, 8, 16, 32], samples=20_000)]
        assert all(a > b for a, b in zip(taus, taus[1:]))

    def test_errors(self):
        with pytest.raises(DomainError):
            an.threshold_curve([1])
        with pytest.raises(DomainError):
            an.threshold_curve([2], samples=0)


class TestScores:
    def test_d2_pmf(self):
        res = an.score_distribution_check(2, samples=100_000)
        np.testing.assert_allclose(res.pmf, [0.25, 0.5, 0.25], atol=0.01)

    def test_d16_chi_square(self):
        res = an.score_distribution_check(16, samples=200_000)
        assert res.p_value > 0.01

    def test_d64_std(self):
        res = an.score_distribution_check(64, samples=100_000)
        assert abs(res.std - 8.0) < 0.4

    def test_multiword_rows(self):
        res = an.score_distribution_check(100, samples=50_000)
        assert abs(res.std - 10.0) < 0.5
        assert np.all(res.pmf[1::2] >= 0) and res.support[0] == -100

    def test_pool_bins(self):
        obs, exp = an._pool_bins(np.array([1.0, 2, 50, 3, 1]), np.array([1.0, 3, 40, 4, 2]))
        assert obs.tolist() == [53, 4] and exp.tolist() == [44, 6]

    def test_errors(self):
        with pytest.raises(DomainError):
            an.score_distribution_check(0)


class TestBalance:
    def test_shift_one_sigma(self):
        res = an.balance_check(an.gaussian_weights(100_000), shift=1.0)
        assert abs(res.before - stats.norm.cdf(1.0)) < 0.005
        assert 0.49 <= res.after <= 0.51
        assert res.entropy_after >= 0.999

    def test_no_shift(self):
        res = an.balance_check(an.gaussian_weights(100_000, seed=1))
        assert abs(res.before - 0.5) < 0.01 and abs(res.after - 0.5) < 0.01

    def test_too_few(self):
        with pytest.raises(DomainError):
            an.balance_check(np.zeros(10))


class TestOrder:
    @pytest.mark.parametrize("tau", [0.05, 0.1, 0.2])
    def test_preserved(self, tau):
        assert an.order_preservation_check(8, tau, samples=2000).ok

    def test_errors(self):
        with pytest.raises(DomainError):
            an.order_preservation_check(1, 0.1)


class TestEntropyAblation:
    def test_table(self):
        rows = an.entropy_ablation([0.1, 0.3, 0.5, 0.7, 0.9])
        assert [round(r["entropy"], 2) for r in rows] == [0.47, 0.88, 1.0, 0.88, 0.47]

    @given(st.integers(1, 9999))
    def test_symmetric_exact(self, k):
        p = k / 10_000
        a, b = an.entropy_ablation([p]), an.entropy_ablation([1 - p])
        assert a[0]["entropy"] == b[0]["entropy"]

    def test_matches_analytic(self):
        for r in an.entropy_ablation([0.25]):
            assert r["entropy"] == pytest.approx(-(0.25 * math.log2(0.25) + 0.75 * math.log2(0.75)))

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.5])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            an.entropy_ablation([p])
