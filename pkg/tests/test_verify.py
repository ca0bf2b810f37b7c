import numpy as np
import pytest

from bibit import verify


class TestHelpers:
    def test_central_difference_quadratic(self):
        x = np.array([1.0, 2.0])
        g = verify.central_difference(lambda v: float((v ** 2).sum()), x, 1e-4, 1)
        assert g == pytest.approx(4.0, rel=1e-8)
        assert x.tolist() == [1.0, 2.0]

    def test_close_relative(self):
        assert verify.close_relative(1.0, 1.0 + 1e-6, 1e-4)
        assert not verify.close_relative(1.0, 1.1, 1e-4)
        assert verify.close_relative(0.0, 1e-12, 1e-4)

    def test_bitwise_equivalence(self):
        ok, total = verify.bitwise_equivalence(20, 40, seed=0)
        assert ok == total == 20

    def test_ste_masks(self):
        assert verify.ste_mask_agreement(10_000, seed=0)


class TestSuites:
    @pytest.mark.parametrize("suite", verify.SUITES)
    def test_suite_passes(self, suite):
        results = verify.run_suite(suite)
        assert results and all(r.suite == suite for r in results)
        failed = [r.name for r in results if not r.passed]
        assert not failed

    def test_unknown(self):
        with pytest.raises(KeyError):
            verify.run_suite("nope")

    def test_as_dict(self):
        r = verify.CheckResult("s", "n", True, "d")
        assert r.as_dict() == {"suite": "s", "name": "n", "passed": True, "detail": "d"}
