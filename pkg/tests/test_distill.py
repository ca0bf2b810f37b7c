import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bibit import autodiff as ad
from bibit import binarize as bz
from bibit.distill import (
    DistillSpec, Scheme, baseline_loss, direction_mismatch_probe, distill_loss, dmd_loss, similarity,
)
from bibit.errors import ConfigError, DegenerateInputError, ShapeError
from bibit.model import LayerProbes, Transformer, TransformerConfig


def probes(rng, b=2, n=4, d=6, h=2, scale=1.0):
    t = lambda *s: ad.parameter(scale * rng.standard_normal(s))  # noqa: E731
    return LayerProbes(t(b, n, d), t(b, n, d), t(b, n, d), t(b, h, n, n), t(b, h, n, n), t(b, n, d), t(b, n, d))


def clone(p: LayerProbes) -> LayerProbes:
    return LayerProbes(*(ad.DualTensor(getattr(p, f).value.copy()) for f in ("Q", "K", "V", "A", "B_A", "M", "H")))


mats = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-3, 3, allow_nan=False)).filter(lambda x: np.abs(x).sum() > 1e-3)


class TestSpec:
    def test_terms(self):
        assert DistillSpec(Scheme.BASELINE_MSE).terms == ("att", "mha", "hid", "pred")
        assert DistillSpec(Scheme.DMD).terms == ("Q", "K", "V", "hid", "pred")
        assert DistillSpec("dmd", frozenset({"Q"})).terms == ("K", "V", "hid", "pred")

    def test_errors(self):
        with pytest.raises(ConfigError):
            DistillSpec("nope")
        with pytest.raises(ConfigError):
            DistillSpec(Scheme.DMD, frozenset({"bogus"}))


class TestSimilarity:
    def test_identity(self):
        np.testing.assert_allclose(similarity(ad.DualTensor(np.eye(2))).value, np.eye(2) / math.sqrt(2))

    @given(mats)
    def test_invariants(self, x):
        p = similarity(ad.DualTensor(x)).value
        np.testing.assert_allclose(p, p.T, atol=1e-12)
        assert np.linalg.norm(p) == pytest.approx(1.0)
        assert np.linalg.eigvalsh(p).min() >= -1e-9

    @given(mats, st.floats(0.01, 100))
    def test_scale_invariant(self, x, c):
        np.testing.assert_allclose(similarity(ad.DualTensor(c * x)).value, similarity(ad.DualTensor(x)).value,
                                   atol=1e-9)

    def test_zero_rejected(self):
        with pytest.raises(DegenerateInputError):
            similarity(ad.DualTensor(np.zeros((3, 2))))

    def test_gradient_matches_finite_differences(self, rng):
        x0 = rng.standard_normal((4, 3))
        pt = similarity(ad.DualTensor(rng.standard_normal((4, 3)))).value

        def loss(v):
            return ad.l2norm(ad.sub(similarity(v), pt))

        x = ad.parameter(x0.copy())
        ad.backward(loss(x))
        num = np.zeros_like(x0)
        h = 1e-6
        for i in np.ndindex(x0.shape):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += h
            xm[i] -= h
            num[i] = (float(loss(ad.DualTensor(xp)).value) - float(loss(ad.DualTensor(xm)).value)) / (2 * h)
        assert np.max(np.abs(x.grad - num) / np.maximum(np.abs(num), 1e-6)) < 1e-4


class TestBaseline:
    def test_identical_probes_give_entropy(self, rng):
        s = [probes(rng)]
        y = rng.standard_normal((2, 3))
        out = baseline_loss(s, [clone(p) for p in s], ad.DualTensor(y), y)
        p = np.exp(y) / np.exp(y).sum(axis=1, keepdims=True)
        assert out.scalars()["total"] == pytest.approx(-(p * np.log(p)).sum(axis=1).mean())

    def test_uniform_logits(self, rng):
        s = [probes(rng)]
        out = baseline_loss(s, [clone(p) for p in s], ad.DualTensor(np.zeros((1, 2))), np.zeros((1, 2)))
        assert out.scalars()["pred"] == pytest.approx(math.log(2))

    def test_additivity(self, rng):
        s, t = [probes(rng), probes(rng)], [probes(rng), probes(rng)]
        y, yt = ad.DualTensor(rng.standard_normal((2, 3))), rng.standard_normal((2, 3))
        full = baseline_loss(s, t, y, yt)
        less = baseline_loss(s, t, y, yt, DistillSpec(Scheme.BASELINE_MSE, frozenset({"att"})))
        want = sum(np.mean((a.A.value - b.A.value) ** 2) for a, b in zip(s, t))
        assert full.scalars()["total"] - less.scalars()["total"] == pytest.approx(want)
        for k in less.terms:
            assert less.scalars()[k] == full.scalars()[k]

    def test_layer_mismatch(self, rng):
        with pytest.raises(ShapeError):
            baseline_loss([probes(rng)], [], ad.DualTensor(np.zeros((1, 2))), np.zeros((1, 2)))


def reference_dmd(s_layers, t_layers, y, yt):
    """Straight-line evaluation of the direction-matching loss."""
    def sim(x):
        g = x @ x.T
        return g / np.sqrt((g * g).sum())

    total = 0.0
    b = y.shape[0]
    for f in "QKV":
        for s, t in zip(s_layers, t_layers):
            total += sum(np.sqrt(((sim(getattr(s, f).value[i]) - sim(getattr(t, f).value[i])) ** 2).sum())
                         for i in range(b)) / b
    for s, t in zip(s_layers, t_layers):
        for i in range(b):
            hs, ht = s.H.value[i], t.H.value[i]
            total += np.sqrt(((hs / np.linalg.norm(hs) - ht / np.linalg.norm(ht)) ** 2).sum()) / b
    pt = np.exp(yt) / np.exp(yt).sum(axis=1, keepdims=True)
    ls = y - np.log(np.exp(y).sum(axis=1, keepdims=True))
    return total - (pt * ls).sum(axis=1).mean()


class TestDmd:
    def test_identity_is_zero(self, rng):
        s = [probes(rng)]
        out = dmd_loss(s, [clone(p) for p in s], ad.DualTensor(np.zeros((2, 2))), np.zeros((2, 2))).scalars()
        assert out["Q"] == out["K"] == out["V"] == out["hid"] == 0.0

    def test_scaled_q_contributes_zero(self, rng):
        s = probes(rng)
        t = clone(s)
        t.Q = ad.DualTensor(3.0 * s.Q.value)
        out = dmd_loss([s], [t], ad.DualTensor(np.zeros((2, 2))), np.zeros((2, 2))).scalars()
        assert out["Q"] == pytest.approx(0.0, abs=1e-12)

    def test_matches_reference(self, rng):
        s, t = [probes(rng), probes(rng)], [probes(rng), probes(rng)]
        y, yt = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        got = dmd_loss(s, t, ad.DualTensor(y), yt).scalars()["total"]
        assert got == pytest.approx(reference_dmd(s, t, y, yt), rel=1e-12)

    def test_non_negative(self, rng):
        for _ in range(5):
            out = dmd_loss([probes(rng)], [probes(rng)], ad.DualTensor(rng.standard_normal((2, 2))),
                           rng.standard_normal((2, 2)))
            assert all(v >= 0 for v in out.scalars().values())

    def test_padding_rows_ignored(self, rng):
        s, t = probes(rng), probes(rng)
        mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], bool)
        y = ad.DualTensor(np.zeros((2, 2)))
        a = dmd_loss([s], [t], y, np.zeros((2, 2)), mask=mask).scalars()["total"]
        s.Q.value[0, 3] += 100.0
        s.H.value[0, 3] -= 50.0
        b = dmd_loss([s], [t], y, np.zeros((2, 2)), mask=mask).scalars()["total"]
        assert a == pytest.approx(b)

    def test_zero_hidden_rejected(self, rng):
        s = probes(rng)
        s.H = ad.DualTensor(np.zeros_like(s.H.value))
        with pytest.raises(DegenerateInputError):
            dmd_loss([s], [probes(rng)], ad.DualTensor(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_dispatch_on_models(self, rng):
        cfg = TransformerConfig(hidden=8, heads=2, ffn_dim=8, vocab=10, max_seq=5)
        tok = rng.integers(1, 10, size=(2, 5))
        t = Transformer.init(cfg.full_precision(), 0).forward(tok)
        s = Transformer.init(cfg, 0).forward(tok)
        assert set(distill_loss(DistillSpec(), s, t).terms) == {"Q", "K", "V", "hid", "pred"}
        assert set(distill_loss(DistillSpec(Scheme.BASELINE_MSE), s, t).terms) == {"att", "mha", "hid", "pred"}


class TestMismatchProbe:
    def test_identical_is_zero(self, rng):
        x = rng.standard_normal(100)
        assert direction_mismatch_probe(x, x, rng.standard_normal(100)).rate == 0.0

    def test_one_bit_rate(self, rng):
        x, x_t = rng.standard_normal(200_000), rng.standard_normal(200_000)
        # student holds sign(X); the latent update follows -(X - X_T)
        probe = direction_mismatch_probe(bz.quantize_q(x, bz.QuantizerSpec(1)), x_t, x - x_t)
        assert abs(probe.rate - 0.1417) < 0.004

    def test_grad_homogeneity(self, rng):
        x, x_t, g = (rng.standard_normal(500) for _ in range(3))
        a = direction_mismatch_probe(x, x_t, g)
        b = direction_mismatch_probe(x, x_t, 2 * g)
        assert a.rate == b.rate
        assert b.match_mag == pytest.approx(2 * a.match_mag)
        assert b.mismatch_mag == pytest.approx(2 * a.mismatch_mag)

    def test_empty_mismatch_set_is_nan(self):
        probe = direction_mismatch_probe(np.zeros(3), np.ones(3), -np.ones(3))
        assert probe.rate == 0.0 and math.isnan(probe.mismatch_mag)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            direction_mismatch_probe(np.zeros(3), np.zeros(2), np.zeros(3))
