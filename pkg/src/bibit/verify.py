"""Self-check suites behind ``bibit verify``.

Each check returns ``(passed, detail)``; suites run every check even when an
earlier one fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import binarize as bz
from . import bitcore as bc
from . import distill as ds
from .attention import (BI_ATTENTION, SOFTMAX_SIGN, AttentionInputs, AttentionVariant, WeightFn,
                        bi_attention, binary_entropy, binary_weight)
from .model import Transformer, TransformerConfig

SUITES = ("bitops", "gradients", "attention", "distill")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def as_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name, "passed": self.passed, "detail": self.detail}


# ------------------------------------------------------------------ helpers


def random_pm1(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float, index) -> float:
    xp, xm = x.copy(), x.copy()
    xp[index] += h
    xm[index] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def close_relative(analytic: float, numeric: float, rtol: float, atol: float = 1e-9) -> bool:
    return abs(analytic - numeric) <= rtol * max(abs(analytic), abs(numeric)) + atol


def bitwise_equivalence(n_shapes: int, max_dim: int, seed: int, backend: str | None = None) -> tuple[int, int]:
    """Random shapes up to ``max_dim``: count exact matches of both products against float oracles."""
    rng = np.random.default_rng(seed)
    ok_xnor = ok_bamm = 0
    for _ in range(n_shapes):
        m, k, n = (int(v) for v in rng.integers(1, max_dim + 1, size=3))
        a = random_pm1(rng, (m, k))
        b = random_pm1(rng, (n, k))
        got = bc.xnor_matmul(bc.pack(a), bc.pack(b), backend=backend)
        ok_xnor += bool(np.array_equal(got, (a @ b.T).astype(np.int64)))
        z = rng.integers(0, 2, size=(m, k)).astype(np.float64)
        v = random_pm1(rng, (k, n))
        got = bc.bamm(bc.pack(z, bc.Encoding.ZERO_ONE), bc.pack(v), backend=backend)
        ok_bamm += bool(np.array_equal(got, (z @ v).astype(np.int64)))
    return ok_xnor, ok_bamm


def ste_mask_agreement(n_points: int, seed: int, clip: float = 1.0) -> bool:
    """sign/bool backward against the clipped-identity rule, written out independently."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3 * clip, 3 * clip, n_points)
    x[: n_points // 10] = rng.choice([-clip, clip], size=n_points // 10)  # boundary points
    g = rng.normal(size=n_points)
    window = bz.SteWindow(clip)
    expected = np.array([gi if -clip <= xi <= clip else 0.0 for xi, gi in zip(x, g)])
    ok = np.array_equal(bz.sign_bwd(x, g, window), expected) and np.array_equal(bz.bool_bwd(x, g, window), expected)
    t = ad.parameter(x)
    ad.backward(ad.sum(ad.mul(ad.sign_ste(t, window), g)))
    u = ad.parameter(x)
    ad.backward(ad.sum(ad.mul(ad.bool_ste(u, window), g)))
    return bool(ok and np.array_equal(t.grad, expected) and np.array_equal(u.grad, expected))


def model_gradient_check(seed: int = 0, per_tensor: int = 2, h: float = 1e-5, rtol: float = 1e-4):
    """Central differences on a 2-layer full-precision model.

    The loss touches the logits and every probe family, so each parameter
    tensor lies on a differentiated path. Returns ``(n_checked, n_ok, worst)``.
    """
    cfg = TransformerConfig(layers=2, hidden=8, heads=2, ffn_dim=12, vocab=11, max_seq=6, classes=3,
                            init_std=0.5).full_precision()
    model = Transformer.init(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    tokens = rng.integers(3, cfg.vocab, size=(3, cfg.max_seq))
    tokens[2, 4:] = 0
    labels = np.array([0, 1, 2])
    target = rng.normal(size=(3, cfg.max_seq, cfg.hidden))

    def loss_of(m: Transformer):
        out = m.forward(tokens)
        total = ad.cross_entropy(out.logits, labels)
        for p in out.layers:
            total = ad.add(total, ad.mse(p.H, target))
            total = ad.add(total, ad.scale(ad.mean(ad.mul(p.A, p.A)), 0.01))
            total = ad.add(total, ad.mse(p.M, target))
        return total

    loss = loss_of(model)
    ad.zero_grad(model.parameters())
    ad.backward(loss)
    checked = ok = 0
    worst = 0.0
    for name in sorted(model.params):
        p = model.params[name]
        analytic = p.grad.copy()
        flat = rng.choice(p.value.size, size=min(per_tensor, p.value.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, p.shape)
            base = p.value.copy()

            def f_of(v, p=p):
                p.value = v
                return float(loss_of(model).value)

            num = central_difference(f_of, base, h, idx)
            p.value = base
            checked += 1
            good = close_relative(analytic[idx], num, rtol)
            ok += good
            denom = max(abs(analytic[idx]), abs(num), 1e-12)
            worst = max(worst, abs(analytic[idx] - num) / denom if denom > 1e-7 else 0.0)
    return checked, ok, worst


# -------------------------------------------------------------------- suites


def _bitops() -> list[tuple[str, bool, str]]:
    out = []
    rng = np.random.default_rng(0)
    round_trip = True
    padding = True
    for cols in (1, 63, 64, 65, 127, 130):
        m = random_pm1(rng, (3, cols))
        p = bc.pack(m)
        round_trip &= bool(np.array_equal(p.unpack(), m))
        tail = cols % 64
        if tail:
            padding &= bool(np.all(p.words[:, -1] >> np.uint64(tail) == 0))
    out.append(("pack_round_trip", round_trip, "shapes with 1..130 columns"))
    out.append(("padding_bits_zero", padding, "bits past cols are clear"))
    for backend in bc.available_backends():
        ox, ob = bitwise_equivalence(60, 130, seed=1, backend=backend)
        out.append((f"xnor_matches_gemm[{backend}]", ox == 60, f"{ox}/60 exact"))
        out.append((f"bamm_matches_bool_product[{backend}]", ob == 60, f"{ob}/60 exact"))
    z = rng.integers(0, 2, size=(9, 70)).astype(float)
    v = random_pm1(rng, (70, 5))
    pre = bc.bamm_presum(bc.pack(z, bc.Encoding.ZERO_ONE), bc.pack(v))
    out.append(("bamm_presum_even", bool(np.all(pre % 2 == 0)), "pre-shift sum is even"))
    return out


def _gradients() -> list[tuple[str, bool, str]]:
    out = []
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 5))
    for name, fn in (("softmax", lambda t: ad.softmax(t)),
                     ("layer_norm", lambda t: ad.layer_norm(t, ad.DualTensor(np.full(5, 1.3)),
                                                           ad.DualTensor(np.full(5, 0.2)))),
                     ("gelu", ad.gelu), ("tanh", ad.tanh),
                     ("log_softmax", lambda t: ad.log_softmax(t))):
        t = ad.parameter(x0)
        ad.backward(ad.sum(ad.mul(fn(t), w)))
        f = lambda v, fn=fn: float((fn(ad.DualTensor(v)).value * w).sum())  # noqa: E731
        worst = max(abs(t.grad[i] - central_difference(f, x0, 1e-4, i)) / max(abs(t.grad[i]), 1e-8)
                    for i in np.ndindex(x0.shape))
        out.append((f"fd_{name}", worst < 1e-4, f"max rel err {worst:.2e}"))
    out.append(("ste_masks_exact", ste_mask_agreement(10**5, seed=3), "1e5 points incl. boundaries"))
    checked, ok, worst = model_gradient_check()
    out.append(("fd_two_layer_model", ok == checked, f"{ok}/{checked} entries, worst rel {worst:.2e}"))
    t = ad.parameter(x0)
    loss = ad.sum(t)
    ad.backward(loss)
    ad.backward(loss)
    out.append(("accumulation_doubles", bool(np.all(t.grad == 2.0)), "two backward calls"))
    return out


def _attention() -> list[tuple[str, bool, str]]:
    out = []
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 8))
    ss = binary_weight(a, SOFTMAX_SIGN)
    out.append(("softmax_sign_all_ones", bool(np.all(ss == 1) and binary_entropy(ss) == 0.0), "entropy 0"))
    b = binary_weight(a, BI_ATTENTION)
    out.append(("bool_scale_invariant", bool(np.array_equal(b, binary_weight(3.7 * a, BI_ATTENTION))),
                "bool(cA) == bool(A)"))
    same = True
    for _ in range(10):
        n, d = int(rng.integers(2, 12)), int(rng.integers(1, 40))
        mask = rng.random(n) < 0.8
        mask[0] = True
        inputs = AttentionInputs(rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d)), mask)
        same &= bool(np.array_equal(bi_attention(inputs).value, bi_attention(inputs, packed=True).value))
    out.append(("bi_attention_paths_identical", same, "training vs packed inference"))
    preserved = True
    for tau in (0.05, 0.1, 0.2):
        sel = binary_weight(a, AttentionVariant(WeightFn.SOFTMAX_SHIFT, tau=tau)) > 0
        for row, s in zip(a, sel):
            if s.any() and not s.all():
                preserved &= bool(row[s].min() > row[~s].max())
    out.append(("shift_order_preserving", preserved, "selected sets are top-n sets"))
    q = rng.normal(size=(4096, 64))
    k = rng.normal(size=(4096, 64))
    ent = binary_entropy(bz.bool_fwd((bz.sign_fwd(q) * bz.sign_fwd(k)).sum(axis=1)))
    out.append(("bool_entropy_high", ent >= 0.9, f"entropy {ent:.3f} bits"))
    return out


def _distill() -> list[tuple[str, bool, str]]:
    out = []
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 5))
    p = ds.similarity(ad.DualTensor(x)).value
    eig = np.linalg.eigvalsh(p)
    out.append(("similarity_invariants",
                bool(np.allclose(p, p.T) and abs(np.linalg.norm(p) - 1) < 1e-12 and eig.min() > -1e-12),
                "symmetric, unit Frobenius norm, PSD"))
    scaled = ds.similarity(ad.DualTensor(3.0 * x)).value
    out.append(("similarity_scale_invariant", bool(np.allclose(scaled, p, atol=1e-14)), "P(cX) == P(X)"))
    xs = rng.normal(size=2 * 10**5)
    xt = rng.normal(size=xs.size)
    probe = ds.direction_mismatch_probe(xs, xt, 2.0 * (bz.sign_fwd(xs) - xt))
    out.append(("mismatch_probe_one_bit", abs(probe.rate - 0.1417) < 0.005, f"rate {probe.rate:.4f}"))
    layers = [_fake_layer(rng) for _ in range(2)]
    logits = ad.DualTensor(rng.normal(size=(2, 3)))
    full = ds.baseline_loss(layers, layers, logits, logits)
    no_att = ds.baseline_loss(layers, layers, logits, logits, ds.DistillSpec(ds.Scheme.BASELINE_MSE, {"att"}))
    out.append(("baseline_identity_is_sce", abs(full.scalars()["total"] - full.scalars()["pred"]) < 1e-15,
                "zero MSE terms"))
    out.append(("term_exclusion_additive",
                abs(full.scalars()["total"] - full.scalars()["att"] - no_att.scalars()["total"]) < 1e-12,
                "dropping a term removes exactly its value"))
    d = ds.dmd_loss(layers, layers, logits, logits).scalars()
    out.append(("dmd_identity_zero", all(d[k] == 0 for k in ("Q", "K", "V", "hid")), "student == teacher"))
    return out


def _fake_layer(rng):
    from .model import LayerProbes

    t = lambda *s: ad.DualTensor(rng.normal(size=s))  # noqa: E731
    return LayerProbes(t(2, 4, 6), t(2, 4, 6), t(2, 4, 6), t(2, 2, 4, 4), t(2, 2, 4, 4), t(2, 4, 6), t(2, 4, 6))


_RUNNERS = {"bitops": _bitops, "gradients": _gradients, "attention": _attention, "distill": _distill}


def run_suite(suite: str) -> list[CheckResult]:
    names = SUITES if suite == "all" else (suite,)
    results = []
    for name in names:
        if name not in _RUNNERS:
            raise KeyError(f"unknown suite {name!r}")
        for check, passed, detail in _RUNNERS[name]():
            results.append(CheckResult(name, check, bool(passed), detail))
    return results
