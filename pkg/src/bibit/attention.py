"""Attention-weight binarization schemes and the binary-entropy measure.

Every scheme maps the (scaled) attention score ``A`` to a weight matrix that
multiplies the binarized values:

==================  =====================================  ==========
weight_fn           weight                                 values
==================  =====================================  ==========
SOFTMAX             softmax(A) (full precision teacher)    [0, 1]
SOFTMAX_SIGN        sign(softmax(A))                       {-1, +1}
SOFTMAX_BOOL        bool(softmax(A))                       {0, 1}
SOFTMAX_SHIFT       sign(softmax(A) - tau)                 {-1, +1}
BI_ATTENTION_BOOL   bool(A)                                {0, 1}
HARD_SIGN           sign(A)                                {-1, +1}
MEAN_SHIFT          bool(softmax(A) - row mean)            {0, 1}
QUANTILE            bool(softmax(A) - row p-quantile)      {0, 1}
ASYM                max/min midpoint split of softmax(A)   {0, 1}
==================  =====================================  ==========

Masked key positions are excluded: they get weight 0 in every scheme and are
left out of thresholds and entropy statistics.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import binarize as bz
from . import bitcore as bc
from .autodiff import DualTensor
from .errors import ConfigError, DomainError, ShapeError


class WeightFn(enum.Enum):
    SOFTMAX = "softmax"
    SOFTMAX_SIGN = "softmax_sign"
    SOFTMAX_BOOL = "softmax_bool"
    SOFTMAX_SHIFT = "softmax_shift"
    BI_ATTENTION_BOOL = "bi_attention_bool"
    HARD_SIGN = "hard_sign"
    MEAN_SHIFT = "mean_shift"
    QUANTILE = "quantile"
    ASYM = "asym"


_PM1 = {WeightFn.SOFTMAX_SIGN, WeightFn.SOFTMAX_SHIFT, WeightFn.HARD_SIGN}
_THRESHOLDED = {
    WeightFn.MEAN_SHIFT: bz.ThresholdKind.MEAN_SHIFT,
    WeightFn.QUANTILE: bz.ThresholdKind.QUANTILE,
    WeightFn.ASYM: bz.ThresholdKind.ASYM,
}


@dataclass(frozen=True)
class AttentionVariant:
    weight_fn: WeightFn
    tau: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.weight_fn is WeightFn.SOFTMAX_SHIFT and self.tau is None:
            raise ConfigError("SOFTMAX_SHIFT needs a shift tau")
        if self.weight_fn is WeightFn.QUANTILE:
            if self.p is None:
                raise ConfigError("QUANTILE needs a quantile level p")
            if not 0.0 < self.p < 1.0:
                raise DomainError(f"quantile level must lie in (0, 1), got {self.p}")

    @property
    def binarized(self) -> bool:
        return self.weight_fn is not WeightFn.SOFTMAX

    @property
    def plus_minus_one(self) -> bool:
        return self.weight_fn in _PM1

    @property
    def maximize_entropy(self) -> bool:
        """Whether the threshold targets a balanced binarized weight.

        Thresholding the raw score at 0 does (the score is symmetric around 0
        once queries and keys are balanced), as does a median split. Fixed
        thresholds on softmax outputs do not.
        """
        if self.weight_fn in (WeightFn.BI_ATTENTION_BOOL, WeightFn.HARD_SIGN):
            return True
        return self.weight_fn is WeightFn.QUANTILE and self.p == 0.5

    @property
    def name(self) -> str:
        if self.weight_fn is WeightFn.SOFTMAX_SHIFT:
            return f"{self.weight_fn.value}:{self.tau:g}"
        if self.weight_fn is WeightFn.QUANTILE:
            return f"{self.weight_fn.value}:{self.p:g}"
        return self.weight_fn.value

    @classmethod
    def parse(cls, text: str) -> "AttentionVariant":
        """Parse ``"bi_attention_bool"``, ``"quantile:0.5"``, ``"softmax_shift:0.05"`` ..."""
        head, _, arg = text.strip().partition(":")
        try:
            fn = WeightFn(head.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown attention variant {text!r}") from None
        value = float(arg) if arg else None
        if fn is WeightFn.SOFTMAX_SHIFT:
            return cls(fn, tau=value)
        if fn is WeightFn.QUANTILE:
            return cls(fn, p=value)
        if value is not None:
            raise ConfigError(f"variant {head!r} takes no argument")
        return cls(fn)

    @classmethod
    def table3(cls, maximize_entropy: bool, method: str) -> "AttentionVariant":
        """The four cells of the entropy-maximization x {sign, bool} grid."""
        method = method.lower()
        if method not in ("sign", "bool"):
            raise ConfigError(f"method must be 'sign' or 'bool', got {method!r}")
        if maximize_entropy:
            return cls(WeightFn.HARD_SIGN if method == "sign" else WeightFn.BI_ATTENTION_BOOL)
        return cls(WeightFn.SOFTMAX_SIGN if method == "sign" else WeightFn.SOFTMAX_BOOL)


SOFTMAX = AttentionVariant(WeightFn.SOFTMAX)
SOFTMAX_SIGN = AttentionVariant(WeightFn.SOFTMAX_SIGN)
BI_ATTENTION = AttentionVariant(WeightFn.BI_ATTENTION_BOOL)


# ------------------------------------------------------------------ numpy API


def attention_score(b_q, b_k, mask=None, packed: bool = False) -> np.ndarray:
    """Scaled score ``(B_Q (x) B_K^T) / sqrt(D)`` for +-1 matrices [N x D].

    Columns where ``mask`` is False carry the negative sentinel.
    """
    b_q = np.asarray(b_q, dtype=np.float64)
    b_k = np.asarray(b_k, dtype=np.float64)
    if b_q.ndim != 2 or b_k.ndim != 2:
        raise ShapeError("attention_score expects 2-D operands")
    if b_q.shape[1] != b_k.shape[1]:
        raise ShapeError(f"feature sizes differ: {b_q.shape[1]} vs {b_k.shape[1]}")
    d = b_q.shape[1]
    if d == 0:
        raise DomainError("feature dimension must be positive")
    if packed:
        raw = bc.xnor_matmul(bc.pack(b_q), bc.pack(b_k)).astype(np.float64)
    else:
        raw = b_q @ b_k.T
    a = raw / math.sqrt(d)
    if mask is not None:
        a = np.where(np.asarray(mask, dtype=bool)[None, :], a, ad.NEG_SENTINEL)
    return a


def _softmax_np(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def binary_weight(a, variant: AttentionVariant, mask=None) -> np.ndarray:
    """Forward-only weight function; see the module table."""
    t = binary_weight_t(DualTensor(a), variant, mask)
    return t.value


def binary_entropy(b, mask=None) -> float:
    """Entropy in bits of the positive-symbol frequency of a binary tensor."""
    b = np.asarray(b, dtype=np.float64)
    if mask is not None:
        b = b[np.broadcast_to(np.asarray(mask, dtype=bool), b.shape)]
    if b.size == 0:
        raise DomainError("entropy of an empty tensor")
    pos = b == 1
    neg = (b == 0) | (b == -1)
    if not np.all(pos | neg):
        raise DomainError("entropy needs a binary tensor with values in {0,1} or {-1,1}")
    if np.any(b == 0) and np.any(b == -1):
        raise DomainError("tensor mixes the {0,1} and {-1,1} alphabets")
    n_pos = int(np.count_nonzero(pos))
    # the rarer symbol's count keeps H(p) == H(1 - p) exact
    return entropy_from_fraction(min(n_pos, b.size - n_pos) / b.size)


def entropy_from_fraction(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def head_entropies(b_a: np.ndarray, key_mask=None) -> np.ndarray:
    """Entropy per head of a weight tensor shaped [batch, heads, N, N]."""
    b_a = np.asarray(b_a)
    if key_mask is None:
        sel = np.ones(b_a.shape, dtype=bool)
    else:
        sel = np.broadcast_to(np.asarray(key_mask, dtype=bool)[:, None, None, :], b_a.shape)
    return np.array([binary_entropy(b_a[:, h], sel[:, h]) for h in range(b_a.shape[1])])


# -------------------------------------------------------------- tape API


def binary_weight_t(a: DualTensor, variant: AttentionVariant, key_mask=None,
                    window: bz.SteWindow = bz.DEFAULT_WINDOW) -> DualTensor:
    """Weight function on a recorded score; ``key_mask`` broadcasts over rows."""
    fn = variant.weight_fn
    keep = None
    if key_mask is not None:
        keep = np.broadcast_to(np.asarray(key_mask, dtype=bool), a.shape)

    def soft() -> DualTensor:
        masked = ad.masked_fill_logits(a, keep) if keep is not None else a
        return ad.softmax(masked, axis=-1)

    if fn is WeightFn.SOFTMAX:
        return soft()
    if fn is WeightFn.SOFTMAX_SIGN:
        w = ad.sign_ste(soft(), window)
    elif fn is WeightFn.SOFTMAX_BOOL:
        w = ad.bool_ste(soft(), window)
    elif fn is WeightFn.SOFTMAX_SHIFT:
        w = ad.sign_ste(ad.sub(soft(), variant.tau), window)
    elif fn is WeightFn.BI_ATTENTION_BOOL:
        w = ad.bool_ste(a, window)
    elif fn is WeightFn.HARD_SIGN:
        w = ad.sign_ste(a, window)
    elif fn in _THRESHOLDED:
        s = soft()
        thr = bz.Threshold(_THRESHOLDED[fn], variant.p)
        t = bz.row_thresholds(s.value, thr, keep)
        w = ad.bool_ste(ad.sub(s, np.nan_to_num(t, nan=np.inf)), window)
    else:
        raise ConfigError(f"unhandled weight function {fn!r}")
    if keep is not None:
        w = ad.mul(w, keep.astype(np.float64))
    return w


def _split_heads(x: DualTensor, heads: int) -> DualTensor:
    b, n, d = x.shape
    return ad.transpose(ad.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: DualTensor) -> DualTensor:
    b, h, n, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


@dataclass
class HeadOutputs:
    context: DualTensor  # [B, N, D]
    score: DualTensor  # [B, h, N, N], before masking
    weight: DualTensor  # [B, h, N, N]


def attend(q: DualTensor, k: DualTensor, v: DualTensor, key_mask, variant: AttentionVariant,
           heads: int, window: bz.SteWindow = bz.DEFAULT_WINDOW, packed: bool = False) -> HeadOutputs:
    """Multi-head attention core on [B, N, D] queries, keys and values.

    With a binarized variant Q, K, V pass through ``sign`` first. ``packed``
    evaluates the binary products with the bit kernels instead of float
    matmuls (forward only; values are identical).
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"q {q.shape}, k {k.shape}, v {v.shape} must match")
    b, n, d = q.shape
    if d % heads:
        raise ConfigError(f"hidden size {d} not divisible by {heads} heads")
    if key_mask is None:
        key_mask = np.ones((b, n), dtype=bool)
    key_mask = np.asarray(key_mask, dtype=bool)
    if not key_mask.any(axis=1).all():
        raise DomainError("every sequence needs at least one unmasked position")
    dh = d // heads
    binary = variant.binarized
    if binary:
        q, k, v = ad.sign_ste(q, window), ad.sign_ste(k, window), ad.sign_ste(v, window)
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    keep = key_mask[:, None, None, :]
    if packed and binary:
        return _attend_packed(qh, kh, vh, key_mask, variant, window)
    score = ad.scale(ad.matmul(qh, ad.swapaxes(kh)), 1.0 / math.sqrt(dh))
    weight = binary_weight_t(score, variant, keep, window)
    ctx = ad.matmul(weight, vh)
    return HeadOutputs(_merge_heads(ctx), score, weight)


def _attend_packed(qh: DualTensor, kh: DualTensor, vh: DualTensor, key_mask: np.ndarray,
                   variant: AttentionVariant, window: bz.SteWindow) -> HeadOutputs:
    b, h, n, dh = qh.shape
    score = np.empty((b, h, n, n))
    for bi in range(b):
        for hi in range(h):
            raw = bc.xnor_matmul(bc.pack(qh.value[bi, hi]), bc.pack(kh.value[bi, hi]))
            score[bi, hi] = raw / math.sqrt(dh)
    keep = key_mask[:, None, None, :]
    weight = binary_weight_t(DualTensor(score), variant, keep, window).value
    ctx = np.empty((b, h, n, dh))
    for bi in range(b):
        cols = np.flatnonzero(key_mask[bi])
        for hi in range(h):
            w = weight[bi, hi][:, cols]
            vals = bc.pack(vh.value[bi, hi][cols])
            if variant.plus_minus_one:
                ctx[bi, hi] = bc.xnor_matmul(bc.pack(w), bc.transpose(vals))
            else:
                ctx[bi, hi] = bc.bamm(bc.pack(w, bc.Encoding.ZERO_ONE), vals)
    return HeadOutputs(_merge_heads(DualTensor(ctx)), DualTensor(score), DualTensor(weight))


# ------------------------------------------------------------ single head


@dataclass
class AttentionInputs:
    q: DualTensor
    k: DualTensor
    v: DualTensor
    mask: np.ndarray | None = None

    def __post_init__(self):
        for name in ("q", "k", "v"):
            t = getattr(self, name)
            if not isinstance(t, DualTensor):
                setattr(self, name, DualTensor(t))
        if self.q.ndim != 2 or self.q.shape != self.k.shape or self.q.shape != self.v.shape:
            raise ShapeError("q, k, v must be matching [N x D] matrices")
        if self.q.shape[1] == 0:
            raise DomainError("feature dimension must be positive")
        n = self.q.shape[0]
        if self.mask is None:
            self.mask = np.ones(n, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n,):
            raise ShapeError(f"mask must have length {n}")
        if not self.mask.any():
            raise DomainError("at least one position must be unmasked")


def bi_attention(inputs: AttentionInputs, packed: bool = False,
                 window: bz.SteWindow = bz.DEFAULT_WINDOW) -> DualTensor:
    """``bool(sign(Q) sign(K)^T / sqrt(D)) [BAMM] sign(V)`` on one head, [N x D]."""
    lift = lambda t: ad.reshape(t, (1,) + t.shape)  # noqa: E731
    out = attend(lift(inputs.q), lift(inputs.k), lift(inputs.v), inputs.mask[None, :],
                 BI_ATTENTION, heads=1, window=window, packed=packed)
    return ad.reshape(out.context, inputs.q.shape)
