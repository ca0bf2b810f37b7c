"""Scalar and tensor quantizers with their straight-through gradients."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .bitcore import Encoding, PackedBitMatrix, pack
from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class SteWindow:
    """Half-width of the interval where the surrogate gradient passes through."""

    clip: float = 1.0

    def __post_init__(self):
        if not self.clip > 0:
            raise DomainError(f"STE clip must be positive, got {self.clip}")


DEFAULT_WINDOW = SteWindow()


def _as_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise DomainError("NaN entry")
    return x


def sign_fwd(x) -> np.ndarray:
    """+1 where x >= 0, -1 elsewhere (so sign(0) == +1)."""
    x = _as_finite(x)
    return np.where(x >= 0, 1.0, -1.0)


def bool_fwd(x) -> np.ndarray:
    """1 where x >= 0, 0 elsewhere."""
    x = _as_finite(x)
    return np.where(x >= 0, 1.0, 0.0)


def ste_mask(x, window: SteWindow = DEFAULT_WINDOW) -> np.ndarray:
    return (np.abs(np.asarray(x, dtype=np.float64)) <= window.clip).astype(np.float64)


def sign_bwd(x, upstream, window: SteWindow = DEFAULT_WINDOW) -> np.ndarray:
    """Pass ``upstream`` where |x| <= clip (boundary included), zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ShapeError(f"x {x.shape} and upstream {upstream.shape} differ")
    return upstream * ste_mask(x, window)


bool_bwd = sign_bwd


def weight_signs(w) -> tuple[np.ndarray, float]:
    """Dense zero-mean sign pattern of ``w`` and its l1 scaling factor."""
    w = _as_finite(w)
    if w.size == 0:
        raise DomainError("cannot binarize an empty weight")
    if not np.isfinite(w).all():
        raise DomainError("weight has infinite entries")
    signs = sign_fwd(w - w.mean())
    alpha = float(np.abs(w).sum() / w.size)
    return signs, alpha


def binarize_weight(w) -> tuple[PackedBitMatrix, float]:
    """Pack ``sign(W - mean(W))`` and return it with ``alpha = ||W||_1 / n``."""
    signs, alpha = weight_signs(w)
    if signs.ndim == 1:
        signs = signs[None, :]
    return pack(signs, Encoding.PLUS_MINUS_ONE), alpha


def row_signs(e) -> tuple[np.ndarray, np.ndarray]:
    """Per-row zero-mean signs and per-row l1 scales (used for word embeddings)."""
    e = _as_finite(e)
    if e.shape[-1] == 0:
        raise DomainError("cannot binarize empty rows")
    signs = sign_fwd(e - e.mean(axis=-1, keepdims=True))
    alpha = np.abs(e).mean(axis=-1, keepdims=True)
    return signs, alpha


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int
    range: float = 1.0

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 1 <= self.bits <= 8:
            raise DomainError(f"bits must be an integer in [1, 8], got {self.bits!r}")
        if not self.range > 0:
            raise DomainError(f"range must be positive, got {self.range}")


def quantize_q(x, spec: QuantizerSpec) -> np.ndarray:
    """Symmetric Q-bit quantizer on [-L, L].

    For Q >= 2: clamp to +-L outside the range, otherwise round half up onto
    the grid ``m * 2L / (2^Q - 1)`` (the top grid point also clamps to L).
    For Q = 1 the grid formula collapses most of the range onto 0, so the
    1-bit quantizer is ``L * sign(x)`` instead.
    """
    x = _as_finite(x)
    big_l = float(spec.range)
    if spec.bits == 1:
        return big_l * sign_fwd(x)
    levels = 2**spec.bits - 1
    step = 2.0 * big_l / levels
    q = np.floor(levels * x / (2.0 * big_l) + 0.5) * step
    q = np.where(x > big_l, big_l, q)
    q = np.where(x < -big_l, -big_l, q)
    return np.clip(q, -big_l, big_l)


class ThresholdKind(enum.Enum):
    FIXED_ZERO = "fixed_zero"
    ASYM = "asym"
    MEAN_SHIFT = "mean_shift"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class Threshold:
    kind: ThresholdKind
    p: float | None = None

    def __post_init__(self):
        if self.kind is ThresholdKind.QUANTILE:
            if self.p is None or not 0.0 < self.p < 1.0:
                raise DomainError(f"quantile level must lie in (0, 1), got {self.p!r}")


def row_thresholds(x, threshold: Threshold, mask=None) -> np.ndarray:
    """Per-row threshold (shape ``x.shape[:-1] + (1,)``) over unmasked entries."""
    x = _as_finite(x)
    if x.size == 0:
        raise DomainError("empty input")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    kind = threshold.kind
    if kind is ThresholdKind.FIXED_ZERO:
        return np.zeros(x.shape[:-1] + (1,))
    masked = np.where(mask, x, np.nan)
    if kind is ThresholdKind.MEAN_SHIFT:
        t = np.nanmean(masked, axis=-1, keepdims=True)
    elif kind is ThresholdKind.QUANTILE:
        t = np.nanquantile(masked, threshold.p, axis=-1, keepdims=True)
    elif kind is ThresholdKind.ASYM:
        t = 0.5 * (np.nanmax(masked, axis=-1, keepdims=True) + np.nanmin(masked, axis=-1, keepdims=True))
    else:
        raise DomainError(f"unknown threshold kind {kind!r}")
    return t


def threshold_variants(x, threshold: Threshold, mask=None) -> np.ndarray:
    """Binarize each row of ``x`` to {0, 1} against a per-row threshold.

    FIXED_ZERO is ``bool(x)``; MEAN_SHIFT and QUANTILE are ``bool(x - t)`` with
    the row mean or p-quantile; ASYM sends entries at or above the max/min
    midpoint to 1 (the row max) and the rest to 0 (the row min). Masked entries
    are left out of the statistics and come out as 0.
    """
    x = _as_finite(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    with warnings.catch_warnings():
        # fully masked rows yield a NaN threshold and binarize to 0
        warnings.simplefilter("ignore", RuntimeWarning)
        t = row_thresholds(x, threshold, mask)
    out = bool_fwd(np.nan_to_num(x - t, nan=-1.0))
    if mask is not None:
        out = np.where(mask, out, 0.0)
    return out

