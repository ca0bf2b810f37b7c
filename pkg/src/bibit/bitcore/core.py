"""Packed 1-bit matrices and the two bitwise matrix products.

Layout: row-major, 64 logical columns per ``uint64`` word, LSB first (column
``j`` lives in word ``j // 64`` at bit ``j % 64``). Bits past ``cols`` in the
last word of every row are always zero.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError
from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

WORD_BITS = 64
# int32 accumulators hold +-k exactly up to this inner dimension
MAX_INNER = 1 << 30

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

if os.environ.get("BIBIT_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _impl(backend: str | None):
    name = BACKEND if backend is None else backend
    try:
        return _BACKENDS[name]
    except KeyError:
        raise DomainError(
            f"unknown or unavailable backend {name!r}; have {available_backends()}"
        ) from None


class Encoding(enum.Enum):
    """How a set bit maps to a logical value."""

    PLUS_MINUS_ONE = "pm1"  # bit 1 -> +1, bit 0 -> -1
    ZERO_ONE = "01"  # literal bit


@dataclass(frozen=True)
class PackedBitMatrix:
    rows: int
    cols: int
    encoding: Encoding
    words: np.ndarray

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.shape != (self.rows, n_words(self.cols)):
            raise ShapeError(
                f"words shape {words.shape} does not fit a {self.rows}x{self.cols} matrix"
            )
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def unpack(self) -> np.ndarray:
        return unpack(self)

    def __eq__(self, other):
        if not isinstance(other, PackedBitMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.encoding == other.encoding
            and np.array_equal(self.words, other.words)
        )

    __hash__ = None


def n_words(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    rows, cols = bits.shape
    nw = n_words(cols)
    by = np.packbits(bits.astype(np.uint8, copy=False), axis=1, bitorder="little")
    padded = np.zeros((rows, nw * 8), dtype=np.uint8)
    padded[:, : by.shape[1]] = by
    return padded.view("<u8").astype(np.uint64)


def pack(values, encoding: Encoding = Encoding.PLUS_MINUS_ONE) -> PackedBitMatrix:
    """Pack a 2-D array into bits.

    PLUS_MINUS_ONE sets a bit where ``value >= 0`` (so any real matrix can be
    packed and the result is its sign). ZERO_ONE requires values in {0, 1}.
    """
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DomainError("cannot pack non-finite values")
    if encoding is Encoding.PLUS_MINUS_ONE:
        bits = arr >= 0
    elif encoding is Encoding.ZERO_ONE:
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("ZERO_ONE encoding needs values in {0, 1}")
        bits = arr == 1
    else:
        raise DomainError(f"unknown encoding {encoding!r}")
    rows, cols = arr.shape
    return PackedBitMatrix(rows, cols, encoding, _pack_bits(bits))


def unpack_bits(m: PackedBitMatrix) -> np.ndarray:
    """Raw bits as a uint8 {0,1} matrix."""
    if m.cols == 0:
        return np.zeros((m.rows, 0), dtype=np.uint8)
    by = np.ascontiguousarray(m.words.astype("<u8")).view(np.uint8)
    return np.unpackbits(by, axis=1, count=m.cols, bitorder="little")


def unpack(m: PackedBitMatrix) -> np.ndarray:
    """Logical values as float64: {-1,+1} or {0,1} depending on encoding."""
    bits = unpack_bits(m).astype(np.float64)
    if m.encoding is Encoding.PLUS_MINUS_ONE:
        return 2.0 * bits - 1.0
    return bits


def transpose(m: PackedBitMatrix) -> PackedBitMatrix:
    bits = unpack_bits(m).T
    return PackedBitMatrix(m.cols, m.rows, m.encoding, _pack_bits(bits))


def reencode(m: PackedBitMatrix, encoding: Encoding) -> PackedBitMatrix:
    """Same bits, different logical reading (e.g. bool(A) -> its +-1 hardware form)."""
    return PackedBitMatrix(m.rows, m.cols, encoding, m.words)


def _check_inner(k: int):
    if k > MAX_INNER:
        raise DomainError(f"inner dimension {k} exceeds accumulator range {MAX_INNER}")


def xnor_matmul(a: PackedBitMatrix, b_t: PackedBitMatrix, backend: str | None = None) -> np.ndarray:
    """Integer product ``a @ b_t.T`` of two +-1 matrices via xnor and popcount.

    Entry (i, j) is ``2 * popcount(xnor(a_i, b_j)) - k`` with padding masked.
    Returns an int32 array of shape (a.rows, b_t.rows).
    """
    if a.encoding is not Encoding.PLUS_MINUS_ONE or b_t.encoding is not Encoding.PLUS_MINUS_ONE:
        raise DomainError("xnor_matmul needs PLUS_MINUS_ONE operands")
    if a.cols != b_t.cols:
        raise ShapeError(f"inner dimensions differ: {a.cols} vs {b_t.cols}")
    _check_inner(a.cols)
    return _impl(backend).xnor_gemm(a.words, b_t.words, a.cols)


def column_sums(v: PackedBitMatrix) -> np.ndarray:
    """Column sums of a +-1 matrix, as int64."""
    if v.encoding is not Encoding.PLUS_MINUS_ONE:
        raise DomainError("column_sums needs a PLUS_MINUS_ONE matrix")
    vt = transpose(v)
    return 2 * _fallback.row_popcount(vt.words).astype(np.int64) - v.rows


def bamm(b_a: PackedBitMatrix, b_v: PackedBitMatrix, backend: str | None = None) -> np.ndarray:
    """Bitwise-affine product of a {0,1} matrix [m x k] and a +-1 matrix [k x n].

    Equals ``bool(A) @ B_V`` exactly. The bitwise route reads ``b_a`` in its
    +-1 hardware form ``A'``; ``A' @ B_V + colsum(B_V) == 2 * bool(A) @ B_V``,
    which is always even, so the final right shift is exact.
    """
    if b_a.encoding is not Encoding.ZERO_ONE:
        raise DomainError("bamm needs a ZERO_ONE attention-weight operand")
    if b_v.encoding is not Encoding.PLUS_MINUS_ONE:
        raise DomainError("bamm needs a PLUS_MINUS_ONE value operand")
    if b_a.cols != b_v.rows:
        raise ShapeError(f"inner dimensions differ: {b_a.cols} vs {b_v.rows}")
    _check_inner(b_a.cols)
    v_t = transpose(b_v)
    return _impl(backend).bamm_gemm(b_a.words, v_t.words, b_a.cols)


def bamm_presum(b_a: PackedBitMatrix, b_v: PackedBitMatrix, backend: str | None = None) -> np.ndarray:
    """The integer ``A' (x) B_V + colsum(B_V)`` before the shift (int64)."""
    if b_a.cols != b_v.rows:
        raise ShapeError(f"inner dimensions differ: {b_a.cols} vs {b_v.rows}")
    hw = reencode(b_a, Encoding.PLUS_MINUS_ONE)
    signed = xnor_matmul(hw, transpose(b_v), backend=backend).astype(np.int64)
    return signed + column_sums(b_v)[None, :]
