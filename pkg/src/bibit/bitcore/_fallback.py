"""Pure numpy implementations of the compiled kernels (same signatures)."""

import numpy as np

# bounds the temporary [rows, n, words] xor block
_BLOCK_ELEMENTS = 1 << 22


def _row_block(n: int, w: int) -> int:
    return max(1, _BLOCK_ELEMENTS // max(1, n * w))


def xnor_gemm(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    m, w = a.shape
    n = b.shape[0]
    out = np.empty((m, n), dtype=np.int32)
    step = _row_block(n, w)
    for start in range(0, m, step):
        x = a[start:start + step, None, :] ^ b[None, :, :]
        h = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
        out[start:start + step] = k - 2 * h
    return out


def row_popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a).sum(axis=1, dtype=np.int64).astype(np.int32)


def bamm_gemm(a: np.ndarray, v_t: np.ndarray, k: int) -> np.ndarray:
    colsum = 2 * row_popcount(v_t).astype(np.int64) - k
    signed = xnor_gemm(a, v_t, k).astype(np.int64)
    return ((signed + colsum[None, :]) >> 1).astype(np.int32)
