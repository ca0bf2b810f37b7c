"""Bit-packed binary linear algebra.

The xnor/popcount kernels come from a compiled extension when it is built;
otherwise a numpy implementation with the same contract is used. Set
``BIBIT_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the one in use.
"""

from .core import (
    BACKEND,
    MAX_INNER,
    WORD_BITS,
    Encoding,
    PackedBitMatrix,
    available_backends,
    bamm,
    bamm_presum,
    column_sums,
    n_words,
    pack,
    reencode,
    transpose,
    unpack,
    unpack_bits,
    xnor_matmul,
)

__all__ = [
    "BACKEND",
    "MAX_INNER",
    "WORD_BITS",
    "Encoding",
    "PackedBitMatrix",
    "available_backends",
    "bamm",
    "bamm_presum",
    "column_sums",
    "n_words",
    "pack",
    "reencode",
    "transpose",
    "unpack",
    "unpack_bits",
    "xnor_matmul",
]
