"""Coarse FLOPs and storage model for binarized BERT-style encoders.

Multiplication cost on a 64-bit instruction width: an ``m``-bit by
``n``-bit multiply costs ``min(1, m * n / 64)`` FLOPs, so full-precision
multiplies cost 1 and 1-bit ones pack 64 to an instruction.

Inventory per transformer layer (sequence length ``N``, hidden ``D``, FFN
width ``F``, ``h`` heads):

* Q, K, V and output projections: ``4 N D^2`` weight x activation multiplies
  plus one elementwise op per output (two when binarized, for the scale
  factor);
* attention score and weight-value products: ``2 N^2 D`` activation x
  activation multiplies;
* softmax: ``h N^2`` ops, only for softmax attention;
* FFN: ``2 N D F`` weight x activation multiplies plus elementwise ops as above.

The head adds a pooler (``D^2``, binarized along with the weights) and the
full-precision classifier (``D C``). Embedding lookups are free.

Storage: binarizable weights and the word embedding take their bit width;
position and token-type embeddings, biases, layer norms, scale factors and
the classifier take 4 bytes per value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from scipy.optimize import brentq

from .errors import ConfigError

FP_BITS = 32
WIDTH = 64
SUPPORTED_BITS = (1, 2, 4, 8, 16, 32)
MIB = 2**20


@dataclass(frozen=True)
class BitAssignment:
    """Bit widths of weights, embeddings and activations (``W-E-A``)."""

    weights: int
    embeddings: int
    activations: int

    def __post_init__(self):
        for name in ("weights", "embeddings", "activations"):
            if getattr(self, name) not in SUPPORTED_BITS:
                raise ConfigError(f"unsupported {name} bit width {getattr(self, name)}; "
                                  f"choose from {SUPPORTED_BITS}")

    @classmethod
    def parse(cls, text: str) -> "BitAssignment":
        parts = text.strip().split("-")
        if len(parts) != 3:
            raise ConfigError(f"bit assignment must look like W-E-A, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError:
            raise ConfigError(f"bit assignment must be integers, got {text!r}") from None

    def __str__(self):
        return f"{self.weights}-{self.embeddings}-{self.activations}"


FULL = BitAssignment(32, 32, 32)
BINARY = BitAssignment(1, 1, 1)


@dataclass(frozen=True)
class ArchSpec:
    layers: int
    hidden: int
    heads: int
    ffn_dim: int
    vocab: int
    classes: int = 2
    type_vocab: int = 2

    @classmethod
    def from_config(cls, cfg) -> "ArchSpec":
        return cls(cfg.layers, cfg.hidden, cfg.heads, cfg.ffn_dim, cfg.vocab, cfg.classes, cfg.type_vocab)


PRESETS = {
    "bert-base": ArchSpec(12, 768, 12, 3072, 30522),
    "tinybert-6l": ArchSpec(6, 768, 12, 3072, 30522),
    "tinybert-4l": ArchSpec(4, 312, 12, 1200, 30522),
    "toy": ArchSpec(2, 32, 4, 64, 128),
}


@dataclass(frozen=True)
class CostModel:
    width: int = WIDTH

    def mult(self, m: int, n: int) -> float:
        """FLOPs per multiply of an m-bit and an n-bit operand."""
        return min(1.0, m * n / self.width)


@dataclass
class CostReport:
    flops: float
    size_bytes: int
    breakdown: dict = field(default_factory=dict)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def size_mib(self) -> float:
        return self.size_bytes / MIB


def _bytes(params: int, bits: int) -> int:
    return -(-params * bits // 8)


def estimate_cost(arch: ArchSpec, bits: BitAssignment, seq_len: int, position_rows: int | None = None,
                  model: CostModel = CostModel()) -> CostReport:
    """FLOPs of one forward pass over ``seq_len`` tokens and the model size.

    ``position_rows`` is the length of the position table (default
    ``seq_len``). Attention uses softmax only when activations are full
    precision; binarized activations use the softmax-free bool attention.
    """
    if seq_len < 1:
        raise ConfigError("sequence length must be positive")
    if arch.hidden % arch.heads:
        raise ConfigError("hidden size must be divisible by the head count")
    n, d, f, c = seq_len, arch.hidden, arch.ffn_dim, arch.classes
    w, e, a = bits.weights, bits.embeddings, bits.activations
    wa = model.mult(w, a)
    ew = 2 if w < FP_BITS else 1
    softmax = a == FP_BITS

    proj = 4 * n * d * d * wa + 4 * n * d * ew
    attn = 2 * n * n * d * model.mult(a, a)
    smax = arch.heads * n * n if softmax else 0
    ffn = 2 * n * d * f * wa + n * (f + d) * ew
    head = d * d * wa + d + d * c + c
    layer = proj + attn + smax + ffn
    flops = arch.layers * layer + head

    pos = seq_len if position_rows is None else position_rows
    layer_weights = arch.layers * (4 * d * d + 2 * d * f) + d * d  # blocks and pooler
    n_mats = arch.layers * 6 + 1
    fp_params = (pos * d + arch.type_vocab * d + 2 * d
                 + arch.layers * (4 * d + f + d + 4 * d)
                 + d + d * c + c)
    if w < FP_BITS:
        fp_params += n_mats  # one scale factor per binarized matrix
    if e < FP_BITS:
        fp_params += arch.vocab  # per-row embedding scale factors
    size = _bytes(layer_weights, w) + _bytes(arch.vocab * d, e) + _bytes(fp_params, FP_BITS)
    breakdown = {
        "projection_flops": arch.layers * proj,
        "attention_flops": arch.layers * attn,
        "softmax_flops": arch.layers * smax,
        "ffn_flops": arch.layers * ffn,
        "head_flops": head,
        "weight_bytes": _bytes(layer_weights, w),
        "embedding_bytes": _bytes(arch.vocab * d, e),
        "fp_bytes": _bytes(fp_params, FP_BITS),
    }
    return CostReport(flops, size, breakdown)


def block_flops(arch: ArchSpec, bits: BitAssignment, seq_len: int) -> float:
    """FLOPs of the transformer blocks alone (excludes the head)."""
    r = estimate_cost(arch, bits, seq_len)
    return r.flops - r.breakdown["head_flops"]


def calibrate_sequence_length(arch: ArchSpec, target_flops: float = 22.5e9,
                              bits: BitAssignment = FULL) -> int:
    """Integer sequence length whose FLOPs are closest to ``target_flops``."""
    fn = lambda x: estimate_cost(arch, bits, max(1, int(round(x)))).flops - target_flops  # noqa: E731
    cont = lambda x: _continuous_flops(arch, bits, x) - target_flops  # noqa: E731
    if cont(1.0) > 0:
        raise ConfigError("target is below the cost of a single token")
    hi = 2.0
    while cont(hi) < 0:
        hi *= 2
        if hi > 1e7:
            raise ConfigError("target FLOPs unreachable")
    root = brentq(cont, 1.0, hi, xtol=1e-9)
    lo_n, hi_n = max(1, int(root)), int(root) + 1
    return min((lo_n, hi_n), key=lambda k: abs(fn(k)))


def _continuous_flops(arch: ArchSpec, bits: BitAssignment, n: float) -> float:
    # FLOPs are a quadratic in N; evaluate it at real N for root finding
    f1 = estimate_cost(arch, bits, 1).flops
    f2 = estimate_cost(arch, bits, 2).flops
    f3 = estimate_cost(arch, bits, 3).flops
    c2 = (f3 - 2 * f2 + f1) / 2
    c1 = f2 - f1 - 3 * c2
    c0 = f1 - c1 - c2
    return c2 * n * n + c1 * n + c0


@dataclass
class EfficiencyReport:
    seq_len: int
    full: CostReport
    binary: CostReport

    @property
    def flops_ratio(self) -> float:
        return self.full.flops / self.binary.flops

    @property
    def size_ratio(self) -> float:
        return self.full.size_bytes / self.binary.size_bytes

    def as_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "full_gflops": self.full.gflops,
            "full_size_mib": self.full.size_mib,
            "binary_gflops": self.binary.gflops,
            "binary_size_mib": self.binary.size_mib,
            "flops_ratio": self.flops_ratio,
            "size_ratio": self.size_ratio,
        }


def efficiency(arch: ArchSpec, bits: BitAssignment = BINARY, seq_len: int | None = None,
               calibrate_on: ArchSpec | None = None, target_flops: float = 22.5e9) -> EfficiencyReport:
    """Full-precision versus ``bits`` at a sequence length calibrated on ``calibrate_on``."""
    if seq_len is None:
        seq_len = calibrate_sequence_length(calibrate_on or PRESETS["bert-base"], target_flops)
    return EfficiencyReport(seq_len, estimate_cost(arch, FULL, seq_len), estimate_cost(arch, bits, seq_len))
