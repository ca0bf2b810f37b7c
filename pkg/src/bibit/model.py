"""Toy binarized transformer encoder and its full-precision twin.

Parameter naming (flat ``name -> array``)::

    embeddings.word [V, D]        embeddings.position [N, D]
    embeddings.token_type [T, D]  embeddings.ln.{gamma,beta} [D]
    layer{l}.attn.{q,k,v,o}.{weight [D, D], bias [D]}
    layer{l}.attn_ln.{gamma,beta}
    layer{l}.ffn.in.{weight [F, D], bias [F]}
    layer{l}.ffn.out.{weight [D, F], bias [D]}
    layer{l}.ffn_ln.{gamma,beta}
    classifier.{weight [C, D], bias [C]}

Blocks are post-norm: ``H' = LN(H + MHA(H))``, ``H_out = LN(H' + FFN(H'))``.
Residual paths, layer norms, position and token-type embeddings and the
classifier always stay full precision.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import binarize as bz
from . import bitcore as bc
from .attention import SOFTMAX, AttentionVariant, attend
from .autodiff import DualTensor
from .errors import ConfigError, DomainError, ShapeError

PAD_ID = 0


@dataclass(frozen=True)
class BinarizationPolicy:
    """Which layer families run in 1 bit. Everything else is full precision."""

    embedding: bool = True
    mha: bool = True
    ffn: bool = True

    @classmethod
    def none(cls) -> "BinarizationPolicy":
        return cls(False, False, False)

    @property
    def any(self) -> bool:
        return self.embedding or self.mha or self.ffn


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 2
    hidden: int = 32
    heads: int = 4
    ffn_dim: int = 64
    vocab: int = 128
    max_seq: int = 16
    classes: int = 2
    type_vocab: int = 2
    policy: BinarizationPolicy = field(default_factory=BinarizationPolicy)
    ste_clip: float = 1.0
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("hidden", "heads", "ffn_dim", "vocab", "max_seq", "classes", "type_vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.layers < 0:
            raise ConfigError("layers must be non-negative")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if isinstance(self.policy, dict):
            object.__setattr__(self, "policy", BinarizationPolicy(**self.policy))
        bz.SteWindow(self.ste_clip)

    @property
    def window(self) -> bz.SteWindow:
        return bz.SteWindow(self.ste_clip)

    def full_precision(self) -> "TransformerConfig":
        return replace(self, policy=BinarizationPolicy.none())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        d = dict(d)
        if "policy" in d and isinstance(d["policy"], dict):
            d["policy"] = BinarizationPolicy(**d["policy"])
        return cls(**d)


class BinaryLinearParams:
    """Latent weight and bias of a binarized linear layer.

    ``binarized()`` caches the packed ``sign(W - mean(W))`` and ``alpha``; the
    cache is dropped whenever the latent weight changes.
    """

    def __init__(self, weight: DualTensor, bias: DualTensor):
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(f"weight {weight.shape} and bias {bias.shape} do not form a layer")
        self.weight = weight
        self.bias = bias
        self._snapshot: np.ndarray | None = None
        self._cache: tuple[bc.PackedBitMatrix, float] | None = None

    def binarized(self) -> tuple[bc.PackedBitMatrix, float]:
        w = self.weight.value
        if self._snapshot is None or not np.array_equal(self._snapshot, w):
            self._cache = bz.binarize_weight(w)
            self._snapshot = w.copy()
        return self._cache


def bi_linear(x: DualTensor, params: BinaryLinearParams, packed: bool = False,
              window: bz.SteWindow = bz.DEFAULT_WINDOW) -> DualTensor:
    """``alpha * (sign(x) (x) sign(W - mean W))^T + bias`` over the last axis of ``x``.

    The training path records STE nodes on both signs; ``alpha`` is treated
    as a constant. The packed path evaluates the same product with
    xnor/popcount.
    """
    w = params.weight
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match weight {w.shape}")
    if packed:
        bits, alpha = params.binarized()
        flat = x.value.reshape(-1, x.shape[-1])
        prod = bc.xnor_matmul(bc.pack(flat), bits).astype(np.float64)
        out = alpha * prod + params.bias.value
        return DualTensor(out.reshape(x.shape[:-1] + (w.shape[0],)))
    alpha = float(np.abs(w.value).mean())
    wb = ad.sign_ste(ad.sub(w, ad.mean(w)), window)
    xb = ad.sign_ste(x, window)
    return ad.add(ad.scale(ad.matmul(xb, ad.swapaxes(wb)), alpha), params.bias)


def fp_linear(x: DualTensor, params: BinaryLinearParams) -> DualTensor:
    return ad.add(ad.matmul(x, ad.swapaxes(params.weight)), params.bias)


@dataclass
class LayerProbes:
    """Per-layer activations exposed for distillation and analysis."""

    Q: DualTensor  # [B, N, D], before binarization
    K: DualTensor
    V: DualTensor
    A: DualTensor  # [B, h, N, N] scaled attention score
    B_A: DualTensor  # [B, h, N, N] attention weight
    M: DualTensor  # [B, N, D] MHA output
    H: DualTensor  # [B, N, D] block output


@dataclass
class ForwardResult:
    logits: DualTensor
    layers: list[LayerProbes]
    embedding: DualTensor
    mask: np.ndarray


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Transformer:
    """Encoder plus classifier; parameters live in ``self.params``."""

    def __init__(self, cfg: TransformerConfig, params: dict[str, DualTensor]):
        self.cfg = cfg
        self.params = params
        missing = set(self.param_shapes(cfg)) - set(params)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)[:5]}")
        for name, shape in self.param_shapes(cfg).items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
        self._linears: dict[str, BinaryLinearParams] = {}
        self._sync_linears()

    # ---------------------------------------------------------- structure

    @staticmethod
    def param_shapes(cfg: TransformerConfig) -> dict[str, tuple[int, ...]]:
        d, f = cfg.hidden, cfg.ffn_dim
        shapes = {
            "embeddings.word": (cfg.vocab, d),
            "embeddings.position": (cfg.max_seq, d),
            "embeddings.token_type": (cfg.type_vocab, d),
            "embeddings.ln.gamma": (d,),
            "embeddings.ln.beta": (d,),
        }
        for layer in range(cfg.layers):
            p = f"layer{layer}"
            for proj in "qkvo":
                shapes[f"{p}.attn.{proj}.weight"] = (d, d)
                shapes[f"{p}.attn.{proj}.bias"] = (d,)
            shapes[f"{p}.ffn.in.weight"] = (f, d)
            shapes[f"{p}.ffn.in.bias"] = (f,)
            shapes[f"{p}.ffn.out.weight"] = (d, f)
            shapes[f"{p}.ffn.out.bias"] = (d,)
            for ln in ("attn_ln", "ffn_ln"):
                shapes[f"{p}.{ln}.gamma"] = (d,)
                shapes[f"{p}.{ln}.beta"] = (d,)
        shapes["classifier.weight"] = (cfg.classes, d)
        shapes["classifier.bias"] = (cfg.classes,)
        return shapes

    @classmethod
    def init(cls, cfg: TransformerConfig, seed: int) -> "Transformer":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.param_shapes(cfg).items():
            if name.endswith(".gamma"):
                value = np.ones(shape)
            elif name.endswith(".bias") or name.endswith(".beta"):
                value = np.zeros(shape)
            else:
                value = _normal(rng, shape, cfg.init_std)
            params[name] = ad.parameter(value, name=name)
        return cls(cfg, params)

    def _sync_linears(self):
        for name in self.params:
            if name.endswith(".weight") and not name.startswith("classifier"):
                stem = name[: -len(".weight")]
                self._linears[stem] = BinaryLinearParams(self.params[name], self.params[stem + ".bias"])
        self._linears["classifier"] = BinaryLinearParams(
            self.params["classifier.weight"], self.params["classifier.bias"])

    def parameters(self) -> list[DualTensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: self.params[k].value.copy() for k in sorted(self.params)}

    def with_config(self, cfg: TransformerConfig) -> "Transformer":
        """Copy of this model's weights under another config (same shapes)."""
        return Transformer.from_state(cfg, self.state_dict())

    @classmethod
    def from_state(cls, cfg: TransformerConfig, state: dict[str, np.ndarray]) -> "Transformer":
        return cls(cfg, {k: ad.parameter(np.array(v, dtype=np.float64), name=k) for k, v in state.items()})

    # ------------------------------------------------------------ forward

    def _linear(self, x: DualTensor, stem: str, binary: bool, packed: bool) -> DualTensor:
        params = self._linears[stem]
        if binary:
            return bi_linear(x, params, packed=packed, window=self.cfg.window)
        return fp_linear(x, params)

    def _ln(self, x: DualTensor, stem: str) -> DualTensor:
        return ad.layer_norm(x, self.params[stem + ".gamma"], self.params[stem + ".beta"])

    def _embed(self, tokens: np.ndarray, packed: bool) -> DualTensor:
        cfg = self.cfg
        word = self.params["embeddings.word"]
        if cfg.policy.embedding:
            rows = word.value
            alpha = np.abs(rows).mean(axis=-1, keepdims=True)
            if packed:
                signs = bc.pack(rows - rows.mean(axis=-1, keepdims=True)).unpack()
                table = DualTensor(signs * alpha)
            else:
                centered = ad.sub(word, ad.mean(word, axis=-1, keepdims=True))
                table = ad.mul(ad.sign_ste(centered, cfg.window), alpha)
        else:
            table = word
        n = tokens.shape[1]
        h = ad.gather_rows(table, tokens)
        h = ad.add(h, ad.getitem(self.params["embeddings.position"], slice(0, n)))
        h = ad.add(h, ad.getitem(self.params["embeddings.token_type"], 0))
        return self._ln(h, "embeddings.ln")

    def forward(self, tokens, variant: AttentionVariant | None = None, mask=None,
                packed: bool = False) -> ForwardResult:
        """Run the encoder on a [B, n] id batch (a 1-D sequence is one example).

        ``variant`` picks the attention weight function (the default is plain
        softmax). ``mask`` defaults to ``tokens != PAD_ID``. With ``packed``
        every binary product runs on bit-packed operands and no gradient
        reaches the latent weights.
        """
        cfg = self.cfg
        variant = SOFTMAX if variant is None else variant
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.ndim != 2 or tokens.shape[1] == 0:
            raise ShapeError(f"expected a non-empty [batch, length] id array, got {tokens.shape}")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise DomainError("token ids must be integers")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab:
            raise DomainError(f"token id outside vocabulary [0, {cfg.vocab})")
        if tokens.shape[1] > cfg.max_seq:
            raise DomainError(f"sequence length {tokens.shape[1]} exceeds max_seq {cfg.max_seq}")
        mask = tokens != PAD_ID if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != tokens.shape:
            raise ShapeError("mask must match the token array")
        mask = mask.copy()
        mask[~mask.any(axis=1), 0] = True

        pol = cfg.policy
        h = self._embed(tokens, packed)
        emb = h
        probes = []
        for layer in range(cfg.layers):
            p = f"layer{layer}"
            q = self._linear(h, f"{p}.attn.q", pol.mha, packed)
            k = self._linear(h, f"{p}.attn.k", pol.mha, packed)
            v = self._linear(h, f"{p}.attn.v", pol.mha, packed)
            heads = attend(q, k, v, mask, variant, cfg.heads, cfg.window, packed=packed)
            m = self._linear(heads.context, f"{p}.attn.o", pol.mha, packed)
            h1 = self._ln(ad.add(h, m), f"{p}.attn_ln")
            inter = self._linear(h1, f"{p}.ffn.in", pol.ffn, packed)
            if not pol.ffn:
                inter = ad.gelu(inter)
            ff = self._linear(inter, f"{p}.ffn.out", pol.ffn, packed)
            h = self._ln(ad.add(h1, ff), f"{p}.ffn_ln")
            probes.append(LayerProbes(q, k, v, heads.score, heads.weight, m, h))
        pooled = ad.getitem(h, (slice(None), 0))
        logits = fp_linear(pooled, self._linears["classifier"])
        return ForwardResult(logits, probes, emb, mask)


def encoder_forward(tokens, cfg: TransformerConfig, variant: AttentionVariant | None = None,
                    params: dict[str, DualTensor] | None = None, seed: int = 0,
                    packed: bool = False) -> ForwardResult:
    """Functional entry point; builds a fresh model from ``seed`` when no params are given."""
    model = Transformer(cfg, params) if params is not None else Transformer.init(cfg, seed)
    return model.forward(tokens, variant, packed=packed)
