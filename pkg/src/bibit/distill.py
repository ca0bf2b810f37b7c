"""Distillation objectives: layerwise MSE baseline and direction matching.

Baseline::

    att  = sum_l MSE(A_l, A_T,l)      mha = sum_l MSE(M_l, M_T,l)
    hid  = sum_l MSE(H_l, H_T,l)      pred = SCE(y, y_T)

Direction matching (per example, averaged over the batch)::

    Q, K, V = sum_l || P(F_l) - P(F_T,l) ||_F   with P(X) = X X^T / ||X X^T||_F
    hid     = sum_l || H_l / ||H_l||_F - H_T,l / ||H_T,l||_F ||_F
    pred    = SCE(y, y_T)

Excluded terms drop out of the total; the remaining terms are unaffected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DualTensor
from .errors import ConfigError, DegenerateInputError, ShapeError

TERMS = ("att", "mha", "hid", "pred", "Q", "K", "V")


class Scheme(enum.Enum):
    BASELINE_MSE = "baseline_mse"
    DMD = "dmd"


_SCHEME_TERMS = {
    Scheme.BASELINE_MSE: ("att", "mha", "hid", "pred"),
    Scheme.DMD: ("Q", "K", "V", "hid", "pred"),
}


@dataclass(frozen=True)
class DistillSpec:
    scheme: Scheme = Scheme.DMD
    exclude: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if isinstance(self.scheme, str):
            try:
                object.__setattr__(self, "scheme", Scheme(self.scheme))
            except ValueError:
                raise ConfigError(f"unknown distillation scheme {self.scheme!r}") from None
        exclude = frozenset(self.exclude)
        unknown = exclude - set(TERMS)
        if unknown:
            raise ConfigError(f"unknown distillation terms {sorted(unknown)}")
        object.__setattr__(self, "exclude", exclude)

    @property
    def terms(self) -> tuple[str, ...]:
        return tuple(t for t in _SCHEME_TERMS[self.scheme] if t not in self.exclude)


@dataclass
class LossBreakdown:
    terms: dict[str, DualTensor]
    total: DualTensor

    def scalars(self) -> dict[str, float]:
        out = {k: float(v.value) for k, v in self.terms.items()}
        out["total"] = float(self.total.value)
        return out


def _check_layers(student, teacher):
    if len(student) != len(teacher):
        raise ShapeError(f"student has {len(student)} layers of probes, teacher {len(teacher)}")


def _sum(parts: list[DualTensor]) -> DualTensor:
    if not parts:
        return DualTensor(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = ad.add(out, p)
    return out


def _finish(terms: dict[str, DualTensor], spec_terms) -> LossBreakdown:
    kept = {k: terms[k] for k in spec_terms}
    return LossBreakdown(kept, _sum(list(kept.values())))


def baseline_loss(student_layers, teacher_layers, logits: DualTensor, teacher_logits,
                  spec: DistillSpec | None = None) -> LossBreakdown:
    """Layerwise MSE on A, M, H plus soft cross-entropy on the logits."""
    spec = spec or DistillSpec(Scheme.BASELINE_MSE)
    _check_layers(student_layers, teacher_layers)
    wanted = set(spec.terms)
    terms = {}
    for name, attr in (("att", "A"), ("mha", "M"), ("hid", "H")):
        if name in wanted:
            terms[name] = _sum([ad.mse(getattr(s, attr), _const(getattr(t, attr)))
                                for s, t in zip(student_layers, teacher_layers)])
    if "pred" in wanted:
        terms["pred"] = ad.sce(logits, _const(teacher_logits))
    return _finish(terms, spec.terms)


def _const(x) -> DualTensor:
    return DualTensor(x.value if isinstance(x, DualTensor) else x)


def _rowmask(x: DualTensor, mask) -> DualTensor:
    if mask is None:
        return x
    return ad.mul(x, np.asarray(mask, dtype=np.float64)[..., None])


def similarity(x: DualTensor, mask=None) -> DualTensor:
    """``X X^T / ||X X^T||_F`` over the last two axes; leading axes are batch."""
    x = ad.as_tensor(x)
    if x.ndim < 2 or x.value.size == 0:
        raise ShapeError(f"similarity needs a non-empty [..., N, D] tensor, got {x.shape}")
    x = _rowmask(x, mask)
    gram = ad.matmul(x, ad.swapaxes(x))
    norm = ad.l2norm(gram, axis=(-2, -1), keepdims=True)
    if np.any(norm.value == 0):
        raise DegenerateInputError("similarity of an all-zero activation")
    return ad.div(gram, norm)


def _unit(x: DualTensor) -> DualTensor:
    norm = ad.l2norm(x, axis=(-2, -1), keepdims=True)
    if np.any(norm.value == 0):
        raise DegenerateInputError("cannot normalize an all-zero hidden state")
    return ad.div(x, norm)


def _frob_batch_mean(diff: DualTensor) -> DualTensor:
    return ad.mean(ad.l2norm(diff, axis=(-2, -1)))


def dmd_loss(student_layers, teacher_layers, logits: DualTensor, teacher_logits,
             spec: DistillSpec | None = None, mask=None) -> LossBreakdown:
    """Similarity-pattern distance on Q, K, V, normalized hidden states and SCE.

    ``mask`` ([B, N], True = real token) zeroes padded rows before building
    similarity matrices and normalized hidden states.
    """
    spec = spec or DistillSpec(Scheme.DMD)
    _check_layers(student_layers, teacher_layers)
    wanted = set(spec.terms)
    terms = {}
    for f in ("Q", "K", "V"):
        if f in wanted:
            parts = []
            for s, t in zip(student_layers, teacher_layers):
                p_s = similarity(getattr(s, f), mask)
                p_t = similarity(_const(getattr(t, f)), mask)
                parts.append(_frob_batch_mean(ad.sub(p_s, p_t)))
            terms[f] = _sum(parts)
    if "hid" in wanted:
        terms["hid"] = _sum([
            _frob_batch_mean(ad.sub(_unit(_rowmask(s.H, mask)), _unit(_rowmask(_const(t.H), mask))))
            for s, t in zip(student_layers, teacher_layers)
        ])
    if "pred" in wanted:
        terms["pred"] = ad.sce(logits, _const(teacher_logits))
    return _finish(terms, spec.terms)


def distill_loss(spec: DistillSpec, student, teacher) -> LossBreakdown:
    """Dispatch on ``spec.scheme`` for two ``ForwardResult`` objects."""
    if spec.scheme is Scheme.BASELINE_MSE:
        return baseline_loss(student.layers, teacher.layers, student.logits, teacher.logits, spec)
    return dmd_loss(student.layers, teacher.layers, student.logits, teacher.logits, spec, student.mask)


@dataclass(frozen=True)
class MismatchProbe:
    rate: float
    match_mag: float
    mismatch_mag: float


def direction_mismatch_probe(x, x_t, loss_grad) -> MismatchProbe:
    """Compare the wanted move ``sign(X_T - X)`` with the realized ``-grad``.

    An element mismatches when the two directions have opposite signs; a zero
    on either side counts as a match. Magnitudes are mean ``|grad|`` over each
    set (NaN for an empty set).
    """
    x = np.asarray(x, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    g = np.asarray(loss_grad, dtype=np.float64)
    if x.shape != x_t.shape or x.shape != g.shape:
        raise ShapeError(f"shapes differ: {x.shape}, {x_t.shape}, {g.shape}")
    if x.size == 0:
        raise ShapeError("empty probe input")
    mism = np.sign(x_t - x) * np.sign(-g) < 0
    mag = np.abs(g)
    rate = float(mism.mean())
    match_mag = float(mag[~mism].mean()) if (~mism).any() else float("nan")
    mismatch_mag = float(mag[mism].mean()) if mism.any() else float("nan")
    return MismatchProbe(rate, match_mag, mismatch_mag)
