"""Seeded teacher and student training loops with per-epoch reports.

The teacher is the full-precision twin trained with cross-entropy on the
labels. The student starts from the teacher's weights, runs under the
configured binarization policy and attention variant, and is trained only on
the distillation objective.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attention import AttentionVariant, head_entropies
from .data import Dataset, Format, Rule, load_dataset, synth_task
from .distill import DistillSpec, Scheme, direction_mismatch_probe, distill_loss
from .errors import ConfigError, StateError, TrainingError
from .model import Transformer, TransformerConfig


class MissingTeacherError(StateError):
    """A student run was requested without a usable teacher checkpoint."""


@dataclass(frozen=True)
class DatasetRef:
    """Either a synthetic task (``kind="synth"``) or a CSV/TSV file (``kind="file"``)."""

    kind: str = "synth"
    rule: str = Rule.CONTAINS_PATTERN.value
    n_examples: int = 2000
    seed: int = 0
    n_symbols: int = 4
    path: str | None = None
    format: str | None = None
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("synth", "file"):
            raise ConfigError(f"dataset kind must be 'synth' or 'file', got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("a file dataset needs a path")
        Rule(self.rule)
        if self.format is not None:
            Format(self.format)


@dataclass(frozen=True)
class TrainConfig:
    role: str = "student"
    seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    # width 64 gives the binarized student enough sign bits to learn word order
    model: TransformerConfig = field(default_factory=lambda: TransformerConfig(hidden=64, ffn_dim=128))
    variant: AttentionVariant = field(default_factory=lambda: AttentionVariant.parse("bi_attention_bool"))
    distill: DistillSpec = field(default_factory=DistillSpec)
    dataset: DatasetRef = field(default_factory=DatasetRef)
    teacher: str | None = None

    def __post_init__(self):
        if self.role not in ("teacher", "student"):
            raise ConfigError(f"role must be 'teacher' or 'student', got {self.role!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate > 0 or not self.grad_clip > 0:
            raise ConfigError("learning_rate and grad_clip must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("Adam needs beta1, beta2 in [0, 1) and eps > 0")


class Adam:
    def __init__(self, params: list[ad.DualTensor], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: list[ad.DualTensor], max_norm: float) -> float:
    """Scale gradients so their global norm is at most ``max_norm``; return the pre-clip norm."""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm:
        f = max_norm / total
        for p in params:
            p.grad = p.grad * f
    return total


@dataclass
class ReportRecord:
    """Per-epoch metric rows plus a summary; serializes to CSV and JSON."""

    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, row: dict):
        self.rows.append(row)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self) -> str:
        return rows_to_csv(self.rows, self.columns())

    def series(self, key: str) -> list:
        return [r[key] for r in self.rows]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c, "")) for c in columns])
    return buf.getvalue()


# ------------------------------------------------------------------ helpers


def load_data(ref: DatasetRef, max_seq: int) -> tuple[Dataset, Dataset]:
    if ref.kind == "synth":
        full = synth_task(ref.seed, ref.n_examples, ref.rule, max_seq=max_seq, n_symbols=ref.n_symbols)
    else:
        full = load_dataset(ref.path, ref.format, max_seq=max_seq)
    return full.split(ref.eval_fraction, ref.seed)


def model_config_for(ds: Dataset, cfg: TransformerConfig) -> TransformerConfig:
    """Adapt vocab, class count and length of ``cfg`` to a dataset."""
    return replace(cfg, vocab=max(len(ds.vocab), 3), classes=ds.classes, max_seq=ds.max_seq)


def freeze(model: Transformer) -> Transformer:
    for p in model.params.values():
        p.requires_grad = False
    return model


def evaluate(model: Transformer, ds: Dataset, variant: AttentionVariant | None = None,
             packed: bool = False, batch_size: int = 256) -> float:
    correct = 0
    labels = ds.labels()
    for start in range(0, len(ds), batch_size):
        idx = range(start, min(start + batch_size, len(ds)))
        out = model.forward(ds.tokens(idx), variant, packed=packed)
        correct += int((out.logits.value.argmax(axis=-1) == labels[start: start + len(idx)]).sum())
    return correct / len(ds)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start: start + batch_size]


def _check_finite(value: float, epoch: int, what: str):
    if not math.isfinite(value):
        raise TrainingError(f"{what} is not finite", epoch)


# -------------------------------------------------------------------- loops


def train_teacher(cfg: TrainConfig, train: Dataset, eval_ds: Dataset) -> tuple[Transformer, ReportRecord]:
    mcfg = model_config_for(train, cfg.model).full_precision()
    model = Transformer.init(mcfg, cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)
    labels = train.labels()
    record = ReportRecord()
    for epoch in range(cfg.epochs):
        losses, correct = [], 0
        for idx in _batches(len(train), cfg.batch_size, rng):
            out = model.forward(train.tokens(idx))
            loss = ad.cross_entropy(out.logits, labels[idx])
            _check_finite(float(loss.value), epoch, "loss")
            ad.zero_grad(params)
            ad.backward(loss)
            clip_grad_norm(params, cfg.grad_clip)
            opt.step()
            losses.append(float(loss.value))
            correct += int((out.logits.value.argmax(-1) == labels[idx]).sum())
        record.append({
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_acc": correct / len(train),
            "eval_acc": evaluate(model, eval_ds),
        })
    record.summary = {
        "role": "teacher",
        "final_train_acc": evaluate(model, train),
        "final_eval_acc": record.rows[-1]["eval_acc"],
        "grad_clip": cfg.grad_clip,
    }
    return model, record


def train_student(cfg: TrainConfig, teacher: Transformer | None, train: Dataset,
                  eval_ds: Dataset) -> tuple[Transformer, ReportRecord]:
    """Distill ``teacher`` into a binarized student initialized from its weights."""
    if teacher is None:
        raise MissingTeacherError("student training needs a trained teacher")
    teacher = freeze(Transformer.from_state(teacher.cfg, teacher.state_dict()))
    scfg = replace(teacher.cfg, policy=cfg.model.policy, ste_clip=cfg.model.ste_clip)
    student = Transformer.from_state(scfg, teacher.state_dict())
    params = student.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed + 2)
    labels = train.labels()
    variant = cfg.variant
    record = ReportRecord()
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        steps, correct = 0, 0
        ent = np.zeros(scfg.layers)
        probe = None
        for idx in _batches(len(train), cfg.batch_size, rng):
            tok = train.tokens(idx)
            t_out = teacher.forward(tok)
            s_out = student.forward(tok, variant)
            lb = distill_loss(cfg.distill, s_out, t_out)
            for k, v in lb.scalars().items():
                _check_finite(v, epoch, f"{k} loss")
                sums[k] = sums.get(k, 0.0) + v
            ad.zero_grad(params)
            ad.backward(lb.total)
            clip_grad_norm(params, cfg.grad_clip)
            opt.step()
            steps += 1
            correct += int((s_out.logits.value.argmax(-1) == labels[idx]).sum())
            if variant.binarized:
                ent += [head_entropies(p.B_A.value, s_out.mask).mean() for p in s_out.layers]
            if scfg.layers:
                last_s, last_t = s_out.layers[-1], t_out.layers[-1]
                probe = direction_mismatch_probe(last_s.A.value, last_t.A.value, last_s.A.grad)
        row = {"epoch": epoch}
        row.update({f"loss_{k}": sums[k] / steps for k in sums})
        row["train_acc"] = correct / len(train)
        row["eval_acc"] = evaluate(student, eval_ds, variant, packed=True)
        for layer in range(scfg.layers):
            row[f"entropy_l{layer}"] = float(ent[layer] / steps) if variant.binarized else float("nan")
        row["entropy_mean"] = mean_entropy(row)
        if probe is not None:
            row["mismatch_rate"] = probe.rate
            row["mismatch_match_mag"] = probe.match_mag
            row["mismatch_mismatch_mag"] = probe.mismatch_mag
        record.append(row)
    record.summary = {
        "role": "student",
        "variant": variant.name,
        "scheme": cfg.distill.scheme.value,
        "final_eval_acc": record.rows[-1]["eval_acc"],
        "grad_clip": cfg.grad_clip,
    }
    return student, record


# --------------------------------------------------------------- experiments


def mean_entropy(row: dict) -> float:
    """Mean binarized-attention entropy over the layers of an epoch row."""
    vals = [v for k, v in row.items() if k.startswith("entropy_l")]
    if vals and all(math.isnan(v) for v in vals):
        return float("nan")
    return float(np.mean(vals)) if vals else float("nan")


BI_DMD = (AttentionVariant.parse("bi_attention_bool"), DistillSpec(Scheme.DMD))
BASELINE = (AttentionVariant.parse("softmax_sign"), DistillSpec(Scheme.BASELINE_MSE))


TEACHER_EPOCHS = 50
TEACHER_LEARNING_RATE = 1e-3


def teacher_for(cfg: TrainConfig, train: Dataset, eval_ds: Dataset, epochs: int = TEACHER_EPOCHS,
                learning_rate: float = TEACHER_LEARNING_RATE) -> tuple[Transformer, ReportRecord]:
    """Teacher for ``cfg``'s seed and data, trained with its own schedule."""
    tcfg = replace(cfg, role="teacher", epochs=epochs, learning_rate=learning_rate)
    return train_teacher(tcfg, train, eval_ds)


class TeacherCache:
    """Train each seed's teacher once and share it across experiments."""

    def __init__(self, epochs: int = TEACHER_EPOCHS, learning_rate: float = TEACHER_LEARNING_RATE):
        self.epochs, self.learning_rate = epochs, learning_rate
        self._store: dict = {}

    def get(self, cfg: TrainConfig):
        """Return ``(teacher, teacher_record, train, eval)`` for ``cfg``."""
        key = (repr(cfg.dataset), repr(cfg.model), cfg.seed, cfg.batch_size)
        if key not in self._store:
            train, eval_ds = load_data(cfg.dataset, cfg.model.max_seq)
            teacher, rec = teacher_for(cfg, train, eval_ds, self.epochs, self.learning_rate)
            self._store[key] = (teacher, rec, train, eval_ds)
        return self._store[key]


def _seeded(base: TrainConfig, seed: int) -> TrainConfig:
    return replace(base, seed=seed, dataset=replace(base.dataset, seed=seed))


def ordering_experiment(seeds, base: TrainConfig, teachers: TeacherCache | None = None) -> list[dict]:
    """Bi-Attention + DMD against sign(softmax) + MSE, one shared teacher per seed."""
    teachers = teachers or TeacherCache()
    rows = []
    for seed in seeds:
        cfg = _seeded(base, seed)
        teacher, trec, train, eval_ds = teachers.get(cfg)
        row = {"seed": seed, "teacher_eval_acc": trec.summary["final_eval_acc"]}
        for tag, (variant, spec) in (("bi_dmd", BI_DMD), ("baseline", BASELINE)):
            _, rec = train_student(replace(cfg, variant=variant, distill=spec), teacher, train, eval_ds)
            row[f"{tag}_eval_acc"] = rec.summary["final_eval_acc"]
            ents = [mean_entropy(r) for r in rec.rows]
            row[f"{tag}_min_mean_entropy"] = min(ents)
            row[f"{tag}_max_mean_entropy"] = max(ents)
        rows.append(row)
    return rows


def table3_grid(seeds, base: TrainConfig, teachers: TeacherCache | None = None) -> list[dict]:
    """Entropy maximization x {sign, bool}; accuracy averaged over ``seeds``.

    Ranks use competition ranking, so tied cells share a rank.
    """
    teachers = teachers or TeacherCache()
    cells = [(me, m) for me in (False, True) for m in ("sign", "bool")]
    acc = {c: [] for c in cells}
    for seed in seeds:
        cfg = _seeded(base, seed)
        teacher, _, train, eval_ds = teachers.get(cfg)
        for me, method in cells:
            variant = AttentionVariant.table3(me, method)
            _, rec = train_student(replace(cfg, variant=variant), teacher, train, eval_ds)
            acc[(me, method)].append(rec.summary["final_eval_acc"])
    rows = [{"maximize_entropy": me, "method": m, "variant": AttentionVariant.table3(me, m).name,
             "mean_eval_acc": float(np.mean(acc[(me, m)]))} for me, m in cells]
    for r in rows:
        r["rank"] = 1 + sum(o["mean_eval_acc"] > r["mean_eval_acc"] for o in rows)
    return rows


# ------------------------------------------------------------ config files


def config_to_dict(cfg: TrainConfig) -> dict:
    """Nested plain-data form of a config (the layout of a config file)."""
    m = cfg.model
    out = {
        "role": cfg.role, "seed": cfg.seed, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate, "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps,
        "grad_clip": cfg.grad_clip,
        "model": {
            "layers": m.layers, "hidden": m.hidden, "heads": m.heads, "ffn_dim": m.ffn_dim,
            "max_seq": m.max_seq, "ste_clip": m.ste_clip, "init_std": m.init_std,
            "policy": {"embedding": m.policy.embedding, "mha": m.policy.mha, "ffn": m.policy.ffn},
        },
        "attention": {"variant": cfg.variant.name},
        "distill": {"scheme": cfg.distill.scheme.value, "exclude": sorted(cfg.distill.exclude)},
        "dataset": {k: v for k, v in vars(cfg.dataset).items() if v is not None},
    }
    if cfg.teacher is not None:
        out["teacher"] = cfg.teacher
    return out


_TOP_KEYS = {"role", "seed", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps",
             "grad_clip", "teacher", "model", "attention", "distill", "dataset"}
_MODEL_KEYS = {"layers", "hidden", "heads", "ffn_dim", "max_seq", "ste_clip", "init_std", "policy"}


def _reject_unknown(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def config_from_dict(d: dict) -> TrainConfig:
    """Inverse of :func:`config_to_dict`; missing keys take their defaults."""
    _reject_unknown(d, _TOP_KEYS, "config")
    top = {k: d[k] for k in _TOP_KEYS - {"model", "attention", "distill", "dataset"} if k in d}
    model = dict(d.get("model", {}))
    _reject_unknown(model, _MODEL_KEYS, "[model]")
    policy = model.pop("policy", {})
    _reject_unknown(policy, {"embedding", "mha", "ffn"}, "[model.policy]")
    from .model import BinarizationPolicy

    try:
        mcfg = replace(TrainConfig().model, policy=BinarizationPolicy(**policy), **model)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    att = d.get("attention", {})
    _reject_unknown(att, {"variant"}, "[attention]")
    dist = d.get("distill", {})
    _reject_unknown(dist, {"scheme", "exclude"}, "[distill]")
    dset = d.get("dataset", {})
    _reject_unknown(dset, set(DatasetRef.__dataclass_fields__), "[dataset]")
    try:
        return TrainConfig(
            model=mcfg,
            variant=AttentionVariant.parse(att.get("variant", "bi_attention_bool")),
            distill=DistillSpec(dist.get("scheme", Scheme.DMD.value), frozenset(dist.get("exclude", ()))),
            dataset=DatasetRef(**dset),
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to a config file")


def dump_toml(d: dict, prefix: str = "") -> str:
    """Write a nested dict of scalars and lists as TOML (scalars before tables)."""
    lines = [f"{k} = {_toml_value(v)}" for k, v in d.items() if not isinstance(v, dict)]
    for k, v in d.items():
        if isinstance(v, dict):
            name = f"{prefix}{k}"
            lines.append("")
            lines.append(f"[{name}]")
            lines.append(dump_toml(v, name + ".").rstrip("\n"))
    return "\n".join(line for line in lines if line is not None).strip("\n") + "\n"
