"""Command-line front end.

Every command writes ``<out-root>/<command>/<timestamp>-<hash>/`` holding a
``manifest.json``, its CSV outputs and a ``summary.json``. The hash covers the
command, its resolved parameters and the contents of its input files, so
``bibit replay <manifest>`` re-runs the same work and checks that the CSVs
come out byte-identical.

Exit codes: 0 success, 1 a check failed, 2 usage error, 3 missing teacher
checkpoint, 4 training diverged.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .errors import BibitError, ConfigError, TrainingError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NO_TEACHER, EXIT_DIVERGED = 0, 1, 2, 3, 4
ANALYSES = ("mismatch", "threshold", "scores", "balance", "entropy", "order")


# ----------------------------------------------------------------- plumbing


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        return _json_safe(v.item())
    return v


def _dumps(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(command: str, params: dict, inputs: dict[str, str]) -> str:
    blob = json.dumps({"command": command, "params": _json_safe(params), "inputs": inputs}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Run:
    """One output directory and its manifest."""

    def __init__(self, out_root: str, command: str, params: dict, inputs: dict[str, str] | None = None,
                 seed: int | None = None):
        self.command = command
        self.params = params
        self.inputs = inputs or {}
        self.seed = seed
        self.hash = content_hash(command, params, self.inputs)
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        self.dir = Path(out_root) / command / f"{stamp}-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=False)
        self.outputs: list[str] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.outputs.append(name)
        return path

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def finish(self, summary: dict) -> Path:
        self.write_text("summary.json", _dumps(summary))
        manifest = {
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "inputs": self.inputs,
            "content_hash": self.hash,
            "outputs": sorted(self.outputs),
            "version": __version__,
        }
        path = self.dir / "manifest.json"
        path.write_text(_dumps(manifest), encoding="utf-8")
        return path


def _env_seed(default: int) -> int:
    raw = os.environ.get("BIBIT_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"BIBIT_SEED must be an integer, got {raw!r}") from None


def _rows_csv(rows: list[dict]) -> str:
    from .train import rows_to_csv

    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return rows_to_csv(rows, cols)


# ------------------------------------------------------------------- verify


def run_verify(params: dict, out_root: str) -> int:
    from .verify import run_suite

    results = run_suite(params["suite"])
    run = Run(out_root, "verify", params)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.suite}.{r.name}: {r.detail}")
    passed = all(r.passed for r in results)
    run.write_text("checks.json", _dumps([r.as_dict() for r in results]))
    manifest = run.finish({"suite": params["suite"], "passed": passed,
                           "n_checks": len(results), "n_failed": sum(not r.passed for r in results)})
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed; manifest: {manifest}")
    return EXIT_OK if passed else EXIT_FAIL


# -------------------------------------------------------------------- train


def _load_config_file(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else (base / q))


def train_params_from_file(path: str, teacher: str | None) -> dict:
    from .train import config_from_dict, config_to_dict

    raw = _load_config_file(path)
    base = Path(path).resolve().parent
    if "teacher" in raw:
        raw["teacher"] = _resolve(base, raw["teacher"])
    if "dataset" in raw and "path" in raw["dataset"]:
        raw["dataset"]["path"] = _resolve(base, raw["dataset"]["path"])
    if teacher is not None:
        raw["teacher"] = str(Path(teacher).resolve())
    cfg = config_from_dict(raw)
    cfg_dict = config_to_dict(cfg)
    cfg_dict["seed"] = _env_seed(cfg.seed)
    return {"config": cfg_dict}


def run_train(params: dict, out_root: str) -> int:
    from . import checkpoint
    from .train import MissingTeacherError, config_from_dict, load_data, train_student, train_teacher

    cfg = config_from_dict(params["config"])
    inputs = {}
    if cfg.dataset.kind == "file":
        inputs["dataset"] = file_digest(cfg.dataset.path)
    teacher = None
    if cfg.role == "student":
        if not cfg.teacher or not Path(cfg.teacher).is_file():
            print(f"error: teacher checkpoint not found: {cfg.teacher}", file=sys.stderr)
            return EXIT_NO_TEACHER
        inputs["teacher"] = file_digest(cfg.teacher)
        teacher, _ = checkpoint.load_model(cfg.teacher)
    train, eval_ds = load_data(cfg.dataset, cfg.model.max_seq)
    run = Run(out_root, "train", params, inputs, seed=cfg.seed)
    try:
        if cfg.role == "teacher":
            model, record = train_teacher(cfg, train, eval_ds)
        else:
            model, record = train_student(cfg, teacher, train, eval_ds)
    except MissingTeacherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_TEACHER
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    checkpoint.save_model(run.path("model.ckpt"), model,
                          {"role": cfg.role, "variant": cfg.variant.name})
    run.write_text("metrics.csv", record.to_csv())
    manifest = run.finish({**record.summary, "config": params["config"]})
    print(f"{cfg.role} done: final eval accuracy {record.rows[-1]['eval_acc']:.4f}")
    print(f"checkpoint: {run.dir / 'model.ckpt'}")
    print(f"manifest: {manifest}")
    return EXIT_OK


# ------------------------------------------------------------------ analyze


def run_analyze(params: dict, out_root: str) -> int:
    from . import analysis as an

    name, seed, samples = params["experiment"], params["seed"], params["samples"]
    run = Run(out_root, "analyze", params, seed=seed)
    summary: dict = {"experiment": name, "seed": seed, "samples": samples}
    if name == "mismatch":
        rows = an.simulate_mismatch(an.MismatchSimConfig(samples=samples, L=params["L"],
                                                         sigma1=params["sigma1"], sigma2=params["sigma2"],
                                                         seed=seed))
        for r in rows:
            r["quadrature"] = an.mismatch_rate_quadrature(r["Q"], params["L"], params["sigma1"], params["sigma2"])
        rates = [r["rate"] for r in rows]
        summary["monotone"] = all(a >= b for a, b in zip(rates, rates[1:]))
        summary["passed"] = summary["monotone"]
    elif name == "threshold":
        rows = an.threshold_curve(params["k"], samples, seed)
        taus = [r["tau"] for r in rows]
        summary["strictly_decreasing"] = all(a > b for a, b in zip(taus, taus[1:]))
        summary["passed"] = summary["strictly_decreasing"]
    elif name == "scores":
        res = an.score_distribution_check(params["D"], samples, seed)
        rows = res.rows()
        summary.update({"D": res.D, "chi2": res.chi2, "p_value": res.p_value, "dof": res.dof,
                        "mean": res.mean, "std": res.std, "passed": res.p_value > 0.01})
    elif name == "balance":
        res = an.balance_check(an.gaussian_weights(samples, seed), params["shift"])
        rows = [{"shift": params["shift"], "before": res.before, "after": res.after,
                 "entropy_after": res.entropy_after}]
        summary.update(rows[0])
        summary["passed"] = 0.49 <= res.after <= 0.51
    elif name == "entropy":
        rows = an.entropy_ablation(params["percentages"])
        summary["passed"] = True
    else:  # order
        res = an.order_preservation_check(params["k_order"], params["tau"], samples, seed)
        rows = [{"k": params["k_order"], "tau": params["tau"], "rows": res.rows, "preserved": res.preserved}]
        summary["passed"] = res.ok
    run.write_text(f"{name}.csv", _rows_csv(rows))
    manifest = run.finish(summary)
    print(_rows_csv(rows), end="")
    print(f"manifest: {manifest}")
    return EXIT_OK if summary.get("passed", True) else EXIT_FAIL


# --------------------------------------------------------------------- cost


def run_cost(params: dict, out_root: str) -> int:
    from . import cost as cm

    arch = cm.PRESETS[params["arch"]]
    bits = cm.BitAssignment.parse(params["bits"])
    seq_len = params["seq_len"] or cm.calibrate_sequence_length(cm.PRESETS["bert-base"], params["target_gflops"] * 1e9)
    full = cm.estimate_cost(arch, cm.FULL, seq_len)
    quant = cm.estimate_cost(arch, bits, seq_len)
    rows = [{"bits": str(b), "seq_len": seq_len, "gflops": r.gflops, "size_mib": r.size_mib,
             "size_bytes": r.size_bytes} for b, r in ((cm.FULL, full), (bits, quant))]
    summary = {
        "arch": params["arch"], "bits": str(bits), "seq_len": seq_len,
        "flops": quant.flops, "size_bytes": quant.size_bytes,
        "gflops": quant.gflops, "size_mib": quant.size_mib,
        "full_gflops": full.gflops, "full_size_mib": full.size_mib,
        "flops_ratio": full.flops / quant.flops, "size_ratio": full.size_bytes / quant.size_bytes,
        "breakdown": quant.breakdown,
    }
    run = Run(out_root, "cost", params)
    run.write_text("cost.csv", _rows_csv(rows))
    manifest = run.finish(summary)
    print(_dumps({k: v for k, v in summary.items() if k != "breakdown"}), end="")
    print(f"manifest: {manifest}", file=sys.stderr)
    return EXIT_OK


# -------------------------------------------------------------------- synth


def run_synth(params: dict, out_root: str) -> int:
    from .data import synth_task, write_dataset

    ds = synth_task(params["seed"], params["n"], params["rule"], max_seq=params["max_seq"])
    texts = [" ".join(ds.vocab.tokens[i] for i in ids[1:]) for ids, _ in ds.examples]
    run = Run(out_root, "synth", params, seed=params["seed"])
    name = "data.tsv" if params["format"] == "tsv" else "data.csv"
    write_dataset(run.path(name), texts, ds.labels(), params["format"])
    manifest = run.finish({"examples": len(ds), "positive_fraction": float(ds.labels().mean())})
    print(f"wrote {run.dir / name}; manifest: {manifest}")
    return EXIT_OK


# ------------------------------------------------------------------- replay


_RUNNERS = {"verify": run_verify, "train": run_train, "analyze": run_analyze, "cost": run_cost,
            "synth": run_synth}


def run_replay(manifest_path: str, out_root: str | None) -> int:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    command = manifest.get("command")
    if command not in _RUNNERS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    old_dir = path.parent
    root = out_root if out_root is not None else str(old_dir.parent.parent)
    before = set((Path(root) / command).glob("*")) if (Path(root) / command).exists() else set()
    code = _RUNNERS[command](manifest["params"], root)
    if code != EXIT_OK and command != "verify":
        return code
    new_dirs = sorted(set((Path(root) / command).glob("*")) - before)
    if not new_dirs:
        print("error: replay produced no output directory", file=sys.stderr)
        return EXIT_FAIL
    new_dir = new_dirs[-1]
    csvs = sorted(n for n in manifest["outputs"] if n.endswith(".csv"))
    same = True
    for name in csvs:
        a, b = old_dir / name, new_dir / name
        ok = a.is_file() and b.is_file() and a.read_bytes() == b.read_bytes()
        same &= ok
        print(f"[{'SAME' if ok else 'DIFF'}] {name}")
    print(f"replay of {path} -> {new_dir}: {'identical' if same else 'different'} CSV outputs")
    return EXIT_OK if same else EXIT_FAIL


# ------------------------------------------------------------------- parser


def _bits_arg(text: str) -> str:
    from .cost import BitAssignment

    try:
        return str(BitAssignment.parse(text))
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    from .cost import PRESETS
    from .data import Rule
    from .verify import SUITES

    parser = argparse.ArgumentParser(prog="bibit", description="Binarized transformer toolkit.")
    parser.add_argument("--version", action="version", version=f"bibit {__version__}")
    parser.add_argument("--out-root", default="out", help="root of run directories (default: out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")

    p = sub.add_parser("train", help="train a teacher or a student from a config file")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--teacher", help="teacher checkpoint (overrides the config)")
    p.add_argument("--print-config", action="store_true", help="print the default config and exit")

    p = sub.add_parser("analyze", help="run a numerical experiment")
    p.add_argument("experiment", choices=ANALYSES)
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo samples")
    p.add_argument("--seed", type=int, default=None, help="default: BIBIT_SEED or 0")
    p.add_argument("--L", type=float, default=1.0, help="quantizer range (mismatch)")
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--k", type=int, nargs="+", default=[2, 4, 8, 16, 32], help="row lengths (threshold)")
    p.add_argument("--D", type=int, default=16, help="row length (scores)")
    p.add_argument("--shift", type=float, default=1.0, help="weight shift (balance)")
    p.add_argument("--percentages", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9],
                   help="zero fractions (entropy)")
    p.add_argument("--k-order", type=int, default=8, help="row length (order)")
    p.add_argument("--tau", type=float, default=0.1, help="softmax shift (order)")

    p = sub.add_parser("cost", help="FLOPs and size estimate")
    p.add_argument("--arch", choices=sorted(PRESETS), default="bert-base")
    p.add_argument("--bits", type=_bits_arg, default="1-1-1", help="W-E-A bit widths")
    p.add_argument("--seq-len", type=int, default=None, help="sequence length (default: calibrated)")
    p.add_argument("--target-gflops", type=float, default=22.5,
                   help="full-precision bert-base GFLOPs used for calibration")

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV/TSV")
    p.add_argument("--rule", choices=[r.value for r in Rule], default=Rule.CONTAINS_PATTERN.value)
    p.add_argument("--n", type=int, default=640)
    p.add_argument("--seed", type=int, default=None, help="default: BIBIT_SEED or 0")
    p.add_argument("--max-seq", type=int, default=16)
    p.add_argument("--format", choices=["csv", "tsv"], default="csv")

    p = sub.add_parser("replay", help="re-run a command from its manifest and compare CSVs")
    p.add_argument("manifest", help="manifest.json or its run directory")
    return parser


_DEFAULT_SAMPLES = {"mismatch": 10**6, "threshold": 10**5, "scores": 10**6, "balance": 10**5,
                    "entropy": 0, "order": 10**4}


def _analyze_params(ns) -> dict:
    samples = ns.samples if ns.samples is not None else _DEFAULT_SAMPLES[ns.experiment]
    seed = ns.seed if ns.seed is not None else _env_seed(0)
    params = {"experiment": ns.experiment, "samples": samples, "seed": seed}
    extra = {
        "mismatch": ("L", "sigma1", "sigma2"),
        "threshold": ("k",),
        "scores": ("D",),
        "balance": ("shift",),
        "entropy": ("percentages",),
        "order": ("k_order", "tau"),
    }[ns.experiment]
    for key in extra:
        params[key] = getattr(ns, key)
    return params


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "verify":
            return run_verify({"suite": ns.suite}, ns.out_root)
        if ns.command == "train":
            if ns.print_config:
                from .train import TrainConfig, config_to_dict, dump_toml

                print(dump_toml(config_to_dict(TrainConfig())), end="")
                return EXIT_OK
            if not ns.config:
                parser.error("train needs --config (or --print-config)")
            return run_train(train_params_from_file(ns.config, ns.teacher), ns.out_root)
        if ns.command == "analyze":
            return run_analyze(_analyze_params(ns), ns.out_root)
        if ns.command == "cost":
            return run_cost({"arch": ns.arch, "bits": ns.bits, "seq_len": ns.seq_len,
                             "target_gflops": ns.target_gflops}, ns.out_root)
        if ns.command == "synth":
            return run_synth({"rule": ns.rule, "n": ns.n, "seed": ns.seed if ns.seed is not None else _env_seed(0),
                              "max_seq": ns.max_seq, "format": ns.format}, ns.out_root)
        return run_replay(ns.manifest, None if ns.out_root == "out" else ns.out_root)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BibitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
