"""Acceptance criteria at their stated tolerances, one pass/fail line each."""

import time

import pytest

from bibit import analysis as an
from bibit import bitcore as bc
from bibit import cli
from bibit import cost as c
from bibit import verify
from bibit.train import TeacherCache, TrainConfig, ordering_experiment, table3_grid

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def teachers():
    return TeacherCache()


@pytest.fixture(scope="module")
def ordering(teachers):
    return ordering_experiment(SEEDS, TrainConfig(), teachers)


def test_criterion_1_bitwise_equivalence(criterion):
    parts, ok = [], True
    for backend in bc.available_backends():
        t0 = time.perf_counter()
        ok_xnor, ok_bamm = verify.bitwise_equivalence(1000, 256, seed=2024, backend=backend)
        dt = time.perf_counter() - t0
        ok &= ok_xnor == 1000 and ok_bamm == 1000 and dt < 60
        parts.append(f"{backend}: xnor {ok_xnor}/1000, bamm {ok_bamm}/1000 exact in {dt:.1f} s")
    criterion(1, ok, "; ".join(parts) + " (< 60 s each)")


def test_criterion_2_mismatch_table(criterion):
    t0 = time.perf_counter()
    rows = an.simulate_mismatch(an.MismatchSimConfig(samples=10**6, seed=0))
    dt = time.perf_counter() - t0
    rates = [100 * r["rate"] for r in rows]
    quad = 100 * an.mismatch_rate_quadrature(1)
    monotone = all(a >= b for a, b in zip(rates, rates[1:]))
    ok = (abs(rates[0] - 14.36) <= 1.0 and abs(rates[-1] - 2.49) <= 0.5 and monotone
          and abs(rates[0] - quad) <= 0.3 and dt < 120)
    criterion(2, ok, f"Q=1 {rates[0]:.2f} pt (quadrature {quad:.2f}), Q=8 {rates[-1]:.2f} pt, "
                     f"monotone={monotone}, {dt:.1f} s")


def test_criterion_3_entropy_row(criterion):
    got = [round(r["entropy"], 2) for r in an.entropy_ablation([0.1, 0.3, 0.5, 0.7, 0.9])]
    criterion(3, got == [0.47, 0.88, 1.0, 0.88, 0.47], f"entropy row {got}")


def test_criterion_4_threshold(criterion):
    taus = [r["tau"] for r in an.threshold_curve([2, 4, 8, 16, 32], samples=10**5)]
    decreasing = all(a > b for a, b in zip(taus, taus[1:]))
    criterion(4, decreasing and abs(taus[0] - 0.5) <= 0.01,
              f"tau {[round(t, 4) for t in taus]}, strictly decreasing={decreasing}")


def test_criterion_5_score_distribution(criterion):
    d16 = an.score_distribution_check(16)
    d64 = an.score_distribution_check(64)
    ok = d16.p_value > 0.01 and abs(d64.std / 8.0 - 1) <= 0.05
    criterion(5, ok, f"D=16 chi-square p={d16.p_value:.3f} (> 0.01), D=64 std={d64.std:.4f} (8 +- 5%)")


def test_criterion_6_efficiency(criterion):
    r = c.efficiency(c.PRESETS["bert-base"])
    checks = {
        "gflops": (r.binary.gflops, 0.4),
        "size_mib": (r.binary.size_mib, 13.4),
        "flops_ratio": (r.flops_ratio, 56.3),
        "size_ratio": (r.size_ratio, 31.2),
    }
    ok = all(abs(got / want - 1) <= 0.1 for got, want in checks.values())
    detail = ", ".join(f"{k} {got:.4g} vs {want}" for k, (got, want) in checks.items())
    criterion(6, ok, f"N={r.seq_len}: {detail} (within 10%)")


@pytest.mark.slow
def test_criterion_7_entropy_behaviour(criterion, ordering):
    per_seed = {r["seed"]: round(r["bi_dmd_min_mean_entropy"], 4) for r in ordering}
    bi_min = min(per_seed.values())
    base_max = max(r["baseline_max_mean_entropy"] for r in ordering)
    criterion(7, bi_min >= 0.9 and base_max == 0.0,
              f"Bi-Attention min epoch entropy per seed {per_seed} (>= 0.9), SoftmaxSign max {base_max} (== 0)")


@pytest.mark.slow
def test_criterion_8_ordering(criterion, ordering, teachers):
    pairs = [(r["bi_dmd_eval_acc"], r["baseline_eval_acc"]) for r in ordering]
    ordered = all(b >= s for b, s in pairs)
    grid = table3_grid(SEEDS, TrainConfig(), teachers)
    top = [g for g in grid if g["rank"] == 1]
    grid_ok = any(g["method"] == "bool" and g["maximize_entropy"] for g in top)
    cells = ", ".join(f"{g['variant']} {g['mean_eval_acc']:.3f}#{g['rank']}" for g in grid)
    criterion(8, ordered and grid_ok,
              f"per-seed (bi_dmd, baseline) {pairs}; grid {cells}")


def test_criterion_9_gradients(criterion):
    checked, ok, worst = verify.model_gradient_check(seed=0, per_tensor=4, rtol=1e-4)
    masks = verify.ste_mask_agreement(10**5, seed=0)
    criterion(9, checked == ok and masks,
              f"{ok}/{checked} finite-difference checks within 1e-4 (worst {worst:.2e}), "
              f"STE masks exact on 1e5 points={masks}")


def test_criterion_10_replay(criterion, tmp_path, capsys):
    root = tmp_path / "out"
    commands = [["analyze", "mismatch", "--samples", "100000", "--seed", "7"],
                ["analyze", "threshold", "--samples", "20000"],
                ["cost", "--arch", "bert-base"],
                ["synth", "--n", "100"]]
    results = []
    for args in commands:
        assert cli.main(["--out-root", str(root)] + args) == 0
        first = sorted((root / args[0]).iterdir())[-1]
        results.append(cli.main(["replay", str(first)]) == 0)
    out = capsys.readouterr().out
    criterion(10, all(results) and "[DIFF]" not in out,
              f"{sum(results)}/{len(results)} commands replayed with byte-identical CSVs")
