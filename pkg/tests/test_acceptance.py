"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""
import filecmp
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest

from gga_lab import model
from gga_lab.cli import main
from gga_lab.data import make_gaussian_toy, sample_composite
from gga_lab.harness import TrainConfig, domain_reliance, train
from gga_lab.metrics import grad_report
from gga_lab.model import ModelSpec
from gga_lab.optim import AnnealConfig, GgaLConfig, accepts, gga_anneal, gga_l_step, ggal_alpha, sgd_step, \
    total_gradient

from conftest import random_composite

TOY_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "toy_gga.toml"
N_SEEDS = 20


def emit(record, number, ok, detail):
    record(number, ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module")
def toy_runs():
    """Paired ERM / GGA runs at default settings, one fresh toy draw per seed."""
    start = time.perf_counter()
    out = []
    for s in range(N_SEEDS):
        ds = make_gaussian_toy(seed=1000 + s)
        X_all = ds.pooled(ds.names)[0]
        erm = train(ds, TrainConfig(method="erm", seed=s))
        gga = train(ds, TrainConfig(method="gga", seed=s))
        out.append({
            "erm": erm, "gga": gga,
            "erm_rel": domain_reliance(ModelSpec(), erm.theta, X_all),
            "gga_rel": domain_reliance(ModelSpec(), gga.theta, X_all),
        })
    return out, time.perf_counter() - start


def sign_test(wins: int, losses: int) -> float:
    n = wins + losses
    return 1.0 if n == 0 else binomtest(wins, n, 0.5, alternative="greater").pvalue


def test_criterion_1_toy_reproduction(toy_runs, record_criterion):
    runs, elapsed = toy_runs
    erm_acc = np.array([r["erm"].target_acc for r in runs])
    gga_acc = np.array([r["gga"].target_acc for r in runs])
    p_acc = sign_test(int(np.sum(gga_acc > erm_acc)), int(np.sum(gga_acc < erm_acc)))
    ok_a = gga_acc.mean() >= erm_acc.mean() and p_acc < 0.05

    over = [r for r in runs if r["erm"].target_acc < 0.9]
    erm_rel = np.array([r["erm_rel"] for r in over])
    gga_rel = np.array([r["gga_rel"] for r in over])
    p_rel = sign_test(int(np.sum(gga_rel < erm_rel)), int(np.sum(gga_rel > erm_rel)))
    ok_b = len(over) > 0 and gga_rel.mean() < erm_rel.mean() and p_rel < 0.05

    ok = ok_a and ok_b and elapsed < 300
    detail = (f"acc ERM {erm_acc.mean():.4f} GGA {gga_acc.mean():.4f} (sign p={p_acc:.3g}); "
              f"reliance on {len(over)} overfit seeds ERM {erm_rel.mean() if len(over) else float('nan'):.4f} "
              f"GGA {gga_rel.mean() if len(over) else float('nan'):.4f} (sign p={p_rel:.3g}); {elapsed:.0f}s")
    emit(record_criterion, 1, ok, detail)
    assert ok, detail


def _random_spec(rng):
    k = int(rng.integers(2, 5))
    d = int(rng.integers(1, 4))
    if rng.random() < 0.5:
        return ModelSpec(family="poly-logistic", input_dim=d, num_classes=k, degree=int(rng.integers(1, 5)))
    hidden = tuple(int(w) for w in rng.integers(2, 9, size=int(rng.integers(1, 3))))
    return ModelSpec(family="mlp", input_dim=d, num_classes=k, layer_widths=(d,) + hidden + (k,),
                     activation=str(rng.choice(["relu", "tanh"])))


def test_criterion_2_gradient_correctness(record_criterion):
    rng = np.random.default_rng(2024)
    start, worst, families = time.perf_counter(), 0.0, set()
    for i in range(100):
        spec = _random_spec(rng) if i >= 2 else (ModelSpec(), ModelSpec(family="mlp", layer_widths=(2, 4, 2)))[i]
        families.add(spec.family)
        theta = model.build_model(spec, i)
        theta = theta + 0.1 * rng.normal(size=theta.shape)
        n = int(rng.integers(4, 17))
        X, y = rng.normal(size=(n, spec.input_dim)), rng.integers(0, spec.num_classes, n)
        lam = float(rng.choice([0.0, 1e-3]))
        g = model.gradient(spec, theta, X, y, lam)
        fd = model.fd_gradient(spec, theta, X, y, lam, h=1e-5)
        worst = max(worst, float(np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(fd)))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30 and families == {"poly-logistic", "mlp"}
    detail = f"max relative error {worst:.2e} over 100 instances; {elapsed:.1f}s"
    emit(record_criterion, 2, ok, detail)
    assert ok, detail


def _replay(spec, theta, comp, cfg, rng_state):
    """Straight-line reference: redraw each candidate, score it alone, scan in order."""
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    base = grad_report(spec, theta, comp)
    sim, ref = base.min_sim, base.total_loss
    best, accepted = theta, []
    for a in range(cfg.n_a):
        cand = theta + rng.uniform(-cfg.rho, cfg.rho, size=theta.shape[0])
        rep = grad_report(spec, cand, comp)
        if accepts(cfg.mode, rep.min_sim, sim, rep.total_loss, ref, cfg.eps):
            sim, ref, best = rep.min_sim, rep.total_loss, cand
            accepted.append(a)
    return accepted, best


def test_criterion_3_replay_oracle(record_criterion):
    rng = np.random.default_rng(3)
    mismatches, total_acc = 0, 0
    for step in range(50):
        if step % 2 == 0:
            spec, n_a = ModelSpec(input_dim=1, degree=1), 500
        else:
            spec, n_a = ModelSpec(), 250
        comp = random_composite(rng, n_domains=2 + step % 3, b=12, input_dim=spec.input_dim, shift=1.0)
        theta = rng.normal(size=model.num_params(spec)) * 0.5
        cfg = AnnealConfig(rho=float(rng.choice([1e-3, 1e-2, 1e-1])), n_a=n_a,
                           mode=("relaxed", "strict-pareto")[step % 4 == 3])
        run_rng = np.random.default_rng(10_000 + step)
        state = run_rng.bit_generator.state
        out = gga_anneal(spec, theta, comp, cfg, 0.0, run_rng)
        ref_idx, ref_theta = _replay(spec, theta, comp, cfg, state)
        total_acc += len(ref_idx)
        if out.accepted_indices != ref_idx or not np.array_equal(out.theta_next, ref_theta):
            mismatches += 1
    ok = mismatches == 0 and total_acc > 0
    detail = f"{50 - mismatches}/50 steps identical; {total_acc} acceptances replayed"
    emit(record_criterion, 3, ok, detail)
    assert ok, detail


def test_criterion_4_alignment_telemetry(toy_runs, record_criterion):
    runs, _ = toy_runs
    a_s, a_e = AnnealConfig().a_start, AnnealConfig().a_end
    rises, steps, violations = 0, 0, 0
    for r in runs:
        tel = {x.t: x for x in r["gga"].telemetry}
        rises += tel[a_e].min_sim >= tel[a_s].min_sim
        for rec in r["gga"].anneal_log:
            steps += 1
            after = tel[rec.t].min_sim  # report at the annealed point
            if after < rec.baseline_sim or (after == rec.baseline_sim) != (rec.accepted == 0):
                violations += 1
    ok = rises >= 0.8 * N_SEEDS and violations == 0 and steps == N_SEEDS * (a_e - a_s + 1)
    detail = (f"min_sim(t={a_e}) >= min_sim(t={a_s}) in {rises}/{N_SEEDS} seeds (need {int(0.8 * N_SEEDS)}); "
              f"per-step invariant held in {steps - violations}/{steps} annealing steps")
    emit(record_criterion, 4, ok, detail)
    assert ok, detail


def test_criterion_5_degeneracy(record_criterion):
    ds = make_gaussian_toy(seed=7)
    base = TrainConfig(iterations=400, seed=3)
    erm = train(ds, base)
    erm_tel = [r.to_dict() for r in erm.telemetry]

    tiny = train(ds, replace(base, method="gga", anneal=AnnealConfig(rho=1e-300)))
    rho_ok = (sum(a.accepted for a in tiny.anneal_log) == 0 and len(tiny.anneal_log) == 101
              and [r.to_dict() for r in tiny.telemetry] == erm_tel and np.array_equal(tiny.theta, erm.theta))

    ggal = train(ds, replace(base, method="gga-l", ggal=GgaLConfig(gamma=0.0)))
    gamma_ok = [r.to_dict() for r in ggal.telemetry] == erm_tel and np.array_equal(ggal.theta, erm.theta)
    rng = np.random.default_rng(0)
    for _ in range(10):
        comp = sample_composite(ds, 32, rng)
        theta = rng.normal(size=15) * 0.1
        step = gga_l_step(ModelSpec(), theta, comp, GgaLConfig(gamma=0.0), 0.05, 0.0, rng)
        gamma_ok &= np.array_equal(step.theta_next, sgd_step(theta, total_gradient(ModelSpec(), theta, comp), 0.05))

    empty = train(ds, replace(base, method="gga", anneal=AnnealConfig(a_start=0, a_end=0)))
    window_ok = [r.to_dict() for r in empty.telemetry] == erm_tel and np.array_equal(empty.theta, erm.theta)

    ok = bool(rho_ok and gamma_ok and window_ok)
    detail = f"rho=1e-300 {rho_ok}; gamma=0 {bool(gamma_ok)}; empty window {window_ok}"
    emit(record_criterion, 5, ok, detail)
    assert ok, detail


def test_criterion_6_ggal_alpha(record_criterion):
    gamma = 1e-3
    cases = {-1.0: 2 * gamma, 0.0: gamma, 0.5: gamma / 2, 1.0: 0.0}
    errs = {m: abs(ggal_alpha(gamma, m) - want) for m, want in cases.items()}
    ok = all(e <= 1e-12 for e in errs.values())
    detail = "alpha at mean_sim {-1, 0, 0.5, 1}: max error " + f"{max(errs.values()):.1e}"
    emit(record_criterion, 6, ok, detail)
    assert ok, detail


def test_criterion_7_sensitivity_sweep(tmp_path, record_criterion, capsys):
    start = time.perf_counter()
    code = main(["sweep", str(TOY_CONFIG), "--out", str(tmp_path), "--rho-grid", "1e-6,1e-5,1e-4,1e-3"])
    elapsed = time.perf_counter() - start
    lines = (tmp_path / "sweep.csv").read_text().splitlines() if code == 0 else []
    accs = [float(line.split(",")[-2]) for line in lines[1:]]
    ok = code == 0 and len(accs) == 4 and all(np.isfinite(accs)) and elapsed < 900
    detail = f"exit {code}; {len(accs)} rows; accuracies {accs}; {elapsed:.0f}s"
    emit(record_criterion, 7, ok, detail)
    assert ok, detail


def test_criterion_8_determinism(tmp_path, record_criterion, capsys):
    argv = ["run", str(TOY_CONFIG), "--out", str(tmp_path / "a"), "--seeds", "2"]
    assert main(argv) == 0
    assert main(argv[:3] + [str(tmp_path / "b")] + argv[4:]) == 0
    names = ["summary.csv", "telemetry/split0_seed0.jsonl", "telemetry/split0_seed1.jsonl"]
    same = [filecmp.cmp(tmp_path / "a" / n, tmp_path / "b" / n, shallow=False) for n in names]
    before = (tmp_path / "a" / "summary.csv").read_bytes()
    assert main(argv) == 0
    rerun_same = (tmp_path / "a" / "summary.csv").read_bytes() == before
    ok = all(same) and rerun_same
    detail = f"{sum(same)}/{len(names)} files byte-identical across invocations; rerun overwrite identical {rerun_same}"
    emit(record_criterion, 8, ok, detail)
    assert ok, detail
