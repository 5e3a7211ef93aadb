"""Acceptance suite; one PASS/FAIL line per criterion is printed in the terminal summary."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from latentood import io
from latentood.denoiser import gradient_check, load_checkpoint
from latentood.geometry import LatentBank, annulus_fraction, geometry_report
from latentood.pipeline import RunConfig, run_pipeline
from latentood.sampler import (
    RejectionConfig,
    acceptance_rate,
    estimate_gaussian,
    reference_distance,
    sample_ood_latent,
    slerp,
    verify_result,
)
from latentood.schedule import forward_diffuse, toy_schedule

MODULE_START = time.perf_counter()
BUDGET_S = 30 * 60


def _bank(toy_run, domain):
    return LatentBank(io.load_tensor(Path(toy_run["dir"]) / f"bank_{domain}.ldt"), domain)


def test_criterion_1_gaussian_geometry():
    start = time.perf_counter()
    bank = LatentBank(np.random.default_rng(2024).standard_normal((1000, 256)))
    rep = geometry_report(bank, n_pairs=1000, seed=0)
    elapsed = time.perf_counter() - start
    pa, oa, pd = rep.pair_angle["mean"], rep.origin_angle["mean"], rep.pair_distance["mean"]
    checks = [58 <= pa <= 62, 88 <= oa <= 92, abs(pd / math.sqrt(512) - 1) <= 0.05, elapsed < 10]
    record(1, all(checks), f"pair angle {pa:.2f}, origin angle {oa:.2f}, distance {pd:.2f} vs {math.sqrt(512):.2f}, {elapsed:.2f}s")
    assert all(checks)


def test_criterion_2_annulus():
    bank = LatentBank(np.random.default_rng(7).standard_normal((10_000, 256)))
    frac = annulus_fraction(bank, 3.0, 1.0)
    threshold = 1 - 4 / 9 * math.exp(-9 / 4) - 0.01
    record(2, frac >= threshold, f"fraction {frac:.4f} >= {threshold:.4f}")
    assert frac >= threshold


def test_criterion_3a_forward_marginal_moments():
    s = toy_schedule()
    M = 10_000
    x0 = np.random.default_rng(0).uniform(-1, 1, 256)
    eps = np.random.default_rng(1).standard_normal((M, 256))
    ok = True
    worst = []
    for t in (20, 100, 160):
        mean, var = math.sqrt(s.abar(t)) * x0, 1 - s.abar(t)
        out = forward_diffuse(np.broadcast_to(x0, eps.shape), t, eps, s)
        z_mean = (out.mean(0) - mean) / math.sqrt(var / M)
        z_var = (out.var(0, ddof=1) - var) / (var * math.sqrt(2 / (M - 1)))
        # per-dimension 3-sigma bands hold for all but chance exceedances; the pooled statistic must sit inside its band
        ok &= np.mean(np.abs(z_mean) <= 3) >= 0.99 and np.mean(np.abs(z_var) <= 3) >= 0.99
        ok &= abs(z_mean.mean()) * math.sqrt(256) <= 3 and abs(z_var.mean()) * math.sqrt(256) <= 3
        worst.append(max(np.abs(z_mean).max(), np.abs(z_var).max()))
    record(3, ok, f"forward moments within 3-sigma bands (max |z| {max(worst):.2f} over 256 dims)")
    assert ok


def test_criterion_3b_inverted_bank_std(toy_run):
    body = toy_run["body"]
    target = body["marginal_std"]
    ratios = {dom: info["per_dim_std_ratio"] for dom, info in body["banks"].items()}
    ok = all(abs(r - 1) <= 0.25 for r in ratios.values())
    detail = ", ".join(f"{d} std/target {r:.3f}" for d, r in sorted(ratios.items()))
    record(3, ok, f"{detail} (target {target:.4f})")
    assert ok


def test_criterion_4_reconstruction(toy_run):
    body = toy_run["body"]
    rec = body["reconstruction"]["stripes"]
    train_s = toy_run["report"].timings["train"]
    ok = rec["mae_eta0"] <= 0.1 and rec["mae_eta0"] <= rec["mae_eta1"] / 3 and train_s <= 15 * 60
    record(4, ok, f"stripes MAE eta=0 {rec['mae_eta0']:.4f}, eta=1 {rec['mae_eta1']:.4f}, training {train_s:.0f}s")
    assert ok


def test_criterion_5_separability(toy_run):
    sep = toy_run["body"]["separability"]
    thr = toy_run["body"]["separation_threshold"]
    ok = sep["latent_test_accuracy"] >= 0.95 and sep["center_distance"] > thr
    record(5, ok, f"held-out accuracy {sep['latent_test_accuracy']:.3f}, center distance {sep['center_distance']:.2f} > {thr:.1f}")
    assert ok


def test_criterion_6_interference(toy_run):
    ev = toy_run["body"]["evaluation"]
    base, pipe = ev["interference_baseline"], ev.get("interference_pipeline", 1.0)
    n = toy_run["body"]["sampling"]["accepted"]
    ok = base >= 0.9 and pipe <= 0.4 and base - pipe >= 0.5 and n == 64
    record(6, ok, f"baseline {base:.3f}, pipeline {pipe:.3f} on {n} samples, vanilla Gaussian {ev['interference_vanilla_gaussian']:.3f}")
    assert ok


def test_criterion_7_sampler_contracts(toy_run):
    bank = _bank(toy_run, "stripes")
    est = estimate_gaussian(bank)
    d_o = reference_distance(bank)
    configs = [RejectionConfig(max_attempts=5000, seed=s) for s in range(20)]
    configs += [RejectionConfig(omega_d=0.5, omega_a=10.0, max_attempts=500, seed=s) for s in range(100)]
    results = [(cfg, sample_ood_latent(bank, est, cfg, d_o)) for cfg in configs]
    accepted = [(cfg, r) for cfg, r in results if r.accepted]
    verified = all(verify_result(r, bank, d_o, cfg) for cfg, r in accepted)

    grid = [(0.05, 1.0), (0.1, 2.0), (0.3, None), (0.3, 6.0), (0.5, 10.0), (0.5, 20.0), (1.0, 40.0)]
    rates = [acceptance_rate(bank, est, RejectionConfig(omega_d=wd, omega_a=wa, seed=1), 1000, d_o) for wd, wa in grid]
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))

    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        a, b = rng.standard_normal((2, 256))
        b *= np.linalg.norm(a) / np.linalg.norm(b)
        lam = rng.uniform()
        worst = max(
            worst,
            np.abs(slerp(a, b, 0.0) - a).max(),
            np.abs(slerp(a, b, 1.0) - b).max(),
            abs(np.linalg.norm(slerp(a, b, lam)) - np.linalg.norm(a)),
        )
    ok = bool(accepted) and verified and monotone and worst <= 1e-9
    record(7, ok, f"{len(accepted)}/{len(results)} accepted, all re-verified={verified}, rates {[round(r, 3) for r in rates]}, slerp max err {worst:.1e}")
    assert ok


def _tiny_config(out_dir, model_path):
    return RunConfig(
        out_dir=str(out_dir),
        model_path=str(model_path),
        n_bank=30,
        n_recon=4,
        recon_domains=("disks", "stripes"),
        steps=10,
        n_pairs=100,
        n_generate=4,
        n_rate_candidates=50,
        sampler=RejectionConfig(max_attempts=50, n_pairs=100).to_dict(),
        sweep_t_fracs=(0.8,),
        sweep_etas=(0.0, 1.0),
        n_sweep=2,
    )


def _artifacts(root: Path) -> dict[str, bytes]:
    skip = {"timings.json", "config.json"}
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def test_criterion_8_determinism_and_gradients(toy_run, tmp_path):
    model = Path(toy_run["dir"]) / "model.dnz"
    run_pipeline(_tiny_config(tmp_path / "a", model))
    run_pipeline(_tiny_config(tmp_path / "b", model))
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    identical = a.keys() == b.keys() and all(a[k] == b[k] for k in a)

    untrained_cfg = dict(model_path=None, n_train=64, train={"epochs": 1, "batch_size": 32, "learning_rate": 1e-3})
    c1 = RunConfig(**{**_tiny_config(tmp_path / "c", model).__dict__, **untrained_cfg})
    c2 = RunConfig(**{**_tiny_config(tmp_path / "d", model).__dict__, **untrained_cfg})
    run_pipeline(c1)
    run_pipeline(c2)
    c, d = _artifacts(tmp_path / "c"), _artifacts(tmp_path / "d")
    identical &= c.keys() == d.keys() and all(c[k] == d[k] for k in c)

    p = load_checkpoint(model)
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, (4, 16, 16))
    eps = rng.standard_normal((4, 16, 16))
    errs = gradient_check(p, x0, np.array([5, 50, 120, 190]), eps, toy_schedule(), n_probe=100)
    ok = identical and np.all(errs <= 1e-3)
    record(8, ok, f"{len(a) + len(c)} artifacts byte-identical={identical}, gradient max rel err {errs.max():.1e}")
    assert ok


def test_criterion_9_budget(toy_run):
    elapsed = time.perf_counter() - min(MODULE_START, toy_run["start"])
    record(9, elapsed < BUDGET_S, f"acceptance suite {elapsed:.0f}s < {BUDGET_S}s")
    assert elapsed < BUDGET_S
