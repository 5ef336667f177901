"""Acceptance criteria, one test and one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import os
import statistics
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from iclsim import oracles
from iclsim.al import pricing_consensus_margin, theorem3_check, theorem4_threshold
from iclsim.config import load_config
from iclsim.core import nash_check
from iclsim.fl import prop2_ratio, theorem2_residual
from iclsim.harness import run_batch
from iclsim.mab import MabPricing, run_mab, MabConfig, participation_condition, profit_performance
from iclsim.rng import stream

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script without pytest's path setup
    ACCEPTANCE_LINES = []


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


_cache = {}


def batch(name, **override):
    """Run a shipped config once per session; returns (summary, seconds)."""
    key = (name, tuple(sorted(override.items())))
    if key not in _cache:
        cfg = load_config(CONFIGS / f"{name}.toml")
        cfg.params.update(override)
        with tempfile.TemporaryDirectory() as out:
            t0 = time.perf_counter()
            summary = run_batch(cfg, out_dir=out)
            _cache[key] = (summary, time.perf_counter() - t0)
    return _cache[key]


# ------------------------------------------------------------------ criteria


def test_mab_reproduction():
    summary, secs = batch("mab")
    rows = summary.per_seed
    wins = sum(r["cum_reward"] > r["baseline"]["cum_reward"] for r in rows)
    nonneg = sum(r["cum_balance"] >= 0 for r in rows)
    ok = wins >= 18 and nonneg >= 18 and secs < 5
    assert report("mab_reproduction", ok,
                  f"reward beats baseline {wins}/20 (need 18), balance >= 0 {nonneg}/20 (need 18), {secs:.2f}s (< 5s)")


def test_profit_performance_monotone():
    p, s = MabPricing(1.0, 5.0, 10.0, 2.0, 4.0), 1.0
    cfg = MabConfig()
    mu1 = float(stream(0, "mab", "means").normal(cfg.mu_mean, cfg.mu_sd, size=cfg.M).max())
    grid = np.linspace(mu1 - 6 * s, mu1 + 2 * s, 200)
    diffs = np.diff(profit_performance(grid, mu1, p, s))
    increasing = bool(np.all(diffs > 0))
    # upward closure of the participation set on each seed's population
    closed = 0
    for seed in range(20):
        mus = stream(seed, "mab", "means").normal(cfg.mu_mean, cfg.mu_sd, size=cfg.M)
        part = [participation_condition(m, mus, cfg.epsilon, p, s) for m in mus]
        order = np.argsort(mus)
        flags = np.array(part)[order]
        closed += bool(not flags.any() or flags[int(np.argmax(flags)):].all())
    ok = increasing and closed == 20
    assert report("profit_performance_monotone", ok,
                  f"strictly increasing on [mu1-6s, mu1+2s]: {increasing} "
                  f"({int((diffs <= 0).sum())}/199 non-positive steps); "
                  f"participation set upward-closed {closed}/20")


def test_nash_oracle_equivalence():
    rng = stream(0, "acceptance", "nash")
    t0 = time.perf_counter()
    agree = 0
    for _ in range(200):
        g = oracles.random_small_game(rng, max_candidates=4, max_support=3)
        prof = oracles.random_profile(rng, g)
        agree += nash_check(g, prof).is_equilibrium == oracles.best_response_equilibrium(g, prof)
    secs = time.perf_counter() - t0
    assert report("nash_oracle_equivalence", agree == 200 and secs < 10, f"{agree}/200 agree, {secs:.2f}s (< 10s)")


def test_prop1_identity():
    rng = stream(0, "acceptance", "prop1")
    hits = 0
    for _ in range(1000):
        obj, welfare = oracles.prop1_round(rng)
        hits += abs(obj - welfare) <= 1e-9
    assert report("prop1_identity", hits == 1000, f"{hits}/1000 within 1e-9")


def test_profit_identity_all_runs():
    worst, n = 0.0, 0
    for name in ("mab", "fl_gamma2001", "fl_gamma11", "pal", "pal_zero_pay"):
        summary, _ = batch(name)
        for r in summary.per_seed:
            worst = max(worst, r["max_identity_residual"], r["baseline"]["max_identity_residual"])
            n += 2
    assert report("profit_identity", worst <= 1e-9, f"max residual {worst:.3g} over {n} runs (<= 1e-9)")


def test_theorem2_concentration():
    t0 = time.perf_counter()
    rng = stream(0, "acceptance", "theorem2")
    w = rng.uniform(0.5, 1.5, 10_000)
    X = rng.uniform(-1, 1, (10_000, 5))
    med = {}
    for K in (100, 10_000):
        med[K] = statistics.median(theorem2_residual(K, 0.3, w, X, K * 1000 + d, bound=1.5)[0] for d in range(50))
    secs = time.perf_counter() - t0
    ratio = med[10_000] / med[100]
    assert report("theorem2_concentration", ratio < 0.25 and secs < 5,
                  f"median ratio K=10000/K=100 = {ratio:.3f} (< 0.25), {secs:.2f}s (< 5s)")


def test_prop2_ratio():
    t0 = time.perf_counter()
    means = np.linspace(-1.0, 1.0, 8)
    target = 0.0
    # sigma^2 / (|P| max(mu_m - mu)^2) = 100
    sigma = math.sqrt(100 * 8 * np.max((means - target) ** 2))
    noisy = prop2_ratio(means, sigma, 0.5, target)
    clean = prop2_ratio(means, 1e-3, 0.5, target)
    secs = time.perf_counter() - t0
    ok = noisy >= 0.95 and clean < 1 and secs < 30
    assert report("prop2_ratio", ok,
                  f"noisy ratio {noisy:.4f} (>= 0.95), noiseless ratio {clean:.3g} (< 1), {secs:.2f}s (< 30s)")


def test_theorem4_boundary():
    rng = stream(0, "acceptance", "theorem4")
    good = 0
    for _ in range(100):
        K = int(rng.integers(2, 8))
        u = float(rng.uniform(0.5, 3.0))
        mus = sorted(rng.uniform(0.0, 5.0, K), reverse=True)
        mus[0] += 1e-3  # keep a strict leader
        c = theorem4_threshold(u, mus, K)
        at = [pricing_consensus_margin(c, u, mus[0], mj, K) for mj in mus[1:]]
        above = [pricing_consensus_margin(c + 1e-6, u, mus[0], mj, K) for mj in mus[1:]]
        j = int(np.argmin(at))
        good += abs(at[j]) <= 1e-9 and min(at) >= -1e-9 and above[j] < 0
    assert report("theorem4_boundary", good == 100, f"{good}/100 instances tight at c* and violated at c*+1e-6")


def test_theorem3_cross_validation():
    rng = stream(0, "acceptance", "theorem3")
    agree = 0
    for _ in range(500):
        inst = oracles.random_theorem3_instance(rng)
        agree += theorem3_check(*inst) == oracles.consensus_by_simulation(*inst)
    assert report("theorem3_cross_validation", agree == 500, f"{agree}/500 agree")


def test_byzantine_fl():
    sharp, t1 = batch("fl_gamma2001")
    soft, t2 = batch("fl_gamma11")
    soft_by_seed = {r["seed"]: r for r in soft.per_seed}
    vs_soft = sum(r["final_collab_gain"] > soft_by_seed[r["seed"]]["final_collab_gain"] for r in sharp.per_seed)
    vs_base = sum(r["final_collab_gain"] > r["baseline"]["final_collab_gain"] for r in sharp.per_seed)
    secs = t1 + t2
    ok = vs_soft >= 18 and vs_base >= 18 and secs < 60
    assert report("byzantine_fl", ok,
                  f"gamma=2001 beats gamma=11 {vs_soft}/20, beats baseline {vs_base}/20 (need 18 each), {secs:.2f}s (< 60s)")


def test_pal_direction():
    all_pay, t1 = batch("pal")
    zero_pay, t2 = batch("pal_zero_pay")
    zp = {r["seed"]: r for r in zero_pay.per_seed}
    beats = sum(all(e < b for e, b in zip(r["final_test_error"], r["baseline"]["final_test_error"]))
                for r in all_pay.per_seed)
    smaller = 0
    for r in all_pay.per_seed:
        base = r["baseline"]["final_test_error"][2]
        gain_all = base - r["final_test_error"][2]
        gain_zero = base - zp[r["seed"]]["final_test_error"][2]
        smaller += gain_zero < gain_all
    secs = t1 + t2
    ok = beats >= 9 and smaller >= 8 and secs < 60
    assert report("pal_direction", ok,
                  f"all entities beat local-only {beats}/10 (need 9), zero-pay entity gains less {smaller}/10 "
                  f"(need 8), {secs:.2f}s (< 60s)")


def test_zero_balance():
    rounds_ok = all(r["zero_balance"] for name in ("pal", "pal_zero_pay") for r in batch(name)[0].per_seed)
    assert report("zero_balance", rounds_ok, f"sum of costs exactly 0 on every round of every run: {rounds_ok}")


def test_harness_determinism():
    cfg = load_config(CONFIGS / "mab.toml")
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        run_batch(cfg, out_dir=a)
        run_batch(cfg, out_dir=b)
        names = sorted(os.listdir(a))
        same = names == sorted(os.listdir(b)) and all(
            Path(a, n).read_bytes() == Path(b, n).read_bytes() for n in names)
    assert report("harness_determinism", same, f"{len(names)} files byte-identical across two runs: {same}")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
