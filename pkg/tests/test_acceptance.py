"""End-to-end acceptance suite; each test records one pass/fail line shown in the terminal summary.

Slow (tens of minutes on one core). Run alone with `pytest tests/test_acceptance.py -v`.
"""
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from dronerelay import harness, padd, scenarios
from dronerelay.allocation import allocate_no_drones, fuzz
from dronerelay.association import gap_brute_force, gap_knap
from dronerelay.model import RngStream, SystemConfig, check_feasibility

from conftest import FEASIBILITY

pytestmark = pytest.mark.acceptance
MHZ = 1e6
ALPHA_LABEL = {0.0: "0", 1.0: "1", math.inf: "inf"}


# 1 ------------------------------------------------------------------------------------------

def test_oracle_equivalence(record):
    t0 = time.perf_counter()
    recs = fuzz.fuzz(1000, seed=2024)
    elapsed = time.perf_counter() - t0
    worst_rel = max(r.rel_diff for r in recs)
    worst_res = max(r.residual for r in recs)
    bad = [r for r in recs if not r.ok(1e-5, 1e-9)]
    ok = not bad and elapsed <= 300 and len(recs) == 3 * 5 * 1000
    record(1, ok, f"{len(recs)} instances, max rel diff {worst_rel:.1e}, max residual {worst_res:.1e}, "
                  f"{len(bad)} mismatches, {elapsed:.0f} s")
    assert not bad, bad[:3]
    assert elapsed <= 300


# 2 ------------------------------------------------------------------------------------------

def test_closed_form_spot_values(record):
    checks = []
    # proportional fairness: every user gets the same bandwidth
    s = allocate_no_drones([0.3, 1.7, 4.2, 9.0], 18 * MHZ, 0.18 * MHZ, alpha=1.0)
    checks.append(np.allclose(s.gbs_user_bw, 4.5 * MHZ, rtol=1e-12, atol=0))
    # max throughput: best user takes W - (n-1) W_min
    s = allocate_no_drones([2.0, 0.5, 6.0, 1.0, 3.0], 18 * MHZ, 0.18 * MHZ, alpha=0.0)
    want = np.full(5, 0.18 * MHZ)
    want[2] = 18 * MHZ - 4 * 0.18 * MHZ
    checks.append(np.allclose(s.gbs_user_bw, want, rtol=1e-12, atol=0))
    # max-min with a binding backbone: equal rates lowered by R/|U|
    effs = np.array([1.0, 2.0, 4.0])
    free = allocate_no_drones(effs, 7 * MHZ, 0.5 * MHZ, alpha=math.inf)
    level = 7 * MHZ / (1 / effs).sum()
    checks.append(np.allclose(free.gbs_user_tput, level, rtol=1e-12, atol=0))
    tau = 2.0 * level
    cut = allocate_no_drones(effs, 7 * MHZ, 0.5 * MHZ, tau=tau, alpha=math.inf)
    R = 3 * level - tau
    checks.append(np.allclose(cut.gbs_user_tput, level - R / 3, rtol=1e-12, atol=0))
    ok = all(checks)
    record(2, ok, f"{sum(checks)}/{len(checks)} hand-built instances exact to 1e-12")
    assert ok, checks


# 3 ------------------------------------------------------------------------------------------

def test_gap_knap_quality(record):
    rng = np.random.default_rng(33)
    exact = below = infeasible = 0
    worst = 1.0
    for _ in range(1000):
        W = rng.uniform(0.0, 10.0, (4, 4))
        h = gap_knap(W, 2)
        b = gap_brute_force(W, 2)
        infeasible += int((h.per_gbs_count > 2).any() or (h.drone_gbs < 0).any())
        ratio = h.objective / b.objective
        worst = min(worst, ratio)
        exact += ratio >= 1 - 1e-12
        below += ratio < 0.95
    ok = exact >= 900 and below == 0 and infeasible == 0
    record(3, ok, f"optimal in {exact}/1000, worst ratio {worst:.4f}, infeasible {infeasible}")
    assert ok


# 4 ------------------------------------------------------------------------------------------

# held out from the seeds used to pick the PADD defaults (0-19)
PADD_MC_SEEDS = range(100, 120)


def test_padd_vs_monte_carlo(record):
    cfg = SystemConfig()
    alphas = (0.0, 1.0, math.inf)
    t0 = time.perf_counter()
    gaps = {a: [] for a in alphas}
    means = {a: [0.0, 0.0] for a in alphas}
    for seed in PADD_MC_SEEDS:
        inst = scenarios.build_instance("tiny", seed, cfg=cfg)
        mc = harness.monte_carlo_search(inst.topology, cfg, 10_000, RngStream(seed, "mc"), alphas, 2, inst.shadows)
        for a in alphas:
            st, _ = padd.optimize(inst.topology, cfg, RngStream(seed, "padd"), 100, a, inst.shadows, n_drones=2)
            best = mc[a].best.utility
            gaps[a].append((best - st.utility) / abs(best))
            means[a][0] += st.utility / len(PADD_MC_SEEDS)
            means[a][1] += best / len(PADD_MC_SEEDS)
    elapsed = time.perf_counter() - t0
    mean_gap = {a: (m[1] - m[0]) / abs(m[1]) for a, m in means.items()}
    parts = []
    for a in alphas:
        g = np.array(gaps[a])
        parts.append(f"a={ALPHA_LABEL[a]}: gap of means {mean_gap[a]:+.2%}, per-seed max {g.max():+.1%}, "
                     f"{int((g > 0.05).sum())}/20 seeds > 5%")
    ok = all(mean_gap[a] <= 0.05 for a in alphas) and elapsed <= 600
    record(4, ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    test_padd_vs_monte_carlo.gaps = gaps
    assert all(mean_gap[a] <= 0.05 for a in alphas), mean_gap
    assert elapsed <= 600


@pytest.mark.xfail(strict=False, reason="max-min plateaus trap single-drone moves on some tiny seeds")
def test_padd_vs_monte_carlo_every_instance():
    gaps = getattr(test_padd_vs_monte_carlo, "gaps", None)
    if gaps is None:
        pytest.skip("needs test_padd_vs_monte_carlo in the same session")
    assert all(max(g) <= 0.05 for g in gaps.values())


# 5 ------------------------------------------------------------------------------------------

def test_monotone_and_convergent(record):
    cfg = SystemConfig()
    alphas = (0.0, 1.0, math.inf)
    bad_gain = not_done = rerun_moves = 0
    for run in range(200):
        inst = scenarios.build_instance("tiny", 500 + run // 3, cfg=cfg)
        a = alphas[run % 3]
        st, tr = padd.optimize(inst.topology, cfg, RngStream(run, "c5"), 100, a, inst.shadows, n_drones=2)
        bad_gain += sum(not r["gain"] > cfg.delta for r in tr.accepted)
        not_done += tr.reason not in ("exhausted", "epsilon")
        _, again = padd.optimize(inst.topology, cfg, RngStream(run, "c5/again"), 100, a, inst.shadows,
                                 initial=st.topology.drone_xyz)
        rerun_moves += again.n_moves
    ok = bad_gain == 0 and not_done == 0 and rerun_moves == 0
    record(5, ok, f"200 runs: {bad_gain} accepted moves <= delta, {not_done} stopped by max_iter, "
                  f"{rerun_moves} moves on idempotent re-runs")
    assert ok


# 6 ------------------------------------------------------------------------------------------

def test_drone_benefit_trend(record):
    cfg = SystemConfig()
    seeds = range(50)
    fleets = (0, 1, 2, 3)
    parts, ok = [], True
    for a in (0.0, 1.0):
        U = np.zeros((len(seeds), len(fleets)))
        T = np.zeros_like(U)
        for i, seed in enumerate(seeds):
            inst = scenarios.build_instance("small", seed, cfg=cfg)
            for j, n in enumerate(fleets):
                if n == 0:
                    st = harness.ground_only(inst.topology, cfg, a, inst.shadows)
                else:
                    st, _ = padd.optimize(inst.topology, cfg, RngStream(seed, f"c6/{n}"), 100, a, inst.shadows,
                                          n_drones=n)
                U[i, j], T[i, j] = st.utility, st.aggregate_tput
        for name, M in (("utility", U), ("throughput", T)):
            mean = M.mean(axis=0)
            worst_p = 0.0
            for j in range(len(fleets) - 1):
                d = M[:, j + 1] - M[:, j]
                up, down = int((d > 0).sum()), int((d < 0).sum())
                p = stats.binomtest(up, up + down, 0.5, alternative="greater").pvalue if up + down else 1.0
                worst_p = max(worst_p, p)
            good = bool((np.diff(mean) >= 0).all()) and worst_p < 0.05
            ok &= good
            parts.append(f"a={ALPHA_LABEL[a]} {name}: means non-decreasing={bool((np.diff(mean) >= 0).all())}, "
                         f"worst sign-test p={worst_p:.1e}")
    record(6, ok, "; ".join(parts))
    assert ok


# 7 ------------------------------------------------------------------------------------------

def test_robustness_to_position_noise(record):
    spec = harness.ExperimentSpec(scenario="small", seeds=list(range(100)), fleet_sizes=[3], schemes=["PADD"],
                                  alphas=[1.0], perturb_m=50.0)
    rep = harness.run_experiment(spec)
    loss = np.array([r["relative_loss"] for r in rep.rows])
    ok = len(loss) == 100 and loss.mean() <= 0.10 and np.median(loss) <= 0.05
    record(7, ok, f"100 seeds, 50 m noise: mean loss {loss.mean():.2%}, median {np.median(loss):.2%}, "
                  f"max {loss.max():.2%}")
    assert ok


# 8 ------------------------------------------------------------------------------------------

def _random_config(rng):
    return SystemConfig(u_max=int(rng.choice([3, 10, 200])), a_g_max=int(rng.choice([1, 2, 3])),
                        tau_g_bps=float(rng.choice([20e6, 200e6, 1e9])),
                        w_backhaul_hz=float(rng.choice([6e6, 18e6])), sigma_ground_db=float(rng.uniform(0, 8)))


def test_feasibility_everywhere(record):
    rng = np.random.default_rng(88)
    n = fails = 0
    before = FEASIBILITY["checked"]
    while n < 10_000:
        cfg = _random_config(rng)
        seed = int(rng.integers(1 << 30))
        preset = "tiny" if rng.random() < 0.7 else "small"
        # keep the fleet within the backhaul slots
        A = min(int(rng.integers(0, 4)), scenarios.PRESETS[preset].n_gbs * cfg.a_g_max)
        inst = scenarios.build_instance(preset, seed, "ppp" if rng.random() < 0.5 else "stadium", cfg, n_drones=A)
        lat = padd.Lattice(inst.topology.area, cfg)
        for _ in range(50):
            pos = harness.sample_fleet(lat, A, rng)
            a = float(rng.choice([0.0, 0.25, 0.5, 1.0, 2.0, math.inf]))
            ev = padd.evaluate(pos, inst.topology, cfg, inst.shadows, a)
            fails += not check_feasibility(ev.state, ev.budget, cfg)
            n += 1
    suite = FEASIBILITY["checked"] - before
    ok = fails == 0 and not FEASIBILITY["failed"]
    record(8, ok, f"{n} fuzzed evaluations, {fails} infeasible; {FEASIBILITY['checked']} checked in the session "
                  f"so far, {len(FEASIBILITY['failed'])} failed")
    assert suite >= 10_000
    assert ok, FEASIBILITY["failed"][:3]


# 9 ------------------------------------------------------------------------------------------

def test_determinism_across_threads(record, tmp_path):
    spec = {"scenario": "small", "kind": "stadium", "seeds": [0, 1, 2], "fleet_sizes": [0, 2],
            "schemes": ["PADD", "Ground", "MC", "RA"], "alphas": [0, 1, "inf"], "mc_runs": 50, "max_iter": 40}
    top = max(2, os.cpu_count() or 1)
    a = harness.run_experiment({**spec, "workers": 1})
    b = harness.run_experiment({**spec, "workers": top})
    da, db = a.write(tmp_path / "w1"), b.write(tmp_path / f"w{top}")
    same = all((da / f).read_bytes() == (db / f).read_bytes()
               for f in ("report.json", "metrics.csv", "trajectories.csv"))
    record(9, same, f"{len(a.rows)} runs, workers 1 vs {top}: report.json, metrics.csv, trajectories.csv "
                    f"{'identical' if same else 'differ'}")
    assert same
