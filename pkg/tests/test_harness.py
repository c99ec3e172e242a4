import json
import math

import numpy as np
import pytest

from dronerelay import harness, padd, scenarios
from dronerelay.channel import zero_shadowing
from dronerelay.model import RngStream, SystemConfig, Topology


@pytest.fixture
def tiny():
    return scenarios.build_instance("tiny", 2)


def test_ground_only_ignores_drone_settings(tiny, cfg):
    a = harness.ground_only(tiny.topology, cfg, 1.0, tiny.shadows)
    b = harness.ground_only(tiny.topology, cfg.replace(p_tx_abs_dbm=10.0, h_min_m=100.0, w_air_hz=5e6), 1.0,
                            tiny.shadows)
    assert a.utility == b.utility
    ev = padd.evaluate(np.zeros((0, 3)), tiny.topology, cfg, tiny.shadows, 1.0)
    assert ev.utility == a.utility


# seeded "small" PPP instance 0, alpha = 1
GROUND_SMALL_0 = 1421.7354254346542


def test_ground_only_snapshot(cfg):
    inst = scenarios.build_instance("small", 0)
    st = harness.ground_only(inst.topology, cfg, 1.0, inst.shadows)
    assert st.utility == pytest.approx(GROUND_SMALL_0, rel=1e-12)
    # independent check: best-SNR cells, equal split of W_G, backbone never binds at these rates
    topo, sh = inst.topology, inst.shadows
    d = np.hypot(*(topo.user_xy[None, :, :] - topo.gbs_xy[:, None, :]).transpose(2, 0, 1))
    loss = 10 * cfg.eta_ground * np.log10(4 * np.pi * cfg.f_ground_hz * d / cfg.speed_of_light) + sh.ground_access
    rx = 10 ** ((cfg.p_tx_gbs_dbm - 30 - loss) / 10)
    noise = 10 ** ((cfg.noise_dbm_per_hz - 30) / 10) * cfg.w_ground_hz
    cell = rx.argmax(axis=0)
    sinr = rx[cell, np.arange(topo.n_users)] / (noise + rx.sum(axis=0) - rx[cell, np.arange(topo.n_users)])
    n = np.bincount(cell, minlength=topo.n_gbs)
    t = cfg.w_ground_hz / n[cell] * np.log2(1 + sinr)
    assert np.log(t).sum() == pytest.approx(GROUND_SMALL_0, rel=1e-9)


def test_mc_single_run_is_that_sample(tiny, cfg):
    res = harness.monte_carlo_search(tiny.topology, cfg, 1, np.random.default_rng(3), (1.0,), 2, tiny.shadows)[1.0]
    lat = padd.Lattice(tiny.topology.area, cfg)
    pos = harness.sample_fleet(lat, 2, np.random.default_rng(3))
    assert res.best.utility == padd.evaluate(pos, tiny.topology, cfg, tiny.shadows, 1.0).utility


def test_mc_running_best_monotone(tiny, cfg):
    res = harness.monte_carlo_search(tiny.topology, cfg, 40, 5, (0.0, math.inf), 2, tiny.shadows,
                                     keep_history=True)
    for r in res.values():
        h = r.running_best
        assert len(h) == 40 and all(b >= a for a, b in zip(h, h[1:]))


def test_mc_close_to_exhaustive(cfg):
    rng = np.random.default_rng(21)
    area = (1700.0, 1200.0)
    topo = Topology([[400, 600], [1300, 600]], 1e9, rng.uniform(0, 1, (10, 2)) * area, np.zeros((0, 3)), area)
    sh = zero_shadowing(2, 10, 1)
    best = harness.exhaustive_lattice_optimum(topo, cfg, 1.0, 1, sh)
    mc = harness.monte_carlo_optimum(topo, cfg, 10_000, RngStream(0, "mc"), 1.0, 1, sh)
    assert mc.utility <= best.utility + 1e-9
    assert (best.utility - mc.utility) / abs(best.utility) <= 0.02


def test_ra_moves_toward_lone_user(cfg):
    topo = Topology([[100, 100]], 1e9, [[1500, 1000]], np.zeros((0, 3)), (1700, 1200))
    start = np.array([[600.0, 500.0, 120.0]])
    end = harness.ra_baseline(topo, cfg, n_drones=1, initial=start)
    d = lambda p: np.hypot(*(p[0, :2] - [1500, 1000]))
    assert d(end) < d(start)
    assert end[0, 2] == 120.0


def test_ra_pure_repulsion_reaches_boundary(cfg):
    topo = Topology([[850, 600]], 1e9, np.zeros((0, 2)), np.zeros((0, 3)), (1700, 1200))
    end = harness.ra_baseline(topo, cfg, n_drones=1, initial=[[900.0, 650.0, 120.0]])
    x, y = end[0, :2]
    assert min(x, y, 1700 - x, 1200 - y) <= 1e-9


def test_ra_seeded_snapshot(tiny, cfg):
    a = harness.ra_baseline(tiny.topology, cfg, RngStream(1, "ra"), 2, tiny.shadows)
    b = harness.ra_baseline(tiny.topology, cfg, RngStream(1, "ra"), 2, tiny.shadows)
    np.testing.assert_array_equal(a, b)


def test_single_cell_grid():
    rep = harness.run_experiment({"scenario": "tiny", "seeds": [0], "fleet_sizes": [1], "schemes": ["PADD"],
                                  "max_iter": 5})
    assert len(rep.rows) == 1 and rep.rows[0]["run"] == "PADD-a1-A1-s0"


def test_ground_deduplicated_across_fleets():
    rep = harness.run_experiment({"scenario": "tiny", "seeds": [0], "fleet_sizes": [1, 2], "schemes": ["Ground"]})
    assert [r["fleet"] for r in rep.rows] == [0]


def test_stadium_and_robustness_columns():
    rep = harness.run_experiment({"scenario": "tiny", "kind": "stadium", "seeds": [1], "fleet_sizes": [2],
                                  "schemes": ["PADD"], "perturb_m": 50.0, "max_iter": 20})
    row = rep.rows[0]
    for k in ("utility", "stadium_utility", "stadium_aggregate_tput", "stadium_jain", "relative_loss"):
        assert row[k] is not None and math.isfinite(row[k])


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown experiment keys"):
        harness.ExperimentSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError, match="scheme"):
        harness.ExperimentSpec.from_dict({"schemes": ["GA"]})
    assert harness.ExperimentSpec.from_dict({"alphas": ["inf", 0]}).alphas == [math.inf, 0.0]


REPORT_KEYS = {"spec", "runs", "errors"}
SPEC_KEYS = {"scenario", "kind", "seeds", "fleet_sizes", "schemes", "alphas", "mc_runs", "max_iter", "perturb_m",
             "n_users", "config"}


def test_report_schema(tmp_path):
    rep = harness.run_experiment({"scenario": "tiny", "seeds": [0], "fleet_sizes": [2],
                                  "schemes": ["PADD", "MC", "RA", "Ground"], "alphas": [0, "inf"], "mc_runs": 5,
                                  "max_iter": 5})
    out = rep.write(tmp_path)
    data = json.loads((out / "report.json").read_text())
    assert set(data) == REPORT_KEYS
    assert set(data["spec"]) == SPEC_KEYS
    assert data["spec"]["alphas"] == ["0", "inf"]
    for run in data["runs"]:
        assert set(run) == set(harness.ExperimentReport.COLUMNS)
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(harness.ExperimentReport.COLUMNS)
    assert (out / "trajectories.csv").read_text().startswith("run,epoch,drone,x,y,h")
    assert len((out / "metrics.csv").read_text().splitlines()) == 1 + len(rep.rows)


def test_reports_match_across_workers():
    spec = {"scenario": "tiny", "seeds": [0, 1], "fleet_sizes": [2], "schemes": ["PADD", "MC"], "mc_runs": 10,
            "max_iter": 30}
    a = harness.run_experiment(spec).to_json()
    b = harness.run_experiment({**spec, "workers": 4}).to_json()
    assert a == b


def test_event_warm_start():
    summ, traj, traces = harness.run_event(SystemConfig(), 0, epochs=1, n_drones=2, n_gbs=2, area=(1700.0, 1200.0),
                                           event=scenarios.EventConfig(initial_users=30, arrival_batch=10),
                                           max_iter=10)
    assert [s["users"] for s in summ] == [30, 40]
    assert all(s["feasible"] for s in summ)
    np.testing.assert_array_equal(traces[1].positions[0], traces[0].positions[-1])
