import math

import numpy as np
import pytest

from dronerelay.channel import (DegenerateGeometryError, a2g_loss_db, beam_gain, compute_link_budget,
                                draw_shadowing, g2a_loss_db, g2g_loss_db, ground_link_terms, los_probability,
                                with_backhaul_beams, zero_shadowing)
from dronerelay.model import Topology

# high-precision values from tests/oracles/channel_values.py
P_LOS_OVERHEAD = 0.9977162470810939028
P_LOS_45 = 0.75577408193864573079
A2G_100_100 = 90.6836327948313245
GAIN_AT_3DB = 1.9952623149688796014


def test_los_at_exponent_zero(cfg):
    # elevation of beta1 degrees makes the exponent vanish
    h = 100.0
    r = h / math.tan(math.radians(cfg.beta1))
    assert los_probability([0, 0, h], [r, 0], cfg) == pytest.approx(1 / 13.08, rel=1e-12)


def test_los_overhead_and_45deg(cfg):
    assert los_probability([0, 0, 100], [0, 0], cfg) == pytest.approx(P_LOS_OVERHEAD, rel=1e-13)
    p45 = los_probability([0, 0, 100], [100, 0], cfg)
    assert p45 == pytest.approx(P_LOS_45, rel=1e-13)
    assert 1 / 13.08 < p45 < P_LOS_OVERHEAD


def test_los_monotone_in_elevation(cfg):
    angles = np.linspace(0.5, 90, 400)
    r = 100.0 / np.tan(np.radians(angles))
    p = los_probability(np.array([[0, 0, 100.0]] * 400), np.column_stack([r, np.zeros(400)]), cfg)
    assert (np.diff(p) > 0).all()


def test_a2g_reference_value(cfg):
    assert a2g_loss_db([0, 0, 100], [100, 0], cfg) == pytest.approx(A2G_100_100, rel=1e-13)


def test_a2g_limits(cfg):
    # a steeper sigmoid lets P_LoS reach its limits inside the elevation range
    cfg = cfg.replace(beta2=1.0)
    fspl = lambda d: 20 * math.log10(4 * math.pi * cfg.f_air_hz * d / cfg.speed_of_light)
    # very high drone almost overhead: LoS
    d = math.hypot(1.0, 1e5)
    assert a2g_loss_db([0, 0, 1e5], [1, 0], cfg) == pytest.approx(fspl(d) + cfg.xi_los_db, abs=1e-3)
    # grazing angle: NLoS
    d = math.hypot(1e6, 1.0)
    assert a2g_loss_db([0, 0, 1.0], [1e6, 0], cfg) == pytest.approx(fspl(d) + cfg.xi_nlos_db, abs=1e-3)


def test_zero_distance_rejected(cfg):
    with pytest.raises(DegenerateGeometryError):
        g2g_loss_db([5, 5], [5, 5], cfg)


def test_g2g_unit_argument_and_shadow(cfg):
    d = cfg.speed_of_light / (4 * math.pi * cfg.f_ground_hz)
    assert g2g_loss_db([0, 0], [d, 0], cfg) == pytest.approx(0.0, abs=1e-12)
    base = g2g_loss_db([0, 0], [250, 0], cfg)
    assert g2g_loss_db([0, 0], [250, 0], cfg, 4.0) - base == pytest.approx(4.0, abs=1e-12)
    # eta = 3: ten times the distance adds 30 dB
    assert g2g_loss_db([0, 0], [2500, 0], cfg) - base == pytest.approx(30.0, abs=1e-9)


def test_g2a_mirrors_with_eta_2(cfg):
    d = cfg.speed_of_light / (4 * math.pi * cfg.f_backhaul_hz)
    assert g2a_loss_db([0, 0], [0, 0, d], cfg) == pytest.approx(0.0, abs=1e-12)
    base = g2a_loss_db([0, 0], [300, 0, 400], cfg)
    assert g2a_loss_db([0, 0], [3000, 0, 4000], cfg) - base == pytest.approx(20.0, abs=1e-9)
    assert g2a_loss_db([0, 0], [300, 0, 400], cfg, 4.0) - base == pytest.approx(4.0, abs=1e-12)


def test_beam_gain(cfg):
    assert beam_gain(0.0, cfg) == pytest.approx(10 ** 1.5, rel=1e-14)
    assert beam_gain(cfg.phi_3db_deg, cfg) == pytest.approx(GAIN_AT_3DB, rel=1e-14)
    assert beam_gain(180.0, cfg) == pytest.approx(10 ** ((15 - 30) / 10), rel=1e-14)


def test_single_drone_single_user_no_interference(cfg):
    topo = Topology(np.zeros((0, 2)), 1e9, [[100, 100]], [[0, 0, 100]], (500, 500))
    b = compute_link_budget(topo, cfg, zero_shadowing(0, 1, 1))
    assert b.interference_air[0, 0] == 0.0
    assert b.air_access_sinr[0, 0] == b.air_access_snr[0, 0]


def test_symmetric_drones(cfg):
    topo = Topology(np.zeros((0, 2)), 1e9, [[500, 500]], [[300, 500, 100], [700, 500, 100]], (1000, 1000))
    b = compute_link_budget(topo, cfg, zero_shadowing(0, 1, 2))
    rx = b.air_access_snr[:, 0] * (10 ** (cfg.noise_dbm_per_hz / 10) / 1000 * cfg.w_air_hz)
    np.testing.assert_allclose(b.interference_air[:, 0], rx[::-1], rtol=1e-14)
    assert b.air_access_sinr[0, 0] == pytest.approx(b.air_access_sinr[1, 0], rel=1e-14)


# ---- independent per-link reference, written from the model equations with scalar math

def _ref_budget(gbs, users, drones, beams, sh_g, sh_b, cfg):
    c = cfg.speed_of_light
    mw = lambda dbm: 10 ** (dbm / 10) / 1000
    n0 = mw(cfg.noise_dbm_per_hz)
    G, U, A = len(gbs), len(users), len(drones)
    rx_g = [[mw(cfg.p_tx_gbs_dbm) * 10 ** (-(10 * cfg.eta_ground * math.log10(
        4 * math.pi * cfg.f_ground_hz * math.dist(gbs[g], users[u]) / c) + sh_g[g][u]) / 10)
        for u in range(U)] for g in range(G)]
    sinr_g = [[rx_g[g][u] / (n0 * cfg.w_ground_hz + sum(rx_g[k][u] for k in range(G) if k != g))
               for u in range(U)] for g in range(G)]

    def a2g(dr, us):
        r = math.dist(dr[:2], us)
        th = math.degrees(math.atan2(dr[2], r))
        p = 1 / (1 + cfg.beta1 * math.exp(-cfg.beta2 * (th - cfg.beta1)))
        fs = 20 * math.log10(4 * math.pi * cfg.f_air_hz * math.hypot(r, dr[2]) / c)
        return fs + p * cfg.xi_los_db + (1 - p) * cfg.xi_nlos_db

    rx_a = [[mw(cfg.p_tx_abs_dbm) * 10 ** (-a2g(drones[a], users[u]) / 10) for u in range(U)] for a in range(A)]
    sinr_a = [[rx_a[a][u] / (n0 * cfg.w_air_hz + sum(rx_a[k][u] for k in range(A) if k != a))
               for u in range(U)] for a in range(A)]

    def vec(g, a):
        return (drones[a][0] - gbs[g][0], drones[a][1] - gbs[g][1], drones[a][2])

    def gain(phi):
        return 10 ** ((cfg.g_max_db - min(12 * (phi / cfg.phi_3db_deg) ** 2, cfg.g_fbr_db)) / 10)

    def angle(u, v):
        cs = sum(x * y for x, y in zip(u, v)) / (math.hypot(*u) * math.hypot(*v))
        return math.degrees(math.acos(max(-1.0, min(1.0, cs))))

    iso = [[mw(cfg.p_tx_gbs_dbm) * 10 ** (-(20 * math.log10(
        4 * math.pi * cfg.f_backhaul_hz * math.hypot(*vec(g, a)) / c) + sh_b[g][a]) / 10)
        for a in range(A)] for g in range(G)]
    sinr_b = []
    for g in range(G):
        row = []
        for a in range(A):
            interf = 0.0
            for k in range(G):
                served = [b for b in range(A) if beams[b] == k]
                if k == g or not served:
                    continue
                interf += iso[k][a] * sum(gain(angle(vec(k, a), vec(k, b))) for b in served) / len(served)
            row.append(iso[g][a] * 10 ** (cfg.g_max_db / 10) / (n0 * cfg.w_backhaul_hz + interf))
        sinr_b.append(row)
    return np.array(sinr_g), np.array(sinr_a), np.array(sinr_b)


def test_link_budget_matches_reference(cfg):
    rng = np.random.default_rng(11)
    gbs = rng.uniform(0, 1000, (3, 2))
    users = rng.uniform(0, 1000, (5, 2))
    drones = np.column_stack([rng.uniform(0, 1000, (2, 2)), rng.uniform(40, 300, 2)])
    sh = draw_shadowing(3, 5, 2, cfg, rng)
    beams = [2, 0]
    topo = Topology(gbs, 1e9, users, drones, (1000, 1000))
    b = compute_link_budget(topo, cfg, sh, beams)
    rg, ra, rb = _ref_budget(gbs.tolist(), users.tolist(), drones.tolist(), beams, sh.ground_access.tolist(),
                             sh.backhaul.tolist(), cfg)
    np.testing.assert_allclose(b.ground_access_sinr, rg, rtol=1e-12)
    np.testing.assert_allclose(b.air_access_sinr, ra, rtol=1e-12)
    np.testing.assert_allclose(b.backhaul_sinr, rb, rtol=1e-12)


def test_beam_update_equals_full_recompute(cfg, small_topology):
    sh = draw_shadowing(2, 25, 2, cfg, np.random.default_rng(2))
    b0 = compute_link_budget(small_topology, cfg, sh)
    full = compute_link_budget(small_topology, cfg, sh, [1, 0])
    fast = with_backhaul_beams(b0, small_topology, cfg, [1, 0])
    np.testing.assert_array_equal(fast.backhaul_sinr, full.backhaul_sinr)
    np.testing.assert_array_equal(b0.backhaul_sinr, b0.backhaul_snr)


def test_ground_terms_ignore_fleet(cfg, small_topology):
    sh = zero_shadowing(2, 25, 2)
    a = ground_link_terms(small_topology, cfg, sh)
    b = ground_link_terms(small_topology.with_drones(np.zeros((0, 3))), cfg, sh)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
