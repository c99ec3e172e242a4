"""Air-to-ground, ground-to-ground and ground-to-air channel models.

Every function broadcasts over numpy arrays, so the same code evaluates one
link or a full (transmitter, receiver) matrix.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import LinkBudget, SystemConfig, Topology, as_generator, dbm_to_watt, noise_watt


class DegenerateGeometryError(ValueError):
    """Transmitter and receiver coincide, so the path loss is undefined."""


@dataclass(frozen=True)
class ShadowingTable:
    """Log-normal shadowing samples in dB, frozen for one evaluation epoch.

    ground_access is (G, U); backhaul is (G, A).
    """

    ground_access: np.ndarray
    backhaul: np.ndarray


def draw_shadowing(n_gbs: int, n_users: int, n_drones: int, cfg: SystemConfig, rng) -> ShadowingTable:
    gen = as_generator(rng)
    ground = gen.normal(0.0, cfg.sigma_ground_db, size=(n_gbs, n_users))
    backhaul = gen.normal(0.0, cfg.sigma_backhaul_db, size=(n_gbs, n_drones))
    return ShadowingTable(ground, backhaul)


def zero_shadowing(n_gbs: int, n_users: int, n_drones: int) -> ShadowingTable:
    return ShadowingTable(np.zeros((n_gbs, n_users)), np.zeros((n_gbs, n_drones)))


def _fspl_db(freq_hz, d, exponent, cfg):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DegenerateGeometryError("zero link distance")
    return 10.0 * exponent * np.log10(4.0 * np.pi * freq_hz * d / cfg.speed_of_light)


def _split(drone, user):
    drone = np.asarray(drone, dtype=float)
    user = np.asarray(user, dtype=float)
    r = np.hypot(drone[..., 0] - user[..., 0], drone[..., 1] - user[..., 1])
    return r, drone[..., 2]


def elevation_deg(r, h):
    """Elevation angle in degrees; 90 when the drone is straight overhead."""
    return np.degrees(np.arctan2(h, r))


def los_probability(drone, user, cfg: SystemConfig):
    """Probability of line of sight between a drone (x, y, h) and a user (x, y)."""
    r, h = _split(drone, user)
    theta = elevation_deg(r, h)
    return 1.0 / (1.0 + cfg.beta1 * np.exp(-cfg.beta2 * (theta - cfg.beta1)))


def a2g_loss_db(drone, user, cfg: SystemConfig):
    """Mean air-to-ground loss: free space at f_A plus LoS-weighted excess loss."""
    r, h = _split(drone, user)
    d = np.hypot(r, h)
    p = los_probability(drone, user, cfg)
    return _fspl_db(cfg.f_air_hz, d, 2.0, cfg) + p * (cfg.xi_los_db - cfg.xi_nlos_db) + cfg.xi_nlos_db


def g2g_loss_db(gbs, user, cfg: SystemConfig, shadow=0.0):
    gbs = np.asarray(gbs, dtype=float)
    user = np.asarray(user, dtype=float)
    d = np.hypot(gbs[..., 0] - user[..., 0], gbs[..., 1] - user[..., 1])
    return _fspl_db(cfg.f_ground_hz, d, cfg.eta_ground, cfg) + shadow


def _gbs_drone_vectors(gbs, drone):
    """Vector from a ground station (at ground level) to a drone."""
    gbs = np.asarray(gbs, dtype=float)
    drone = np.asarray(drone, dtype=float)
    return np.stack([drone[..., 0] - gbs[..., 0], drone[..., 1] - gbs[..., 1],
                     drone[..., 2] + 0.0 * gbs[..., 0]], axis=-1)


def g2a_loss_db(gbs, drone, cfg: SystemConfig, shadow=0.0):
    d = np.linalg.norm(_gbs_drone_vectors(gbs, drone), axis=-1)
    return _fspl_db(cfg.f_backhaul_hz, d, cfg.eta_backhaul, cfg) + shadow


def beam_gain(phi_deg, cfg: SystemConfig):
    """Linear gain at off-axis angle phi of the quadratic main lobe with a back-lobe floor."""
    phi = np.asarray(phi_deg, dtype=float)
    att = np.minimum(12.0 * (phi / cfg.phi_3db_deg) ** 2, cfg.g_fbr_db)
    return 10.0 ** ((cfg.g_max_db - att) / 10.0)


def _others_sum(x):
    """Row-wise sum over all other rows: out[i] = sum_{j != i} x[j].

    Summed explicitly (not total minus own term) to keep full relative precision
    when the own term dominates.
    """
    n = x.shape[0]
    if n == 0:
        return x.copy()
    mask = 1.0 - np.eye(n)
    return np.einsum("ij,j...->i...", mask, x)


def _angle_deg(u, v):
    """Angle between vectors along the last axis, in degrees."""
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    c = np.sum(u * v, axis=-1) / (nu * nv)
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def backhaul_interference(topology: Topology, cfg: SystemConfig, rx_backhaul_iso: np.ndarray,
                          backhaul_beams) -> np.ndarray:
    """Interference (W) at drone a when served by gBS g, shape (G, A).

    Every other gBS with at least one backhaul link transmits toward its own
    drones; with several drones it time-shares its beam, so the off-axis gain
    toward the victim is averaged over its beams. gBSs without a link are silent.
    """
    G, A = rx_backhaul_iso.shape
    if backhaul_beams is None or A == 0:
        return np.zeros((G, A))
    beams = np.asarray(backhaul_beams, dtype=int)
    vec = _gbs_drone_vectors(topology.gbs_xy[:, None, :], topology.drone_xyz[None, :, :])  # (G, A, 3)
    per_gbs = np.zeros((G, A))  # power gBS g' radiates toward drone a
    for gp in range(G):
        served = np.flatnonzero(beams == gp)
        if served.size == 0:
            continue
        phi = _angle_deg(vec[gp][None, :, :], vec[gp][served][:, None, :])  # (beams, A)
        gain = beam_gain(phi, cfg).mean(axis=0)
        per_gbs[gp] = rx_backhaul_iso[gp] * gain
    return _others_sum(per_gbs)


def ground_link_terms(topology: Topology, cfg: SystemConfig, shadows: ShadowingTable):
    """Ground access loss, SNR, interference and SINR; independent of the fleet."""
    loss = g2g_loss_db(topology.gbs_xy[:, None, :], topology.user_xy[None, :, :], cfg,
                       shadows.ground_access)
    rx = dbm_to_watt(cfg.p_tx_gbs_dbm) * 10.0 ** (-loss / 10.0)
    noise = noise_watt(cfg, cfg.w_ground_hz)
    interf = _others_sum(rx)
    return loss, rx / noise, interf, rx / (noise + interf)


def compute_link_budget(topology: Topology, cfg: SystemConfig, shadows: ShadowingTable,
                        backhaul_beams=None, ground_terms: Optional[tuple] = None) -> LinkBudget:
    """Losses, interference, SNR and SINR of all access and backhaul links.

    `backhaul_beams[a]` is the gBS serving drone a and sets beam directions for
    backhaul interference; None means no backhaul is active (SINR equals SNR).
    `ground_terms` can carry a cached result of ground_link_terms. A backhaul
    shadowing table wider than the fleet is cut to its first A columns.
    """
    G, U, A = topology.n_gbs, topology.n_users, topology.n_drones
    if ground_terms is None:
        ground_terms = ground_link_terms(topology, cfg, shadows)
    loss_g, snr_g, interf_g, sinr_g = ground_terms

    if A:
        loss_a = a2g_loss_db(topology.drone_xyz[:, None, :], topology.user_xy[None, :, :], cfg)
    else:
        loss_a = np.zeros((0, U))
    rx_a = dbm_to_watt(cfg.p_tx_abs_dbm) * 10.0 ** (-loss_a / 10.0)
    noise_a = noise_watt(cfg, cfg.w_air_hz)
    interf_a = _others_sum(rx_a)

    if A and G:
        loss_b = g2a_loss_db(topology.gbs_xy[:, None, :], topology.drone_xyz[None, :, :], cfg,
                             shadows.backhaul[:, :A])
    else:
        loss_b = np.zeros((G, A))
    rx_b_iso = dbm_to_watt(cfg.p_tx_gbs_dbm) * 10.0 ** (-loss_b / 10.0)
    rx_b = rx_b_iso * 10.0 ** (cfg.g_max_db / 10.0)
    noise_b = noise_watt(cfg, cfg.w_backhaul_hz)
    interf_b = backhaul_interference(topology, cfg, rx_b_iso, backhaul_beams)

    return LinkBudget(
        ground_access_sinr=sinr_g,
        air_access_sinr=rx_a / (noise_a + interf_a),
        backhaul_sinr=rx_b / (noise_b + interf_b),
        ground_access_snr=snr_g,
        air_access_snr=rx_a / noise_a,
        backhaul_snr=rx_b / noise_b,
        loss_ground_db=loss_g,
        loss_air_db=loss_a,
        loss_backhaul_db=loss_b,
        interference_ground=interf_g,
        interference_air=interf_a,
        interference_backhaul=interf_b,
    )


def with_backhaul_beams(budget: LinkBudget, topology: Topology, cfg: SystemConfig,
                        backhaul_beams) -> LinkBudget:
    """Same budget with backhaul interference and SINR recomputed for the given beams."""
    if topology.n_drones == 0:
        return budget
    rx_iso = dbm_to_watt(cfg.p_tx_gbs_dbm) * 10.0 ** (-budget.loss_backhaul_db / 10.0)
    rx = rx_iso * 10.0 ** (cfg.g_max_db / 10.0)
    interf = backhaul_interference(topology, cfg, rx_iso, backhaul_beams)
    return dataclasses.replace(budget, backhaul_sinr=rx / (noise_watt(cfg, cfg.w_backhaul_hz) + interf),
                               interference_backhaul=interf)
