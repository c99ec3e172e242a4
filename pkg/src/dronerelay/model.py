"""Domain types, configuration and random streams shared by every module.

All link math downstream works in linear units (Hz, W, bps); dB values only
appear in the configuration and in reports.
"""
from __future__ import annotations

import dataclasses
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration file cannot be parsed or fails validation."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical and protocol constants.

    Defaults follow the evaluation parameters of the reference scenario. Values
    the source leaves open (minimum bandwidths, backhaul band, A_g, U_max,
    backbone capacity, shadowing spread, thresholds, beam pattern) are
    gap-fills and can be overridden from a JSON file.
    """

    # LoS sigmoid and excess attenuation
    beta1: float = 12.08
    beta2: float = 0.11
    xi_los_db: float = 1.6
    xi_nlos_db: float = 23.0
    # carriers
    f_ground_hz: float = 1815.1e6
    f_air_hz: float = 2.63e9
    f_backhaul_hz: float = 1815.1e6
    # bandwidth budgets and per-link minima
    w_ground_hz: float = 18e6
    w_air_hz: float = 18e6
    w_backhaul_hz: float = 18e6
    w_ground_min_hz: float = 180e3
    w_air_min_hz: float = 180e3
    w_backhaul_min_hz: float = 1e6
    # powers and noise
    p_tx_gbs_dbm: float = 44.0
    p_tx_abs_dbm: float = 25.0
    noise_dbm_per_hz: float = -174.0
    # path loss
    eta_ground: float = 3.0
    eta_backhaul: float = 2.0
    sigma_ground_db: float = 4.0
    sigma_backhaul_db: float = 4.0
    # backhaul beam pattern
    g_max_db: float = 15.0
    phi_3db_deg: float = 10.0
    g_fbr_db: float = 30.0
    # air space and capacities
    h_min_m: float = 40.0
    h_max_m: float = 300.0
    a_g_max: int = 3
    u_max: int = 200
    tau_g_bps: float = 1e9
    # PADD
    epsilon: float = 0.001
    delta: float = 0.001
    probe_lattice_n: int = 400
    ball_radius_m: float = 450.0
    speed_of_light: float = 299_792_458.0
    # deployment area (10 km^2 by default)
    area_x_m: float = 4000.0
    area_y_m: float = 2500.0
    # initial placement scoring
    init_gbs_weight: float = 1.0
    init_density_weight: float = 1.0
    init_density_radius_m: float = 300.0
    init_altitude_m: float = 120.0
    # RA force-field baseline
    ra_step_m: float = 25.0
    ra_max_iter: int = 200
    ra_repulsion_m: float = 300.0

    def __post_init__(self):
        validate_config(self)

    @property
    def area(self) -> tuple[float, float]:
        return (self.area_x_m, self.area_y_m)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


_INT_FIELDS = {"a_g_max", "u_max", "probe_lattice_n", "ra_max_iter"}


def validate_config(cfg: SystemConfig) -> None:
    def fail(name, msg):
        raise ConfigError(f"{name}: {msg}")

    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(f.name, f"expected a number, got {v!r}")
        if not math.isfinite(v) and f.name != "tau_g_bps":
            fail(f.name, "must be finite")

    for band in ("ground", "air", "backhaul"):
        w = getattr(cfg, f"w_{band}_hz")
        wmin = getattr(cfg, f"w_{band}_min_hz")
        if w <= 0 or wmin <= 0:
            fail(f"w_{band}_hz", "bandwidths must be > 0")
        if wmin > w:
            fail(f"w_{band}_min_hz", "minimum allocation exceeds the band")
    if not 0 <= cfg.delta <= cfg.epsilon:
        fail("delta/epsilon", "need 0 <= delta <= epsilon")
    if not cfg.h_min_m < cfg.h_max_m:
        fail("h_min/h_max", "need h_min < h_max")
    if cfg.h_min_m <= 0:
        fail("h_min/h_max", "altitudes must be positive")
    if cfg.eta_ground < 2 or cfg.eta_backhaul < 2:
        fail("eta_ground/eta_backhaul", "path-loss exponents must be >= 2")
    if cfg.probe_lattice_n < 1:
        fail("probe_lattice_n", "must be >= 1")
    for name in ("a_g_max", "u_max", "ra_max_iter"):
        if getattr(cfg, name) < 0:
            fail(name, "must be >= 0")
    if cfg.tau_g_bps <= 0:
        fail("tau_g_bps", "must be > 0")
    for name in ("sigma_ground_db", "sigma_backhaul_db", "g_fbr_db"):
        if getattr(cfg, name) < 0:
            fail(name, "must be >= 0")
    for name in ("phi_3db_deg", "ball_radius_m", "speed_of_light", "area_x_m", "area_y_m",
                 "init_density_radius_m", "ra_step_m", "f_ground_hz", "f_air_hz", "f_backhaul_hz"):
        if getattr(cfg, name) <= 0:
            fail(name, "must be > 0")


def config_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(SystemConfig)]


def config_from_dict(data: dict) -> SystemConfig:
    """Build a config from a flat mapping; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = set(config_fields())
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{', '.join(unknown)}: unknown config key(s)")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if key in _INT_FIELDS:
            if float(value) != int(value):
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return SystemConfig(**kwargs)


def load_config(path) -> SystemConfig:
    """Read a JSON config file. An empty file yields the defaults."""
    text = Path(path).read_text()
    if not text.strip():
        return SystemConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: SystemConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: SystemConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def normalize_config_dict(data: dict) -> dict:
    """Defaults overlaid with `data`, coerced to the stored types."""
    out = config_to_dict(SystemConfig())
    for key, value in data.items():
        out[key] = int(value) if key in _INT_FIELDS else float(value)
    return out


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def noise_watt(cfg: SystemConfig, bandwidth_hz: float) -> float:
    return float(dbm_to_watt(cfg.noise_dbm_per_hz)) * bandwidth_hz


class RngStream:
    """Named random stream: the same (seed, stream_id) always replays the same draws."""

    def __init__(self, seed: int, stream_id: str = "main"):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = str(stream_id)
        key = zlib.crc32(self.stream_id.encode("utf-8"))
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(key,))))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.stream_id}/{label}")

    def __getattr__(self, name):
        # delegate draws (uniform, normal, integers, ...) to the generator
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id!r})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class Topology:
    """Positions of ground stations, users and drones.

    Ids are array indices. `gbs_xy` is (G, 2), `gbs_tau` (G,) in bps,
    `user_xy` (U, 2) and `drone_xyz` (A, 3), all in metres.
    """

    gbs_xy: np.ndarray
    gbs_tau: np.ndarray
    user_xy: np.ndarray
    drone_xyz: np.ndarray
    area: tuple[float, float]

    def __post_init__(self):
        gbs = np.asarray(self.gbs_xy, dtype=float).reshape(-1, 2)
        tau = np.broadcast_to(np.asarray(self.gbs_tau, dtype=float), (len(gbs),)).copy()
        users = np.asarray(self.user_xy, dtype=float).reshape(-1, 2)
        drones = np.asarray(self.drone_xyz, dtype=float).reshape(-1, 3)
        for arr in (gbs, tau, users, drones):
            arr.setflags(write=False)
        object.__setattr__(self, "gbs_xy", gbs)
        object.__setattr__(self, "gbs_tau", tau)
        object.__setattr__(self, "user_xy", users)
        object.__setattr__(self, "drone_xyz", drones)
        object.__setattr__(self, "area", (float(self.area[0]), float(self.area[1])))

    @property
    def n_gbs(self) -> int:
        return len(self.gbs_xy)

    @property
    def n_users(self) -> int:
        return len(self.user_xy)

    @property
    def n_drones(self) -> int:
        return len(self.drone_xyz)

    def with_drones(self, drone_xyz) -> "Topology":
        return dataclasses.replace(self, drone_xyz=np.asarray(drone_xyz, dtype=float).reshape(-1, 3))

    def with_users(self, user_xy) -> "Topology":
        return dataclasses.replace(self, user_xy=np.asarray(user_xy, dtype=float).reshape(-1, 2))

    def validate(self, cfg: Optional[SystemConfig] = None) -> None:
        ax, ay = self.area
        tol = 1e-9
        for name, xy in (("gbs", self.gbs_xy), ("user", self.user_xy), ("drone", self.drone_xyz[:, :2])):
            if len(xy) == 0:
                continue
            if (xy < -tol).any() or (xy[:, 0] > ax + tol).any() or (xy[:, 1] > ay + tol).any():
                raise ValueError(f"{name} position outside the area")
        if cfg is not None and self.n_drones:
            h = self.drone_xyz[:, 2]
            if h.min() < cfg.h_min_m - tol or h.max() > cfg.h_max_m + tol:
                raise ValueError("drone altitude outside [h_min, h_max]")


@dataclass(frozen=True)
class LinkBudget:
    """Loss, interference, SNR and SINR of every candidate link (linear units).

    Shapes: ground (G, U), air (A, U), backhaul (G, A). Interference is in W.
    """

    ground_access_sinr: np.ndarray
    air_access_sinr: np.ndarray
    backhaul_sinr: np.ndarray
    ground_access_snr: np.ndarray
    air_access_snr: np.ndarray
    backhaul_snr: np.ndarray
    loss_ground_db: np.ndarray
    loss_air_db: np.ndarray
    loss_backhaul_db: np.ndarray
    interference_ground: np.ndarray
    interference_air: np.ndarray
    interference_backhaul: np.ndarray

    @property
    def access_snr(self) -> np.ndarray:
        """(G + A, U) SNR with gBSs first, then drones; the cell-selection input."""
        return np.vstack([self.ground_access_snr, self.air_access_snr])


@dataclass(frozen=True)
class NetworkState:
    """Association, allocation and derived metrics for one fleet configuration.

    `user_bs[u]` indexes the stacked BS list (gBSs 0..G-1, then drones G..G+A-1)
    or is -1 for a rejected user. `drone_gbs[a]` is the serving gBS of drone a.
    """

    topology: Topology
    alpha: float
    user_bs: np.ndarray
    drone_gbs: np.ndarray
    user_bw: np.ndarray
    user_tput: np.ndarray
    drone_bw: np.ndarray
    drone_tput: np.ndarray
    utility: float
    min_tput: float
    aggregate_tput: float
    jain: float
    degenerate: bool = False

    @property
    def served(self) -> np.ndarray:
        return self.user_bs >= 0

    @property
    def score(self) -> tuple[float, float]:
        """Comparison key: lexicographic (min, sum) under max-min, else (utility, 0)."""
        if math.isinf(self.alpha):
            return (self.min_tput, self.aggregate_tput)
        return (self.utility, 0.0)


@dataclass
class FeasibilityReport:
    """Per-constraint-family verdicts with the worst relative violation."""

    families: dict = field(default_factory=dict)
    tol: float = 1e-9

    def record(self, family: str, violation: float) -> None:
        worst = max(self.families.get(family, 0.0), float(violation))
        self.families[family] = worst

    def passed(self, family: Optional[str] = None) -> bool:
        if family is not None:
            return self.families.get(family, 0.0) <= self.tol
        return all(v <= self.tol for v in self.families.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.families.items() if v > self.tol]

    def __bool__(self):
        return self.passed()

    def summary(self) -> str:
        return ", ".join(f"{k}={'ok' if v <= self.tol else f'FAIL({v:.3g})'}"
                         for k, v in self.families.items())


FAMILIES = ("bs_ue_association", "gbs_abs_association", "gbs_ue_capacity",
            "abs_ue_capacity", "gbs_abs_capacity", "backbone", "air_space")


def _excess(lhs, rhs):
    """Relative amount by which lhs exceeds rhs (<= 0 when satisfied)."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lhs.size == 0:
        return 0.0
    with np.errstate(invalid="ignore"):
        v = (lhs - rhs) / np.maximum(np.abs(rhs), 1.0)
    v = np.where(np.isnan(v), np.inf, v)
    return max(0.0, float(v.max()))


def check_feasibility(state: NetworkState, budget: LinkBudget, cfg: SystemConfig,
                      tol: float = 1e-9) -> FeasibilityReport:
    """Check every constraint block of the joint program against `state`.

    Bandwidth sums use the inequality form (the naive all-minimum solution is
    feasible). Rejected users must hold no resources.
    """
    rep = FeasibilityReport(tol=tol)
    for fam in FAMILIES:
        rep.record(fam, 0.0)
    topo = state.topology
    G, A, U = topo.n_gbs, topo.n_drones, topo.n_users
    ub = np.asarray(state.user_bs)
    dg = np.asarray(state.drone_gbs)
    w_u = np.asarray(state.user_bw, dtype=float)
    t_u = np.asarray(state.user_tput, dtype=float)
    w_a = np.asarray(state.drone_bw, dtype=float)
    t_a = np.asarray(state.drone_tput, dtype=float)

    # BS-UE association: one BS per served user, per-BS load cap
    if ub.shape != (U,) or (ub < -1).any() or (ub >= G + A).any():
        rep.record("bs_ue_association", math.inf)
    else:
        load = np.bincount(ub[ub >= 0], minlength=G + A)
        rep.record("bs_ue_association", _excess(load, np.full(G + A, float(cfg.u_max))))
        rej = ub < 0
        if rej.any():
            rep.record("bs_ue_association", _excess(np.abs(w_u[rej]) + np.abs(t_u[rej]), 0.0))

    # gBS-aBS association
    if dg.shape != (A,) or (A and ((dg < 0).any() or (dg >= G).any())):
        rep.record("gbs_abs_association", math.inf)
        return rep
    count = np.bincount(dg, minlength=G) if A else np.zeros(G, int)
    rep.record("gbs_abs_association", _excess(count, np.full(G, float(cfg.a_g_max))))

    if (ub < -1).any() or (ub >= G + A).any():
        return rep
    gam_g = np.asarray(budget.ground_access_sinr)
    gam_a = np.asarray(budget.air_access_sinr)
    gam_b = np.asarray(budget.backhaul_sinr)
    users = np.arange(U)

    on_g = (ub >= 0) & (ub < G)
    if on_g.any():
        g_idx = ub[on_g]
        rep.record("gbs_ue_capacity", _excess(cfg.w_ground_min_hz, w_u[on_g]))
        rep.record("gbs_ue_capacity", _excess(w_u[on_g], cfg.w_ground_hz))
        sums = np.bincount(g_idx, weights=w_u[on_g], minlength=G)
        rep.record("gbs_ue_capacity", _excess(sums, np.full(G, cfg.w_ground_hz)))
        cap = w_u[on_g] * np.log2(1.0 + gam_g[g_idx, users[on_g]])
        rep.record("gbs_ue_capacity", _excess(t_u[on_g], cap))
        rep.record("gbs_ue_capacity", _excess(-t_u[on_g], 0.0))

    on_a = ub >= G
    if on_a.any():
        a_idx = ub[on_a] - G
        rep.record("abs_ue_capacity", _excess(cfg.w_air_min_hz, w_u[on_a]))
        rep.record("abs_ue_capacity", _excess(w_u[on_a], cfg.w_air_hz))
        sums = np.bincount(a_idx, weights=w_u[on_a], minlength=A)
        rep.record("abs_ue_capacity", _excess(sums, np.full(A, cfg.w_air_hz)))
        cap = w_u[on_a] * np.log2(1.0 + gam_a[a_idx, users[on_a]])
        rep.record("abs_ue_capacity", _excess(t_u[on_a], cap))
        rep.record("abs_ue_capacity", _excess(-t_u[on_a], 0.0))
        agg = np.bincount(a_idx, weights=t_u[on_a], minlength=A)
        rep.record("abs_ue_capacity", _excess(agg, t_a))

    if A:
        rep.record("gbs_abs_capacity", _excess(cfg.w_backhaul_min_hz, w_a))
        rep.record("gbs_abs_capacity", _excess(w_a, cfg.w_backhaul_hz))
        sums = np.bincount(dg, weights=w_a, minlength=G)
        rep.record("gbs_abs_capacity", _excess(sums, np.full(G, cfg.w_backhaul_hz)))
        cap = w_a * np.log2(1.0 + gam_b[dg, np.arange(A)])
        rep.record("gbs_abs_capacity", _excess(t_a, cap))
        rep.record("gbs_abs_capacity", _excess(-t_a, 0.0))

    load = np.zeros(G)
    if on_g.any():
        load += np.bincount(ub[on_g], weights=t_u[on_g], minlength=G)
    if A:
        load += np.bincount(dg, weights=t_a, minlength=G)
    rep.record("backbone", _excess(load, topo.gbs_tau))

    if A:
        xyz = topo.drone_xyz
        ax, ay = topo.area
        rep.record("air_space", _excess(cfg.h_min_m, xyz[:, 2]))
        rep.record("air_space", _excess(xyz[:, 2], cfg.h_max_m))
        rep.record("air_space", _excess(-xyz[:, :2], 0.0))
        rep.record("air_space", _excess(xyz[:, 0], ax))
        rep.record("air_space", _excess(xyz[:, 1], ay))
    return rep
