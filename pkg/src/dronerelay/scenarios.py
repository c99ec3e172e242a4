"""User layouts (PPP, Stadium, Event), mobility stepping and position noise."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import ShadowingTable, draw_shadowing
from .model import RngStream, SystemConfig, Topology, as_generator

STATIONARY, WAYPOINT, COMMUTING = 0, 1, 2


def _clamp(xy, area):
    xy = np.asarray(xy, dtype=float)
    return np.column_stack([np.clip(xy[:, 0], 0.0, area[0]), np.clip(xy[:, 1], 0.0, area[1])])


def gen_ppp(area, n_users: int, rng) -> np.ndarray:
    """Uniform i.i.d. positions (a Poisson point process conditioned on its count)."""
    if n_users < 0:
        raise ValueError("n_users must be >= 0")
    g = as_generator(rng)
    return g.uniform(0.0, 1.0, (int(n_users), 2)) * np.asarray(area, dtype=float)


def uniform_disc(center, radius: float, n: int, rng) -> np.ndarray:
    g = as_generator(rng)
    r = radius * np.sqrt(g.uniform(0.0, 1.0, n))
    th = g.uniform(0.0, 2.0 * math.pi, n)
    return np.asarray(center, dtype=float) + np.column_stack([r * np.cos(th), r * np.sin(th)])


def gen_stadium(area, n_users: int, stadium, rng) -> np.ndarray:
    """floor(0.6 n) users uniform in the stadium disc, the rest uniform over the area.

    `stadium` is (center, radius); the disc must lie inside the area.
    Disc users come first in the returned array.
    """
    center, radius = stadium
    cx, cy = center
    if cx - radius < 0 or cy - radius < 0 or cx + radius > area[0] or cy + radius > area[1]:
        raise ValueError("stadium disc must lie inside the area")
    n_in = int(math.floor(0.6 * n_users))
    return np.vstack([uniform_disc(center, radius, n_in, rng), gen_ppp(area, n_users - n_in, rng)])


def perturb_positions(users, max_error_m: float, rng, area=None) -> np.ndarray:
    """Displace every position uniformly within a disc of radius max_error_m, clamped to the area."""
    if max_error_m < 0:
        raise ValueError("max_error_m must be >= 0")
    xy = np.asarray(users, dtype=float).reshape(-1, 2)
    if max_error_m == 0 or len(xy) == 0:
        return xy.copy()
    out = xy + uniform_disc((0.0, 0.0), max_error_m, len(xy), rng)
    return _clamp(out, area) if area is not None else out


def default_gbs_layout(area, n_gbs: int, rng, jitter: float = 0.25) -> np.ndarray:
    """Jittered grid: rows x cols cells matching the area's aspect, one gBS per cell.

    Each station sits at its cell centre displaced by up to `jitter` of the cell size.
    Stand-in for an operator deployment whose coordinates are not public.
    """
    if n_gbs <= 0:
        return np.zeros((0, 2))
    ax, ay = area
    cols = max(1, int(round(math.sqrt(n_gbs * ax / ay))))
    rows = int(math.ceil(n_gbs / cols))
    g = as_generator(rng)
    cells = [(i, j) for j in range(rows) for i in range(cols)][:n_gbs]
    cw, ch = ax / cols, ay / rows
    out = np.array([[(i + 0.5) * cw, (j + 0.5) * ch] for i, j in cells])
    out += g.uniform(-jitter, jitter, out.shape) * np.array([cw, ch])
    return _clamp(out, area)


# ------------------------------------------------------------------ Event

@dataclass(frozen=True)
class EventConfig:
    """Dynamic Event scenario: commuters stream from a station to a stadium.

    Station and stadium default to 1.5 km apart along x, or 75% of the width
    in narrower areas.
    Random-waypoint users pause zero seconds and draw waypoints uniformly.
    """

    initial_users: int = 400
    waypoint_fraction: float = 0.4
    speed_mps: float = 2.5
    arrival_batch: int = 40
    arrival_period_s: float = 300.0
    max_users: int = 1000
    station_xy: Optional[tuple] = None
    stadium_xy: Optional[tuple] = None
    stadium_radius_m: float = 150.0

    def landmarks(self, area):
        cx, cy = area[0] / 2.0, area[1] / 2.0
        half = min(750.0, 0.375 * area[0])
        station = self.station_xy if self.station_xy is not None else (cx - half, cy)
        stadium = self.stadium_xy if self.stadium_xy is not None else (cx + half, cy)
        return np.asarray(station, dtype=float), np.asarray(stadium, dtype=float)


@dataclass
class ScenarioState:
    """Users of a mobile scenario; mode, target and speed are per user."""

    area: tuple
    time_s: float
    epoch: int
    xy: np.ndarray
    mode: np.ndarray
    target: np.ndarray
    speed: np.ndarray
    next_arrival_s: float
    event: EventConfig = field(default_factory=EventConfig)

    @property
    def n_users(self) -> int:
        return len(self.xy)

    def copy(self) -> "ScenarioState":
        return dataclasses.replace(self, xy=self.xy.copy(), mode=self.mode.copy(),
                                   target=self.target.copy(), speed=self.speed.copy())


def new_event(area, rng, event: EventConfig = EventConfig()) -> ScenarioState:
    """Initial Event population: uniform users, a fraction of them on random waypoints."""
    g = as_generator(rng)
    n = event.initial_users
    xy = gen_ppp(area, n, g)
    walkers = g.permutation(n)[:int(round(event.waypoint_fraction * n))]
    mode = np.full(n, STATIONARY, dtype=np.int64)
    mode[walkers] = WAYPOINT
    target = xy.copy()
    target[walkers] = gen_ppp(area, walkers.size, g)
    speed = np.where(mode == WAYPOINT, event.speed_mps, 0.0)
    return ScenarioState(tuple(map(float, area)), 0.0, 0, xy, mode, target, speed,
                         event.arrival_period_s, event)


def _advance(st: ScenarioState, dt: float, g) -> None:
    moving = np.flatnonzero(st.mode != STATIONARY)
    for u in moving:
        left = dt
        while left > 0:
            d = st.target[u] - st.xy[u]
            dist = float(np.hypot(*d))
            reach = st.speed[u] * left
            if reach < dist:
                st.xy[u] += d * (reach / dist)
                break
            st.xy[u] = st.target[u]
            left -= dist / st.speed[u] if st.speed[u] > 0 else left
            if st.mode[u] == COMMUTING:
                st.mode[u] = STATIONARY
                st.speed[u] = 0.0
                break
            st.target[u] = gen_ppp(st.area, 1, g)[0]


def step_event(state: ScenarioState, dt: float, cfg: Optional[SystemConfig] = None, rng=None) -> ScenarioState:
    """Advance the Event by dt seconds and return the new state.

    Motion is integrated piecewise between arrival instants; a batch of
    commuters appears at the station at every multiple of the arrival period
    until max_users is reached. `cfg` is unused and kept for call symmetry.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    g = as_generator(rng)
    st = state.copy()
    ev = st.event
    station, stadium = ev.landmarks(st.area)
    end = st.time_s + dt
    while True:
        stop = min(end, st.next_arrival_s)
        if stop > st.time_s:
            _advance(st, stop - st.time_s, g)
            st.time_s = stop
        if st.next_arrival_s > end:
            break
        k = min(ev.arrival_batch, ev.max_users - st.n_users)
        if k > 0:
            st.xy = np.vstack([st.xy, np.tile(station, (k, 1))])
            st.mode = np.concatenate([st.mode, np.full(k, COMMUTING, dtype=np.int64)])
            st.target = np.vstack([st.target, np.tile(stadium, (k, 1))])
            st.speed = np.concatenate([st.speed, np.full(k, ev.speed_mps)])
        st.next_arrival_s += ev.arrival_period_s
    st.epoch += 1
    return st


def export_users_csv(path, epochs) -> None:
    """Write (epoch, user, x, y, mode) rows for an iterable of ScenarioState."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "user", "x", "y", "mode"])
        for st in epochs:
            for u, (x, y) in enumerate(st.xy):
                w.writerow([st.epoch, u, f"{x:.3f}", f"{y:.3f}", int(st.mode[u])])


# ---------------------------------------------------------------- presets

@dataclass(frozen=True)
class Preset:
    area: tuple
    n_gbs: int
    n_drones: int
    n_users: int


# areas keep about one gBS per km^2, the density of the 10-gBS / 10 km^2 reference city
PRESETS = {
    "tiny": Preset((1700.0, 1200.0), 2, 2, 30),
    "small": Preset((2400.0, 1700.0), 4, 3, 100),
    "full": Preset((4000.0, 2500.0), 10, 5, 1000),
}


@dataclass(frozen=True)
class Instance:
    """A ground network with users, shadowing and a fleet size to place."""

    topology: Topology
    shadows: ShadowingTable
    n_drones: int
    stadium: Optional[tuple] = None
    seed: int = 0
    kind: str = "ppp"


def stadium_landmark(area, radius: float = 300.0):
    """Stadium disc 750 m east of the centre, pulled in so it fits the area."""
    r = min(radius, area[0] / 4.0, area[1] / 2.0)
    return ((min(area[0] / 2.0 + 750.0, area[0] - r), area[1] / 2.0), r)


def build_instance(preset="small", seed: int = 0, kind: str = "ppp", cfg: SystemConfig = SystemConfig(),
                   n_drones: Optional[int] = None, n_users: Optional[int] = None,
                   n_gbs: Optional[int] = None) -> Instance:
    """Seeded instance of a preset; every ingredient has its own random stream.

    The shadowing table always covers `max_drones` = the larger of the preset
    fleet and `n_drones`, so fleets of different sizes share their draws.
    """
    p = PRESETS[preset] if isinstance(preset, str) else preset
    root = RngStream(seed, f"instance/{kind}")
    G = p.n_gbs if n_gbs is None else n_gbs
    U = p.n_users if n_users is None else n_users
    A = p.n_drones if n_drones is None else n_drones
    gbs = default_gbs_layout(p.area, G, root.child("gbs"))
    stadium = None
    if kind == "ppp":
        users = gen_ppp(p.area, U, root.child("users"))
    elif kind == "stadium":
        stadium = stadium_landmark(p.area)
        users = gen_stadium(p.area, U, stadium, root.child("users"))
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    topo = Topology(gbs, cfg.tau_g_bps, users, np.zeros((0, 3)), p.area)
    shadows = draw_shadowing(G, U, max(A, p.n_drones), cfg, root.child("shadowing"))
    return Instance(topo, shadows, A, stadium, seed, kind)


def fleet_shadows(shadows: ShadowingTable, n_drones: int) -> ShadowingTable:
    """Restrict a shadowing table to the first n_drones drones."""
    return dataclasses.replace(shadows, backhaul=shadows.backhaul[:, :n_drones])
