"""Deterministic synthetic radar scenes with exact ground truth, and a
segmentation-corruption model standing in for a learned backbone.

The sensor sits at the origin; Doppler is the ego-compensated radial speed
of an agent's center, positive when receding.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import MOVING, STATIC, PreconditionError, RadarScan, SegmentedScan


@dataclass(frozen=True)
class AgentSpec:
    position: Tuple[float, float]
    velocity: Tuple[float, float]
    extent: Tuple[float, float] = (4.0, 2.0)
    mean_points: float = 5.0
    rcs_mean: float = 5.0
    rcs_std: float = 2.0
    birth: int = 0
    death: int = 10**9
    turn_rate: float = 0.0
    # half-open scan windows [start, end) without any returns
    occlusions: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.death <= self.birth:
            raise PreconditionError("agent death must come after birth")
        if self.mean_points < 0:
            raise PreconditionError("mean point count must be non-negative")

    def alive(self, t: int) -> bool:
        return self.birth <= t < self.death

    def occluded(self, t: int) -> bool:
        return any(a <= t < b for a, b in self.occlusions)


@dataclass(frozen=True)
class ScenarioConfig:
    agents: Tuple[AgentSpec, ...]
    scans: int = 20
    dt: float = 0.5
    clutter_rate: float = 0.0
    position_noise: float = 0.0
    doppler_noise: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    name: str = "seq"
    area: Tuple[float, float, float, float] = (-50.0, 50.0, 0.0, 80.0)

    def __post_init__(self):
        if self.dt <= 0:
            raise PreconditionError("dt must be positive")
        if not 0.0 <= self.dropout <= 1.0:
            raise PreconditionError("dropout must lie in [0, 1]")
        if self.scans < 1 or self.clutter_rate < 0 or self.position_noise < 0 or self.doppler_noise < 0:
            raise PreconditionError("invalid scenario configuration")
        object.__setattr__(self, "agents", tuple(self.agents))


@dataclass(frozen=True, eq=False)
class SimulatedScan:
    """Ground-truth segmentation of one scan plus the labels only a simulator knows."""

    segmented: SegmentedScan
    track_ids: np.ndarray
    temporal_valid: np.ndarray

    @property
    def t(self) -> int:
        return self.segmented.t


def agent_trajectory(agent: AgentSpec, scans: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Center positions and velocities for scans 0..scans (inclusive)."""
    pos = np.zeros((scans + 1, 2))
    vel = np.zeros((scans + 1, 2))
    pos[0] = agent.position
    vel[0] = agent.velocity
    c, s = np.cos(agent.turn_rate * dt), np.sin(agent.turn_rate * dt)
    rot = np.array([[c, -s], [s, c]])
    for k in range(scans):
        pos[k + 1] = pos[k] + vel[k] * dt
        vel[k + 1] = rot @ vel[k]
    return pos, vel


def radial_speed(position: np.ndarray, velocity: np.ndarray) -> float:
    r = np.hypot(*position)
    return float(np.dot(velocity, position) / r) if r > 0 else 0.0


def _scatter(rng, n, center, velocity, extent, noise):
    heading = np.arctan2(velocity[1], velocity[0]) if np.any(velocity) else 0.0
    c, s = np.cos(heading), np.sin(heading)
    local = (rng.random((n, 2)) - 0.5) * np.asarray(extent)
    world = local @ np.array([[c, s], [-s, c]]) + center
    if noise > 0:
        world = world + rng.normal(0.0, noise, size=(n, 2))
    return world


def generate_sequence(config: ScenarioConfig) -> List[SimulatedScan]:
    rng = np.random.default_rng(config.seed)
    trajectories = [agent_trajectory(a, config.scans, config.dt) for a in config.agents]

    # draw all points first; temporal targets need the next scan's centers
    drawn = []
    for t in range(config.scans):
        per_agent = {}
        for ai, agent in enumerate(config.agents):
            if not agent.alive(t) or agent.occluded(t):
                continue
            frac, whole = np.modf(agent.mean_points)
            n = int(whole) + int(rng.random() < frac)
            if config.dropout > 0 and n:
                n = int((rng.random(n) >= config.dropout).sum())
            if n == 0:
                continue
            pos, vel = trajectories[ai][0][t], trajectories[ai][1][t]
            xy = _scatter(rng, n, pos, vel, agent.extent, config.position_noise)
            v = radial_speed(pos, vel) + rng.normal(0.0, config.doppler_noise, n) if config.doppler_noise > 0 \
                else np.full(n, radial_speed(pos, vel))
            rcs = rng.normal(agent.rcs_mean, agent.rcs_std, n)
            per_agent[ai] = (xy, v, rcs)
        n_clutter = rng.poisson(config.clutter_rate) if config.clutter_rate > 0 else 0
        x0, x1, y0, y1 = config.area
        clutter_xy = np.column_stack([rng.uniform(x0, x1, n_clutter), rng.uniform(y0, y1, n_clutter)])
        clutter_v = rng.normal(0.0, config.doppler_noise, n_clutter) if config.doppler_noise > 0 else np.zeros(n_clutter)
        clutter_rcs = rng.normal(0.0, 5.0, n_clutter)
        perm = rng.permutation(len(per_agent)) + 1
        drawn.append((per_agent, (clutter_xy, clutter_v, clutter_rcs), perm))

    centers = [{ai: pts[0].mean(axis=0) for ai, pts in per_agent.items()} for per_agent, _, _ in drawn]
    out = []
    for t, (per_agent, clutter, perm) in enumerate(drawn):
        xs, vs, rs, sem, inst, track, off, toff, valid = [], [], [], [], [], [], [], [], []
        for slot, (ai, (xy, v, rcs)) in enumerate(sorted(per_agent.items())):
            n = len(xy)
            c = centers[t][ai]
            agent = config.agents[ai]
            if t + 1 < config.scans and ai in centers[t + 1]:
                nxt, ok = centers[t + 1][ai], True
            elif agent.alive(t + 1):
                # next center unobserved: carry the current center along the true motion
                pos = trajectories[ai][0]
                nxt, ok = c + (pos[t + 1] - pos[t]), True
            else:
                nxt, ok = None, False
            xs.append(xy)
            vs.append(v)
            rs.append(rcs)
            sem.append(np.full(n, MOVING))
            inst.append(np.full(n, perm[slot]))
            track.append(np.full(n, ai + 1))
            off.append(c - xy)
            toff.append(nxt - xy if ok else np.zeros((n, 2)))
            valid.append(np.full(n, ok))
        cxy, cv, crcs = clutter
        nc = len(cxy)
        xs.append(cxy)
        vs.append(cv)
        rs.append(crcs)
        sem.append(np.full(nc, STATIC))
        inst.append(np.zeros(nc, int))
        track.append(np.zeros(nc, int))
        off.append(np.zeros((nc, 2)))
        toff.append(np.zeros((nc, 2)))
        valid.append(np.zeros(nc, bool))
        scan = RadarScan(config.name, t, np.concatenate(xs).reshape(-1, 2), np.concatenate(vs), np.concatenate(rs))
        seg = SegmentedScan(scan, np.concatenate(sem), np.concatenate(inst),
                            np.concatenate(off).reshape(-1, 2), np.concatenate(toff).reshape(-1, 2))
        out.append(SimulatedScan(seg, np.concatenate(track).astype(np.int64), np.concatenate(valid).astype(bool)))
    return out


@dataclass(frozen=True)
class CorruptionRates:
    semantic_flip: float = 0.0
    split: float = 0.0
    merge: float = 0.0
    offset_noise: float = 0.0
    merge_radius: float = 5.0

    def __post_init__(self):
        for name in ("semantic_flip", "split", "merge"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise PreconditionError(f"{name} must lie in [0, 1]")
        if self.offset_noise < 0 or self.merge_radius < 0:
            raise PreconditionError("offset noise and merge radius must be non-negative")


def corrupt_segmentation(scan: SegmentedScan, rates: CorruptionRates, seed=0) -> SegmentedScan:
    """Mock backbone: merge, split, flip labels, then perturb offsets."""
    rng = np.random.default_rng(seed)
    xy = scan.scan.xy
    sem = scan.semantics.copy()
    inst = scan.instance_ids.copy()
    next_id = int(inst.max(initial=0)) + 1

    ids = [int(i) for i in np.unique(inst[inst > 0])]
    centers = {i: xy[inst == i].mean(axis=0) for i in ids}
    merged = set()
    for i in ids:
        if i in merged or not rng.random() < rates.merge:
            continue
        others = [j for j in ids if j != i and j not in merged]
        if not others:
            continue
        dists = [np.hypot(*(centers[i] - centers[j])) for j in others]
        k = int(np.argmin(dists))
        if dists[k] <= rates.merge_radius:
            inst[inst == others[k]] = i
            merged.update((i, others[k]))

    for i in [int(i) for i in np.unique(inst[inst > 0])]:
        members = np.flatnonzero(inst == i)
        if len(members) < 2 or not rng.random() < rates.split:
            continue
        pts = xy[members] - xy[members].mean(axis=0)
        axis = np.linalg.svd(pts, full_matrices=False)[2][0] if np.any(pts) else np.array([1.0, 0.0])
        order = np.argsort(pts @ axis, kind="stable")
        inst[members[order[(len(members) + 1) // 2:]]] = next_id
        next_id += 1

    flip = rng.random(len(sem)) < rates.semantic_flip
    to_static = flip & (sem == MOVING)
    to_moving = flip & (sem == STATIC)
    sem[to_static] = STATIC
    inst[to_static] = 0
    sem[to_moving] = MOVING
    inst[to_moving] = next_id + np.arange(int(to_moving.sum()))

    off = scan.offsets.copy()
    toff = scan.temporal_offsets.copy()
    if rates.offset_noise > 0:
        off += rng.normal(0.0, rates.offset_noise, off.shape)
        toff += rng.normal(0.0, rates.offset_noise, toff.shape)
    return SegmentedScan(scan.scan, sem, inst, off, toff)


def corrupt_sequence(sequence: Sequence[SimulatedScan], rates: CorruptionRates, seed: int = 0) -> List[SegmentedScan]:
    return [corrupt_segmentation(s.segmented, rates, seed=(seed, s.t)) for s in sequence]


def ground_truth(sequence: Sequence[SimulatedScan]) -> List[SegmentedScan]:
    return [s.segmented for s in sequence]


SCENARIOS = ("single", "parallel", "crossing", "occlusion", "single_point", "spawn_despawn")


def scenario_library(name: str, seed: int = 0) -> ScenarioConfig:
    """Canned deterministic scenarios."""
    if name == "single":
        agents = (AgentSpec((-10.0, 20.0), (4.0, 1.0)),)
        return ScenarioConfig(agents, scans=20, clutter_rate=8, seed=seed, name=name)
    if name == "parallel":
        agents = (
            AgentSpec((-30.0, 10.0), (6.0, 0.0)),
            AgentSpec((-25.0, 35.0), (5.0, 0.0), extent=(2.0, 1.0), mean_points=3, rcs_mean=0.0),
            AgentSpec((-35.0, 60.0), (7.0, 0.0), extent=(5.0, 2.5), mean_points=7, rcs_mean=10.0),
        )
        return ScenarioConfig(agents, scans=20, clutter_rate=8, seed=seed, name=name)
    if name == "crossing":
        # A (car, eastbound) is occluded for scans 10-15 while B (small, northbound)
        # appears at scan 11 about 6.8 m from A's propagated center and crosses A's lane behind it.
        agents = (
            AgentSpec((-30.0, 20.0), (6.0, 0.0), extent=(4.5, 1.8), mean_points=6, rcs_mean=10.0,
                      occlusions=((10, 16),)),
            AgentSpec((-1.0, -18.5), (0.0, 6.0), extent=(1.0, 1.0), mean_points=3, rcs_mean=-2.0, birth=11),
        )
        return ScenarioConfig(agents, scans=22, clutter_rate=8, position_noise=0.05, seed=seed, name=name)
    if name == "occlusion":
        agents = (AgentSpec((-10.0, 25.0), (2.0, 0.0), extent=(1.5, 1.0), mean_points=6, occlusions=((5, 8),)),)
        return ScenarioConfig(agents, scans=30, clutter_rate=5, seed=seed, name=name)
    if name == "single_point":
        # two pairs of single-point agents passing each other tangentially mid-scan, plus one radial agent
        common = dict(extent=(0.5, 0.5), mean_points=1)
        agents = (
            AgentSpec((-22.0, 30.0), (8.0, 0.0), rcs_mean=3.0, **common),
            AgentSpec((22.0, 32.0), (-8.0, 0.0), rcs_mean=-3.0, **common),
            AgentSpec((-26.0, 50.0), (8.0, 0.0), rcs_mean=6.0, **common),
            AgentSpec((26.0, 52.0), (-8.0, 0.0), rcs_mean=0.0, **common),
            AgentSpec((4.0, 8.0), (2.7, 5.4), rcs_mean=1.0, **common),
        )
        return ScenarioConfig(agents, scans=20, clutter_rate=5, seed=seed, name=name)
    if name == "spawn_despawn":
        agents = (
            AgentSpec((-30.0, 10.0), (5.0, 0.0), birth=0, death=10),
            AgentSpec((30.0, 35.0), (-5.0, 0.0), birth=5, death=20),
            AgentSpec((-20.0, 60.0), (4.0, 0.0), birth=8, death=15),
            AgentSpec((25.0, 10.0), (0.0, 3.0), birth=12, death=25, extent=(1.0, 1.0), mean_points=2),
        )
        return ScenarioConfig(agents, scans=25, clutter_rate=5, seed=seed, name=name)
    raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def random_scenario(seed: int, n_agents: Tuple[int, int] = (2, 5), scans: int = 20,
                    min_separation: float = 0.0, noisy: bool = True) -> ScenarioConfig:
    """Randomized scene for training data: varied appearance, speed and heading.

    ``min_separation`` is enforced between initial positions only.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_agents[0], n_agents[1] + 1))
    agents: List[AgentSpec] = []
    starts: List[np.ndarray] = []
    while len(agents) < n:
        start = np.array([rng.uniform(-35, 35), rng.uniform(5, 70)])
        if any(np.hypot(*(start - s)) < min_separation for s in starts):
            continue
        speed = rng.uniform(1.0, 10.0)
        heading = rng.uniform(-np.pi, np.pi)
        kind = rng.integers(3)
        extent, points, rcs = [((4.5, 1.8), 6, 10.0), ((2.0, 0.8), 3, 2.0), ((0.8, 0.8), 2, -5.0)][kind]
        birth = int(rng.integers(0, scans // 2)) if rng.random() < 0.3 else 0
        agents.append(AgentSpec(tuple(start), (speed * np.cos(heading), speed * np.sin(heading)),
                                extent=extent, mean_points=points * rng.uniform(0.5, 1.5),
                                rcs_mean=rcs + rng.normal(0, 2), rcs_std=2.0, birth=birth))
        starts.append(start)
    return ScenarioConfig(tuple(agents), scans=scans, clutter_rate=6,
                          position_noise=0.1 if noisy else 0.0, doppler_noise=0.2 if noisy else 0.0,
                          seed=seed, name=f"random-{seed}")
