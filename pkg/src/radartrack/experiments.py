"""Canned experiments shared by the command line, the demos and the acceptance tests."""
from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence

import numpy as np

from .association import run_tracker
from .baselines import center_doppler_tracker, kalman_iou_tracker
from .core import TrackerConfig
from .metrics import SequenceLabels, evaluate
from .nets import TrackerNetworks
from .simulator import (AgentSpec, CorruptionRates, ScenarioConfig, SimulatedScan, corrupt_sequence,
                        generate_sequence, random_scenario, scenario_library)
from .training import TrainingResult, prepare_pairs, scan_pairs, train_offsets, train_similarity

ABLATION_ARMS = {
    "combined": dict(use_similarity=True, use_temporal_offset=True),
    "geometric-only": dict(use_similarity=False, use_temporal_offset=True),
    "combined, raw centers": dict(use_similarity=True, use_temporal_offset=False),
    "geometric-only, raw centers": dict(use_similarity=False, use_temporal_offset=False),
}


def labels_of(sequence: Sequence[SimulatedScan]) -> SequenceLabels:
    return SequenceLabels([s.segmented.semantics for s in sequence], [s.track_ids for s in sequence])


def training_sequences(n: int = 10, seed: int = 0) -> List[List[SimulatedScan]]:
    return [generate_sequence(random_scenario(1000 * seed + 100 + k)) for k in range(n)]


def separable_sequences(n: int = 4) -> List[List[SimulatedScan]]:
    """Two agents that differ in size, point count, reflectivity and heading, amid clutter."""
    agents = (AgentSpec((-20.0, 20.0), (4.0, 0.0)),
              AgentSpec((10.0, 50.0), (-3.0, 1.0), extent=(1.0, 1.0), mean_points=3, rcs_mean=-2.0))
    return [generate_sequence(ScenarioConfig(agents, scans=20, clutter_rate=5, seed=s, name=f"separable-{s}"))
            for s in range(n)]


def overfit_scenario() -> ScenarioConfig:
    """One motionless agent seen in a single scan; each offset target is a function of its point."""
    agent = AgentSpec((5.0, 20.0), (0.0, 0.0), extent=(2.0, 1.0), mean_points=6)
    return ScenarioConfig((agent,), scans=1, seed=0, name="overfit")


def train_networks(sequences: Sequence[Sequence[SimulatedScan]], config: TrackerConfig = TrackerConfig(),
                   similarity_steps: int = 300, offset_steps: int = 0, batch_size: int = 64, lr: float = 1e-3,
                   static_instances: int = 2, seed: int = 0):
    """Fresh networks fitted on ground-truth sequences; returns (networks, {"similarity": .., "offsets": ..})."""
    networks = TrackerNetworks.create(config, seed=seed, with_offsets=offset_steps > 0)
    curves: Dict[str, TrainingResult] = {}
    if offset_steps > 0:
        scans = [s for seq in sequences for s in seq]
        curves["offsets"] = train_offsets(networks.offsets, scans, offset_steps, batch_size, lr, seed=seed)
    pairs = prepare_pairs(scan_pairs(sequences), static_instances, seed)
    curves["similarity"] = train_similarity(networks.instance_net, networks.similarity, pairs,
                                            similarity_steps, batch_size, lr, seed=seed)
    return networks.eval(), curves


def ablation(scenario: str, networks: Optional[TrackerNetworks], seeds: Sequence[int],
             rates: Optional[CorruptionRates] = None, config: TrackerConfig = TrackerConfig(),
             arms: Optional[Dict[str, Dict]] = None, overrides: Optional[Dict] = None) -> Dict[str, Dict[str, float]]:
    """Mean metrics per tracker variant over scenario seeds.

    ``overrides`` replaces ScenarioConfig fields (e.g. sensor noise). Arms
    needing similarity are skipped when ``networks`` is None.
    """
    arms = ABLATION_ARMS if arms is None else arms
    per_arm: Dict[str, List[Dict[str, float]]] = {name: [] for name in arms}
    for seed in seeds:
        sim = generate_sequence(dataclasses.replace(scenario_library(scenario, seed), **(overrides or {})))
        gt = labels_of(sim)
        scans = corrupt_sequence(sim, rates, seed) if rates is not None else [s.segmented for s in sim]
        for name, flags in arms.items():
            if flags.get("use_similarity", True) and networks is None:
                continue
            cfg = dataclasses.replace(config, **flags)
            ids = run_tracker(scans, cfg, networks if cfg.use_similarity else None)
            per_arm[name].append(evaluate(SequenceLabels([s.semantics for s in scans], ids), gt))
    return {name: {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
            for name, rows in per_arm.items() if rows}


def baseline_comparison(scenario: str, seeds: Sequence[int], networks: Optional[TrackerNetworks] = None,
                        config: TrackerConfig = TrackerConfig()) -> Dict[str, Dict[str, float]]:
    """Our tracker against both reference trackers on perfect segmentation."""
    cfg = config if networks is not None else dataclasses.replace(config, use_similarity=False)
    runners = {
        "ours": lambda scans: run_tracker(scans, cfg, networks),
        "center_doppler": lambda scans: center_doppler_tracker(scans, config),
        "kalman_iou": lambda scans: kalman_iou_tracker(scans, config),
    }
    rows: Dict[str, List[Dict[str, float]]] = {k: [] for k in runners}
    for seed in seeds:
        sim = generate_sequence(scenario_library(scenario, seed))
        gt = labels_of(sim)
        scans = [s.segmented for s in sim]
        for name, run in runners.items():
            rows[name].append(evaluate(SequenceLabels(gt.semantics, run(scans)), gt))
    return {name: {k: float(np.mean([r[k] for r in rs])) for k in rs[0]} for name, rs in rows.items()}


def format_table(results: Dict[str, Dict[str, float]], columns=("s_assoc", "lstq", "num_switches", "num_tracks_pred")) -> str:
    width = max(len(k) for k in results) + 2
    lines = ["variant".ljust(width) + "".join(c.rjust(16) for c in columns)]
    for name, row in results.items():
        lines.append(name.ljust(width) + "".join(f"{row[c]:16.4f}" for c in columns))
    return "\n".join(lines)
