"""Simulate a scene, track it geometrically, and score the result.

    python3 demos/quickstart.py
"""
from radartrack import TrackerConfig
from radartrack.association import run_tracker
from radartrack.experiments import labels_of
from radartrack.metrics import SequenceLabels, evaluate
from radartrack.simulator import CorruptionRates, corrupt_sequence, generate_sequence, scenario_library


def main():
    sim = generate_sequence(scenario_library("parallel", seed=0))
    gt = labels_of(sim)
    config = TrackerConfig(use_similarity=False)

    for name, rates in (("perfect segmentation", None),
                        ("mock backbone", CorruptionRates(semantic_flip=0.02, split=0.05, merge=0.05, offset_noise=0.2))):
        scans = [s.segmented for s in sim] if rates is None else corrupt_sequence(sim, rates, seed=0)
        ids = run_tracker(scans, config)
        rep = evaluate(SequenceLabels([s.semantics for s in scans], ids), gt)
        print(f"{name:22s} LSTQ {rep['lstq']:.3f}  S_assoc {rep['s_assoc']:.3f}  "
              f"S_cls {rep['s_cls']:.3f}  tracks {rep['num_tracks_pred']} (gt {rep['num_tracks_gt']})")


if __name__ == "__main__":
    main()
