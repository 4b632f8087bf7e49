"""Train the similarity networks briefly, then compare association variants
on the crossing scenario and the reference trackers on single-point agents.

    python3 demos/ablation.py            # about two minutes on one core
"""
import logging

from radartrack import TrackerConfig
from radartrack.experiments import ablation, baseline_comparison, format_table, train_networks, training_sequences


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    networks, curves = train_networks(training_sequences(10, seed=0), TrackerConfig(), similarity_steps=300)
    losses = curves["similarity"].losses
    print(f"similarity loss {losses[0]:.3f} -> {losses[-1]:.3f} over {len(losses)} steps\n")

    print("crossing, 10 seeds")
    print(format_table(ablation("crossing", networks, range(10))))
    print("\nsingle_point, 3 seeds")
    print(format_table(baseline_comparison("single_point", range(3), networks)))


if __name__ == "__main__":
    main()
