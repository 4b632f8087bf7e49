"""Command-line entry point: ``radartrack <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import List, Optional

from .association import run_tracker
from .baselines import center_doppler_tracker, kalman_iou_tracker
from .core import PreconditionError
from .experiments import ABLATION_ARMS, ablation, format_table, train_networks, training_sequences
from .io import (ParseError, SequenceRecord, config_dict, load_config, make_header, read_sequences,
                 records_from_simulation, write_sequences)
from .metrics import evaluate
from .nets import TrackerNetworks
from .nn import ShapeError, load_checkpoint, save_checkpoint
from .simulator import SCENARIOS, CorruptionRates, corrupt_segmentation, generate_sequence, random_scenario, scenario_library
from .verification import CHECKS, gradient_suite

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
BASELINES = ("center_doppler", "kalman_iou")

log = logging.getLogger("radartrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _config_args(p):
    p.add_argument("--config", help="flat JSON tracker config; flags below override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radartrack", description="Moving-instance tracking on radar point clouds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write ground-truth sequences of a canned or random scenario")
    p.add_argument("--scenario", required=True, choices=SCENARIOS + ("random",))
    p.add_argument("--sequences", type=int, default=1, help="number of sequences (seeds seed, seed+1, ...)")
    p.add_argument("--scans", type=int, help="override the scenario length")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("corrupt", help="perturb a ground-truth file like an imperfect segmentation backbone")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flip", type=float, default=0.02, help="semantic flip rate per point")
    p.add_argument("--split", type=float, default=0.05, help="instance split rate")
    p.add_argument("--merge", type=float, default=0.05, help="instance merge rate")
    p.add_argument("--offset-noise", type=float, default=0.2, help="offset noise std in meters")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="fit offset heads and the similarity network on a ground-truth file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    _config_args(p)
    p.add_argument("--steps", type=int, default=500, help="similarity training steps")
    p.add_argument("--offset-steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--static-instances", type=int, default=2, help="static clusters added per scan")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("track", help="run the tracker on a scan file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _config_args(p)
    p.add_argument("--checkpoint", help="trained networks; required unless --geometric-only")
    p.add_argument("--geometric-only", action="store_true", help="distance-only association")
    p.add_argument("--use-offset-head", action="store_true", help="predict O and O^temp instead of reading them")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("baseline", help="run a reference tracker")
    p.add_argument("--name", required=True, choices=BASELINES)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _config_args(p)
    p.add_argument("--dt", type=float, default=0.5, help="scan period in seconds")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="score a prediction file against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="also write the metric JSON here")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--checks", nargs="*", choices=sorted(CHECKS))
    p.add_argument("--seed", type=int, default=0, help="first seed")

    p = sub.add_parser("ablate", help="association variants on a canned scenario")
    p.add_argument("--scenario", default="crossing", choices=SCENARIOS)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--checkpoint", help="trained networks; trained on random scenes when omitted")
    p.add_argument("--train-steps", type=int, default=300)
    p.add_argument("--train-sequences", type=int, default=10)
    p.add_argument("--offset-noise", type=float, default=0.0, help="corrupt offsets before tracking")
    p.add_argument("--out", help="write the table as JSON")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_networks(path: str, config) -> TrackerNetworks:
    state = load_checkpoint(path)
    networks = TrackerNetworks.create(config, with_offsets=any(k.startswith("offsets.") for k in state))
    networks.load_state_dict(state)
    return networks.eval()


def _prediction_records(records: List[SequenceRecord], ids_per_seq) -> List[SequenceRecord]:
    return [SequenceRecord(r.sequence_id, r.scans, ids) for r, ids in zip(records, ids_per_seq)]


def cmd_simulate(args) -> int:
    records = []
    for k in range(args.sequences):
        seed = args.seed + k
        cfg = random_scenario(seed) if args.scenario == "random" else scenario_library(args.scenario, seed)
        if args.scans is not None:
            cfg = dataclasses.replace(cfg, scans=args.scans)
        records.append(records_from_simulation(f"{args.scenario}-{seed}", generate_sequence(cfg)))
    header = make_header(command="simulate", scenario=args.scenario, sequences=args.sequences, seed=args.seed,
                         scans=args.scans)
    write_sequences(args.out, records, header)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    rates = CorruptionRates(args.flip, args.split, args.merge, args.offset_noise)
    records = read_sequences(args.inp)
    out = []
    for k, rec in enumerate(records):
        scans = [corrupt_segmentation(s, rates, seed=(args.seed, k, s.t)) for s in rec.scans]
        # track ids keep describing the true owner of every point
        out.append(SequenceRecord(rec.sequence_id, scans, rec.track_ids))
    write_sequences(args.out, out, make_header(command="corrupt", rates=dataclasses.asdict(rates), seed=args.seed))
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, seed=args.seed)
    sequences = [rec.as_simulated() for rec in read_sequences(args.inp)]
    if not sequences:
        raise ParseError("training file holds no sequences")
    networks, curves = train_networks(sequences, config, args.steps, args.offset_steps, args.batch_size, args.lr,
                                      args.static_instances, args.seed)
    save_checkpoint(args.out, networks.state_dict())
    for name, result in curves.items():
        print(f"{name}: {result.steps} steps, loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    return EXIT_OK


def cmd_track(args) -> int:
    overrides = {"seed": args.seed}
    if args.geometric_only:
        overrides["use_similarity"] = False
    config = load_config(args.config, **overrides)
    networks = None
    if args.checkpoint:
        networks = _load_networks(args.checkpoint, config)
    elif config.use_similarity or args.use_offset_head:
        raise ParseError("similarity gating and the offset head need --checkpoint (or pass --geometric-only)")
    records = read_sequences(args.inp)
    ids = [run_tracker(rec.scans, config, networks, args.use_offset_head) for rec in records]
    header = make_header(command="track", config=config_dict(config), checkpoint=args.checkpoint,
                         use_offset_head=args.use_offset_head)
    write_sequences(args.out, _prediction_records(records, ids), header, predictions=True)
    return EXIT_OK


def cmd_baseline(args) -> int:
    config = load_config(args.config, seed=args.seed)
    records = read_sequences(args.inp)
    run = center_doppler_tracker if args.name == "center_doppler" else kalman_iou_tracker
    ids = [run(rec.scans, config, dt=args.dt) for rec in records]
    header = make_header(command="baseline", name=args.name, config=config_dict(config), dt=args.dt)
    write_sequences(args.out, _prediction_records(records, ids), header, predictions=True)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = {r.sequence_id: r for r in read_sequences(args.pred)}
    gt = read_sequences(args.gt)
    missing = [r.sequence_id for r in gt if r.sequence_id not in pred]
    if missing or len(pred) != len(gt):
        raise ParseError(f"prediction and ground truth cover different sequences (missing: {missing})")
    for r in gt:
        p = pred[r.sequence_id]
        if [s.t for s in p.scans] != [s.t for s in r.scans]:
            raise ParseError(f"sequence {r.sequence_id!r}: scan indices differ")
    report = evaluate([pred[r.sequence_id].labels() for r in gt], [r.labels() for r in gt])
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradient_suite(range(args.seed, args.seed + args.seeds), args.checks)
    ok = True
    for name, reports in results.items():
        worst = max(r.max_rel_error for r in reports)
        passed = all(r.passed for r in reports)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<16} max rel error {worst:.3e} over {len(reports)} seeds")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    config = load_config(seed=args.seed)
    if args.checkpoint:
        networks = _load_networks(args.checkpoint, config)
    else:
        log.info("training similarity on %d random sequences", args.train_sequences)
        networks, _ = train_networks(training_sequences(args.train_sequences, args.seed), config,
                                     similarity_steps=args.train_steps, seed=args.seed)
    rates = CorruptionRates(offset_noise=args.offset_noise) if args.offset_noise > 0 else None
    table = ablation(args.scenario, networks, range(args.seed, args.seed + args.seeds), rates, config, ABLATION_ARMS)
    print(f"scenario {args.scenario}, {args.seeds} seeds")
    print(format_table(table))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "corrupt": cmd_corrupt, "train": cmd_train, "track": cmd_track,
    "baseline": cmd_baseline, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ParseError, PreconditionError, ShapeError, KeyError, ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"radartrack {args.command}: invalid input: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report, don't trace
        sys.stderr.write(f"radartrack {args.command}: failed: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
