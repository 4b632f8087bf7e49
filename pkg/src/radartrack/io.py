"""JSON-lines scan files and tracker configuration files.

One row per scan::

    {"seq": "crossing-3", "t": 0, "points": [{"x": .., "y": .., "v": .., "rcs": ..,
      "sem": 1, "inst": 2, "track": 7, "ox": .., "oy": .., "otx": .., "oty": ..}, ...]}

Prediction files carry only ``x, y, v, rcs, sem, track``. An optional first
line ``{"header": {...}}`` records the producing config and its fingerprint.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .core import MOVING, PreconditionError, RadarScan, SegmentedScan, TrackerConfig
from .metrics import SequenceLabels
from .simulator import SimulatedScan

POINT_FIELDS = ("x", "y", "v", "rcs", "sem", "inst", "track", "ox", "oy", "otx", "oty")
PREDICTION_FIELDS = ("x", "y", "v", "rcs", "sem", "track")


class ParseError(ValueError):
    """Malformed or inconsistent input file; ``line`` is 1-based (0 when not tied to a line)."""

    def __init__(self, message: str, line: int = 0, path: Optional[str] = None):
        where = f"{path}:{line}: " if path and line else (f"line {line}: " if line else "")
        super().__init__(where + message)
        self.line = line
        self.path = path


@dataclass
class SequenceRecord:
    """One sequence of scans with per-point track ids (0 = none)."""

    sequence_id: str
    scans: List[SegmentedScan]
    track_ids: List[np.ndarray]

    def labels(self) -> SequenceLabels:
        return SequenceLabels([s.semantics for s in self.scans], self.track_ids)

    def temporal_valid(self) -> List[np.ndarray]:
        """Temporal targets are treated as undefined where stored as exactly (0, 0)."""
        return [np.any(s.temporal_offsets != 0, axis=1) for s in self.scans]

    def as_simulated(self) -> List[SimulatedScan]:
        return [SimulatedScan(s, t, v) for s, t, v in zip(self.scans, self.track_ids, self.temporal_valid())]


def records_from_simulation(sequence_id: str, scans: Sequence[SimulatedScan]) -> SequenceRecord:
    """Scans are re-labeled with ``sequence_id``, which is all a file row can carry."""
    segmented = [dataclasses.replace(s.segmented, scan=dataclasses.replace(s.segmented.scan, sequence_id=sequence_id))
                 for s in scans]
    return SequenceRecord(sequence_id, segmented, [s.track_ids for s in scans])


def config_fingerprint(config: Dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def make_header(**provenance) -> Dict:
    return {"header": {**provenance, "fingerprint": config_fingerprint(provenance)}}


def _point_rows(scan: SegmentedScan, tracks: np.ndarray, fields: Sequence[str]) -> List[Dict]:
    cols = {
        "x": scan.scan.xy[:, 0], "y": scan.scan.xy[:, 1], "v": scan.scan.v, "rcs": scan.scan.rcs,
        "sem": scan.semantics, "inst": scan.instance_ids, "track": tracks,
        "ox": scan.offsets[:, 0], "oy": scan.offsets[:, 1],
        "otx": scan.temporal_offsets[:, 0], "oty": scan.temporal_offsets[:, 1],
    }
    lists = {f: cols[f].tolist() for f in fields}
    return [{f: lists[f][i] for f in fields} for i in range(len(scan))]


def write_sequences(path, records: Iterable[SequenceRecord], header: Optional[Dict] = None,
                    predictions: bool = False) -> None:
    """Rows sorted by (seq, t); floats are written with round-trip precision."""
    fields = PREDICTION_FIELDS if predictions else POINT_FIELDS
    rows = []
    for rec in records:
        for scan, tracks in zip(rec.scans, rec.track_ids):
            rows.append((rec.sequence_id, scan.t, scan, np.asarray(tracks, dtype=np.int64)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header, sort_keys=True, allow_nan=False) + "\n")
        for seq, t, scan, tracks in rows:
            row = {"seq": seq, "t": int(t), "points": _point_rows(scan, tracks, fields)}
            fh.write(json.dumps(row, allow_nan=False) + "\n")


def _number(point: Dict, key: str, default, lineno: int, path: str, kind=float):
    if key not in point:
        if default is None:
            raise ParseError(f"point is missing field {key!r}", lineno, path)
        return default
    value = point[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"field {key!r} must be a number", lineno, path)
    if kind is int:
        if float(value) != int(value):
            raise ParseError(f"field {key!r} must be an integer", lineno, path)
        return int(value)
    return float(value)


def _parse_row(row, lineno: int, path: str):
    if not isinstance(row, dict) or "seq" not in row or "t" not in row or "points" not in row:
        raise ParseError("row needs keys 'seq', 't' and 'points'", lineno, path)
    seq, t, points = row["seq"], row["t"], row["points"]
    if not isinstance(seq, str):
        raise ParseError("'seq' must be a string", lineno, path)
    if isinstance(t, bool) or not isinstance(t, int):
        raise ParseError("'t' must be an integer", lineno, path)
    if not isinstance(points, list) or not all(isinstance(p, dict) for p in points):
        raise ParseError("'points' must be a list of objects", lineno, path)
    n = len(points)
    xy, v, rcs = np.zeros((n, 2)), np.zeros(n), np.zeros(n)
    sem, inst, track = np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64)
    off, toff = np.zeros((n, 2)), np.zeros((n, 2))
    for i, p in enumerate(points):
        xy[i] = _number(p, "x", None, lineno, path), _number(p, "y", None, lineno, path)
        v[i] = _number(p, "v", None, lineno, path)
        rcs[i] = _number(p, "rcs", None, lineno, path)
        sem[i] = _number(p, "sem", 0, lineno, path, int)
        track[i] = _number(p, "track", 0, lineno, path, int)
        # prediction files: the track id doubles as the instance id
        inst[i] = _number(p, "inst", track[i] if sem[i] == MOVING else 0, lineno, path, int)
        off[i] = _number(p, "ox", 0.0, lineno, path), _number(p, "oy", 0.0, lineno, path)
        toff[i] = _number(p, "otx", 0.0, lineno, path), _number(p, "oty", 0.0, lineno, path)
    try:
        scan = SegmentedScan(RadarScan(seq, t, xy, v, rcs), sem, inst, off, toff)
    except PreconditionError as exc:
        raise ParseError(str(exc), lineno, path) from exc
    return seq, t, scan, track


def read_header(path) -> Optional[Dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    return None
                return row.get("header") if isinstance(row, dict) else None
    return None


def read_sequences(path) -> List[SequenceRecord]:
    """Parse a scan file; sequences ordered by id, scans by t."""
    path = str(path)
    grouped: Dict[str, Dict[int, tuple]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno, path) from exc
            if isinstance(row, dict) and "header" in row:
                if lineno != 1:
                    raise ParseError("header allowed only on the first line", lineno, path)
                continue
            seq, t, scan, track = _parse_row(row, lineno, path)
            per_seq = grouped.setdefault(seq, {})
            if t in per_seq:
                raise ParseError(f"duplicate scan (seq={seq!r}, t={t}), first seen on line {per_seq[t][0]}",
                                 lineno, path)
            per_seq[t] = (lineno, scan, track)
    records = []
    for seq in sorted(grouped):
        items = [grouped[seq][t] for t in sorted(grouped[seq])]
        records.append(SequenceRecord(seq, [it[1] for it in items], [it[2] for it in items]))
    return records


def load_config(path=None, **overrides) -> TrackerConfig:
    """Flat JSON mirror of TrackerConfig; keyword overrides win over file values."""
    values: Dict = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed config JSON ({exc.msg})", exc.lineno, str(path)) from exc
        if not isinstance(values, dict):
            raise ParseError("config must be a JSON object", 1, str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(TrackerConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParseError(f"unknown config keys: {', '.join(unknown)}", 0, str(path) if path else None)
    try:
        return TrackerConfig(**values)
    except (TypeError, PreconditionError) as exc:
        raise ParseError(f"invalid config: {exc}", 0, str(path) if path else None) from exc


def config_dict(config: TrackerConfig) -> Dict:
    d = dataclasses.asdict(config)
    d["dims"] = list(d["dims"])
    return d
