"""Tracking of moving instances in sparse radar point clouds.

Segmented scans go in; per-point track ids come out. Association pools
track and detection centers, clusters them into local problems, solves each
with the Hungarian method and gates distant matches by a learned
attention-based similarity.
"""
from .association import RadarTracker, TrackerState, associate_scan, dbscan, hungarian, lifecycle_step, run_tracker
from .core import (MOVING, STATIC, InstanceDescriptor, PreconditionError, RadarPoint, RadarScan, SegmentedScan, Track,
                   TrackerConfig, extract_moving_instances, instance_center)
from .metrics import SequenceLabels, evaluate, iou_mov, lstq, s_assoc, s_cls
from .nets import TrackerNetworks, similarity_cost, similarity_scores
from .simulator import generate_sequence, scenario_library

__version__ = "0.1.0"
