"""Python access to the smart-home sensing and fusion core."""

import json

import numpy as np

from . import _native
from ._native import ShfError, frame_ok

__all__ = [
    "ShfError",
    "simulate",
    "fuse",
    "evaluate",
    "parse_snapshot",
    "serialize_snapshot",
    "diff_snapshots",
    "apply_diff",
    "triangulate",
    "frame_ok",
]


def simulate(scenario, out, seed=None):
    """Run a scenario into a log directory; returns the collector counters."""
    return json.loads(_native.simulate(str(scenario), str(out), seed))


def fuse(log, config, out, levels="0..3"):
    return json.loads(_native.fuse(str(log), str(config), str(out), levels))


def evaluate(fused, truth, golden=None):
    """The shfe/1 report as a dict."""
    return json.loads(_native.evaluate(str(fused), str(truth), None if golden is None else str(golden)))


def parse_snapshot(line):
    """Validates one sht/1 line and returns it as a dict."""
    return json.loads(_native.twin_roundtrip(line))


def serialize_snapshot(snapshot):
    return _native.twin_roundtrip(json.dumps(snapshot))


def diff_snapshots(a, b):
    return json.loads(_native.twin_diff(serialize_snapshot(a), serialize_snapshot(b)))


def apply_diff(a, diff):
    return json.loads(_native.twin_apply(serialize_snapshot(a), json.dumps(diff)))


def triangulate(origins, directions):
    """Least-squares intersection of rays; returns (point, rms residual)."""
    point, residual = _native.triangulate(
        np.asarray(origins, dtype=float).reshape(-1, 3), np.asarray(directions, dtype=float).reshape(-1, 3)
    )
    return np.asarray(point).reshape(3), residual
