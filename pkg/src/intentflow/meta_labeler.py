"""Deterministic kinematic rule engine: KinematicWindow -> MetaAction.

Longitudinal is decided first from the speed profile and forward
displacement, then lateral from sustained yaw, lateral offset, and total
heading change.  Pure functions, no smoothing, no learned components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import DataError, DegenerateWindowError
from .types import KinematicWindow, MetaAction, Trajectory


@dataclass(frozen=True)
class Thresholds:
    """Rule thresholds.  Units: m/s, meters, degrees, degrees/frame."""

    speed_stop: float = 0.3        # below => stationary
    lon_speed_ratio: float = 0.15  # fractional speed-delta threshold
    lon_min_delta: float = 0.5     # absolute speed-delta floor, m/s
    reverse_dist: float = 0.5      # backward displacement => reverse, m
    lat_offset_steer: float = 1.5  # |dy| for steer_*, m
    lat_offset_nudge: float = 0.3  # |dy| for nudge_*, m
    yaw_change_steer: float = 5.0  # |dtheta| over window for steer_*, deg
    yaw_change_nudge: float = 1.5  # |dtheta| over window for nudge_*, deg
    sustained_yaw_ratio: float = 0.8   # fraction of frames sharing yaw sign
    sustained_yaw_mean: float = 1.0    # |mean yaw delta|, deg/frame

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise DataError(f"threshold {f.name} must be strictly positive")

    @classmethod
    def from_json_file(cls, path: str) -> "Thresholds":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown threshold fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in obj.items()})


def _require_frames(window: KinematicWindow) -> None:
    if len(window) < 2:
        raise DegenerateWindowError(f"window has {len(window)} frames, need >= 2")


def sustained_yaw_direction(window: KinematicWindow,
                            th: Thresholds = Thresholds()) -> Optional[str]:
    """Return "left"/"right" when per-frame yaw deltas are one-sided.

    Fires iff at least sustained_yaw_ratio of the deltas share sign
    (positive = left) and the absolute mean delta exceeds
    sustained_yaw_mean degrees per frame; otherwise None.
    """
    _require_frames(window)
    deltas = np.diff(window.headings)
    n = deltas.shape[0]
    if abs(float(np.mean(deltas))) <= th.sustained_yaw_mean:
        return None
    if np.count_nonzero(deltas > 0) / n >= th.sustained_yaw_ratio:
        return "left"
    if np.count_nonzero(deltas < 0) / n >= th.sustained_yaw_ratio:
        return "right"
    return None


def classify_longitudinal(window: KinematicWindow,
                          th: Thresholds = Thresholds()) -> str:
    """First-match longitudinal ladder over the speed profile and dx."""
    _require_frames(window)
    v_s = float(window.speeds[0])
    v_e = float(window.speeds[-1])
    v_max = float(np.max(window.speeds))
    dx = float(window.positions[-1, 0] - window.positions[0, 0])

    if v_max <= th.speed_stop:
        return "stop"
    if dx < -th.reverse_dist:
        return "reverse"
    if v_s > th.speed_stop and v_e <= th.speed_stop:
        return "stopping"
    if v_s <= th.speed_stop and v_e > th.speed_stop:
        return "starting"
    dv = v_e - v_s
    if abs(dv) > max(th.lon_min_delta, v_s * th.lon_speed_ratio):
        return "accelerate" if dv > 0 else "decelerate"
    return "maintain_speed"


def classify_lateral(window: KinematicWindow, th: Thresholds,
                     longitudinal: str) -> str:
    """Lateral ladder; the reverse branch preempts it whenever lon = reverse."""
    _require_frames(window)
    dy = float(window.positions[-1, 1] - window.positions[0, 1])
    dtheta = float(window.headings[-1] - window.headings[0])

    if longitudinal == "reverse":
        # Laterality while reversing is gated at nudge-level |dy| only.
        if abs(dy) <= th.lat_offset_nudge:
            return "maintain"
        return "reverse_left" if dy > 0 else "reverse_right"

    direction = sustained_yaw_direction(window, th)
    if direction is not None:
        return f"steer_{direction}"
    if abs(dy) > th.lat_offset_steer and abs(dtheta) > th.yaw_change_steer:
        return "steer_left" if dy > 0 else "steer_right"
    if abs(dy) > th.lat_offset_nudge and abs(dtheta) > th.yaw_change_nudge:
        return "nudge_left" if dy > 0 else "nudge_right"
    return "maintain"


def label(window: KinematicWindow, th: Thresholds = Thresholds()) -> MetaAction:
    """Compose the two classifiers into one MetaAction."""
    lon = classify_longitudinal(window, th)
    lat = classify_lateral(window, th, lon)
    return MetaAction(longitudinal=lon, lateral=lat)


def window_from_trajectory(traj: Trajectory) -> KinematicWindow:
    """Derive a kinematic window from bare waypoints (used on sampled output).

    Velocities are estimated by centered differences over the waypoint grid
    (one-sided at the ends), the standard noise-robust derivative estimate
    for sampled paths; speeds are their magnitudes and headings their
    direction in degrees, carried forward through near-stationary frames.
    The implicit origin precedes the first waypoint, so dx and dy cover the
    full chunk.  For reversing chunks the headings are travel direction
    rather than vehicle yaw, which the reverse branch never reads.
    """
    pts = traj.points
    dt = 1.0 / traj.rate_hz
    padded = np.vstack([np.zeros((1, 2)), pts])  # origin + T waypoints
    n = len(pts)
    steps = np.empty((n, 2))
    spans = np.empty(n)
    for i in range(n):
        j = i + 1  # waypoint i lives at padded[j]
        hi = min(n, j + 1)
        lo = max(0, hi - 2)
        steps[i] = padded[hi] - padded[lo]
        spans[i] = (hi - lo) * dt
    dists = np.hypot(steps[:, 0], steps[:, 1])
    speeds = dists / spans
    headings = np.zeros(n)
    prev = 0.0
    for i in range(n):
        if dists[i] > 1e-9:
            prev = float(np.degrees(np.arctan2(steps[i, 1], steps[i, 0])))
        headings[i] = prev
    return KinematicWindow(speeds=speeds, headings=headings, positions=pts,
                           frame_dt=dt)
