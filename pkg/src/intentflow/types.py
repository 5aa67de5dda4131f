"""Shared domain types: trajectories, the intent taxonomy, kinematic windows,
meta-actions, per-clip records, and the model configuration.

All types are immutable values (arrays are treated as read-only after
construction); they can be freely copied between threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DataError, UnknownIntentError

# Closed 20-class driving-intent taxonomy.  Index order is load-bearing:
# it defines the embedding-table rows and the JSONL wire format.
INTENT_NAMES: tuple[str, ...] = (
    "cruising",            # 0
    "lane_keeping",        # 1
    "following",           # 2
    "lane_change_left",    # 3
    "lane_change_right",   # 4
    "turning_left",        # 5
    "turning_right",       # 6
    "u_turn",              # 7
    "starting",            # 8
    "stopping",            # 9
    "waiting",             # 10
    "accelerating",        # 11
    "decelerating",        # 12
    "braking",             # 13
    "yielding",            # 14
    "overtaking",          # 15
    "merging",             # 16
    "avoiding_obstacle",   # 17
    "parking",             # 18
    "reversing",           # 19
)

NUM_INTENTS = len(INTENT_NAMES)
UNCONDITIONAL_INDEX = NUM_INTENTS  # extra embedding row, not a driving class

_NAME_TO_INDEX = {name: i for i, name in enumerate(INTENT_NAMES)}

LONGITUDINAL_ACTIONS: tuple[str, ...] = (
    "stop",
    "reverse",
    "stopping",
    "starting",
    "accelerate",
    "decelerate",
    "maintain_speed",
)

LATERAL_ACTIONS: tuple[str, ...] = (
    "steer_left",
    "steer_right",
    "nudge_left",
    "nudge_right",
    "reverse_left",
    "reverse_right",
    "maintain",
)


@dataclass(frozen=True)
class IntentClass:
    """A taxonomy index in [0, K]; index K is the unconditional slot."""

    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index <= UNCONDITIONAL_INDEX:
            raise DataError(f"intent index {self.index} outside [0, {UNCONDITIONAL_INDEX}]")

    @property
    def name(self) -> str:
        if self.index == UNCONDITIONAL_INDEX:
            return "<uncond>"
        return INTENT_NAMES[self.index]

    @property
    def is_driving_class(self) -> bool:
        return self.index < NUM_INTENTS


UNCONDITIONAL = IntentClass(UNCONDITIONAL_INDEX)


def intent_name_to_index(name: str) -> IntentClass:
    """Look up a taxonomy name (case-insensitive, surrounding whitespace ignored).

    Raises UnknownIntentError for any name outside the 20-entry table.
    """
    key = name.strip().lower()
    try:
        return IntentClass(_NAME_TO_INDEX[key])
    except KeyError:
        raise UnknownIntentError(f"unknown intent name: {name!r}") from None


def intent_index_to_name(index: int) -> str:
    if not 0 <= index < NUM_INTENTS:
        raise UnknownIntentError(f"intent index {index} is not a driving class")
    return INTENT_NAMES[index]


@dataclass(frozen=True)
class Trajectory:
    """Planar action chunk: T waypoints (x forward, y left, meters) in the ego
    BEV frame at clip start, sampled at rate_hz."""

    points: np.ndarray  # (T, 2) float
    rate_hz: float = 4.0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise DataError(f"trajectory points must be (T, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("trajectory contains non-finite coordinates")
        if not self.rate_hz > 0:
            raise DataError(f"rate_hz must be > 0, got {self.rate_hz}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def span_seconds(self) -> float:
        return len(self) / self.rate_hz


@dataclass(frozen=True)
class KinematicWindow:
    """Per-frame future kinematics consumed by the rule labeler.

    speeds are unsigned magnitudes in m/s, headings are vehicle yaw in
    degrees (unwrapped, positive = left), positions are BEV (x, y) meters.
    """

    speeds: np.ndarray    # (F,)
    headings: np.ndarray  # (F,) degrees
    positions: np.ndarray  # (F, 2)
    frame_dt: float

    def __post_init__(self) -> None:
        speeds = np.asarray(self.speeds, dtype=float)
        headings = np.asarray(self.headings, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        n = speeds.shape[0]
        if n < 2 or headings.shape != (n,) or positions.shape != (n, 2):
            raise DataError(
                "window series must share one length >= 2, got "
                f"speeds {speeds.shape}, headings {headings.shape}, positions {positions.shape}"
            )
        if not self.frame_dt > 0:
            raise DataError(f"frame_dt must be > 0, got {self.frame_dt}")
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "headings", headings)
        object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return self.speeds.shape[0]


@dataclass(frozen=True)
class MetaAction:
    """Closed-set (longitudinal, lateral) discretization of a window."""

    longitudinal: str
    lateral: str

    def __post_init__(self) -> None:
        if self.longitudinal not in LONGITUDINAL_ACTIONS:
            raise DataError(f"unknown longitudinal action {self.longitudinal!r}")
        if self.lateral not in LATERAL_ACTIONS:
            raise DataError(f"unknown lateral action {self.lateral!r}")


@dataclass(frozen=True)
class ClipRecord:
    """One streaming clip: past state, future kinematics, labels, and the
    annotator text the intent is parsed from.  Persists as one JSONL line."""

    sequence_id: str
    clip_index: int  # 1-based, increments by 1 within a sequence
    past_state: np.ndarray  # (16, 4) world-frame (x, y, heading_rad, speed)
    future_window: KinematicWindow
    meta_action: Optional[MetaAction]
    intent_text: str
    intent: Optional[IntentClass]
    trajectory: Trajectory
    is_pseudo_labeled: bool
    scene_features: np.ndarray  # (d_s,)
    provenance: Optional[dict] = None  # {parsed_ok, relabeled}, set by validate

    def __post_init__(self) -> None:
        if self.clip_index < 1:
            raise DataError(f"clip_index must be >= 1, got {self.clip_index}")
        past = np.asarray(self.past_state, dtype=float)
        if past.ndim != 2 or past.shape[1] != 4:
            raise DataError(f"past_state must be (S, 4), got {past.shape}")
        feats = np.asarray(self.scene_features, dtype=float)
        if feats.ndim != 1 or not np.all(np.isfinite(feats)):
            raise DataError("scene_features must be a finite 1-d vector")
        object.__setattr__(self, "past_state", past)
        object.__setattr__(self, "scene_features", feats)


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and inference constants for the generation stack.

    H, d_s and intent_embed_inner default to desk-scale values; the
    reference widths (H=1536, inner 512) train the same code path.
    """

    K: int = NUM_INTENTS        # driving intent classes
    T: int = 20                 # chunk length
    D: int = 2                  # action dimension per step
    H: int = 64                 # hidden size
    d_s: int = 16               # scene-feature dimension
    intent_embed_inner: int = 64
    w: float = 1.5              # guidance scale
    p_drop: float = 0.15        # CFG-dropout probability
    N: int = 2                  # Euler steps
    proto_weight: float = 0.1   # prototype-regression loss weight
    seed: int = 0
    rate_hz: float = 4.0
    traj_scale: float = 10.0    # meters per model unit inside the net
    n_hidden_layers: int = 3
    hidden_mult: int = 4        # hidden width = hidden_mult * H
    mem_tokens: int = 8         # memory tokens per clip
    mem_capacity: int = 32      # FIFO bank capacity, in entries
    fallback_intent: int = 1    # lane_keeping

    def __post_init__(self) -> None:
        for name in ("K", "T", "D", "H", "d_s", "intent_embed_inner",
                     "n_hidden_layers", "hidden_mult", "mem_tokens", "mem_capacity"):
            if getattr(self, name) < 1:
                raise DataError(f"config field {name} must be >= 1")
        if not 0.0 <= self.p_drop <= 1.0:
            raise DataError(f"p_drop must be in [0, 1], got {self.p_drop}")
        if self.w < 0.0:
            raise DataError(f"guidance scale w must be >= 0, got {self.w}")
        if self.N < 1:
            raise DataError(f"Euler step count N must be >= 1, got {self.N}")
        if not 0 <= self.fallback_intent < self.K:
            raise DataError("fallback_intent must be a driving class index")

    @property
    def chunk_dim(self) -> int:
        return self.T * self.D

    @property
    def uncond_index(self) -> int:
        return self.K

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kwargs: Any) -> "ModelConfig":
        return replace(self, **kwargs)

    def stable_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# --- JSONL wire format -------------------------------------------------------
#
# One JSON object per record, UTF-8, keys in declaration order.  Floats use
# Python's shortest round-trip repr, so serialize(deserialize(x)) is
# byte-stable and deserialize(serialize(r)) == r bit-exactly.


def _window_to_obj(w: KinematicWindow) -> dict:
    return {
        "speeds": w.speeds.tolist(),
        "headings": w.headings.tolist(),
        "positions": w.positions.tolist(),
        "frame_dt": w.frame_dt,
    }


def _window_from_obj(obj: dict) -> KinematicWindow:
    return KinematicWindow(
        speeds=np.array(obj["speeds"], dtype=float),
        headings=np.array(obj["headings"], dtype=float),
        positions=np.array(obj["positions"], dtype=float),
        frame_dt=float(obj["frame_dt"]),
    )


def record_to_obj(rec: ClipRecord) -> dict:
    obj: dict[str, Any] = {
        "sequence_id": rec.sequence_id,
        "clip_index": rec.clip_index,
        "past_state": rec.past_state.tolist(),
        "future_window": _window_to_obj(rec.future_window),
    }
    if rec.meta_action is not None:
        obj["meta_action"] = {
            "longitudinal": rec.meta_action.longitudinal,
            "lateral": rec.meta_action.lateral,
        }
    else:
        obj["meta_action"] = None
    obj["intent_text"] = rec.intent_text
    if rec.intent is not None:
        obj["intent"] = rec.intent.index
    obj["trajectory"] = {
        "points": rec.trajectory.points.tolist(),
        "rate_hz": rec.trajectory.rate_hz,
    }
    obj["is_pseudo_labeled"] = rec.is_pseudo_labeled
    obj["scene_features"] = rec.scene_features.tolist()
    if rec.provenance is not None:
        obj["provenance"] = rec.provenance
    return obj


def record_from_obj(obj: dict) -> ClipRecord:
    try:
        meta = obj.get("meta_action")
        return ClipRecord(
            sequence_id=obj["sequence_id"],
            clip_index=int(obj["clip_index"]),
            past_state=np.array(obj["past_state"], dtype=float),
            future_window=_window_from_obj(obj["future_window"]),
            meta_action=MetaAction(**meta) if meta is not None else None,
            intent_text=obj["intent_text"],
            intent=IntentClass(int(obj["intent"])) if "intent" in obj else None,
            trajectory=Trajectory(
                points=np.array(obj["trajectory"]["points"], dtype=float),
                rate_hz=float(obj["trajectory"]["rate_hz"]),
            ),
            is_pseudo_labeled=bool(obj["is_pseudo_labeled"]),
            scene_features=np.array(obj["scene_features"], dtype=float),
            provenance=obj.get("provenance"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed clip record: {exc}") from exc


def record_to_json_line(rec: ClipRecord) -> str:
    return json.dumps(record_to_obj(rec), ensure_ascii=False)


def record_from_json_line(line: str) -> ClipRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON line: {exc}") from exc
    return record_from_obj(obj)


def write_records_jsonl(path: str, records: Sequence[ClipRecord],
                        provenance: Optional[dict] = None) -> None:
    """Write records one per line; an optional provenance header line comes first."""
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"_provenance": provenance}, ensure_ascii=False) + "\n")
        for rec in records:
            fh.write(record_to_json_line(rec) + "\n")


def read_records_jsonl(path: str) -> list[ClipRecord]:
    """Read a record file, skipping any provenance header line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith('{"_provenance"'):
                continue
            records.append(record_from_json_line(line))
    return records
