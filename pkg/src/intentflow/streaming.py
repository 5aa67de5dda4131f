"""Temporal streaming across clips: the prev-intent table (kept
parameter-disjoint from the CFG embedder), a FIFO memory bank with SE(2)
ego-motion realignment, a single-layer cross-attention clip compressor, and
the per-clip engine that ties them to the sampler.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .bridge import (
    DEFAULT_FALLBACK,
    ParseOutcome,
    consistency_check,
    parse_intent,
    rule_fallback_intent,
)
from .errors import DataError, NoRecordedForwardError, OutOfOrderClipError
from .meta_labeler import Thresholds, label, window_from_trajectory
from .net import DistilledIntentEmbedder, ModelStack, _xavier
from .sampler import sample, sample_distilled
from .types import ClipRecord, IntentClass, ModelConfig, Trajectory

_POSENC_SEED = 462_113_099  # fixed SE(2) positional-encoding projection


@dataclass(frozen=True)
class EgoPose:
    """World-frame SE(2) pose; heading in radians, normalized to (-pi, pi]."""

    position: np.ndarray  # (2,)
    heading: float

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)) or not math.isfinite(self.heading):
            raise DataError("pose must have a finite (2,) position and heading")
        h = math.remainder(self.heading, 2.0 * math.pi)
        if h <= -math.pi:
            h += 2.0 * math.pi
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", h)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def se2_realign(point: np.ndarray, pose_a: EgoPose, pose_b: EgoPose) -> np.ndarray:
    """Re-express a point from frame A into frame B via the world frame:
    world = R(theta_A) p + p_A, result = R(-theta_B) (world - p_B)."""
    p = np.asarray(point, dtype=float)
    world = _rot(pose_a.heading) @ p + pose_a.position
    return _rot(-pose_b.heading) @ (world - pose_b.position)


class PrevIntentTable:
    """(K+1) x H rows; row K is the "unknown" row.  Parameter storage is
    fully separate from the CFG intent embedder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params = {"rows": rng.normal(0.0, 0.5, size=(cfg.K + 1, cfg.H)).astype(dtype)}
        self._cache = None

    def token(self, outcome: Optional[ParseOutcome], is_pseudo: bool,
              cache: bool = False) -> tuple[np.ndarray, int]:
        """Returns (row vector, row index used).  The unknown row serves the
        first clip, parse failures, and pseudo-labels."""
        if outcome is None or not outcome.parsed_ok or is_pseudo:
            idx = self.cfg.K
        else:
            idx = outcome.intent.index
        if cache:
            self._cache = idx
        return self.params["rows"][idx], idx

    def backward(self, drow: np.ndarray) -> dict:
        if self._cache is None:
            raise NoRecordedForwardError("prev-intent backward without cached token")
        idx = self._cache
        self._cache = None
        grads = {"rows": np.zeros_like(self.params["rows"])}
        grads["rows"][idx] = drow
        return grads


def prev_intent_token(table: PrevIntentTable, outcome: Optional[ParseOutcome],
                      is_pseudo: bool) -> np.ndarray:
    vec, _ = table.token(outcome, is_pseudo)
    return vec


@dataclass
class MemoryEntry:
    vectors: np.ndarray  # (m, H)
    anchor: EgoPose
    clip_index: int


class MemoryBank:
    """FIFO over whole-clip entries; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DataError("bank capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[MemoryEntry] = deque(maxlen=capacity)

    def push(self, entry: MemoryEntry) -> None:
        self._entries.append(entry)

    def entries(self) -> list[MemoryEntry]:
        return list(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)


class ClipCompressor:
    """Single-layer multi-head cross-attention from m learned queries onto
    the clip's summary vectors (projected scene features and past state)."""

    N_HEADS = 2

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32, past_steps: int = 16):
        H, m = cfg.H, cfg.mem_tokens
        if H % self.N_HEADS != 0:
            raise DataError("hidden size must be divisible by the head count")
        self.cfg = cfg
        self.dtype = dtype
        self.params = {
            "queries": rng.normal(0.0, 0.5, size=(m, H)).astype(dtype),
            "Wq": _xavier(rng, H, H, dtype),
            "Wk": _xavier(rng, H, H, dtype),
            "Wv": _xavier(rng, H, H, dtype),
            "Wo": _xavier(rng, H, H, dtype),
            "Wscene": _xavier(rng, cfg.d_s, H, dtype),
            "Wpast": _xavier(rng, past_steps * 4, H, dtype),
            "Wpos": _xavier(rng, 4, H, dtype),
        }

    def summary_vectors(self, record: ClipRecord) -> np.ndarray:
        """(2, H) clip summary: scene-feature and past-state projections."""
        scene = record.scene_features.astype(self.dtype) @ self.params["Wscene"]
        past = record.past_state.reshape(-1).astype(self.dtype) @ self.params["Wpast"]
        return np.stack([scene, past])

    def compress(self, state: np.ndarray,
                 return_weights: bool = False) -> Union[np.ndarray, tuple]:
        """(S, H) summary vectors -> (m, H) memory vectors."""
        state = np.atleast_2d(np.asarray(state, dtype=self.dtype))
        if state.shape[0] == 0:
            raise DataError("cannot compress an empty clip state")
        p = self.params
        H = self.cfg.H
        dh = H // self.N_HEADS
        q = (p["queries"] @ p["Wq"]).reshape(-1, self.N_HEADS, dh)
        keys = (state @ p["Wk"]).reshape(-1, self.N_HEADS, dh)
        vals = (state @ p["Wv"]).reshape(-1, self.N_HEADS, dh)
        outs = []
        weights = []
        for h in range(self.N_HEADS):
            logits = q[:, h, :] @ keys[:, h, :].T / math.sqrt(dh)
            logits = logits - logits.max(axis=1, keepdims=True)
            a = np.exp(logits)
            a /= a.sum(axis=1, keepdims=True)
            weights.append(a)
            outs.append(a @ vals[:, h, :])
        mem = np.concatenate(outs, axis=1) @ p["Wo"]
        if return_weights:
            return mem, np.stack(weights)
        return mem

    def position_encoding(self, rel_xy: np.ndarray, rel_heading: float) -> np.ndarray:
        """SE(2) relative-pose features projected to H dims."""
        feats = np.array([rel_xy[0] / 10.0, rel_xy[1] / 10.0,
                          math.sin(rel_heading), math.cos(rel_heading)],
                         dtype=self.dtype)
        return feats @ self.params["Wpos"]


def read_memory(bank: MemoryBank, current_pose: EgoPose,
                compressor: ClipCompressor, cfg: ModelConfig) -> np.ndarray:
    """Mean over bank entries of (mean memory vector + SE(2) positional
    encoding of the entry's anchor relative to the current pose)."""
    if len(bank) == 0:
        return np.zeros(cfg.H, dtype=compressor.dtype)
    acc = np.zeros(cfg.H, dtype=np.float64)
    for entry in bank.entries():
        rel_xy = se2_realign(np.zeros(2), entry.anchor, current_pose)
        rel_heading = entry.anchor.heading - current_pose.heading
        acc += entry.vectors.mean(axis=0)
        acc += compressor.position_encoding(rel_xy, rel_heading)
    return (acc / len(bank)).astype(compressor.dtype)


def build_streaming_components(cfg: ModelConfig, dtype: type = np.float32
                               ) -> tuple[PrevIntentTable, ClipCompressor]:
    root = np.random.SeedSequence((cfg.seed, 0x57E4))
    rng_table, rng_comp = (np.random.default_rng(s) for s in root.spawn(2))
    return (PrevIntentTable(cfg, rng_table, dtype=dtype),
            ClipCompressor(cfg, rng_comp, dtype=dtype))


@dataclass
class StreamStepResult:
    trajectory: Trajectory
    outcome: ParseOutcome
    intent: IntentClass          # post-relabel intent used for conditioning
    prev_row_index: int          # prev-intent row consumed this step
    conditioning: np.ndarray     # [prev token | memory read | scene features]
    consistent: bool             # sampled trajectory vs intent, rule-checked
    relabeled: bool
    clip_index: int
    sequence_id: str


def _sequence_entropy(sequence_id: str) -> int:
    digest = hashlib.sha256(sequence_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class StreamEngine:
    """Streams a sequence clip by clip: parses and validates the intent,
    conditions on the previous clip's committed intent plus realigned
    memory, samples the trajectory, and pushes the compressed clip into the
    FIFO bank.  State resets whenever the sequence id changes."""

    def __init__(self, stack: ModelStack,
                 prev_table: Optional[PrevIntentTable] = None,
                 compressor: Optional[ClipCompressor] = None,
                 thresholds: Thresholds = Thresholds(),
                 fallback: IntentClass = DEFAULT_FALLBACK,
                 distilled: bool = False,
                 seed: Optional[int] = None):
        if distilled and stack.student is None:
            raise DataError("distilled streaming needs a student embedder")
        if prev_table is None or compressor is None:
            built_table, built_comp = build_streaming_components(stack.cfg)
            prev_table = prev_table or built_table
            compressor = compressor or built_comp
        self.stack = stack
        self.cfg = stack.cfg
        self.prev_table = prev_table
        self.compressor = compressor
        self.thresholds = thresholds
        self.fallback = fallback
        self.distilled = distilled
        self.seed = stack.cfg.seed if seed is None else seed
        self._sequence_id: Optional[str] = None
        self._last_clip: Optional[int] = None
        self._prev_outcome: Optional[ParseOutcome] = None
        self._prev_pseudo = False
        self.bank = MemoryBank(self.cfg.mem_capacity)

    def _reset_sequence(self, sequence_id: str) -> None:
        self._sequence_id = sequence_id
        self._last_clip = None
        self._prev_outcome = None
        self._prev_pseudo = False
        self.bank = MemoryBank(self.cfg.mem_capacity)

    def step(self, record: ClipRecord) -> StreamStepResult:
        if record.sequence_id != self._sequence_id:
            self._reset_sequence(record.sequence_id)
        if self._last_clip is not None and record.clip_index != self._last_clip + 1:
            raise OutOfOrderClipError(
                f"clip {record.clip_index} after {self._last_clip} in "
                f"sequence {record.sequence_id}")

        prev_vec, prev_row = self.prev_table.token(self._prev_outcome,
                                                   self._prev_pseudo)
        pose = EgoPose(position=record.past_state[-1, :2],
                       heading=float(record.past_state[-1, 2]))
        mem_vec = read_memory(self.bank, pose, self.compressor, self.cfg)
        conditioning = np.concatenate(
            [prev_vec, mem_vec, record.scene_features.astype(prev_vec.dtype)])

        outcome = parse_intent(record.intent_text, self.fallback)
        relabeled = False
        intent = outcome.intent
        if record.meta_action is not None:
            if not outcome.parsed_ok or not consistency_check(intent, record.meta_action):
                intent = rule_fallback_intent(record.meta_action)
                relabeled = True

        rng = np.random.default_rng(np.random.SeedSequence(
            (self.seed, _sequence_entropy(record.sequence_id), record.clip_index)))
        if self.distilled:
            traj = sample_distilled(self.stack.net, self.stack.student,
                                    record.scene_features, intent, self.cfg, rng)
        else:
            traj = sample(self.stack.net, self.stack.embedder,
                          record.scene_features, intent, self.cfg, rng)

        meta = label(window_from_trajectory(traj), self.thresholds)
        consistent = consistency_check(intent, meta)

        vectors = self.compressor.compress(self.compressor.summary_vectors(record))
        self.bank.push(MemoryEntry(vectors=vectors, anchor=pose,
                                   clip_index=record.clip_index))

        carried = ParseOutcome(intent=intent,
                               parsed_ok=outcome.parsed_ok and not relabeled,
                               raw_span=outcome.raw_span)
        self._prev_outcome = carried
        self._prev_pseudo = record.is_pseudo_labeled or relabeled
        self._last_clip = record.clip_index

        return StreamStepResult(
            trajectory=traj, outcome=carried, intent=intent,
            prev_row_index=prev_row, conditioning=conditioning,
            consistent=consistent, relabeled=relabeled,
            clip_index=record.clip_index, sequence_id=record.sequence_id)
