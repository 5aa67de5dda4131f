"""Synthetic parametric-maneuver benchmark.

Stands in for a real driving corpus: unicycle maneuver rollouts per intent
family, a fixed random projection for scene features, a mock annotator that
emits four-section reasoning text ending in an <INTENT> span, and a
sequence generator with a hand-authored intent transition table.

Every maneuver family is tuned so that, at zero noise, the rule labeler
produces a meta-action consistent with the family's intent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .bridge import COMPATIBILITY_TABLE, consistency_check
from .errors import DataError
from .meta_labeler import Thresholds, label
from .types import (
    INTENT_NAMES,
    ClipRecord,
    IntentClass,
    KinematicWindow,
    MetaAction,
    ModelConfig,
    Trajectory,
    intent_name_to_index,
)

# Lane-change lateral offset: logistic ramp with midpoint late in the window
# so the maneuver is still in progress at the window end (a completed
# symmetric S-curve would leave no net heading change for the labeler).
_SHIFT_STEEPNESS = 6.0
_SHIFT_MIDPOINT = 0.8

_PROJECTION_SEED = 183_921_407  # scene-feature projection, fixed across runs
_PROTO_SEED = 7_777             # prototype trajectory draws

PAST_STEPS = 16


@dataclass(frozen=True)
class ManeuverSpec:
    """Parameters of one maneuver rollout.  Speeds are signed (negative =
    reversing); curvature is 1/m with positive = left."""

    intent: IntentClass
    curvature: float
    speed_start: float
    speed_end: float
    lateral_shift: float
    noise_sigma: float

    def __post_init__(self) -> None:
        vals = (self.curvature, self.speed_start, self.speed_end,
                self.lateral_shift, self.noise_sigma)
        if not all(math.isfinite(v) for v in vals):
            raise DataError("maneuver spec has non-finite parameters")
        if abs(self.curvature) > 0.5:
            raise DataError(f"curvature {self.curvature} outside +-0.5 1/m")
        if max(abs(self.speed_start), abs(self.speed_end)) > 20.0:
            raise DataError("speeds outside +-20 m/s")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.curvature != 0.0 and self.lateral_shift != 0.0:
            raise DataError("curvature and lateral_shift are mutually exclusive")
        if not self.intent.is_driving_class:
            raise DataError("spec intent must be a driving class")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def simulate_maneuver(spec: ManeuverSpec, cfg: ModelConfig,
                      rng: np.random.Generator) -> tuple[Trajectory, KinematicWindow]:
    """Roll the maneuver out over T steps; returns the noisy trajectory and
    the matching kinematic window (speeds/headings stay analytic)."""
    T = cfg.T
    dt = 1.0 / cfg.rate_hz
    horizon = T * dt
    v = np.linspace(spec.speed_start, spec.speed_end, T)

    if spec.lateral_shift != 0.0:
        # Straight longitudinal motion plus a logistic lateral offset; the
        # heading is the direction of travel implied by the offset slope.
        x = np.cumsum(v * dt)
        u = (np.arange(T) + 1) / T
        z = _SHIFT_STEEPNESS * (u - _SHIFT_MIDPOINT)
        y = spec.lateral_shift * (_sigmoid(z) - _sigmoid(-_SHIFT_STEEPNESS * _SHIFT_MIDPOINT))
        sig = _sigmoid(z)
        dy_dt = spec.lateral_shift * (_SHIFT_STEEPNESS / horizon) * sig * (1.0 - sig)
        headings = np.degrees(np.arctan2(dy_dt, v))
        positions = np.stack([x, y], axis=1)
    else:
        theta_after = spec.curvature * dt * np.cumsum(v)  # radians at each waypoint
        theta_before = np.concatenate([[0.0], theta_after[:-1]])
        steps = (v * dt)[:, None] * np.stack(
            [np.cos(theta_before), np.sin(theta_before)], axis=1)
        positions = np.cumsum(steps, axis=0)
        headings = np.degrees(theta_after)

    if spec.noise_sigma > 0:
        positions = positions + rng.normal(0.0, spec.noise_sigma, size=positions.shape)

    traj = Trajectory(points=positions, rate_hz=cfg.rate_hz)
    window = KinematicWindow(speeds=np.abs(v), headings=headings,
                             positions=positions, frame_dt=dt)
    return traj, window


def generate_trajectory(spec: ManeuverSpec, cfg: ModelConfig,
                        rng: np.random.Generator) -> Trajectory:
    traj, _ = simulate_maneuver(spec, cfg, rng)
    return traj


# --- per-intent maneuver families ---------------------------------------------
#
# PLAUSIBLE_START gives the signed start-speed band within which the intent
# can begin: it gates intent transitions and ambiguous-group membership.

PLAUSIBLE_START: dict[str, tuple[float, float]] = {
    "cruising": (1.5, 13.0),
    "lane_keeping": (1.5, 13.0),
    "following": (1.5, 13.0),
    "lane_change_left": (4.0, 12.5),
    "lane_change_right": (4.0, 12.5),
    "turning_left": (2.5, 10.5),
    "turning_right": (2.5, 10.5),
    "u_turn": (1.8, 3.8),
    "starting": (0.0, 0.3),
    "stopping": (1.5, 5.0),
    "waiting": (0.0, 0.5),
    "accelerating": (0.0, 7.0),
    "decelerating": (3.0, 13.0),
    "braking": (2.5, 13.0),
    "yielding": (2.0, 10.0),
    "overtaking": (3.0, 11.0),
    "merging": (2.5, 10.0),
    "avoiding_obstacle": (3.0, 11.0),
    "parking": (1.0, 4.5),
    "reversing": (-3.0, 0.5),
}

_FRESH_START: dict[str, tuple[float, float]] = {
    "cruising": (5.0, 12.0),
    "lane_keeping": (4.0, 10.0),
    "following": (3.0, 8.0),
    "lane_change_left": (5.0, 12.0),
    "lane_change_right": (5.0, 12.0),
    "turning_left": (3.5, 9.5),
    "turning_right": (3.5, 9.5),
    "u_turn": (2.0, 3.7),
    "starting": (0.0, 0.2),
    "stopping": (2.0, 4.5),
    "waiting": (0.0, 0.0),
    "accelerating": (2.0, 6.0),
    "decelerating": (6.0, 12.0),
    "braking": (6.0, 12.0),
    "yielding": (4.0, 9.0),
    "overtaking": (5.0, 10.0),
    "merging": (4.0, 9.0),
    "avoiding_obstacle": (4.0, 10.0),
    "parking": (2.0, 5.0),
    "reversing": (0.0, 0.0),
}


def _pick_start_speed(name: str, rng: np.random.Generator,
                      v_start: Optional[float]) -> float:
    if v_start is None:
        lo, hi = _FRESH_START[name]
        return float(rng.uniform(lo, hi)) if hi > lo else lo
    lo, hi = PLAUSIBLE_START[name]
    return float(min(max(v_start, lo), hi))


def make_spec(name: str, rng: np.random.Generator,
              v_start: Optional[float] = None,
              noise_sigma: float = 0.0) -> ManeuverSpec:
    """Draw maneuver parameters for one intent family.

    v_start, when given, is the speed the episode hands over; it is clamped
    into the family's plausible band before the profile is built.
    """
    intent = intent_name_to_index(name)
    v0 = _pick_start_speed(name, rng, v_start)
    kappa = 0.0
    shift = 0.0
    v1 = v0

    if name in ("cruising", "lane_keeping"):
        pass
    elif name == "following":
        if v0 >= 4.0:
            v1 = v0 + float(rng.uniform(-0.3, 0.3))
    elif name in ("lane_change_left", "lane_change_right"):
        sign = 1.0 if name.endswith("left") else -1.0
        shift = sign * float(rng.uniform(2.5, 3.7))
    elif name in ("turning_left", "turning_right"):
        sign = 1.0 if name.endswith("left") else -1.0
        mag = (math.pi / 2) / (5.0 * v0) * float(rng.uniform(0.75, 1.25))
        kappa = sign * float(min(max(mag, 0.03), 0.12))
    elif name == "u_turn":
        # Sweep capped at 165 degrees: past ~175 the endpoint falls behind
        # the start and the displacement rule would read the arc as reverse.
        sign = 1.0 if rng.random() < 0.5 else -1.0
        sweep = math.radians(float(rng.uniform(140.0, 165.0)))
        mag = sweep / (5.0 * v0)
        kappa = sign * float(min(max(mag, 0.15), 0.3))
    elif name == "starting":
        v0 = float(min(v0, 0.25))
        v1 = float(rng.uniform(2.5, 5.0))
    elif name == "stopping":
        # the final approach to standstill: slow by construction, so the
        # window's closing frames sit well inside the stationary threshold
        v1 = float(rng.uniform(0.02, 0.08))
    elif name == "waiting":
        v0 = v1 = 0.0
    elif name == "accelerating":
        if v0 < 0.8:
            v0 = float(rng.uniform(0.0, 0.2))
            v1 = float(rng.uniform(3.0, 6.0))
        else:
            # keep |dv| well past the accelerate threshold so sampler drift
            # cannot push the label back to maintain_speed
            dv = max(2.2, 0.15 * v0 + 1.6) + float(rng.uniform(0.0, 2.0))
            v1 = float(min(v0 + dv, 14.0))
    elif name in ("decelerating", "braking"):
        dv = max(2.2, 0.15 * v0 + 1.6) + float(rng.uniform(0.8, 2.8))
        floor = 0.45 if name == "decelerating" else 0.0
        v1 = float(max(v0 - dv, floor))
    elif name == "yielding":
        dv = max(0.8, 0.15 * v0 + 0.4) + float(rng.uniform(0.0, 1.5))
        v1 = float(max(v0 - dv, 0.5))
    elif name == "merging":
        dv = max(1.2, 0.15 * v0 + 0.6) + float(rng.uniform(0.0, 1.5))
        v1 = float(min(v0 + dv, 14.0))
        shift = float(rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 2.0))
    elif name == "overtaking":
        dv = max(1.2, 0.15 * v0 + 0.6) + float(rng.uniform(0.0, 1.5))
        v1 = float(min(v0 + dv, 14.0))
        shift = float(rng.choice([-1.0, 1.0]) * rng.uniform(1.5, 2.5))
    elif name == "avoiding_obstacle":
        shift = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.4))
    elif name == "parking":
        v1 = float(rng.uniform(0.02, 0.15))
        shift = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.6))
    elif name == "reversing":
        v0 = -float(rng.uniform(0.2, 0.6))
        v1 = -float(rng.uniform(1.5, 2.8))
    else:  # pragma: no cover - taxonomy is closed
        raise DataError(f"no maneuver family for intent {name!r}")

    return ManeuverSpec(intent=intent, curvature=kappa, speed_start=v0,
                        speed_end=v1, lateral_shift=shift,
                        noise_sigma=noise_sigma)


# --- scene features ------------------------------------------------------------

_LEFTISH = frozenset({"turning_left", "lane_change_left"})
_RIGHTISH = frozenset({"turning_right", "lane_change_right"})


def _turn_hint(admissible_names: Iterable[str]) -> float:
    names = set(admissible_names)
    has_left = bool(names & _LEFTISH)
    has_right = bool(names & _RIGHTISH)
    if has_left and not has_right:
        return 1.0
    if has_right and not has_left:
        return -1.0
    return 0.0


def scene_feature_projection(cfg: ModelConfig) -> np.ndarray:
    """Fixed (d_s, K+2) projection; identical across runs and datasets."""
    rng = np.random.default_rng(_PROJECTION_SEED)
    return rng.normal(0.0, 1.0, size=(cfg.d_s, cfg.K + 2))


def encode_scene(admissible: Sequence[int], v_start: float, cfg: ModelConfig,
                 rng: np.random.Generator, noise: float = 0.1) -> np.ndarray:
    """Project (multi-hot admissible set, start speed, turn hint) to d_s dims."""
    P = scene_feature_projection(cfg)
    raw = np.zeros(cfg.K + 2)
    for idx in admissible:
        raw[idx] = 1.0
    raw[cfg.K] = 0.5 * v_start / 12.0
    raw[cfg.K + 1] = 0.5 * _turn_hint(INTENT_NAMES[i] for i in admissible)
    feats = P @ raw
    if noise > 0:
        feats = feats + rng.normal(0.0, noise, size=feats.shape)
    return feats


# --- ambiguous scene groups -----------------------------------------------------
#
# Each group lists intents that are all plausible continuations of the same
# scene, with the shared start-speed band they are plausible at.

AMBIGUOUS_GROUPS: tuple[tuple[frozenset, tuple[float, float]], ...] = (
    (frozenset({"turning_left", "turning_right"}), (3.5, 8.0)),
    (frozenset({"turning_left", "cruising"}), (4.0, 9.0)),
    (frozenset({"turning_right", "cruising"}), (4.0, 9.0)),
    (frozenset({"lane_change_left", "lane_change_right", "lane_keeping"}), (5.0, 11.0)),
    (frozenset({"stopping", "decelerating"}), (3.0, 4.8)),
    (frozenset({"accelerating", "cruising"}), (3.0, 7.0)),
    (frozenset({"waiting", "starting"}), (0.0, 0.2)),
    (frozenset({"u_turn", "turning_left"}), (2.5, 3.7)),
    (frozenset({"lane_change_left", "avoiding_obstacle"}), (5.0, 10.0)),
    (frozenset({"decelerating", "yielding"}), (5.0, 9.0)),
    (frozenset({"cruising", "following"}), (3.0, 8.0)),
    (frozenset({"reversing", "waiting"}), (0.0, 0.2)),
)


def _groups_containing(name: str, v_start: float) -> list[frozenset]:
    out = []
    for group, (lo, hi) in AMBIGUOUS_GROUPS:
        if name in group and lo - 1e-9 <= v_start <= hi + 1e-9:
            out.append(group)
    return out


# --- mock annotator -------------------------------------------------------------

_ANSWER_TEMPLATE = (
    "Perceive: ego moves at {v0:.1f} m/s; the scene admits {n_adm} maneuver option(s).\n"
    "Predict: surrounding agents keep their current courses over the horizon.\n"
    "Judge: the {lon}/{lat} kinematic pattern is safe and appropriate here.\n"
    "Plan: commit to the {name} maneuver and execute it smoothly.\n"
    "<INTENT>{name}</INTENT>"
)


def mock_annotate(record: ClipRecord, corruption: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> str:
    """Emit four-section reasoning text ending in the intent span.

    With probability `corruption` the span is missing or carries an unknown
    name, exercising the parser's fallback paths.
    """
    if record.meta_action is None or record.intent is None:
        raise DataError("mock_annotate needs meta_action and intent on the record")
    name = record.intent.name
    body = _ANSWER_TEMPLATE.format(
        v0=float(record.future_window.speeds[0]),
        n_adm=1,
        lon=record.meta_action.longitudinal,
        lat=record.meta_action.lateral,
        name=name,
    )
    if corruption > 0.0:
        if rng is None:
            raise DataError("corruption > 0 requires an rng")
        if rng.random() < corruption:
            if rng.random() < 0.5:
                return body.split("<INTENT>")[0] + "(no commitment emitted)"
            return body.replace(f"<INTENT>{name}</INTENT>",
                                "<INTENT>unclear_maneuver</INTENT>")
    return body


# --- intent transition table ------------------------------------------------------

TRANSITIONS: dict[str, tuple[str, ...]] = {
    "cruising": ("cruising", "lane_keeping", "following", "accelerating",
                 "decelerating", "braking", "turning_left", "turning_right",
                 "lane_change_left", "lane_change_right",
                 "yielding", "overtaking", "merging", "avoiding_obstacle"),
    "lane_keeping": ("cruising", "following", "accelerating", "decelerating",
                     "lane_change_left", "lane_change_right",
                     "avoiding_obstacle", "yielding"),
    "following": ("following", "cruising", "decelerating", "accelerating",
                  "overtaking", "stopping"),
    "lane_change_left": ("cruising", "lane_keeping", "overtaking", "accelerating"),
    "lane_change_right": ("cruising", "lane_keeping", "decelerating", "yielding"),
    "turning_left": ("cruising", "lane_keeping", "accelerating", "decelerating",
                     "stopping"),
    "turning_right": ("cruising", "lane_keeping", "accelerating", "decelerating",
                      "stopping"),
    "u_turn": ("cruising", "accelerating", "lane_keeping"),
    "starting": ("accelerating", "cruising", "following", "turning_left",
                 "turning_right", "u_turn", "stopping"),
    "stopping": ("waiting",),
    "waiting": ("waiting", "starting", "reversing", "accelerating"),
    "accelerating": ("cruising", "lane_keeping", "following", "overtaking",
                     "turning_left", "turning_right"),
    "decelerating": ("stopping", "following", "cruising", "yielding",
                     "turning_left", "turning_right", "parking", "u_turn"),
    "braking": ("waiting", "stopping", "decelerating", "following"),
    "yielding": ("cruising", "accelerating", "merging", "stopping", "waiting",
                 "u_turn"),
    "overtaking": ("lane_change_left", "lane_change_right", "cruising",
                   "accelerating"),
    "merging": ("cruising", "accelerating", "following"),
    "avoiding_obstacle": ("cruising", "lane_keeping", "decelerating"),
    "parking": ("waiting",),
    "reversing": ("reversing", "waiting"),
}

assert set(TRANSITIONS) == set(INTENT_NAMES)


def _plausible(name: str, v: float) -> bool:
    lo, hi = PLAUSIBLE_START[name]
    return lo - 1e-9 <= v <= hi + 1e-9


def _next_intent(current: str, v_end: float, rng: np.random.Generator) -> str:
    candidates = [n for n in TRANSITIONS[current] if _plausible(n, v_end)]
    if not candidates:
        return "waiting" if abs(v_end) < 1.0 else "cruising"
    return str(candidates[int(rng.integers(len(candidates)))])


# --- sequence / dataset generation -------------------------------------------------


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def generate_sequence(sequence_id: str, start_intent: str, length: int,
                      cfg: ModelConfig, rng: np.random.Generator,
                      ambiguous_fraction: float = 0.0,
                      noise_sigma: float = 0.02,
                      corruption: float = 0.0,
                      thresholds: Thresholds = Thresholds()) -> list[ClipRecord]:
    """Simulate one continuous clip sequence at 2 Hz record cadence.

    Each clip plans a full T-step maneuver; the world executes its first
    0.5 s (two 4 Hz steps) before the next clip re-plans.  Intent chaining
    uses the plan's endpoint speed.
    """
    dt = 1.0 / cfg.rate_hz
    exec_steps = max(1, round(0.5 * cfg.rate_hz))

    intent_name = start_intent
    v_chain: Optional[float] = None
    pos_w = np.zeros(2)
    yaw_w = 0.0

    records: list[ClipRecord] = []
    world_states: list[tuple[float, float, float, float]] = []

    for clip_index in range(1, length + 1):
        spec = make_spec(intent_name, rng, v_start=v_chain, noise_sigma=noise_sigma)
        # the scene is described by the handover speed (what the ego is doing
        # now), not the maneuver profile's internal, possibly clamped start
        v_scene = spec.speed_start if v_chain is None else float(v_chain)
        traj, window = simulate_maneuver(spec, cfg, rng)
        meta = label(window, thresholds)
        if not consistency_check(spec.intent, meta, COMPATIBILITY_TABLE):
            # Positional noise nudged an aggregate across a rule threshold
            # (~9 sigma at the default noise level); fall back to the clean
            # rollout so generated labels stay consistent by construction.
            clean = ManeuverSpec(intent=spec.intent, curvature=spec.curvature,
                                 speed_start=spec.speed_start,
                                 speed_end=spec.speed_end,
                                 lateral_shift=spec.lateral_shift,
                                 noise_sigma=0.0)
            traj, window = simulate_maneuver(clean, cfg, rng)
            meta = label(window, thresholds)
            if not consistency_check(spec.intent, meta, COMPATIBILITY_TABLE):
                raise DataError(
                    f"maneuver family {intent_name!r} produced inconsistent "
                    f"label {meta} at zero noise")

        if clip_index == 1:
            # Backfill a straight-line past trace at the starting speed.
            heading_dir = np.array([math.cos(yaw_w), math.sin(yaw_w)])
            for i in range(PAST_STEPS, 0, -1):
                p = pos_w - heading_dir * spec.speed_start * dt * i
                world_states.append((p[0], p[1], yaw_w, abs(spec.speed_start)))

        admissible = [spec.intent.index]
        if ambiguous_fraction > 0 and rng.random() < ambiguous_fraction:
            groups = _groups_containing(intent_name, v_scene)
            if groups:
                group = groups[int(rng.integers(len(groups)))]
                admissible = sorted(intent_name_to_index(n).index for n in group)

        features = encode_scene(admissible, v_scene, cfg, rng)
        past = np.array(world_states[-PAST_STEPS:], dtype=float)

        provisional = ClipRecord(
            sequence_id=sequence_id, clip_index=clip_index, past_state=past,
            future_window=window, meta_action=meta, intent_text="",
            intent=spec.intent, trajectory=traj, is_pseudo_labeled=False,
            scene_features=features)
        text = mock_annotate(provisional, corruption=corruption, rng=rng)
        records.append(replace(provisional, intent_text=text))

        # Execute the first 0.5 s of the plan in the world frame.
        R = _rotation(yaw_w)
        for j in range(exec_steps):
            p = pos_w + R @ traj.points[j]
            yaw = yaw_w + math.radians(window.headings[j])
            world_states.append((p[0], p[1], yaw, float(window.speeds[j])))
        pos_w = np.array(world_states[-1][:2])
        yaw_w = world_states[-1][2]

        v_chain = spec.speed_end
        intent_name = _next_intent(intent_name, spec.speed_end, rng)

    return records


def generate_dataset(n: int, ambiguous_fraction: float, cfg: ModelConfig,
                     seed: int, noise_sigma: float = 0.02,
                     corruption: float = 0.0) -> list[ClipRecord]:
    """Generate n sequences of 3-6 clips each; deterministic given seed.

    Start intents are stratified over the taxonomy so every class appears.
    """
    if n < 1:
        raise DataError("need n >= 1 sequences")
    if not 0.0 <= ambiguous_fraction <= 1.0:
        raise DataError("ambiguous_fraction must be in [0, 1]")
    root = np.random.SeedSequence(seed)
    children = root.spawn(n)
    records: list[ClipRecord] = []
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        start = INTENT_NAMES[s % len(INTENT_NAMES)]
        length = int(rng.integers(3, 7))
        records.extend(generate_sequence(
            f"seq-{s:05d}", start, length, cfg, rng,
            ambiguous_fraction=ambiguous_fraction,
            noise_sigma=noise_sigma, corruption=corruption))
    return records


# --- eval scenes ----------------------------------------------------------------


@dataclass(frozen=True)
class SceneSample:
    """One evaluation scene: features, the reference trajectory of the true
    intent, and the set of intents a sampler may be asked to follow here."""

    scene_features: np.ndarray
    gt_trajectory: Trajectory
    gt_intent: IntentClass
    admissible_intents: frozenset  # of int indices

    def __post_init__(self) -> None:
        if self.gt_intent.index not in self.admissible_intents:
            raise DataError("gt_intent must be in admissible_intents")
        feats = np.asarray(self.scene_features, dtype=float)
        if not np.all(np.isfinite(feats)):
            raise DataError("scene_features must be finite")
        object.__setattr__(self, "scene_features", feats)


def scene_to_obj(s: SceneSample) -> dict:
    return {
        "scene_features": s.scene_features.tolist(),
        "gt_trajectory": {"points": s.gt_trajectory.points.tolist(),
                          "rate_hz": s.gt_trajectory.rate_hz},
        "gt_intent": s.gt_intent.index,
        "admissible_intents": sorted(s.admissible_intents),
    }


def scene_from_obj(obj: dict) -> SceneSample:
    return SceneSample(
        scene_features=np.array(obj["scene_features"], dtype=float),
        gt_trajectory=Trajectory(points=np.array(obj["gt_trajectory"]["points"]),
                                 rate_hz=float(obj["gt_trajectory"]["rate_hz"])),
        gt_intent=IntentClass(int(obj["gt_intent"])),
        admissible_intents=frozenset(int(i) for i in obj["admissible_intents"]),
    )


def generate_scenes(n: int, ambiguous_fraction: float, cfg: ModelConfig,
                    seed: int) -> list[SceneSample]:
    """Independent eval scenes with clean (noise-free) reference trajectories."""
    if n < 1:
        raise DataError("need n >= 1 scenes")
    root = np.random.SeedSequence(seed)
    scenes: list[SceneSample] = []
    for child in root.spawn(n):
        rng = np.random.default_rng(child)
        if rng.random() < ambiguous_fraction:
            group, (lo, hi) = AMBIGUOUS_GROUPS[int(rng.integers(len(AMBIGUOUS_GROUPS)))]
            names = sorted(group)
            v0 = float(rng.uniform(lo, hi)) if hi > lo else lo
            gt_name = names[int(rng.integers(len(names)))]
        else:
            gt_name = INTENT_NAMES[int(rng.integers(len(INTENT_NAMES)))]
            names = [gt_name]
            lo, hi = _FRESH_START[gt_name]
            v0 = float(rng.uniform(lo, hi)) if hi > lo else lo
        spec = make_spec(gt_name, rng, v_start=v0, noise_sigma=0.0)
        traj = generate_trajectory(spec, cfg, rng)
        admissible = frozenset(intent_name_to_index(nm).index for nm in names)
        features = encode_scene(sorted(admissible), v0, cfg, rng)
        scenes.append(SceneSample(scene_features=features, gt_trajectory=traj,
                                  gt_intent=spec.intent,
                                  admissible_intents=admissible))
    return scenes


def compute_prototypes(cfg: ModelConfig, draws_per_class: int = 32) -> np.ndarray:
    """(K, T*D) mean noise-free trajectory per intent class, in meters."""
    protos = np.zeros((cfg.K, cfg.T * cfg.D))
    for k, name in enumerate(INTENT_NAMES):
        rng = np.random.default_rng(np.random.SeedSequence((_PROTO_SEED, k)))
        acc = np.zeros((cfg.T, cfg.D))
        for _ in range(draws_per_class):
            spec = make_spec(name, rng, v_start=None, noise_sigma=0.0)
            acc += generate_trajectory(spec, cfg, rng).points
        protos[k] = (acc / draws_per_class).reshape(-1)
    return protos
