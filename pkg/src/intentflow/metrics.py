"""Quantitative evaluation: ADE/FDE at fixed horizons and the
intent-faithfulness rate (sampled trajectories rule-labeled and checked
against the intent compatibility table).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .bridge import consistency_check
from .errors import DataError
from .meta_labeler import Thresholds, label, window_from_trajectory
from .net import ModelStack
from .sampler import sample, sample_distilled
from .synth import SceneSample
from .types import IntentClass, ModelConfig, Trajectory, intent_index_to_name

DEFAULT_HORIZONS = (3.0, 5.0)


def _horizon_count(traj: Trajectory, horizon_s: float) -> int:
    # waypoint i sits at timestamp (i+1)/rate
    if horizon_s > traj.span_seconds + 1e-9:
        raise DataError(
            f"horizon {horizon_s}s exceeds trajectory span {traj.span_seconds}s")
    count = int(np.floor(horizon_s * traj.rate_hz + 1e-9))
    if count < 1:
        raise DataError(f"horizon {horizon_s}s contains no waypoints")
    return count


def _check_pair(pred: Trajectory, gt: Trajectory) -> None:
    if pred.rate_hz != gt.rate_hz:
        raise DataError(f"rate mismatch: {pred.rate_hz} vs {gt.rate_hz}")
    if len(pred) != len(gt):
        raise DataError(f"length mismatch: {len(pred)} vs {len(gt)}")


def ade(pred: Trajectory, gt: Trajectory, horizon_s: float) -> float:
    """Mean Euclidean waypoint distance over timestamps <= horizon."""
    _check_pair(pred, gt)
    n = _horizon_count(pred, horizon_s)
    diff = pred.points[:n] - gt.points[:n]
    return float(np.mean(np.hypot(diff[:, 0], diff[:, 1])))


def fde(pred: Trajectory, gt: Trajectory, horizon_s: float) -> float:
    """Distance at the last waypoint within the horizon."""
    _check_pair(pred, gt)
    n = _horizon_count(pred, horizon_s)
    diff = pred.points[n - 1] - gt.points[n - 1]
    return float(np.hypot(diff[0], diff[1]))


def intent_faithfulness(stack: ModelStack, scenes: Sequence[SceneSample],
                        cfg: ModelConfig, seed: int = 0,
                        distilled: bool = False,
                        all_intents: bool = False,
                        thresholds: Thresholds = Thresholds()) -> dict:
    """Sample per (scene, probed intent), rule-label the output, and score
    compatibility with the probed intent.

    Probes each scene's admissible intents unless all_intents is set.  The
    per-probe RNG is keyed on (seed, scene index, intent), so the result is
    a pure function of (checkpoint, scenes, seed).
    """
    if not scenes:
        raise DataError("empty scene set")
    hits: dict[int, int] = {}
    totals: dict[int, int] = {}
    for i, scene in enumerate(scenes):
        probe = (range(cfg.K) if all_intents
                 else sorted(scene.admissible_intents))
        for k in probe:
            rng = np.random.default_rng(np.random.SeedSequence((seed, i, k)))
            if distilled:
                if stack.student is None:
                    raise DataError("distilled evaluation needs a student embedder")
                traj = sample_distilled(stack.net, stack.student,
                                        scene.scene_features, k, cfg, rng)
            else:
                traj = sample(stack.net, stack.embedder, scene.scene_features,
                              k, cfg, rng)
            meta = label(window_from_trajectory(traj), thresholds)
            ok = consistency_check(IntentClass(k), meta)
            totals[k] = totals.get(k, 0) + 1
            hits[k] = hits.get(k, 0) + int(ok)
    per_intent = {intent_index_to_name(k): hits[k] / totals[k]
                  for k in sorted(totals)}
    macro = float(np.mean(list(per_intent.values())))
    overall = sum(hits.values()) / sum(totals.values())
    return {"per_intent": per_intent, "macro": macro, "overall": overall,
            "n_probes": sum(totals.values())}


def evaluate_model(stack: ModelStack, scenes: Sequence[SceneSample],
                   cfg: ModelConfig, seed: int = 0, distilled: bool = False,
                   horizons: tuple[float, ...] = DEFAULT_HORIZONS,
                   thresholds: Thresholds = Thresholds()) -> dict:
    """Full evaluation report: ADE/FDE against each scene's reference
    trajectory (sampling its true intent), faithfulness over admissible
    intents, and the instrumented net-forward count."""
    if not scenes:
        raise DataError("empty scene set")
    calls_before = stack.net.forward_calls
    ade_acc = {h: 0.0 for h in horizons}
    fde_acc = {h: 0.0 for h in horizons}
    for i, scene in enumerate(scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i, 0xADE)))
        if distilled:
            traj = sample_distilled(stack.net, stack.student,
                                    scene.scene_features, scene.gt_intent,
                                    cfg, rng)
        else:
            traj = sample(stack.net, stack.embedder, scene.scene_features,
                          scene.gt_intent, cfg, rng)
        for h in horizons:
            ade_acc[h] += ade(traj, scene.gt_trajectory, h)
            fde_acc[h] += fde(traj, scene.gt_trajectory, h)
    n = len(scenes)
    report = {}
    for h in horizons:
        key = f"{h:g}s"
        report[f"ade_{key}"] = ade_acc[h] / n
        report[f"fde_{key}"] = fde_acc[h] / n
    faith = intent_faithfulness(stack, scenes, cfg, seed=seed,
                                distilled=distilled, thresholds=thresholds)
    report["faithfulness_per_intent"] = faith["per_intent"]
    report["faithfulness_macro"] = faith["macro"]
    report["faithfulness_overall"] = faith["overall"]
    report["forward_count"] = stack.net.forward_calls - calls_before
    return report
