"""Guidance distillation: freeze the net and teacher embedder, warm-start a
single-pass student embedder to the closed-form guided combination
w*e(k) - (w-1)*e(K), then fit its residual to the teacher's guided velocity
along the teacher's own denoising trajectories.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, FrozenViolationError, NumericalError
from .net import (
    DistilledIntentEmbedder,
    IntentEmbedder,
    VelocityNet,
    params_checksum,
)
from .sampler import cfg_velocity
from .train import AdamW, TrainConfig, clip_gradients, onecycle_lr
from .types import ModelConfig


def warm_start(embedder: IntentEmbedder, w: float, cfg: ModelConfig,
               rng: Optional[np.random.Generator] = None) -> DistilledIntentEmbedder:
    """Build a student whose base rows equal w*e(k) - (w-1)*e(K) for driving
    classes (row K keeps e(K)) and whose residual is the zero map."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xD157)))
    student = DistilledIntentEmbedder(cfg, rng, dtype=embedder.dtype)
    e_all = embedder.embed(np.arange(cfg.K + 1))
    e_uncond = e_all[cfg.K]
    base = w * e_all - (w - 1.0) * e_uncond[None, :]
    base[cfg.K] = e_uncond
    student.params["base"] = base.astype(student.dtype)
    student.params["rW2"][:] = 0.0
    student.params["rb2"][:] = 0.0
    return student


def forward_distilled(student: DistilledIntentEmbedder,
                      k: int) -> np.ndarray:
    """e_dist(k) = base[k] + residual_mlp(base[k])."""
    return student.embed(k)


def distill(net: VelocityNet, teacher_embedder: IntentEmbedder,
            student: DistilledIntentEmbedder,
            dataset: Sequence[tuple[np.ndarray, int]], cfg: ModelConfig,
            train_cfg: TrainConfig = TrainConfig()) -> DistilledIntentEmbedder:
    """Velocity-matching distillation; only student parameters move.

    dataset entries are (scene_features, intent index) pairs.  For every
    pair the teacher's guided Euler trajectory is rolled fresh, and at each
    of its N steps the student's single-pass velocity is regressed onto the
    teacher's guided velocity; the per-sample loss sums over steps.
    Teacher rollouts are re-rolled every epoch rather than cached.
    """
    if len(dataset) == 0:
        raise DataError("empty distillation dataset")
    frozen_before = params_checksum({"net": net, "embedder": teacher_embedder})

    scenes = np.stack([np.asarray(s, dtype=net.dtype) for s, _ in dataset])
    ks = np.array([int(k) for _, k in dataset], dtype=int)
    if np.any(ks < 0) or np.any(ks >= cfg.K):
        raise DataError("distillation intents must be driving classes")

    e_table = teacher_embedder.embed(np.arange(cfg.K + 1))
    e_uncond = e_table[cfg.K]

    opt = AdamW({f"student/{n}": p for n, p in student.params.items()}, train_cfg)
    n = scenes.shape[0]
    steps_per_epoch = max(1, (n + train_cfg.batch_size - 1) // train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xD157111)))

    step = 0
    for _epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = perm[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            if idx.size == 0:
                continue
            scene_b = scenes[idx]
            k_b = ks[idx]
            e_cond = e_table[k_b]
            e_unc = np.broadcast_to(e_uncond, e_cond.shape)

            x = rng.standard_normal((idx.size, cfg.chunk_dim)).astype(net.dtype)
            grads = {f"student/{nm}": np.zeros_like(p)
                     for nm, p in student.params.items()}
            loss = 0.0
            dt = -1.0 / cfg.N
            for i in range(cfg.N):
                t = 1.0 - i / cfg.N
                v_teacher = cfg_velocity(net, x, t, scene_b, e_cond, e_unc, cfg.w)
                e_d = student.embed(k_b, cache=True)
                v_student = net.forward(x, t, scene_b, e_d, cache=True)
                resid = v_student - v_teacher
                loss += float(np.mean(resid * resid))
                dv = (2.0 / resid.size) * resid
                _, de = net.backward(dv)
                for nm, g in student.backward(de).items():
                    grads[f"student/{nm}"] += g
                x = x + dt * v_teacher  # follow the teacher's own trajectory
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite distillation loss at step {step}")
            clip_gradients(grads, train_cfg.grad_clip)
            opt.step(grads, onecycle_lr(step, total_steps, train_cfg))
            step += 1

    frozen_after = params_checksum({"net": net, "embedder": teacher_embedder})
    if frozen_after != frozen_before:
        raise FrozenViolationError(
            "net or teacher embedder parameters changed during distillation")
    return student


def velocity_match_report(net: VelocityNet, teacher_embedder: IntentEmbedder,
                          student: DistilledIntentEmbedder,
                          eval_set: Sequence[tuple[np.ndarray, int]],
                          cfg: ModelConfig, seed: int = 0) -> dict:
    """Per-step diagnostics on held-out scenes: the student-vs-teacher
    velocity MSE and the teacher-vs-uncond velocity gap it is measured
    against."""
    rng = np.random.default_rng(seed)
    e_table = teacher_embedder.embed(np.arange(cfg.K + 1))
    e_uncond = e_table[cfg.K]
    mse_sum = 0.0
    gap_sum = 0.0
    count = 0
    for scene, k in eval_set:
        scene = np.asarray(scene, dtype=net.dtype)
        e_cond = e_table[int(k)]
        x = rng.standard_normal(cfg.chunk_dim).astype(net.dtype)
        dt = -1.0 / cfg.N
        for i in range(cfg.N):
            t = 1.0 - i / cfg.N
            v_teacher = cfg_velocity(net, x, t, scene, e_cond, e_uncond, cfg.w)
            v_uncond = net.forward(x, t, scene, e_uncond)
            v_student = net.forward(x, t, scene, student.embed(int(k)))
            mse_sum += float(np.mean((v_student - v_teacher) ** 2))
            gap_sum += float(np.mean((v_teacher - v_uncond) ** 2))
            count += 1
            x = x + dt * v_teacher
    return {"velocity_mse": mse_sum / count, "teacher_uncond_gap": gap_sum / count}
