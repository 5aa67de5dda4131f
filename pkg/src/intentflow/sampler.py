"""Inference-time trajectory generation.

Two-pass classifier-free guidance combines conditional and unconditional
velocity fields; a forward-Euler rollout integrates the rectified flow from
t=1 (noise) down to t=0 (clean chunk).  The distilled path does the same
rollout with one forward per step.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from .errors import DataError, NumericalError, ShapeMismatchError
from .net import DistilledIntentEmbedder, IntentEmbedder, VelocityNet
from .types import IntentClass, ModelConfig, Trajectory

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


def cfg_velocity(net: VelocityNet, x_t: np.ndarray, t: float,
                 scene: np.ndarray, e_cond: np.ndarray, e_uncond: np.ndarray,
                 w: float) -> np.ndarray:
    """Guided velocity: uncond plus w times the (cond - uncond) direction.

    Computed in the affine form (1-w)*v_uncond + w*v_cond so that w=1
    returns the conditional field and w=0 the unconditional field exactly.
    Exactly two net forwards.
    """
    if w < 0:
        raise DataError(f"guidance scale must be >= 0, got {w}")
    v_uncond = net.forward(x_t, t, scene, e_uncond)
    v_cond = net.forward(x_t, t, scene, e_cond)
    return (1.0 - w) * v_uncond + w * v_cond


def euler_rollout(velocity_fn: VelocityFn, x_start: np.ndarray,
                  n_steps: int) -> np.ndarray:
    """Integrate x' = v(x, t) from t=1 to t=0 with step -1/N.

    Velocities are evaluated at the left endpoint of each step, i.e. on the
    grid t in {1, 1-1/N, ..., 1/N}.  Returns the final chunk.
    """
    if n_steps < 1:
        raise DataError(f"need n_steps >= 1, got {n_steps}")
    x = np.array(x_start, copy=True)
    dt = -1.0 / n_steps
    for i in range(n_steps):
        t = 1.0 - i / n_steps
        v = velocity_fn(x, t)
        if np.asarray(v).shape != x.shape:
            raise ShapeMismatchError(
                f"velocity shape {np.asarray(v).shape} != state {x.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite velocity at step {i} (t={t})")
        x = x + dt * v
    return x


def _coerce_intent(k: Union[int, IntentClass], cfg: ModelConfig) -> int:
    idx = k.index if isinstance(k, IntentClass) else int(k)
    if not 0 <= idx < cfg.K:
        raise DataError(f"sampling needs a driving class, got index {idx}")
    return idx


def sample(net: VelocityNet, embedder: IntentEmbedder, scene: np.ndarray,
           k: Union[int, IntentClass], cfg: ModelConfig,
           rng: np.random.Generator) -> Trajectory:
    """Two-pass CFG sampling: 2N net forwards for an N-step rollout."""
    idx = _coerce_intent(k, cfg)
    e_cond = embedder.embed(idx)
    e_uncond = embedder.embed(cfg.uncond_index)
    x_start = rng.standard_normal(cfg.chunk_dim).astype(net.dtype)

    def fn(x: np.ndarray, t: float) -> np.ndarray:
        return cfg_velocity(net, x, t, scene, e_cond, e_uncond, cfg.w)

    chunk = euler_rollout(fn, x_start, cfg.N)
    points = (chunk * cfg.traj_scale).reshape(cfg.T, cfg.D)
    return Trajectory(points=np.asarray(points, dtype=float), rate_hz=cfg.rate_hz)


def sample_distilled(net: VelocityNet, dist_embedder: DistilledIntentEmbedder,
                     scene: np.ndarray, k: Union[int, IntentClass],
                     cfg: ModelConfig, rng: np.random.Generator) -> Trajectory:
    """Single-pass sampling through the distilled embedder: N net forwards."""
    idx = _coerce_intent(k, cfg)
    e_dist = dist_embedder.embed(idx)
    x_start = rng.standard_normal(cfg.chunk_dim).astype(net.dtype)

    def fn(x: np.ndarray, t: float) -> np.ndarray:
        return net.forward(x, t, scene, e_dist)

    chunk = euler_rollout(fn, x_start, cfg.N)
    points = (chunk * cfg.traj_scale).reshape(cfg.T, cfg.D)
    return Trajectory(points=np.asarray(points, dtype=float), rate_hz=cfg.rate_hz)
