"""Rectified flow-matching training: Beta-skewed time sampling, CFG dropout,
the prototype-regression auxiliary loss, AdamW with a OneCycle schedule, and
gradient-norm clipping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError, NumericalError, ShapeMismatchError
from .net import IntentEmbedder, ModelStack, PrototypeReadout, VelocityNet, build_stack
from .synth import compute_prototypes
from .types import ClipRecord, ModelConfig

_TIME_EPS = 1e-9  # keeps sampled t inside the open interval (0, 1)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 64
    grad_clip: float = 0.5
    warmup_fraction: float = 0.05

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise DataError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise DataError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if not self.grad_clip > 0:
            raise DataError("grad_clip must be > 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown train-config fields: {sorted(unknown)}")
        return cls(**d)


def sample_time(rng: np.random.Generator,
                size: Optional[int] = None) -> Union[float, np.ndarray]:
    """Draw t ~ Beta(1.5, 1.0) via inverse CDF t = u^(1/1.5), clamped into
    the open interval (0, 1)."""
    u = rng.random(size)
    t = np.clip(u ** (2.0 / 3.0), _TIME_EPS, 1.0 - _TIME_EPS)
    return float(t) if size is None else t


def make_interpolant(x0: np.ndarray, eps: np.ndarray,
                     t: Union[float, np.ndarray]) -> np.ndarray:
    """x_t = t * eps + (1 - t) * x0, elementwise."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"x0 {x0.shape} != eps {eps.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim == 1 and x0.ndim == 2:
        t_arr = t_arr[:, None]
    return t_arr * eps + (1.0 - t_arr) * x0


def fm_target(x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Rectified-flow regression target eps - x0."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"x0 {x0.shape} != eps {eps.shape}")
    return eps - x0


def apply_cfg_dropout(k: Union[int, np.ndarray], is_pseudo: Union[bool, np.ndarray],
                      p_drop: float, rng: np.random.Generator,
                      uncond_index: int) -> Union[int, np.ndarray]:
    """Replace the intent index with the uncond slot: always for
    pseudo-labeled samples, with probability p_drop otherwise."""
    scalar = np.isscalar(k)
    k_arr = np.atleast_1d(np.asarray(k, dtype=int))
    pseudo = np.broadcast_to(np.atleast_1d(np.asarray(is_pseudo, dtype=bool)),
                             k_arr.shape)
    if np.any(k_arr >= uncond_index) or np.any(k_arr < 0):
        raise DataError("dropout input indices must be driving classes")
    u = rng.random(k_arr.shape)
    out = np.where(pseudo | (u < p_drop), uncond_index, k_arr)
    return int(out[0]) if scalar else out


def prototype_loss(e_k: np.ndarray, prototype: np.ndarray,
                   readout: PrototypeReadout) -> float:
    """MSE between the readout of an intent embedding and the class
    prototype chunk."""
    proto = np.asarray(prototype, dtype=float).reshape(-1)
    if not np.all(np.isfinite(proto)):
        raise DataError("prototype undefined (non-finite) for this class")
    pred = readout.forward(e_k)
    if pred.shape != proto.shape:
        raise ShapeMismatchError(f"readout {pred.shape} != prototype {proto.shape}")
    diff = pred - proto
    return float(np.mean(diff * diff))


# --- optimizer ------------------------------------------------------------------


class AdamW:
    """Decoupled-weight-decay Adam over a flat name->array parameter dict.

    Weight decay applies to matrices and tables only, not bias vectors.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + 1e-8)
            if p.ndim >= 2 and c.weight_decay > 0:
                update = update + c.weight_decay * p
            p -= (lr * update).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[float, float]:
    """Global-norm clipping in place; returns (raw norm, post-clip norm)."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                          for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
        return total, max_norm
    return total, total


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup over warmup_fraction of steps, cosine anneal to lr/100."""
    warmup = max(1, int(round(cfg.warmup_fraction * total_steps)))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    lr_min = cfg.lr / 100.0
    span = max(1, total_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    return lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + math.cos(math.pi * progress))


# --- training loop ---------------------------------------------------------------


def _dataset_arrays(dataset: Sequence[ClipRecord], cfg: ModelConfig,
                    dtype: type) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise DataError("empty dataset")
    x0 = np.zeros((len(dataset), cfg.chunk_dim), dtype=dtype)
    scenes = np.zeros((len(dataset), cfg.d_s), dtype=dtype)
    ks = np.zeros(len(dataset), dtype=int)
    pseudo = np.zeros(len(dataset), dtype=bool)
    for i, rec in enumerate(dataset):
        if rec.intent is None:
            raise DataError(
                f"record {rec.sequence_id}/{rec.clip_index} has no intent; "
                "run validation first")
        if len(rec.trajectory) != cfg.T:
            raise ShapeMismatchError(
                f"trajectory length {len(rec.trajectory)} != configured T={cfg.T}")
        if rec.scene_features.shape[0] != cfg.d_s:
            raise ShapeMismatchError("scene feature dim mismatch")
        x0[i] = rec.trajectory.points.reshape(-1) / cfg.traj_scale
        scenes[i] = rec.scene_features
        ks[i] = rec.intent.index
        pseudo[i] = rec.is_pseudo_labeled
    return x0, scenes, ks, pseudo


def _merge_grads(acc: dict, extra: dict, prefix: str) -> None:
    for name, g in extra.items():
        key = f"{prefix}/{name}"
        if key in acc:
            acc[key] = acc[key] + g
        else:
            acc[key] = g


def train(dataset: Sequence[ClipRecord], cfg: ModelConfig,
          train_cfg: TrainConfig = TrainConfig(),
          stack: Optional[ModelStack] = None,
          telemetry_path: Optional[str] = None) -> ModelStack:
    """Fit the velocity net, intent embedder, and prototype readout.

    Deterministic given (cfg.seed, dataset, train_cfg).  Telemetry rows are
    (step, fm_loss, proto_loss, grad_norm, lr); grad_norm is post-clip.
    Raises NumericalError on a non-finite loss.
    """
    if stack is None:
        stack = build_stack(cfg)
    net: VelocityNet = stack.net
    embedder: IntentEmbedder = stack.embedder
    readout: PrototypeReadout = stack.readout
    dtype = net.dtype

    x0_all, scene_all, k_all, pseudo_all = _dataset_arrays(dataset, cfg, dtype)
    protos = (compute_prototypes(cfg) / cfg.traj_scale).astype(dtype)

    flat_params: dict[str, np.ndarray] = {}
    for comp_name, comp in (("net", net), ("embedder", embedder), ("readout", readout)):
        for pname, arr in comp.params.items():
            flat_params[f"{comp_name}/{pname}"] = arr
    opt = AdamW(flat_params, train_cfg)

    n = x0_all.shape[0]
    steps_per_epoch = max(1, (n + train_cfg.batch_size - 1) // train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x7261)))

    telemetry: list[tuple[int, float, float, float, float]] = []
    step = 0
    for _epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = perm[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            if idx.size == 0:
                continue
            x0 = x0_all[idx]
            scene = scene_all[idx]
            kb = k_all[idx]
            pb = pseudo_all[idx]

            eps = rng.standard_normal(x0.shape).astype(dtype)
            t = sample_time(rng, idx.size)
            x_t = make_interpolant(x0, eps, t).astype(dtype)
            u_t = fm_target(x0, eps)
            k_used = apply_cfg_dropout(kb, pb, cfg.p_drop, rng, cfg.uncond_index)

            e = embedder.embed(k_used, cache=True)
            v = net.forward(x_t, t, scene, e, cache=True)
            resid = v - u_t
            fm_loss = float(np.mean(resid * resid))

            grads: dict[str, np.ndarray] = {}
            dv = (2.0 / resid.size) * resid
            g_net, de = net.backward(dv)
            _merge_grads(grads, g_net, "net")
            _merge_grads(grads, embedder.backward(de), "embedder")

            # Prototype regression on the pre-dropout labels; pseudo-labeled
            # samples carry kinematic (not reasoned) intent and are skipped.
            proto_loss_val = 0.0
            live = ~pb
            if np.any(live):
                e_orig = embedder.embed(kb[live], cache=True)
                pred = readout.forward(e_orig, cache=True)
                target = protos[kb[live]]
                pdiff = pred - target
                proto_loss_val = float(np.mean(pdiff * pdiff))
                dpred = (cfg.proto_weight * 2.0 / pdiff.size) * pdiff
                g_read, de2 = readout.backward(dpred)
                _merge_grads(grads, g_read, "readout")
                _merge_grads(grads, embedder.backward(de2), "embedder")
            else:
                for pname, arr in readout.params.items():
                    grads[f"readout/{pname}"] = np.zeros_like(arr)

            total_loss = fm_loss + cfg.proto_weight * proto_loss_val
            if not math.isfinite(total_loss):
                raise NumericalError(
                    f"non-finite loss at step {step}: fm={fm_loss}, "
                    f"proto={proto_loss_val}")

            _raw, post_norm = clip_gradients(grads, train_cfg.grad_clip)
            lr = onecycle_lr(step, total_steps, train_cfg)
            opt.step(grads, lr)
            telemetry.append((step, fm_loss, proto_loss_val, post_norm, lr))
            step += 1

    if telemetry_path is not None:
        write_telemetry(telemetry_path, telemetry)
    stack.telemetry = telemetry
    return stack


def write_telemetry(path: str, rows: Sequence[tuple],
                    provenance: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write("# provenance: " + json.dumps(provenance) + "\n")
        fh.write("step,fm_loss,proto_loss,grad_norm,lr\n")
        for step_i, fm, proto, gn, lr in rows:
            fh.write(f"{step_i},{fm!r},{proto!r},{gn!r},{lr!r}\n")
