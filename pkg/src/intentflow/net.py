"""Trainable velocity field and intent embedders, with hand-rolled
reverse-mode gradients.

The nets are small enough that explicit forward/backward passes (each
forward caching its activations, each backward consuming them) are simpler
and more auditable than an autodiff tape, and they make the 32-bit
checkpoint blob and 64-bit gradient checks exact by construction.
"""

from __future__ import annotations

import hashlib
import json
from typing import Optional, Union

import numpy as np

from .errors import CheckpointError, DataError, NoRecordedForwardError, ShapeMismatchError
from .types import IntentClass, ModelConfig

TIME_FREQS = 8  # sinusoidal features of t: [sin(2^j pi t), cos(2^j pi t)]
TIME_FEAT_DIM = 2 * TIME_FREQS + 2  # plus [t, 1/clip(t, 0.2, 1)]
_T_RECIP_FLOOR = 0.2


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int,
            dtype: type) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else z


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _as_index_array(k: Union[int, IntentClass, np.ndarray], n_rows: int) -> np.ndarray:
    if isinstance(k, IntentClass):
        k = k.index
    idx = np.atleast_1d(np.asarray(k, dtype=int))
    if idx.ndim != 1:
        raise ShapeMismatchError(f"index array must be 1-d, got {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= n_rows):
        raise DataError(f"intent index out of range [0, {n_rows - 1}]")
    return idx


def time_features(t: np.ndarray, dtype: type = np.float64) -> np.ndarray:
    """(B,) times in [0, 1] -> (B, TIME_FEAT_DIM) features.

    Sinusoidal features at 8 octaves plus raw t and a clipped reciprocal:
    the state coefficient of a rectified-flow field is 1/t, which the
    band-limited features cannot carry on their own.
    """
    t = np.atleast_1d(np.asarray(t, dtype=dtype))
    freqs = (2.0 ** np.arange(TIME_FREQS)).astype(dtype) * np.pi
    arg = t[:, None] * freqs[None, :]
    recip = 1.0 / np.clip(t, _T_RECIP_FLOOR, 1.0)
    return np.concatenate([np.sin(arg), np.cos(arg), t[:, None], recip[:, None]],
                          axis=1).astype(dtype)


class IntentEmbedder:
    """e(k) = MLP(table[k]); table has K+1 rows, row K is the uncond slot."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32):
        H, inner = cfg.H, cfg.intent_embed_inner
        self.cfg = cfg
        self.dtype = dtype
        self.params = {
            "table": rng.normal(0.0, 0.5, size=(cfg.K + 1, H)).astype(dtype),
            "W1": _xavier(rng, H, inner, dtype),
            "b1": np.zeros(inner, dtype=dtype),
            "W2": _xavier(rng, inner, H, dtype),
            "b2": np.zeros(H, dtype=dtype),
        }
        self._cache = None

    @property
    def n_rows(self) -> int:
        return self.cfg.K + 1

    def embed(self, k: Union[int, IntentClass, np.ndarray],
              cache: bool = False) -> np.ndarray:
        scalar = np.isscalar(k) or isinstance(k, IntentClass)
        idx = _as_index_array(k, self.n_rows)
        p = self.params
        rows = p["table"][idx]
        h_pre = rows @ p["W1"] + p["b1"]
        h = np.tanh(h_pre)
        e = h @ p["W2"] + p["b2"]
        if cache:
            self._cache = (idx, rows, h_pre, h)
        return e[0] if scalar else e

    def backward(self, de: np.ndarray) -> dict:
        if self._cache is None:
            raise NoRecordedForwardError("embedder backward without cached forward")
        idx, rows, h_pre, h = self._cache
        self._cache = None
        de = np.atleast_2d(de)
        p = self.params
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        grads["W2"] = h.T @ de
        grads["b2"] = de.sum(axis=0)
        dh = de @ p["W2"].T
        dh_pre = dh * (1.0 - h * h)
        grads["W1"] = rows.T @ dh_pre
        grads["b1"] = dh_pre.sum(axis=0)
        drows = dh_pre @ p["W1"].T
        np.add.at(grads["table"], idx, drows)
        return grads


class DistilledIntentEmbedder:
    """Single-pass student: e_dist(k) = base[k] + residual_mlp(base[k]).

    The residual starts as the zero map, so right after warm-starting the
    student reproduces its base rows exactly.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32):
        H = cfg.H
        inner = cfg.hidden_mult * H
        self.cfg = cfg
        self.dtype = dtype
        self.params = {
            "base": rng.normal(0.0, 0.5, size=(cfg.K + 1, H)).astype(dtype),
            "rW1": _xavier(rng, H, inner, dtype),
            "rb1": np.zeros(inner, dtype=dtype),
            "rW2": np.zeros((inner, H), dtype=dtype),  # zero map at init
            "rb2": np.zeros(H, dtype=dtype),
        }
        self._cache = None

    @property
    def n_rows(self) -> int:
        return self.cfg.K + 1

    def embed(self, k: Union[int, IntentClass, np.ndarray],
              cache: bool = False) -> np.ndarray:
        scalar = np.isscalar(k) or isinstance(k, IntentClass)
        idx = _as_index_array(k, self.n_rows)
        p = self.params
        base = p["base"][idx]
        h_pre = base @ p["rW1"] + p["rb1"]
        h = np.tanh(h_pre)
        e = base + h @ p["rW2"] + p["rb2"]
        if cache:
            self._cache = (idx, base, h_pre, h)
        return e[0] if scalar else e

    def backward(self, de: np.ndarray) -> dict:
        if self._cache is None:
            raise NoRecordedForwardError("student backward without cached forward")
        idx, base, h_pre, h = self._cache
        self._cache = None
        de = np.atleast_2d(de)
        p = self.params
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        grads["rW2"] = h.T @ de
        grads["rb2"] = de.sum(axis=0)
        dh = de @ p["rW2"].T
        dh_pre = dh * (1.0 - h * h)
        grads["rW1"] = base.T @ dh_pre
        grads["rb1"] = dh_pre.sum(axis=0)
        dbase = de + dh_pre @ p["rW1"].T  # identity skip plus residual path
        np.add.at(grads["base"], idx, dbase)
        return grads


class PrototypeReadout:
    """Shared linear map from an intent embedding to a chunk-shaped target."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params = {
            "W": _xavier(rng, cfg.H, cfg.chunk_dim, dtype),
            "b": np.zeros(cfg.chunk_dim, dtype=dtype),
        }
        self._cache = None

    def forward(self, e: np.ndarray, cache: bool = False) -> np.ndarray:
        e2 = np.atleast_2d(e)
        out = e2 @ self.params["W"] + self.params["b"]
        if cache:
            self._cache = e2
        return out if e.ndim == 2 else out[0]

    def backward(self, dout: np.ndarray) -> tuple[dict, np.ndarray]:
        if self._cache is None:
            raise NoRecordedForwardError("readout backward without cached forward")
        e2 = self._cache
        self._cache = None
        dout = np.atleast_2d(dout)
        grads = {"W": e2.T @ dout, "b": dout.sum(axis=0)}
        de = dout @ self.params["W"].T
        return grads, de


class VelocityNet:
    """Feed-forward velocity head v(x_t, t; scene, e).

    The intent embedding enters only as a bias on the first hidden layer, so
    conditional and unconditional forwards differ in that single term.  With
    activation="identity" the whole map is affine, which is the oracle the
    distillation warm start is checked against.

    The output layer is linear over [hidden, x_t]: rectified-flow fields are
    dominated by a term linear in the state, and a saturating MLP without
    the skip leaves meter-scale residue that swamps low-speed maneuvers.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype: type = np.float32, activation: str = "tanh"):
        if activation not in ("tanh", "identity"):
            raise DataError(f"unsupported activation {activation!r}")
        if cfg.n_hidden_layers != 3:
            raise DataError("velocity net is fixed at 3 hidden layers")
        D_in = cfg.chunk_dim + TIME_FEAT_DIM + cfg.d_s
        width = cfg.hidden_mult * cfg.H
        self.cfg = cfg
        self.dtype = dtype
        self.activation = activation
        self.in_dim = D_in
        self.width = width
        self.params = {
            "W_in": _xavier(rng, D_in, width, dtype),
            "b_in": np.zeros(width, dtype=dtype),
            "U": _xavier(rng, cfg.H, width, dtype),
            "W_h1": _xavier(rng, width, width, dtype),
            "b_h1": np.zeros(width, dtype=dtype),
            "W_h2": _xavier(rng, width, width, dtype),
            "b_h2": np.zeros(width, dtype=dtype),
            "W_out": _xavier(rng, width, cfg.chunk_dim, dtype),
            "W_skip": np.zeros((cfg.chunk_dim, cfg.chunk_dim), dtype=dtype),
            "W_tgate": np.zeros((TIME_FEAT_DIM, cfg.chunk_dim), dtype=dtype),
            "b_tgate": np.zeros(cfg.chunk_dim, dtype=dtype),
            "b_out": np.zeros(cfg.chunk_dim, dtype=dtype),
        }
        self._cache = None
        self.forward_calls = 0  # instrumentation: one increment per forward

    def forward(self, x: np.ndarray, t: Union[float, np.ndarray],
                scene: np.ndarray, e: np.ndarray,
                cache: bool = False) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        x2 = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        scene2 = np.atleast_2d(np.asarray(scene, dtype=self.dtype))
        e2 = np.atleast_2d(np.asarray(e, dtype=self.dtype))
        B = x2.shape[0]
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=self.dtype)), (B,))
        if x2.shape[1] != self.cfg.chunk_dim:
            raise ShapeMismatchError(
                f"chunk dim {x2.shape[1]} != {self.cfg.chunk_dim}")
        if scene2.shape != (B, self.cfg.d_s) or e2.shape != (B, self.cfg.H):
            raise ShapeMismatchError(
                f"scene {scene2.shape} / embedding {e2.shape} mismatch for batch {B}")
        tf = time_features(t_arr, self.dtype)
        z = np.concatenate([x2, tf, scene2], axis=1)
        p = self.params
        h0 = z @ p["W_in"] + p["b_in"] + e2 @ p["U"]
        a0 = _act(h0, self.activation)
        h1 = a0 @ p["W_h1"] + p["b_h1"]
        a1 = _act(h1, self.activation)
        h2 = a1 @ p["W_h2"] + p["b_h2"]
        a2 = _act(h2, self.activation)
        # linear skip plus a time-gated elementwise skip: together they carry
        # the state-linear part of the rectified field at each t
        gate = tf @ p["W_tgate"] + p["b_tgate"]
        v = a2 @ p["W_out"] + x2 @ p["W_skip"] + x2 * gate + p["b_out"]
        self.forward_calls += 1
        if cache:
            self._cache = (z, e2, tf, gate, h0, a0, h1, a1, h2, a2)
        return v[0] if single else v

    def backward(self, dv: np.ndarray) -> tuple[dict, np.ndarray]:
        """Reverse pass for the cached forward; returns (param grads, de)."""
        if self._cache is None:
            raise NoRecordedForwardError("velocity-net backward without cached forward")
        z, e2, tf, gate, h0, a0, h1, a1, h2, a2 = self._cache
        self._cache = None
        dv = np.atleast_2d(dv)
        p = self.params
        x2 = z[:, :self.cfg.chunk_dim]
        grads = {}
        grads["W_out"] = a2.T @ dv
        grads["W_skip"] = x2.T @ dv
        dgate = dv * x2
        grads["W_tgate"] = tf.T @ dgate
        grads["b_tgate"] = dgate.sum(axis=0)
        grads["b_out"] = dv.sum(axis=0)
        da2 = dv @ p["W_out"].T
        dh2 = da2 * _act_grad(h2, self.activation)
        grads["W_h2"] = a1.T @ dh2
        grads["b_h2"] = dh2.sum(axis=0)
        da1 = dh2 @ p["W_h2"].T
        dh1 = da1 * _act_grad(h1, self.activation)
        grads["W_h1"] = a0.T @ dh1
        grads["b_h1"] = dh1.sum(axis=0)
        da0 = dh1 @ p["W_h1"].T
        dh0 = da0 * _act_grad(h0, self.activation)
        grads["W_in"] = z.T @ dh0
        grads["b_in"] = dh0.sum(axis=0)
        grads["U"] = e2.T @ dh0
        de = dh0 @ p["U"].T
        return grads, de


# --- checkpoint io -------------------------------------------------------------
#
# Layout: one JSON manifest line (format version, config, tensor table,
# blob checksum, optional provenance), then a raw little-endian float32
# blob.  Byte-exact across platforms.

FORMAT_VERSION = 1


def _flat_params(components: dict) -> dict[str, np.ndarray]:
    flat = {}
    for comp_name, comp in components.items():
        for pname, arr in comp.params.items():
            flat[f"{comp_name}/{pname}"] = arr
    return flat


def params_checksum(components: dict) -> str:
    """sha256 over the float32 little-endian bytes of all parameters."""
    h = hashlib.sha256()
    flat = _flat_params(components)
    for name in sorted(flat):
        h.update(name.encode())
        h.update(np.ascontiguousarray(flat[name], dtype="<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(path: str, cfg: ModelConfig, components: dict,
                    provenance: Optional[dict] = None) -> None:
    flat = _flat_params(components)
    names = sorted(flat)
    blob_parts = []
    table = []
    offset = 0
    for name in names:
        raw = np.ascontiguousarray(flat[name], dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(flat[name].shape),
                      "dtype": "float32", "byte_offset": offset})
        blob_parts.append(raw)
        offset += len(raw)
    blob = b"".join(blob_parts)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "tensors": table,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    if provenance is not None:
        manifest["provenance"] = provenance
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str,
                    expected_config: Optional[ModelConfig] = None
                    ) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    """Returns (config, flat name->array params, provenance or {})."""
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} "
            f"!= supported {FORMAT_VERSION}")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checkpoint blob checksum mismatch (corrupt file)")
    cfg = ModelConfig.from_dict(manifest["config"])
    if expected_config is not None and expected_config.to_dict() != cfg.to_dict():
        raise CheckpointError(
            "checkpoint config does not match the expected config "
            f"(stored K={cfg.K}, H={cfg.H}; expected K={expected_config.K}, "
            f"H={expected_config.H})")
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError("checkpoint blob truncated")
        params[entry["name"]] = np.frombuffer(
            blob[start:end], dtype="<f4").reshape(shape).astype(np.float32)
    return cfg, params, manifest.get("provenance", {})


def _restore(component, flat: dict[str, np.ndarray], prefix: str) -> None:
    for pname, arr in component.params.items():
        key = f"{prefix}/{pname}"
        if key not in flat:
            raise CheckpointError(f"checkpoint missing tensor {key}")
        stored = flat[key]
        if stored.shape != arr.shape:
            raise CheckpointError(
                f"tensor {key} shape {stored.shape} != expected {arr.shape}")
        component.params[pname] = stored.astype(component.dtype)


class ModelStack:
    """All trained components plus their config, as saved in one checkpoint."""

    def __init__(self, cfg: ModelConfig, net: VelocityNet,
                 embedder: IntentEmbedder, readout: PrototypeReadout,
                 student: Optional[DistilledIntentEmbedder] = None):
        self.cfg = cfg
        self.net = net
        self.embedder = embedder
        self.readout = readout
        self.student = student
        self.telemetry: Optional[list] = None

    def components(self) -> dict:
        comps = {"net": self.net, "embedder": self.embedder,
                 "readout": self.readout}
        if self.student is not None:
            comps["student"] = self.student
        return comps

    def save(self, path: str, provenance: Optional[dict] = None) -> None:
        save_checkpoint(path, self.cfg, self.components(), provenance)

    def checksum(self) -> str:
        return params_checksum(self.components())

    @classmethod
    def load(cls, path: str,
             expected_config: Optional[ModelConfig] = None) -> "ModelStack":
        cfg, flat, _ = load_checkpoint(path, expected_config)
        stack = build_stack(cfg)
        _restore(stack.net, flat, "net")
        _restore(stack.embedder, flat, "embedder")
        _restore(stack.readout, flat, "readout")
        if any(k.startswith("student/") for k in flat):
            stack.student = DistilledIntentEmbedder(
                cfg, np.random.default_rng(0), dtype=np.float32)
            _restore(stack.student, flat, "student")
        return stack


def build_stack(cfg: ModelConfig, dtype: type = np.float32,
                activation: str = "tanh",
                with_student: bool = False) -> ModelStack:
    """Freshly seeded stack; identical seeds give bit-identical parameters."""
    root = np.random.SeedSequence(cfg.seed)
    rng_net, rng_emb, rng_read, rng_student = (
        np.random.default_rng(s) for s in root.spawn(4))
    net = VelocityNet(cfg, rng_net, dtype=dtype, activation=activation)
    embedder = IntentEmbedder(cfg, rng_emb, dtype=dtype)
    readout = PrototypeReadout(cfg, rng_read, dtype=dtype)
    student = (DistilledIntentEmbedder(cfg, rng_student, dtype=dtype)
               if with_student else None)
    return ModelStack(cfg, net, embedder, readout, student)
