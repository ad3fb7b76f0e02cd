"""Cross-entropy training of the Bi-LSTM classifier with Adam.

Gradients are hand-derived backpropagation through the head, both LSTM
directions and the projection; ``tests/test_training.py`` checks them
against central finite differences.

Checkpoint layout (little-endian)::

    b"LAMC", u32 version = 1
    u32 n + n bytes          model config as UTF-8 JSON (sorted keys)
    per tensor, in ModelConfig.shapes() order:
        u16 n + n bytes      tensor name
        u8 rank, u32 dims[rank]
        float64 data, row-major
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import UNLABELED, FeatureTrack, window_stack
from .model import ModelConfig, ModelParams, forward_batch, init_params
from .numerics import Rng, log_softmax, softmax

log = logging.getLogger(__name__)


# --- loss and gradients ---------------------------------------------------

def cross_entropy(logits, label: int, class_weight: float = 1.0) -> float:
    """``-class_weight * log softmax(logits)[label]`` via log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    if label not in (0, 1):
        raise ValueError(f"cross_entropy needs a 0/1 label, got {label}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return float(-class_weight * log_softmax(z)[label])


def _as_batch(batch):
    """Accept WindowSample lists or ``(windows, labels)`` array pairs."""
    if isinstance(batch, tuple):
        X, y = batch
        return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = np.stack([s.window for s in batch])
    y = np.array([s.center_label for s in batch], dtype=np.int64)
    return X, y


def _lstm_backward(W, U, cache, dh, dA, grads, prefix):
    dc = np.zeros_like(dh)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(W.shape[0])
    for t, x, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        dc = dc * f
        dW += da.T @ x
        dU += da.T @ h_prev
        db += da.sum(axis=0)
        dA[:, t] += da @ W
        dh = da @ U
    grads[f"{prefix}.W"] = dW
    grads[f"{prefix}.U"] = dU
    grads[f"{prefix}.b"] = db


def backward(params: ModelParams, batch, class_weights=None):
    """Mean cross-entropy over ``batch`` and its gradient for every tensor.

    Returns
    -------
    loss : float
    grads : dict
        Name -> array, same shapes and order as ``params``.
    """
    X, y = _as_batch(batch)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("backward needs fully labeled samples")
    B = X.shape[0]
    cfg = params.config
    H = cfg.hidden_dim
    w = np.ones(B) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]

    logits, cache = forward_batch(params, X, keep_cache=True)
    logp = log_softmax(logits)
    loss = float(-(w * logp[np.arange(B), y]).sum() / B)

    dz = softmax(logits)
    dz[np.arange(B), y] -= 1.0
    dz *= (w / B)[:, None]

    grads = {}
    acts = cache["acts"]
    for k in range(4, 0, -1):
        a_in = acts[k - 1]
        grads[f"head{k}.W"] = dz.T @ a_in
        grads[f"head{k}.b"] = dz.sum(axis=0)
        dz = dz @ params[f"head{k}.W"]
        if k > 1:
            dz = dz * (a_in > 0)
    dA = np.zeros_like(cache["A"])
    _lstm_backward(params["fwd.W"], params["fwd.U"], cache["fwd"], dz[:, :H], dA, grads, "fwd")
    _lstm_backward(params["bwd.W"], params["bwd.U"], cache["bwd"], dz[:, H:], dA, grads, "bwd")
    dZ = dA * (cache["Zp"] > 0)
    grads["proj.W"] = np.einsum("btp,btd->pd", dZ, cache["X"])
    grads["proj.b"] = dZ.sum(axis=(0, 1))
    return loss, {k: grads[k] for k in params}


# --- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    ``params`` may be a :class:`ModelParams` or a plain name -> array dict;
    the same kind is returned. Inputs are not modified.
    """
    tensors = params.tensors if isinstance(params, ModelParams) else params
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new, m_new, v_new = {}, {}, {}
    for k, theta in tensors.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(theta):
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {np.shape(theta)}")
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new[k] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[k], v_new[k] = m, v
    out_state = AdamState(state.lr, b1, b2, state.eps, t, m_new, v_new)
    if isinstance(params, ModelParams):
        return ModelParams(params.config, new), out_state
    return new, out_state


# --- training loop --------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    learning_rate: float = 1e-4
    use_flip_augmentation: bool = True
    class_weights: tuple | None = None
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.class_weights is not None:
            cw = tuple(float(c) for c in self.class_weights)
            if len(cw) != 2 or min(cw) <= 0:
                raise ValueError("class_weights must be two positive numbers")
            self.class_weights = cw
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


def _windows_and_labels(tracks, window):
    Xs, ys = [], []
    for tr in tracks:
        if np.any(tr.labels == UNLABELED):
            raise ValueError(f"training track {tr.track_id!r} has unlabeled frames")
        Xs.append(window_stack(tr, window))
        ys.append(tr.labels.astype(np.int64))
    return np.concatenate(Xs), np.concatenate(ys)


def _backward_parallel(params, X, y, class_weights, workers, pool):
    """Split a batch into ``workers`` contiguous chunks; reduce in chunk order."""
    chunks = [c for c in np.array_split(np.arange(len(y)), workers) if len(c)]
    B = len(y)
    results = list(pool.map(lambda idx: backward(params, (X[idx], y[idx]), class_weights), chunks))
    loss = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for idx, (l, g) in zip(chunks, results):
        frac = len(idx) / B
        loss += l * frac
        for k in grads:
            grads[k] += g[k] * frac
    return loss, grads


def train(config: TrainConfig, model_config: ModelConfig, tracks: list[FeatureTrack],
          params: ModelParams | None = None, callback=None):
    """Fit a model on the train-split tracks; score val-split tracks each epoch.

    ``tracks`` holds original and (when augmenting) flipped streams, as
    returned by :func:`lamlstm.data.generate_synthetic` or read from a
    manifest. Returns ``(params, history)`` where history has one dict per
    epoch with ``loss`` and, if validation tracks exist, ``val_mAP`` and
    ``val_accuracy``.
    """
    from .inference import predict_scores
    from .metrics import evaluate

    train_orig = [t for t in tracks if t.split == "train" and t.stream == "original"]
    train_flip = [t for t in tracks if t.split == "train" and t.stream == "flipped"]
    val = [t for t in tracks if t.split == "val" and t.stream == "original"]
    if not train_orig:
        raise ValueError("no labeled train tracks")
    used = list(train_orig)
    if config.use_flip_augmentation:
        have = {t.track_id for t in train_flip}
        missing = [t.track_id for t in train_orig if t.track_id not in have]
        if missing:
            raise ValueError(f"flip augmentation enabled but no flipped stream for {missing[:5]}")
        used += train_flip
    for t in used:
        if t.dim != model_config.input_dim:
            raise ValueError(f"track {t.track_id!r} has D={t.dim}, model expects {model_config.input_dim}")
    X, y = _windows_and_labels(used, model_config.window)

    if params is None:
        params = init_params(model_config, Rng(config.seed, 0))
    state = AdamState(lr=config.learning_rate)
    shuffle_rng = Rng(config.seed, 1).generator
    pool = None
    if config.workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        pool = ThreadPoolExecutor(config.workers)

    history = []
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(y))
            total = 0.0
            for start in range(0, len(y), config.batch_size):
                idx = order[start:start + config.batch_size]
                if pool is None:
                    loss, grads = backward(params, (X[idx], y[idx]), config.class_weights)
                else:
                    loss, grads = _backward_parallel(params, X[idx], y[idx], config.class_weights,
                                                     config.workers, pool)
                params, state = adam_step(state, params, grads)
                total += loss * len(idx)
            record = {"epoch": epoch, "loss": total / len(y)}
            if val:
                scores = [predict_scores(params, t) for t in val]
                m = evaluate(scores, val)
                record["val_mAP"] = m.to_dict()["mAP"]
                record["val_accuracy"] = m.accuracy
            history.append(record)
            log.info("epoch %d: %s", epoch, record)
            if callback is not None:
                callback(record, params)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, history


def write_history(history, path) -> None:
    Path(path).write_text(json.dumps(history, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- checkpoints ----------------------------------------------------------

CKPT_MAGIC = b"LAMC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic or unsupported version."""


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    """Stored tensors disagree with the stored config."""


def encode_checkpoint(params: ModelParams) -> bytes:
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(cfg)), cfg]
    for name, arr in params.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.off + n})")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(buf: bytes) -> ModelParams:
    r = _Reader(buf)
    if len(buf) >= 4 and buf[:4] != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {buf[:4]!r}")
    r.take(4)
    version, n = r.unpack("<II")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(n).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointFormatError(f"bad config block: {exc}") from None
    shapes = config.shapes()
    tensors = {}
    for expected_name, expected_shape in shapes.items():
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        if name != expected_name or tuple(dims) != expected_shape:
            raise CheckpointShapeError(
                f"tensor {name!r} {tuple(dims)} does not match config ({expected_name!r} {expected_shape})"
            )
        count = int(np.prod(dims)) if rank else 1
        data = r.take(8 * count)
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)
    if r.off != len(buf):
        raise CheckpointShapeError(f"{len(buf) - r.off} bytes after the last tensor")
    return ModelParams(config, tensors)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    params = decode_checkpoint(Path(path).read_bytes())
    return params, params.config
