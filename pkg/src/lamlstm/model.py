"""Windowed Bi-LSTM classifier over per-frame face features.

A window of ``T_w`` frames is projected (affine + ReLU), run through a
forward and a backward LSTM from zero state, and the two hidden states at
the centre frame are concatenated and fed to a 4-layer MLP that emits two
logits (not looking / looking).

LSTM gate blocks are stacked in the order input, forget, candidate, output::

    i = sigmoid(a_i)   f = sigmoid(a_f)   g = tanh(a_g)   o = sigmoid(a_o)
    c' = f * c + i * g
    h' = o * tanh(c')

with ``a = W x + U h + b``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import Rng, affine, relu, sigmoid


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    projected_dim: int = 512
    hidden_dim: int = 256
    window: int = 7
    head_widths: tuple = (256, 128, 32)

    def __post_init__(self):
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        dims = (self.input_dim, self.projected_dim, self.hidden_dim, self.window, *self.head_widths)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all model dimensions must be positive: {self}")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")
        if len(self.head_widths) != 3:
            raise ValueError("head_widths lists the three hidden widths of a 4-layer head")

    @property
    def center(self) -> int:
        return self.window // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)

    def shapes(self) -> dict[str, tuple]:
        """Parameter name -> shape, in checkpoint order."""
        D, P, H = self.input_dim, self.projected_dim, self.hidden_dim
        s = {"proj.W": (P, D), "proj.b": (P,)}
        for d in ("fwd", "bwd"):
            s[f"{d}.W"] = (4 * H, P)
            s[f"{d}.U"] = (4 * H, H)
            s[f"{d}.b"] = (4 * H,)
        widths = [2 * H, *self.head_widths, 2]
        for k in range(4):
            s[f"head{k + 1}.W"] = (widths[k + 1], widths[k])
            s[f"head{k + 1}.b"] = (widths[k + 1],)
        return s

    def n_params(self) -> int:
        D, P, H = self.input_dim, self.projected_dim, self.hidden_dim
        widths = [2 * H, *self.head_widths, 2]
        head = sum(widths[k] * widths[k + 1] + widths[k + 1] for k in range(4))
        return P * D + P + 2 * (4 * H * P + 4 * H * H + 4 * H) + head


@dataclass
class ModelParams:
    """All trainable tensors, keyed by name in :meth:`ModelConfig.shapes` order."""

    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        if list(self.tensors) != list(shapes):
            missing = set(shapes) - set(self.tensors)
            extra = set(self.tensors) - set(shapes)
            if missing or extra:
                raise ValueError(f"parameter names do not match config (missing {sorted(missing)}, extra {sorted(extra)})")
            self.tensors = {k: self.tensors[k] for k in shapes}
        for k, shape in shapes.items():
            a = np.asarray(self.tensors[k], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{k}: shape {a.shape}, config expects {shape}")
            self.tensors[k] = a

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, {k: np.zeros(s) for k, s in config.shapes().items()})

    def lstm(self, direction: str) -> tuple:
        return self[f"{direction}.W"], self[f"{direction}.U"], self[f"{direction}.b"]


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; zero biases except
    the LSTM forget-gate block, which starts at 1."""
    g = rng.generator
    H = config.hidden_dim
    tensors = {}
    for name, shape in config.shapes().items():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name in ("fwd.b", "bwd.b"):
                b[H:2 * H] = 1.0
            tensors[name] = b
        else:
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = g.uniform(-bound, bound, size=shape)
    return ModelParams(config, tensors)


def _check_window(params: ModelParams, window) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    cfg = params.config
    if x.shape != (cfg.window, cfg.input_dim):
        raise ValueError(f"window shape {x.shape}, model expects {(cfg.window, cfg.input_dim)}")
    return x


def project(params: ModelParams, window) -> np.ndarray:
    """Per-frame down-sampling: ``relu(W_p x_t + b_p)`` for each row."""
    x = np.asarray(window, dtype=np.float64)
    W, b = params["proj.W"], params["proj.b"]
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"window shape {x.shape} does not match projection input dim {W.shape[1]}")
    return relu(x @ W.T + b)


def lstm_step(weights, x, state):
    """One LSTM step. ``weights`` is ``(W, U, b)``; ``state`` is ``(h, c)``."""
    W, U, b = weights
    h, c = state
    H = U.shape[1]
    a = affine(W, x, b) + U @ h
    i = sigmoid(a[:H])
    f = sigmoid(a[H:2 * H])
    g = np.tanh(a[2 * H:3 * H])
    o = sigmoid(a[3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def bilstm(params: ModelParams, projected):
    """Hidden-state sequences of both directions, indexed by frame position."""
    x = np.asarray(projected, dtype=np.float64)
    H = params.config.hidden_dim
    T = x.shape[0]
    h_fwd = [None] * T
    h_bwd = [None] * T
    state = (np.zeros(H), np.zeros(H))
    for t in range(T):
        state = lstm_step(params.lstm("fwd"), x[t], state)
        h_fwd[t] = state[0]
    state = (np.zeros(H), np.zeros(H))
    for t in reversed(range(T)):
        state = lstm_step(params.lstm("bwd"), x[t], state)
        h_bwd[t] = state[0]
    return h_fwd, h_bwd


def head(params: ModelParams, z) -> np.ndarray:
    for k in range(1, 5):
        z = affine(params[f"head{k}.W"], z, params[f"head{k}.b"])
        if k < 4:
            z = relu(z)
    return z


def forward(params: ModelParams, window) -> np.ndarray:
    """Two logits for the centre frame of ``window``."""
    x = _check_window(params, window)
    h_fwd, h_bwd = bilstm(params, project(params, x))
    c = params.config.center
    return head(params, np.concatenate([h_fwd[c], h_bwd[c]]))


# --- batched path ---------------------------------------------------------

def _lstm_run(W, U, b, xs, steps, H, keep):
    """Run an LSTM over ``xs[:, t]`` for ``t`` in ``steps`` from zero state.

    Returns the final hidden state ``(B, H)`` and, if ``keep``, the per-step
    cache needed for backprop.
    """
    B = xs.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in steps:
        x = xs[:, t]
        a = x @ W.T + h @ U.T + b
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((t, x, h_prev, c_prev, i, f, g, o, tc))
    return h, cache


def forward_batch(params: ModelParams, windows, keep_cache: bool = False):
    """Logits ``(B, 2)`` for a stack of windows ``(B, T_w, D)``.

    Only the recurrent steps that reach the centre frame are evaluated; the
    rest cannot influence the head. With ``keep_cache`` also returns the
    intermediates consumed by :func:`lamlstm.training.backward`.
    """
    cfg = params.config
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (cfg.window, cfg.input_dim):
        raise ValueError(f"windows shape {X.shape}, model expects (B, {cfg.window}, {cfg.input_dim})")
    H, T, c = cfg.hidden_dim, cfg.window, cfg.center
    Zp = X @ params["proj.W"].T + params["proj.b"]
    A = relu(Zp)
    hf, cache_f = _lstm_run(*params.lstm("fwd"), A, range(0, c + 1), H, keep_cache)
    hb, cache_b = _lstm_run(*params.lstm("bwd"), A, range(T - 1, c - 1, -1), H, keep_cache)
    z = np.concatenate([hf, hb], axis=1)
    acts = [z]
    for k in range(1, 5):
        z = z @ params[f"head{k}.W"].T + params[f"head{k}.b"]
        if k < 4:
            z = relu(z)
        acts.append(z)
    if not keep_cache:
        return z
    return z, {"X": X, "Zp": Zp, "A": A, "fwd": cache_f, "bwd": cache_b, "acts": acts}
