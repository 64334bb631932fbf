"""Two-layer LSTM regressor with masking, dropout and a tanh head, in numpy.

Gate pre-activations are fused per layer: ``W`` is ``(input, 4H)``, ``R`` is
``(H, 4H)`` and ``b`` is ``(4H,)`` with column blocks ordered forget, input,
candidate, output. ``LstmLayerParams.gate`` hands out the per-gate blocks in
the conventional ``(H, input)`` orientation.

Sequences are front-padded; a False mask entry leaves ``(h, C)`` untouched and
emits a zero output row. Training minimises the masked per-timestep MSE on
labels scaled to [-1, 1] with Adam.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .cmapss import LabeledSequence, stack_batch
from .errors import (
    CacheMismatch,
    ConfigError,
    EmptyLoss,
    GradientBlowup,
    InvalidProbability,
    MaskError,
    ShapeError,
)

GATES = ("f", "i", "c", "o")
CHECKPOINT_FORMAT = "trendrul-checkpoint/1"


@dataclass
class LstmLayerParams:
    W: np.ndarray
    R: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.R.shape[0]
        if self.R.shape != (H, 4 * H) or self.W.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ShapeError(
                f"inconsistent LSTM shapes W{self.W.shape} R{self.R.shape} b{self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.R.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str):
        """``(W_g, R_g, b_g)`` with ``W_g`` of shape (hidden, input)."""
        k = GATES.index(name)
        H = self.hidden_size
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl].T, self.R[:, sl].T, self.b[sl]

    @classmethod
    def from_gates(cls, gates: dict) -> "LstmLayerParams":
        """Build from ``{g: (W_g, R_g, b_g)}`` in the (hidden, input) orientation."""
        W = np.concatenate([np.asarray(gates[g][0]).T for g in GATES], axis=1)
        R = np.concatenate([np.asarray(gates[g][1]).T for g in GATES], axis=1)
        b = np.concatenate([np.asarray(gates[g][2]) for g in GATES])
        return cls(W, R, b)


@dataclass
class CellState:
    h: np.ndarray
    C: np.ndarray


def _split(z: np.ndarray, H: int):
    return z[..., :H], z[..., H:2 * H], z[..., 2 * H:3 * H], z[..., 3 * H:]


def lstm_cell_forward(q, prev: CellState, p: LstmLayerParams):
    """One LSTM step. Works on a single vector or a batch along the first axis.

    Returns the new state and a cache of the gate activations.
    """
    q = np.asarray(q, dtype=float)
    H = p.hidden_size
    if q.shape[-1] != p.input_size or prev.h.shape[-1] != H or prev.C.shape[-1] != H:
        raise ShapeError(
            f"input width {q.shape[-1]} / state {prev.h.shape[-1]} do not fit "
            f"layer ({p.input_size} -> {H})"
        )
    z = q @ p.W + prev.h @ p.R + p.b
    act = expit(z)
    act[..., 2 * H:3 * H] = np.tanh(z[..., 2 * H:3 * H])
    f, i, g, o = _split(act, H)
    C = f * prev.C + i * g
    tc = np.tanh(C)
    h = o * tc
    return CellState(h, C), {"q": q, "prev": prev, "act": act, "tanh_C": tc}


def lstm_cell_backward(dh, dC, cache, p: LstmLayerParams):
    """Gradients of one step given upstream ``dh`` and ``dC`` on the new state.

    Returns ``(grads, dq, dh_prev, dC_prev)`` where ``grads`` holds dW, dR, db.
    """
    H = p.hidden_size
    f, i, g, o = _split(cache["act"], H)
    tc = cache["tanh_C"]
    prev = cache["prev"]
    dC = dC + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [dC * prev.C * f * (1 - f), dC * g * i * (1 - i), dC * i * (1 - g * g),
         dh * tc * o * (1 - o)],
        axis=-1,
    )
    q2 = np.atleast_2d(cache["q"])
    h2 = np.atleast_2d(prev.h)
    dz2 = np.atleast_2d(dz)
    grads = {"W": q2.T @ dz2, "R": h2.T @ dz2, "b": dz2.sum(axis=0)}
    return grads, dz @ p.W.T, dz @ p.R.T, dC * f


def _check_front_padded(mask: np.ndarray):
    # after the first True in a row, no False may follow
    m = np.asarray(mask, dtype=bool)
    started = np.maximum.accumulate(m, axis=-1)
    if np.any(started & ~m):
        raise MaskError("mask has a False entry after a True entry; sequences must be front-padded")


def _layer_forward(X: np.ndarray, M: np.ndarray, p: LstmLayerParams):
    B, T, _ = X.shape
    H = p.hidden_size
    XW = X @ p.W + p.b
    act = np.empty((B, T, 4 * H), dtype=X.dtype)
    h_prev = np.empty((B, T, H), dtype=X.dtype)
    c_prev = np.empty((B, T, H), dtype=X.dtype)
    tanh_c = np.empty((B, T, H), dtype=X.dtype)
    out = np.zeros((B, T, H), dtype=X.dtype)
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    for t in range(T):
        z = XW[:, t] + h @ p.R
        a = expit(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        c_new = a[:, :H] * c + a[:, H:2 * H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c_new)
        h_new = a[:, 3 * H:] * tc
        act[:, t], h_prev[:, t], c_prev[:, t], tanh_c[:, t] = a, h, c, tc
        m = M[:, t, None]
        out[:, t] = np.where(m, h_new, 0.0)
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
    cache = {"X": X, "M": M, "act": act, "h_prev": h_prev, "c_prev": c_prev, "tanh_c": tanh_c}
    return out, cache


def _layer_backward(d_out: np.ndarray, cache: dict, p: LstmLayerParams):
    X, M = cache["X"], cache["M"]
    act, h_prev, c_prev, tanh_c = cache["act"], cache["h_prev"], cache["c_prev"], cache["tanh_c"]
    B, T, _ = X.shape
    H = p.hidden_size
    Mf = M.astype(X.dtype)[..., None]
    dZ = np.zeros((B, T, 4 * H), dtype=X.dtype)
    dh_next = np.zeros((B, H), dtype=X.dtype)
    dc_next = np.zeros((B, H), dtype=X.dtype)
    RT = p.R.T
    for t in range(T - 1, -1, -1):
        m = Mf[:, t]
        a = act[:, t]
        f, i, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tanh_c[:, t]
        dh = m * (dh_next + d_out[:, t])
        dc = m * dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :H] = dc * c_prev[:, t] * f * (1.0 - f)
        dz[:, H:2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dh_next = dz @ RT + (1.0 - m) * dh_next
        dc_next = dc * f + (1.0 - m) * dc_next
    flat = dZ.reshape(B * T, 4 * H)
    grads = {
        "W": X.reshape(B * T, -1).T @ flat,
        "R": h_prev.reshape(B * T, H).T @ flat,
        "b": flat.sum(axis=0),
    }
    return grads, dZ @ p.W.T


def lstm_layer_forward(sequence, mask, p: LstmLayerParams) -> np.ndarray:
    """Run one layer over a (T, input) or (B, T, input) sequence from zero state."""
    X = np.asarray(sequence, dtype=float)
    M = np.asarray(mask, dtype=bool)
    single = X.ndim == 2
    if single:
        X, M = X[None], M[None]
    if X.shape[-1] != p.input_size or M.shape != X.shape[:2]:
        raise ShapeError(f"sequence {X.shape} / mask {M.shape} do not fit layer input {p.input_size}")
    _check_front_padded(M)
    out, _ = _layer_forward(X, M, p)
    return out[0] if single else out


def dropout(x, p_drop: float, mode: str = "train", rng=None, keep_mask=None):
    """Inverted dropout: zero entries with probability ``p_drop`` and rescale survivors.

    Returns ``(y, keep_mask)``; evaluation mode is the identity.
    """
    if not 0 <= p_drop < 1:
        raise InvalidProbability(f"dropout probability must be in [0, 1), got {p_drop}")
    x = np.asarray(x)
    if mode == "eval" or p_drop == 0:
        return x, None
    if keep_mask is None:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep_mask = (rng.random(x.shape) >= p_drop).astype(x.dtype) / (1.0 - p_drop)
    return x * keep_mask, keep_mask


def dense_tanh_head(h, w, b):
    return np.tanh(np.asarray(h) @ w + b)


def normalize_rul(rul, cap: float = 130.0):
    return 2.0 * np.asarray(rul, dtype=float) / cap - 1.0


def denormalize_rul(y, cap: float = 130.0):
    return (np.asarray(y, dtype=float) + 1.0) / 2.0 * cap


def mse_loss(pred, label, mask) -> float:
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != label.shape or mask.shape != pred.shape:
        raise ShapeError(f"pred {pred.shape}, label {label.shape}, mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyLoss("mask selects no timesteps")
    # summing only the selected entries keeps the result independent of padding
    d = (pred - label)[mask]
    return float(np.sum(d * d) / n)


def mse_loss_grad(pred, label, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise EmptyLoss("mask selects no timesteps")
    return np.where(mask, 2.0 * (np.asarray(pred) - np.asarray(label)), 0.0) / n


@dataclass
class NetworkConfig:
    input_size: int
    layer_sizes: tuple = (128, 100)
    dropout: float = 0.5
    label_cap: float = 130.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iterations: int = 5000
    batch_size: int = 32
    init_scale: float | None = None
    clip_norm: float | None = None
    dtype: str = "float64"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) != 2 or min(self.layer_sizes) < 1 or self.input_size < 1:
            raise ConfigError("need two LSTM layers with positive sizes and input_size >= 1")
        if not 0 <= self.dropout < 1:
            raise InvalidProbability(f"dropout probability must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ConfigError("batch_size must be >= 1 and max_iterations >= 0")


class DLSTM:
    """Masking -> LSTM -> LSTM -> dropout -> dense tanh head, per timestep."""

    def __init__(self, config: NetworkConfig, params: dict | None = None, rng=None):
        self.config = config
        self.version = 0
        if params is None:
            params = self._init_params(rng if rng is not None else np.random.default_rng(0))
        dt = np.dtype(config.dtype)
        self.params = {k: np.asarray(v, dtype=dt) for k, v in params.items()}
        self._check_shapes()

    def _init_params(self, rng) -> dict:
        cfg = self.config
        params = {}
        fan_in = cfg.input_size
        for name, H in zip(("l1", "l2"), cfg.layer_sizes):
            s = 1.0 / np.sqrt(fan_in) if cfg.init_scale is None else cfg.init_scale
            params[f"{name}.W"] = rng.uniform(-s, s, (fan_in, 4 * H))
            s = 1.0 / np.sqrt(H) if cfg.init_scale is None else cfg.init_scale
            params[f"{name}.R"] = rng.uniform(-s, s, (H, 4 * H))
            params[f"{name}.b"] = np.zeros(4 * H)
            fan_in = H
        s = 1.0 / np.sqrt(fan_in) if cfg.init_scale is None else cfg.init_scale
        params["head.w"] = rng.uniform(-s, s, fan_in)
        params["head.b"] = np.zeros(1)
        return params

    def _check_shapes(self):
        for name in ("l1", "l2"):
            self.layer(name)
        H2 = self.config.layer_sizes[1]
        if self.params["head.w"].shape != (H2,) or self.params["head.b"].shape != (1,):
            raise ShapeError("dense head shape does not match the second layer")
        if self.params["l1.W"].shape[0] != self.config.input_size:
            raise ShapeError("first layer input width does not match config.input_size")

    def layer(self, name: str) -> LstmLayerParams:
        return LstmLayerParams(self.params[f"{name}.W"], self.params[f"{name}.R"],
                               self.params[f"{name}.b"])

    def forward(self, X, M, mode: str = "eval", rng=None, keep_mask=None):
        """Normalised predictions (B, T) and the cache needed by ``backward``."""
        dt = np.dtype(self.config.dtype)
        X = np.asarray(X, dtype=dt)
        M = np.asarray(M, dtype=bool)
        if X.ndim != 3 or X.shape[-1] != self.config.input_size or M.shape != X.shape[:2]:
            raise ShapeError(
                f"expected (B, T, {self.config.input_size}) features with (B, T) mask, "
                f"got {X.shape} and {M.shape}"
            )
        _check_front_padded(M)
        h1, c1 = _layer_forward(X, M, self.layer("l1"))
        h2, c2 = _layer_forward(h1, M, self.layer("l2"))
        d, keep = dropout(h2, self.config.dropout, mode, rng, keep_mask)
        y = dense_tanh_head(d, self.params["head.w"], self.params["head.b"][0])
        cache = {"version": self.version, "l1": c1, "l2": c2, "d": d, "keep": keep, "y": y}
        return y, cache

    def backward(self, d_pred, cache) -> dict:
        """Exact gradients of ``sum(d_pred * pred)`` with respect to every parameter."""
        if cache.get("version") != self.version:
            raise CacheMismatch("cache was produced before the last parameter update")
        y, d = cache["y"], cache["d"]
        d_pre = np.asarray(d_pred, dtype=y.dtype) * (1.0 - y * y)
        grads = {
            "head.w": np.tensordot(d_pre, d, axes=([0, 1], [0, 1])),
            "head.b": np.array([d_pre.sum()]),
        }
        dh2 = d_pre[..., None] * self.params["head.w"]
        if cache["keep"] is not None:
            dh2 = dh2 * cache["keep"]
        g2, dh1 = _layer_backward(dh2, cache["l2"], self.layer("l2"))
        g1, _ = _layer_backward(dh1, cache["l1"], self.layer("l1"))
        for name, g in (("l1", g1), ("l2", g2)):
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        return grads

    def loss_and_grads(self, X, Y, M, mode: str = "train", rng=None, keep_mask=None):
        y, cache = self.forward(X, M, mode, rng, keep_mask)
        loss = mse_loss(y, Y, M)
        return loss, self.backward(mse_loss_grad(y, Y, M), cache)

    def predict_normalized(self, features) -> np.ndarray:
        F = np.asarray(features, dtype=float)
        if F.ndim != 2 or F.shape[1] != self.config.input_size:
            raise ShapeError(f"features must be (T, {self.config.input_size}), got {F.shape}")
        y, _ = self.forward(F[None], np.ones((1, F.shape[0]), dtype=bool), mode="eval")
        return y[0]


@dataclass
class TrainState:
    net: DLSTM
    m: dict
    v: dict
    step: int = 0
    loss_history: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    seed: int = 0

    @classmethod
    def fresh(cls, net: DLSTM, seed: int = 0) -> "TrainState":
        zeros = {k: np.zeros_like(p) for k, p in net.params.items()}
        return cls(net, zeros, {k: z.copy() for k, z in zeros.items()}, seed=seed)


def _global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(state: TrainState, grads: dict) -> TrainState:
    """One bias-corrected Adam update, in place; returns ``state``."""
    cfg = state.net.config
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientBlowup(f"non-finite gradient in {k} at step {state.step + 1}")
        if g.shape != state.net.params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {state.net.params[k].shape}")
    if cfg.clip_norm is not None:
        norm = _global_norm(grads)
        if norm > cfg.clip_norm:
            grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    corr1, corr2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        state.net.params[k] -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
    state.net.version += 1
    return state


def train(config: NetworkConfig, sequences: Sequence[LabeledSequence], seed: int = 0,
          state: TrainState | None = None, log_every: int = 0, logger=None) -> TrainState:
    """Shuffled mini-batch Adam until ``config.max_iterations`` optimizer steps.

    Initialisation, shuffling and dropout draw from independent streams spawned
    from ``seed``, so a rerun with the same seed repeats the loss history.
    """
    if not sequences:
        raise ValueError("training set is empty")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
    if state is None:
        state = TrainState.fresh(DLSTM(config, rng=np.random.default_rng(init_ss)), seed)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    net = state.net
    order: list = []
    t0 = time.perf_counter()
    while state.step < config.max_iterations:
        if not order:
            order = list(shuffle_rng.permutation(len(sequences)))
        batch = [sequences[j] for j in order[: config.batch_size]]
        del order[: config.batch_size]
        X, Y, M = stack_batch(batch)
        loss, grads = net.loss_and_grads(X, Y, M, "train", drop_rng)
        if not np.isfinite(loss):
            raise GradientBlowup(f"loss became {loss} at step {state.step + 1}")
        adam_step(state, grads)
        state.loss_history.append(loss)
        state.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if logger is not None and log_every and state.step % log_every == 0:
            logger.info("step %d loss %.6f", state.step, loss)
    return state


def predict(net: DLSTM, features):
    """Per-cycle RUL trajectory (cycles units, within [0, cap]) and its last value."""
    traj = denormalize_rul(net.predict_normalized(features), net.config.label_cap)
    return traj, float(traj[-1])


def save_checkpoint(path, state: TrainState, extra: dict | None = None) -> None:
    net = state.net
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(net.config),
        "seed": state.seed,
        "step": state.step,
        "params": {k: v.tolist() for k, v in net.params.items()},
        "adam_m": {k: v.tolist() for k, v in state.m.items()},
        "adam_v": {k: v.tolist() for k, v in state.v.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(TrainState, extra)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    cfg = NetworkConfig(**doc["config"])
    net = DLSTM(cfg, {k: np.array(v) for k, v in doc["params"].items()})
    dt = np.dtype(cfg.dtype)
    state = TrainState(
        net,
        {k: np.array(v, dtype=dt) for k, v in doc["adam_m"].items()},
        {k: np.array(v, dtype=dt) for k, v in doc["adam_v"].items()},
        step=doc["step"],
        seed=doc["seed"],
    )
    return state, doc.get("extra", {})


def write_loss_log(path, state: TrainState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "wall_ms"])
        for s, (loss, ms) in enumerate(zip(state.loss_history, state.wall_ms), start=1):
            w.writerow([s, repr(float(loss)), f"{ms:.1f}"])
