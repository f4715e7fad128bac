"""Two-layer LSTM classifier with a hand-derived backward pass.

Cell equations per timestep (sigma = logistic, * = elementwise):

    f_t = sigma(W_xf x_t + W_hf h_{t-1} + b_f)
    i_t = sigma(W_xi x_t + W_hi h_{t-1} + b_i)
    o_t = sigma(W_xo x_t + W_ho h_{t-1} + b_o)
    c_t = f_t * c_{t-1} + i_t * tanh(W_xc x_t + W_hc h_{t-1} + b_c)
    h_t = o_t * tanh(c_t)

Network: LSTM(D -> H) -> ReLU -> dropout -> LSTM(H -> H) -> ReLU -> dropout
-> last timestep -> FC(32) + ReLU -> 1-unit sigmoid. Everything is batched
over the leading axis; a single (n, D) sequence is a batch of one.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, ModelError, ShapeMismatch, StaleCache
from .features import FeatureSequence

# Create logger for this module
logger = logging.getLogger(__name__)

GATES = ("f", "i", "o", "c")
FC_UNITS = 32
CELL_GRID = (8, 16, 32, 64, 128, 256)
DEFAULT_CELLS = 128

ArrayLike = Union[np.ndarray, FeatureSequence]


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z| and gives exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class NetworkDims:
    """Input width, LSTM cells per layer and FC width."""

    input_size: int
    cells: int = DEFAULT_CELLS
    fc_units: int = FC_UNITS

    def __post_init__(self) -> None:
        if self.input_size < 1 or self.cells < 1 or self.fc_units < 1:
            raise ConfigError(f"Network dimensions must be positive: {self}")

    def to_dict(self) -> Dict[str, int]:
        return {"input_size": self.input_size, "cells": self.cells, "fc_units": self.fc_units}


@dataclass
class LstmCellParams:
    """Gate weights stacked along the first axis in (f, i, o, c) order."""

    W_x: np.ndarray  # (4, H, D)
    W_h: np.ndarray  # (4, H, H)
    b: np.ndarray  # (4, H)

    @property
    def input_size(self) -> int:
        return self.W_x.shape[2]

    @property
    def hidden_size(self) -> int:
        return self.W_x.shape[1]

    def gate(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_xg, W_hg, b_g) for one gate."""
        k = GATES.index(name)
        return self.W_x[k], self.W_h[k], self.b[k]

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        H, D = self.hidden_size, self.input_size
        return self.W_x.reshape(4 * H, D), self.W_h.reshape(4 * H, H), self.b.reshape(4 * H)


@dataclass
class NetworkParams:
    """All trainable arrays of the network."""

    layer1: LstmCellParams
    layer2: LstmCellParams
    fc_W: np.ndarray  # (F, H)
    fc_b: np.ndarray  # (F,)
    out_W: np.ndarray  # (1, F)
    out_b: np.ndarray  # (1,)

    @property
    def dims(self) -> NetworkDims:
        return NetworkDims(
            input_size=self.layer1.input_size,
            cells=self.layer1.hidden_size,
            fc_units=self.fc_W.shape[0],
        )

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Arrays in canonical checkpoint order."""
        return [
            ("layer1.W_x", self.layer1.W_x),
            ("layer1.W_h", self.layer1.W_h),
            ("layer1.b", self.layer1.b),
            ("layer2.W_x", self.layer2.W_x),
            ("layer2.W_h", self.layer2.W_h),
            ("layer2.b", self.layer2.b),
            ("fc.W", self.fc_W),
            ("fc.b", self.fc_b),
            ("out.W", self.out_W),
            ("out.b", self.out_b),
        ]

    @classmethod
    def from_named(cls, arrays: Dict[str, np.ndarray]) -> "NetworkParams":
        return cls(
            layer1=LstmCellParams(arrays["layer1.W_x"], arrays["layer1.W_h"], arrays["layer1.b"]),
            layer2=LstmCellParams(arrays["layer2.W_x"], arrays["layer2.W_h"], arrays["layer2.b"]),
            fc_W=arrays["fc.W"],
            fc_b=arrays["fc.b"],
            out_W=arrays["out.W"],
            out_b=arrays["out.b"],
        )

    def map(self, fn: Callable[..., np.ndarray], *others: "NetworkParams") -> "NetworkParams":
        """Apply fn array-wise across this and other shape-identical trees."""
        other_arrays = [dict(o.named_arrays()) for o in others]
        return NetworkParams.from_named(
            {name: fn(array, *(o[name] for o in other_arrays)) for name, array in self.named_arrays()}
        )

    def copy(self) -> "NetworkParams":
        return self.map(np.copy)

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    @property
    def parameter_count(self) -> int:
        return sum(a.size for _, a in self.named_arrays())


# Same shape tree as the parameters
Gradients = NetworkParams


@dataclass
class GateRecord:
    """Activations of one cell step, kept for backpropagation."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray  # candidate tanh(.)
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class ForwardCache:
    """Per-layer, per-timestep activations of one forward pass."""

    input_shape: Tuple[int, ...]
    dims: NetworkDims
    mode: str
    layer1: List[GateRecord] = field(default_factory=list)
    layer2: List[GateRecord] = field(default_factory=list)
    masks: Optional[Tuple[np.ndarray, np.ndarray]] = None
    h1: Optional[np.ndarray] = None  # (B, T, H) layer-1 hidden states
    h2_last: Optional[np.ndarray] = None  # (B, H)
    u2: Optional[np.ndarray] = None  # FC input after ReLU and dropout
    fc_z: Optional[np.ndarray] = None
    fc_a: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None

    @property
    def timesteps(self) -> int:
        return len(self.layer1)


def lstm_cell_forward(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmCellParams
) -> Tuple[np.ndarray, np.ndarray, GateRecord]:
    """One LSTM step; accepts vectors or (B, .) batches."""
    H, D = params.hidden_size, params.input_size
    if x_t.shape[-1] != D:
        raise ShapeMismatch("x_t", (D,), x_t.shape)
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeMismatch("h_prev/c_prev", (H,), (h_prev.shape, c_prev.shape))

    W_x, W_h, b = params.flat()
    z = x_t @ W_x.T + h_prev @ W_h.T + b
    f = sigmoid(z[..., 0:H])
    i = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H : 4 * H])
    c_t = f * c_prev + i * g
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    record = GateRecord(
        x=x_t, h_prev=h_prev, c_prev=c_prev, f=f, i=i, o=o, g=g, c=c_t, tanh_c=tanh_c, h=h_t
    )
    return h_t, c_t, record


def _layer_forward(
    X: np.ndarray, params: LstmCellParams
) -> Tuple[np.ndarray, List[GateRecord]]:
    B, T, _ = X.shape
    H = params.hidden_size
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    hidden = np.empty((B, T, H), dtype=X.dtype)
    records = []
    for t in range(T):
        h, c, record = lstm_cell_forward(X[:, t], h, c, params)
        hidden[:, t] = h
        records.append(record)
    return hidden, records


def _as_batch(inputs: ArrayLike) -> Tuple[np.ndarray, bool]:
    X = inputs.values if isinstance(inputs, FeatureSequence) else np.asarray(inputs)
    if X.ndim == 2:
        return X[None], True
    if X.ndim != 3:
        raise ShapeMismatch("input sequence", "(n, D) or (B, n, D)", X.shape)
    return X, False


def sample_dropout_masks(
    shape: Tuple[int, int, int], dropout_rate: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Inverted-dropout masks for the two LSTM output sequences."""
    keep = 1.0 - dropout_rate
    m1 = (rng.random(shape) < keep) / keep
    m2 = (rng.random(shape) < keep) / keep
    return m1, m2


def network_forward(
    seq: ArrayLike,
    params: NetworkParams,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    masks: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[Union[float, np.ndarray], ForwardCache]:
    """Probability of a lane change per sequence, plus the cache for BPTT.

    In train mode masks are drawn from `rng` unless `masks` replays earlier
    ones; eval mode never masks.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    X, single = _as_batch(seq)
    dims = params.dims
    if X.shape[-1] != dims.input_size:
        raise ShapeMismatch("input width", dims.input_size, X.shape[-1])
    B, T, _ = X.shape
    H = dims.cells

    if mode == "eval":
        masks = None
    elif masks is None and dropout_rate > 0:
        if rng is None:
            raise ModelError("train mode with dropout needs an explicit rng")
        masks = sample_dropout_masks((B, T, H), dropout_rate, rng)
    if masks is not None and (masks[0].shape != (B, T, H) or masks[1].shape != (B, T, H)):
        raise ShapeMismatch("dropout masks", (B, T, H), (masks[0].shape, masks[1].shape))

    cache = ForwardCache(input_shape=X.shape, dims=dims, mode=mode, masks=masks)

    h1, cache.layer1 = _layer_forward(X, params.layer1)
    u1 = relu(h1)
    if masks is not None:
        u1 = u1 * masks[0]
    h2, cache.layer2 = _layer_forward(u1, params.layer2)

    h2_last = h2[:, -1]
    u2 = relu(h2_last)
    if masks is not None:
        u2 = u2 * masks[1][:, -1]

    fc_z = u2 @ params.fc_W.T + params.fc_b
    fc_a = relu(fc_z)
    logits = (fc_a @ params.out_W.T + params.out_b)[:, 0]
    probabilities = sigmoid(logits)

    cache.h1 = h1
    cache.h2_last = h2_last
    cache.u2 = u2
    cache.fc_z = fc_z
    cache.fc_a = fc_a
    cache.logits = logits
    cache.probabilities = probabilities

    if single:
        return float(probabilities[0]), cache
    return probabilities, cache


def _layer_backward(
    records: List[GateRecord], dH: np.ndarray, params: LstmCellParams
) -> Tuple[LstmCellParams, np.ndarray]:
    """BPTT through one layer given dLoss/dh_t from above for every t."""
    H, D = params.hidden_size, params.input_size
    W_x, W_h, _ = params.flat()
    B, T, _ = dH.shape

    dW_x = np.zeros((4 * H, D))
    dW_h = np.zeros((4 * H, H))
    db = np.zeros(4 * H)
    dX = np.zeros((B, T, D))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))

    for t in reversed(range(T)):
        r = records[t]
        dh = dH[:, t] + dh_next
        do = dh * r.tanh_c
        dc = dh * r.o * (1.0 - r.tanh_c**2) + dc_next
        df = dc * r.c_prev
        di = dc * r.g
        dg = dc * r.i
        dz = np.concatenate(
            [
                df * r.f * (1.0 - r.f),
                di * r.i * (1.0 - r.i),
                do * r.o * (1.0 - r.o),
                dg * (1.0 - r.g**2),
            ],
            axis=-1,
        )
        dW_x += dz.T @ r.x
        dW_h += dz.T @ r.h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ W_x
        dh_next = dz @ W_h
        dc_next = dc * r.f

    grads = LstmCellParams(dW_x.reshape(4, H, D), dW_h.reshape(4, H, H), db.reshape(4, H))
    return grads, dX


def network_backward(
    cache: ForwardCache,
    seq: ArrayLike,
    params: NetworkParams,
    label: Union[int, float, np.ndarray],
) -> Gradients:
    """Gradient of the mean binary cross-entropy over the batch."""
    X, _ = _as_batch(seq)
    if tuple(X.shape) != tuple(cache.input_shape) or cache.dims != params.dims:
        raise StaleCache(
            f"Cache for input {cache.input_shape} / {cache.dims} does not match "
            f"input {X.shape} / {params.dims}"
        )
    if cache.probabilities is None or cache.timesteps != X.shape[1]:
        raise StaleCache("Cache is incomplete for this input")
    y = np.atleast_1d(np.asarray(label, dtype=np.float64))
    B = X.shape[0]
    if y.shape != (B,):
        raise ShapeMismatch("labels", (B,), y.shape)

    # BCE composed with sigmoid: dL/dlogit = p - y
    dlogits = (cache.probabilities - y) / B

    d_out_W = (dlogits @ cache.fc_a)[None, :]
    d_out_b = np.array([dlogits.sum()])
    d_fc_z = (dlogits[:, None] * params.out_W) * (cache.fc_z > 0)
    d_fc_W = d_fc_z.T @ cache.u2
    d_fc_b = d_fc_z.sum(axis=0)

    d_u2 = d_fc_z @ params.fc_W
    d_h2_last = d_u2 * (cache.h2_last > 0)
    if cache.masks is not None:
        d_h2_last = d_h2_last * cache.masks[1][:, -1]
    dH2 = np.zeros((B, X.shape[1], params.dims.cells))
    dH2[:, -1] = d_h2_last
    grads2, dU1 = _layer_backward(cache.layer2, dH2, params.layer2)

    dH1 = dU1 * (cache.h1 > 0)
    if cache.masks is not None:
        dH1 = dH1 * cache.masks[0]
    grads1, _ = _layer_backward(cache.layer1, dH1, params.layer1)

    return NetworkParams(
        layer1=grads1,
        layer2=grads2,
        fc_W=d_fc_W,
        fc_b=d_fc_b,
        out_W=d_out_W,
        out_b=d_out_b,
    )


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed: int, dims: NetworkDims) -> NetworkParams:
    """Glorot-uniform weights per gate matrix, zero biases."""
    rng = np.random.default_rng(seed)
    D, H, F = dims.input_size, dims.cells, dims.fc_units

    def cell(input_size: int) -> LstmCellParams:
        W_x = np.stack([_glorot(rng, (H, input_size), input_size, H) for _ in GATES])
        W_h = np.stack([_glorot(rng, (H, H), H, H) for _ in GATES])
        return LstmCellParams(W_x=W_x, W_h=W_h, b=np.zeros((4, H)))

    layer1 = cell(D)
    layer2 = cell(H)
    return NetworkParams(
        layer1=layer1,
        layer2=layer2,
        fc_W=_glorot(rng, (F, H), H, F),
        fc_b=np.zeros(F),
        out_W=_glorot(rng, (1, F), F, 1),
        out_b=np.zeros(1),
    )


def clip_by_global_norm(grads: Gradients, max_norm: float) -> Tuple[Gradients, float]:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.named_arrays())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        return grads.map(lambda g: g * scale), norm
    return grads, norm


def predict_proba(
    params: NetworkParams,
    X: np.ndarray,
    dtype: type = np.float64,
    batch_size: int = 1024,
) -> np.ndarray:
    """Eval-mode probabilities for a batch; float32 inference is opt-in."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if dtype != np.float64:
        params = params.map(lambda a: a.astype(dtype))
        X = X.astype(dtype)
    outputs = []
    for start in range(0, X.shape[0], batch_size):
        probabilities, _ = network_forward(X[start : start + batch_size], params, mode="eval")
        outputs.append(np.asarray(probabilities, dtype=np.float64))
    if not outputs:
        return np.empty(0)
    return np.concatenate(outputs)
