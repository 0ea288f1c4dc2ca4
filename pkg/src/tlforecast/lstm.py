"""Stacked LSTM regressor with analytic backpropagation through time.

Each LSTM layer stores its four gates stacked along the first axis in the
order input, forget, output, candidate::

    W: (4H, input_dim)   U: (4H, H)   b: (4H,)

so ``W[H:2H]`` is the forget-gate input matrix, and so on. A cell step is

    i = sigmoid(W_i x + U_i h + b_i)      f = sigmoid(W_f x + U_f h + b_f)
    o = sigmoid(W_o x + U_o h + b_o)      g = tanh(W_g x + U_g h + b_g)
    c' = f * c + i * g                    h' = o * tanh(c')

The network runs every LSTM layer over the whole window (the hidden
sequence of one layer is the input sequence of the next) and applies a
linear Dense head to the top layer's hidden state at the final step.

Forward and backward work on a batch of windows shaped ``(n, B, F)``; a
single ``(B, F)`` window is the ``n = 1`` case. Gradients returned by
``backward`` are sums over the batch, weighted by the per-sample upstream
gradient, so the caller decides whether they represent a sum or a mean.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

from .numkernel import SeededRng, ShapeError, sigmoid, uniform_init

__all__ = [
    "GATES",
    "StaleCacheError",
    "LSTMLayer",
    "DenseLayer",
    "NetworkArchitecture",
    "Network",
    "ForwardCache",
    "cell_step",
    "forward",
    "backward",
    "predict",
    "sample_loss_gradients",
    "finite_difference_gradients",
    "max_relative_error",
    "init_network",
    "zeros_like_grads",
]

GATES = ("i", "f", "o", "g")

_counter = itertools.count()


class StaleCacheError(RuntimeError):
    """A forward cache was used against a network it was not produced by."""


@dataclass
class LSTMLayer:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h4, _ = self.W.shape
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_k, U_k, b_k)`` for gate ``name`` in ``GATES``."""
        k = GATES.index(name)
        H = self.hidden_dim
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LSTMLayer":
        return cls(
            np.zeros((4 * hidden_dim, input_dim)),
            np.zeros((4 * hidden_dim, hidden_dim)),
            np.zeros(4 * hidden_dim),
        )

    @classmethod
    def glorot(cls, input_dim: int, hidden_dim: int, rng: SeededRng, forget_bias: float = 1.0):
        """Per-gate Glorot-uniform weights, zero biases except the forget gate.

        Draw order: W_i, W_f, W_o, W_g, then U_i, U_f, U_o, U_g.
        """
        H = hidden_dim
        W = np.vstack([uniform_init(rng, H, input_dim, input_dim, H) for _ in GATES])
        U = np.vstack([uniform_init(rng, H, H, H, H) for _ in GATES])
        b = np.zeros(4 * H)
        b[H : 2 * H] = forget_bias
        return cls(W, U, b)


@dataclass
class DenseLayer:
    W: np.ndarray  # (1, input_dim)
    b: np.ndarray  # (1,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(1)
        if self.W.ndim != 2 or self.W.shape[0] != 1:
            raise ShapeError(f"Dense head must have shape (1, input_dim), got {self.W.shape}")

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    @classmethod
    def zeros(cls, input_dim: int) -> "DenseLayer":
        return cls(np.zeros((1, input_dim)), np.zeros(1))

    @classmethod
    def glorot(cls, input_dim: int, rng: SeededRng) -> "DenseLayer":
        return cls(uniform_init(rng, 1, input_dim, input_dim, 1), np.zeros(1))


@dataclass(frozen=True)
class NetworkArchitecture:
    """``LSTM(input_dim -> h1) -> ... -> LSTM(.. -> hk) -> Dense(hk -> 1)``."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_dims:
            raise ValueError("at least one LSTM layer is required")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden widths must be >= 1")

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def layer_specs(self) -> list[dict]:
        specs = []
        d = self.input_dim
        for h in self.hidden_dims:
            specs.append({"type": "lstm", "input_dim": d, "hidden_dim": h})
            d = h
        specs.append({"type": "dense", "input_dim": d, "output_dim": 1})
        return specs

    @classmethod
    def from_specs(cls, specs: list[dict]) -> "NetworkArchitecture":
        if len(specs) < 2 or specs[-1].get("type") != "dense":
            raise ValueError("architecture must be >= 1 LSTM layer followed by one Dense head")
        if int(specs[-1].get("output_dim", 1)) != 1:
            raise ValueError("Dense head must have output width 1")
        d = int(specs[0]["input_dim"])
        hidden = []
        for s in specs[:-1]:
            if s.get("type") != "lstm":
                raise ValueError(f"unexpected layer type {s.get('type')!r}")
            if int(s["input_dim"]) != d:
                raise ValueError("layer dimensions do not chain")
            d = int(s["hidden_dim"])
            hidden.append(d)
        if int(specs[-1]["input_dim"]) != d:
            raise ValueError("Dense head input does not match last LSTM width")
        return cls(int(specs[0]["input_dim"]), tuple(hidden))


@dataclass
class Network:
    """LSTM layers followed by a Dense head, with a per-layer trainable flag."""

    layers: list
    trainable: list[bool] = field(default=None)

    def __post_init__(self):
        if len(self.layers) < 2 or not isinstance(self.layers[-1], DenseLayer):
            raise ValueError("a network needs >= 1 LSTM layer and a Dense head")
        if not all(isinstance(l, LSTMLayer) for l in self.layers[:-1]):
            raise ValueError("all layers but the last must be LSTM layers")
        for lo, hi in zip(self.layers[:-1], self.layers[1:]):
            if lo.hidden_dim != hi.input_dim:
                raise ShapeError("layer dimensions do not chain")
        if self.trainable is None:
            self.trainable = [True] * len(self.layers)
        if len(self.trainable) != len(self.layers):
            raise ValueError("trainable mask length must equal layer count")
        self._version = next(_counter)

    @property
    def architecture(self) -> NetworkArchitecture:
        return NetworkArchitecture(
            self.layers[0].input_dim, tuple(l.hidden_dim for l in self.layers[:-1])
        )

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def lstm_layers(self) -> list[LSTMLayer]:
        return self.layers[:-1]

    @property
    def head(self) -> DenseLayer:
        return self.layers[-1]

    def params(self) -> list[dict[str, np.ndarray]]:
        """Per-layer tensor dicts. The arrays are live; mutate then call ``touch``."""
        return [l.tensors() for l in self.layers]

    def touch(self) -> None:
        """Mark parameters as modified, invalidating outstanding forward caches."""
        self._version = next(_counter)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def n_params(self) -> int:
        return sum(t.size for p in self.params() for t in p.values())

    @classmethod
    def zeros(cls, arch: NetworkArchitecture) -> "Network":
        layers = []
        d = arch.input_dim
        for h in arch.hidden_dims:
            layers.append(LSTMLayer.zeros(d, h))
            d = h
        layers.append(DenseLayer.zeros(d))
        return cls(layers)


def init_network(arch: NetworkArchitecture, rng: SeededRng, forget_bias: float = 1.0) -> Network:
    """Randomly initialised network; layers are drawn bottom to top."""
    layers = []
    d = arch.input_dim
    for h in arch.hidden_dims:
        layers.append(LSTMLayer.glorot(d, h, rng, forget_bias))
        d = h
    layers.append(DenseLayer.glorot(d, rng))
    return Network(layers)


def zeros_like_grads(net: Network) -> list[dict[str, np.ndarray]]:
    return [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params()]


def cell_step(layer: LSTMLayer, x_t, h_prev, c_prev):
    """One LSTM step on vectors. Returns ``(h_t, c_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H = layer.hidden_dim
    if x_t.shape != (layer.input_dim,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ShapeError(
            f"cell_step expects x({layer.input_dim},) h({H},) c({H},), "
            f"got {x_t.shape} {h_prev.shape} {c_prev.shape}"
        )
    z = layer.W @ x_t + layer.U @ h_prev + layer.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H : 2 * H])
    o = sigmoid(z[2 * H : 3 * H])
    g = np.tanh(z[3 * H :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


@dataclass
class ForwardCache:
    net_id: int
    version: int
    batch: bool
    inputs: np.ndarray  # (n, B, F)
    # per LSTM layer: list over time of (x, h_prev, c_prev, i, f, o, g, tanh_c)
    steps: list
    top_hidden: np.ndarray  # (n, H_top)


def _as_batch(window) -> tuple[np.ndarray, bool]:
    X = np.asarray(window, dtype=np.float64)
    if X.ndim == 2:
        return X[None], False
    if X.ndim == 3:
        return X, True
    raise ShapeError(f"window must be (B, F) or (n, B, F), got shape {X.shape}")


def forward(net: Network, window):
    """Run the network on a ``(B, F)`` window or an ``(n, B, F)`` batch.

    Returns ``(prediction, cache)``; the prediction is a float for a single
    window and an ``(n,)`` array for a batch. Hidden and cell states start
    at zero.
    """
    X, batch = _as_batch(window)
    n, B, F = X.shape
    if F != net.input_dim:
        raise ShapeError(f"network expects {net.input_dim} features, window has {F}")
    if B < 1:
        raise ShapeError("window must contain at least one time step")
    seq = X
    steps = []
    for layer in net.lstm_layers:
        H = layer.hidden_dim
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        # input projections for all steps at once
        zx = seq @ layer.W.T + layer.b
        UT = layer.U.T
        out = np.empty((n, B, H))
        layer_steps = []
        for t in range(B):
            z = zx[:, t] + h @ UT
            sigmoid(z[:, : 3 * H], out=z[:, : 3 * H])
            np.tanh(z[:, 3 * H :], out=z[:, 3 * H :])
            i, f, o, g = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
            c_new = f * c
            c_new += i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            layer_steps.append((h, c, i, f, o, g, tc))
            h, c = h_new, c_new
            out[:, t] = h
        steps.append((seq, layer_steps))
        seq = out
    top = seq[:, -1]
    head = net.head
    pred = top @ head.W[0] + head.b[0]
    cache = ForwardCache(id(net), net._version, batch, X, steps, top)
    return (pred if batch else float(pred[0])), cache


def predict(net: Network, X, chunk: int = 256) -> np.ndarray:
    """Predictions for an ``(n, B, F)`` batch, evaluated ``chunk`` windows at a time."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return np.array([forward(net, X)[0]])
    return np.concatenate([forward(net, X[lo : lo + chunk])[0] for lo in range(0, X.shape[0], chunk)])


def backward(net: Network, cache: ForwardCache, loss_grad) -> list[dict[str, np.ndarray]]:
    """Gradients of the loss with respect to every parameter.

    ``loss_grad`` is dL/dprediction: a scalar for a single-window cache or
    an ``(n,)`` array for a batch cache. Contributions from all windows and
    all time steps are summed. Frozen layers get gradients too.
    """
    if cache.net_id != id(net) or cache.version != net._version:
        raise StaleCacheError("forward cache does not belong to the current network parameters")
    n = cache.inputs.shape[0]
    dp = np.asarray(loss_grad, dtype=np.float64).reshape(-1)
    if dp.shape[0] != n:
        raise ShapeError(f"loss_grad has {dp.shape[0]} entries for a batch of {n}")

    grads = []
    head = net.head
    grads_head = {"W": (dp @ cache.top_hidden)[None, :], "b": np.array([dp.sum()])}

    B = cache.inputs.shape[1]
    top_layer = net.lstm_layers[-1]
    dseq = np.zeros((n, B, top_layer.hidden_dim))
    dseq[:, -1] = dp[:, None] * head.W[0][None, :]

    n_lstm = len(net.lstm_layers)
    for k in range(n_lstm - 1, -1, -1):
        layer = net.lstm_layers[k]
        seq_in, layer_steps = cache.steps[k]
        H = layer.hidden_dim
        dz_all = np.empty((n, B, 4 * H))
        dh_next = np.zeros((n, H))
        dc_next = np.zeros((n, H))
        for t in range(B - 1, -1, -1):
            h_prev, c_prev, i, f, o, g, tc = layer_steps[t]
            dh = dseq[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = do * o * (1.0 - o)
            dz[:, 3 * H :] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz @ layer.U
        # h_prev at step t is the layer output at t-1 (zero at t = 0)
        h_prevs = np.stack([s[0] for s in layer_steps], axis=1)
        dz_flat = dz_all.reshape(n * B, 4 * H)
        gW = dz_flat.T @ seq_in.reshape(n * B, -1)
        gU = dz_flat.T @ h_prevs.reshape(n * B, H)
        gb = dz_flat.sum(axis=0)
        grads.append({"W": gW, "U": gU, "b": gb})
        if k > 0:
            dseq = dz_all @ layer.W
    grads.reverse()
    grads.append(grads_head)
    return grads


def sample_loss_gradients(net: Network, window, target):
    """Loss ``mean((p - y)^2)`` and its analytic gradients."""
    pred, cache = forward(net, window)
    p = np.atleast_1d(pred)
    y = np.atleast_1d(np.asarray(target, dtype=np.float64))
    r = p - y
    loss = float(np.mean(r * r))
    grads = backward(net, cache, 2.0 * r / r.size)
    return loss, grads


def _reference_loss(tensors, X, y) -> np.ndarray:
    """Plain per-step forward in the dtype of ``tensors``; returns mean squared error.

    Deliberately independent of ``forward``: no batching tricks, no cache.
    """
    one = np.ones((), dtype=X.dtype)

    def sig(z):
        e = np.exp(-np.abs(z))
        return np.where(z >= 0, one / (one + e), e / (one + e))

    seq = X
    for p in tensors[:-1]:
        W, U, b = p["W"], p["U"], p["b"]
        H = U.shape[1]
        n, B, _ = seq.shape
        out = np.zeros((n, B, H), dtype=X.dtype)
        for s in range(n):
            h = np.zeros(H, dtype=X.dtype)
            c = np.zeros(H, dtype=X.dtype)
            for t in range(B):
                z = W @ seq[s, t] + U @ h + b
                i, f, o = sig(z[:H]), sig(z[H : 2 * H]), sig(z[2 * H : 3 * H])
                g = np.tanh(z[3 * H :])
                c = f * c + i * g
                h = o * np.tanh(c)
                out[s, t] = h
        seq = out
    head = tensors[-1]
    pred = seq[:, -1] @ head["W"][0] + head["b"][0]
    r = pred - y
    return np.mean(r * r)


def finite_difference_gradients(net: Network, window, target, eps: float = 1e-5):
    """Central-difference gradients of ``mean((p - y)^2)`` for every parameter.

    Each entry is ``(L(theta + eps) - L(theta - eps)) / (2 eps)``. The loss is
    evaluated by a separate reference forward pass in ``np.longdouble`` so the
    difference quotient is not swamped by float64 rounding on entries whose
    true gradient is tiny. The network itself is not modified.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    ld = np.longdouble
    X, _ = _as_batch(window)
    if X.shape[2] != net.input_dim:
        raise ShapeError(f"network expects {net.input_dim} features, window has {X.shape[2]}")
    X = X.astype(ld)
    y = np.atleast_1d(np.asarray(target, dtype=np.float64)).astype(ld)
    tensors = [{k: v.astype(ld) for k, v in p.items()} for p in net.params()]
    e = ld(eps)
    grads = []
    for p in tensors:
        g = {}
        for name, t in p.items():
            flat = t.reshape(-1)
            out = np.empty(flat.size)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + e
                lp = _reference_loss(tensors, X, y)
                flat[j] = orig - e
                lm = _reference_loss(tensors, X, y)
                flat[j] = orig
                out[j] = float((lp - lm) / (2 * e))
            g[name] = out.reshape(t.shape)
        grads.append(g)
    return grads


def max_relative_error(a, b, floor: float = 1e-8) -> float:
    """Max over entries of ``|a - b| / max(|a|, |b|, floor)`` across two gradient sets."""
    worst = 0.0
    for ga, gb in zip(a, b):
        for name in ga:
            x, y = ga[name], gb[name]
            den = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
            if x.size:
                worst = max(worst, float(np.max(np.abs(x - y) / den)))
    return worst
