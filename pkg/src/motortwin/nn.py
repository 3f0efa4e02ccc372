"""Minimal float64 network engine: LSTM and dense layers, forward with
activation caching, backpropagation through time, Adam, and central
finite-difference gradient verification.

Conventions
-----------
A window is a float64 array of shape (T,) or (T, d); batches are (B, T, d).
LSTM gate blocks are stacked in the order (input i, forget f, cell g,
output o) along the first axis of the weight matrices. Hidden and cell
states start at zero for every window. Dense layers act on the final hidden
state of the last LSTM layer (or on the final timestep input if the network
has no recurrent layers). All arithmetic is 64-bit; the networks are tiny
and gradient checks need the headroom.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import NormStats


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def mse(pred, target) -> float:
    """Mean of squared differences; errors on empty input."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("pred and target must have the same shape")
    if pred.size == 0:
        raise ValueError("mse of empty sequences is undefined")
    return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class LstmLayer:
    """Single LSTM layer with stacked gate weights.

    w_x: (4h, d) input-to-gates, w_h: (4h, h) recurrent, b: (4h,).
    """

    kind = "lstm"

    def __init__(self, input_dim: int, hidden_dim: int,
                 rng: Optional[np.random.Generator] = None):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        d, h = self.input_dim, self.hidden_dim
        if rng is None:
            self.w_x = np.zeros((4 * h, d))
            self.w_h = np.zeros((4 * h, h))
        else:
            self.w_x = rng.uniform(-1.0, 1.0, (4 * h, d)) / math.sqrt(d)
            self.w_h = rng.uniform(-1.0, 1.0, (4 * h, h)) / math.sqrt(h)
        self.b = np.zeros(4 * h)
        self.b[h:2 * h] = 1.0  # forget-gate bias starts open

    def param_count(self) -> int:
        h, d = self.hidden_dim, self.input_dim
        return 4 * (h * d + h * h + h)

    def params(self) -> Dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    def forward_seq(self, x: np.ndarray) -> Tuple[np.ndarray, dict]:
        """x: (B, T, d) -> hidden sequence (B, T, h) plus the BPTT cache."""
        B, T, d = x.shape
        if d != self.input_dim:
            raise ValueError(
                f"lstm layer expects input dim {self.input_dim}, got {d}")
        h = self.hidden_dim
        z = np.empty((B, T, 4 * h))
        a = np.empty((B, T, 4 * h))
        cs = np.empty((B, T, h))
        tcs = np.empty((B, T, h))
        hs = np.empty((B, T, h))
        h_t = np.zeros((B, h))
        c_t = np.zeros((B, h))
        for t in range(T):
            z_t = x[:, t] @ self.w_x.T + h_t @ self.w_h.T + self.b
            a_t = np.empty_like(z_t)
            a_t[:, :2 * h] = _sigmoid(z_t[:, :2 * h])          # i, f
            a_t[:, 2 * h:3 * h] = np.tanh(z_t[:, 2 * h:3 * h])  # g
            a_t[:, 3 * h:] = _sigmoid(z_t[:, 3 * h:])           # o
            c_t = a_t[:, h:2 * h] * c_t + a_t[:, :h] * a_t[:, 2 * h:3 * h]
            tc_t = np.tanh(c_t)
            h_t = a_t[:, 3 * h:] * tc_t
            z[:, t], a[:, t], cs[:, t], tcs[:, t], hs[:, t] = z_t, a_t, c_t, tc_t, h_t
        return hs, {"x": x, "z": z, "a": a, "c": cs, "tc": tcs, "h": hs}

    def backward_seq(self, cache: dict, d_h: np.ndarray
                     ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """d_h: (B, T, h) gradient w.r.t. every timestep's hidden output.

        Returns parameter gradients and the gradient w.r.t. the input
        sequence (B, T, d).
        """
        x, a, cs, tcs, hs = cache["x"], cache["a"], cache["c"], cache["tc"], cache["h"]
        B, T, _ = x.shape
        h = self.hidden_dim
        g_wx = np.zeros_like(self.w_x)
        g_wh = np.zeros_like(self.w_h)
        g_b = np.zeros_like(self.b)
        dx = np.empty_like(x)
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a_t = a[:, t]
            i_g, f_g = a_t[:, :h], a_t[:, h:2 * h]
            g_g, o_g = a_t[:, 2 * h:3 * h], a_t[:, 3 * h:]
            dh = d_h[:, t] + dh_next
            dc = dc_next + dh * o_g * (1.0 - tcs[:, t] ** 2)
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, h))
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, h))
            dz = np.empty((B, 4 * h))
            dz[:, :h] = dc * g_g * i_g * (1.0 - i_g)
            dz[:, h:2 * h] = dc * c_prev * f_g * (1.0 - f_g)
            dz[:, 2 * h:3 * h] = dc * i_g * (1.0 - g_g ** 2)
            dz[:, 3 * h:] = dh * tcs[:, t] * o_g * (1.0 - o_g)
            g_wx += dz.T @ x[:, t]
            g_wh += dz.T @ h_prev
            g_b += dz.sum(axis=0)
            dx[:, t] = dz @ self.w_x
            dh_next = dz @ self.w_h
            dc_next = dc * f_g
        return {"w_x": g_wx, "w_h": g_wh, "b": g_b}, dx


class DenseLayer:
    """Fully connected layer on a feature vector."""

    kind = "dense"

    def __init__(self, input_dim: int, output_dim: int, activation: str = "linear",
                 rng: Optional[np.random.Generator] = None):
        if activation not in ("linear", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation: {activation!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.activation = activation
        if rng is None:
            self.w = np.zeros((output_dim, input_dim))
        else:
            self.w = rng.uniform(-1.0, 1.0, (output_dim, input_dim)) / math.sqrt(input_dim)
        self.b = np.zeros(output_dim)

    def param_count(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim

    def params(self) -> Dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, dict]:
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"dense layer expects input dim {self.input_dim}, got {x.shape[1]}")
        z = x @ self.w.T + self.b
        if self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "sigmoid":
            y = _sigmoid(z)
        else:
            y = z
        return y, {"x": x, "y": y}

    def backward(self, cache: dict, d_y: np.ndarray
                 ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        x, y = cache["x"], cache["y"]
        if self.activation == "tanh":
            dz = d_y * (1.0 - y ** 2)
        elif self.activation == "sigmoid":
            dz = d_y * y * (1.0 - y)
        else:
            dz = d_y
        return {"w": dz.T @ x, "b": dz.sum(axis=0)}, dz @ self.w


Layer = Union[LstmLayer, DenseLayer]


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Per-layer activation caches from one forward pass."""

    layer_caches: List[dict]
    batch_shape: Tuple[int, int, int]


class Network:
    """Ordered layer stack mapping a length-x window to one scalar."""

    def __init__(self, layers: Sequence[Layer], x: int, input_dim: int = 1,
                 norm_stats: Optional[NormStats] = None,
                 meta: Optional[dict] = None):
        if x < 1:
            raise ValueError("window length x must be >= 1")
        self.layers = list(layers)
        self.x = int(x)
        self.input_dim = int(input_dim)
        self.norm_stats = norm_stats
        self.meta = dict(meta or {})
        self._validate()

    def _validate(self):
        dim = self.input_dim
        seen_dense = False
        for k, layer in enumerate(self.layers):
            if layer.kind == "lstm":
                if seen_dense:
                    raise ValueError(f"layer {k}: lstm after dense is not supported")
                if layer.input_dim != dim:
                    raise ValueError(
                        f"layer {k} (lstm) expects input dim {layer.input_dim}, got {dim}")
                dim = layer.hidden_dim
            else:
                seen_dense = True
                if layer.input_dim != dim:
                    raise ValueError(
                        f"layer {k} (dense) expects input dim {layer.input_dim}, got {dim}")
                dim = layer.output_dim
        if self.layers and dim != 1:
            raise ValueError("final output dimension must be 1")

    # -- forward / backward -------------------------------------------------

    def forward_batch(self, windows: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """windows: (B, T) or (B, T, d) -> (predictions (B,), cache)."""
        w = np.asarray(windows, dtype=float)
        if w.ndim == 2:
            w = w[:, :, None]
        B, T, d = w.shape
        if T != self.x:
            raise ValueError(f"network expects windows of length {self.x}, got {T}")
        if d != self.input_dim:
            raise ValueError(f"network expects input dim {self.input_dim}, got {d}")
        if not np.all(np.isfinite(w)):
            raise ValueError("window contains non-finite values")
        caches: List[dict] = []
        seq = w
        feat = None
        for layer in self.layers:
            if layer.kind == "lstm":
                seq, cache = layer.forward_seq(seq)
                caches.append(cache)
            else:
                if feat is None:
                    feat = seq[:, -1, :]
                feat, cache = layer.forward(feat)
                caches.append(cache)
        if feat is None:  # recurrent-only network
            feat = seq[:, -1, :]
        pred = feat[:, 0]
        return pred, ForwardCache(layer_caches=caches, batch_shape=(B, T, d))

    def forward(self, window) -> Tuple[float, ForwardCache]:
        """Single window (T,) or (T, d) -> (scalar prediction, cache)."""
        w = np.asarray(window, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        pred, cache = self.forward_batch(w[None, :, :])
        return float(pred[0]), cache

    def backward_batch(self, cache: ForwardCache, d_pred: np.ndarray
                       ) -> Tuple[List[Dict[str, np.ndarray]], np.ndarray]:
        """Gradients of sum(d_pred * pred) w.r.t. every parameter and every
        input timestep. Returns (per-layer gradient dicts, d_windows)."""
        B, T, d = cache.batch_shape
        d_pred = np.asarray(d_pred, dtype=float)
        if d_pred.shape != (B,):
            raise ValueError("d_pred shape does not match the cached forward pass")
        if len(cache.layer_caches) != len(self.layers):
            raise ValueError("cache does not match this network")
        grads: List[Optional[Dict[str, np.ndarray]]] = [None] * len(self.layers)
        g = d_pred[:, None]
        last_lstm = max((k for k, l in enumerate(self.layers) if l.kind == "lstm"),
                        default=None)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.kind == "dense":
                grads[k], g = layer.backward(cache.layer_caches[k], g)
            else:
                if k == last_lstm:
                    d_seq = np.zeros((B, T, layer.hidden_dim))
                    d_seq[:, -1, :] = g
                    g = d_seq
                grads[k], g = layer.backward_seq(cache.layer_caches[k], g)
        if last_lstm is None:
            # dense-only network: gradient reaches only the final timestep
            d_windows = np.zeros((B, T, d))
            d_windows[:, -1, :] = g
        else:
            d_windows = g
        return grads, d_windows  # type: ignore[return-value]

    def backward(self, cache: ForwardCache, d_pred: float
                 ) -> Tuple[List[Dict[str, np.ndarray]], np.ndarray]:
        """Single-window wrapper; returns gradients and d_window (T, d)."""
        grads, dw = self.backward_batch(cache, np.array([float(d_pred)]))
        return grads, dw[0]

    # -- parameter plumbing --------------------------------------------------

    def param_arrays(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((f"layer{k}.{name}", arr))
        return out

    def get_flat(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([a.ravel() for _, a in self.param_arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for _, arr in self.param_arrays():
            n = arr.size
            arr[...] = flat[pos:pos + n].reshape(arr.shape)
            pos += n
        if pos != flat.size:
            raise ValueError("flat vector size does not match parameter count")

    @staticmethod
    def flatten_grads(grads: List[Dict[str, np.ndarray]]) -> np.ndarray:
        parts = []
        for g in grads:
            for name in g:
                parts.append(g[name].ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


def param_count(net: Network) -> int:
    return sum(layer.param_count() for layer in net.layers)


def build_network(x: int, lstm_units: Sequence[int], dense_units: Sequence[int],
                  seed: int, input_dim: int = 1,
                  norm_stats: Optional[NormStats] = None) -> Network:
    """Seeded constructor: LSTM chain, tanh dense hidden layers, linear scalar
    output."""
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    dim = input_dim
    for h in lstm_units:
        layers.append(LstmLayer(dim, h, rng=rng))
        dim = h
    for u in dense_units:
        layers.append(DenseLayer(dim, u, activation="tanh", rng=rng))
        dim = u
    layers.append(DenseLayer(dim, 1, activation="linear", rng=rng))
    return Network(layers, x=x, input_dim=input_dim, norm_stats=norm_stats)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators over a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(n_params: int, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params),
                     t=0, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState
              ) -> Tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update on a flat parameter vector."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient; training aborted")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1,
                                 beta2=state.beta2, epsilon=state.epsilon)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def grad_check_detail(net: Network, window, eps: float = 1e-5
                      ) -> Dict[str, float]:
    """Max relative error between analytic and central-difference gradients,
    per parameter tensor plus the window inputs."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    _, cache = net.forward(w)
    grads, d_in = net.backward(cache, 1.0)
    report: Dict[str, float] = {}

    flat = net.get_flat()
    analytic = Network.flatten_grads(grads)
    numeric = np.empty_like(analytic)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        net.set_flat(flat)
        up, _ = net.forward(w)
        flat[j] = orig - eps
        net.set_flat(flat)
        dn, _ = net.forward(w)
        flat[j] = orig
        numeric[j] = (up - dn) / (2.0 * eps)
    net.set_flat(flat)
    errs = _rel_err(analytic, numeric)
    pos = 0
    for name, arr in net.param_arrays():
        report[name] = float(errs[pos:pos + arr.size].max()) if arr.size else 0.0
        pos += arr.size

    num_in = np.empty_like(d_in)
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + eps
        up, _ = net.forward(w)
        w[idx] = orig - eps
        dn, _ = net.forward(w)
        w[idx] = orig
        num_in[idx] = (up - dn) / (2.0 * eps)
    report["inputs"] = float(_rel_err(d_in, num_in).max())
    return report


def grad_check(net: Network, window, eps: float = 1e-5) -> float:
    """Worst relative error over all parameters and inputs."""
    return max(grad_check_detail(net, window, eps).values())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if layer.kind == "lstm":
            layers.append({
                "type": "lstm",
                "input_dim": layer.input_dim,
                "hidden_dim": layer.hidden_dim,
                "w_x": layer.w_x.tolist(),
                "w_h": layer.w_h.tolist(),
                "b": layer.b.tolist(),
            })
        else:
            layers.append({
                "type": "dense",
                "input_dim": layer.input_dim,
                "output_dim": layer.output_dim,
                "activation": layer.activation,
                "w": layer.w.tolist(),
                "b": layer.b.tolist(),
            })
    stats = None
    if net.norm_stats is not None:
        s = net.norm_stats
        stats = {
            "input_offset": s.input_offset,
            "input_scale": s.input_scale,
            "target_offset": s.target_offset,
            "target_scale": s.target_scale,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "x": net.x,
        "input_dim": net.input_dim,
        "layers": layers,
        "norm_stats": stats,
        "meta": net.meta,
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {doc.get('schema_version')!r}")
    layers: List[Layer] = []
    for spec in doc["layers"]:
        if spec["type"] == "lstm":
            layer = LstmLayer(spec["input_dim"], spec["hidden_dim"])
            layer.w_x = np.array(spec["w_x"], dtype=float)
            layer.w_h = np.array(spec["w_h"], dtype=float)
            layer.b = np.array(spec["b"], dtype=float)
        elif spec["type"] == "dense":
            layer = DenseLayer(spec["input_dim"], spec["output_dim"], spec["activation"])
            layer.w = np.array(spec["w"], dtype=float)
            layer.b = np.array(spec["b"], dtype=float)
        else:
            raise ValueError(f"unknown layer type: {spec['type']!r}")
        layers.append(layer)
    stats = None
    if doc.get("norm_stats") is not None:
        s = doc["norm_stats"]
        stats = NormStats(input_offset=s["input_offset"], input_scale=s["input_scale"],
                          target_offset=s["target_offset"], target_scale=s["target_scale"])
    return Network(layers, x=doc["x"], input_dim=doc["input_dim"],
                   norm_stats=stats, meta=doc.get("meta", {}))


def serialize_network(net: Network) -> bytes:
    """Canonical JSON bytes; float64 values roundtrip exactly."""
    return json.dumps(network_to_dict(net), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def save_network(net: Network, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_network(net))


def load_network(path) -> Network:
    with open(path, "rb") as f:
        return network_from_dict(json.loads(f.read().decode("utf-8")))


def network_checksum(net: Network) -> str:
    return hashlib.sha256(serialize_network(net)).hexdigest()
