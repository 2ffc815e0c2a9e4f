"""Minimal neural building blocks with manual backpropagation.

Only what the learners need: dense layers with optional ReLU, a single
LSTM layer unrolled over a fixed lookback, MSE loss, and Adam.  All math
is float64; non-finite values are rejected at layer boundaries instead
of propagating silently.
"""
from __future__ import annotations

import json
from typing import Dict, List, Optional, Tuple

import numpy as np

CHECKPOINT_VERSION = 1


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error and its gradient wrt pred."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


class Dense:
    """Affine layer, optionally followed by ReLU.  Inputs are (batch, in)."""

    def __init__(self, n_in: int, n_out: int, relu: bool = False,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        scale = np.sqrt(2.0 / n_in)  # He-style; fine for the linear heads too
        self.W = rng.normal(0.0, scale, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.relu = relu

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        _check_finite(x, "dense input")
        z = x @ self.W + self.b
        y = np.maximum(z, 0.0) if self.relu else z
        return y, (x, z)

    def backward(self, dy: np.ndarray, cache: tuple) -> Tuple[np.ndarray, List[np.ndarray]]:
        x, z = cache
        if self.relu:
            dy = dy * (z > 0.0)
        dW = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.W.T
        return dx, [dW, db]

    def params(self) -> List[np.ndarray]:
        return [self.W, self.b]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class LstmLayer:
    """One LSTM layer unrolled over a sequence; returns the last hidden
    state.  Gate blocks are stored stacked as (in+hidden, 4*hidden) in
    i, f, g, o order."""

    def __init__(self, n_in: int, n_hidden: int,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.n_in = n_in
        self.n_hidden = n_hidden
        scale = 0.2 / np.sqrt(n_in + n_hidden)
        self.Wx = rng.uniform(-scale, scale, size=(n_in, 4 * n_hidden))
        self.Wh = rng.uniform(-scale, scale, size=(n_hidden, 4 * n_hidden))
        self.b = np.zeros(4 * n_hidden)
        self.b[n_hidden:2 * n_hidden] = 1.0  # forget-gate bias

    def _split(self, z: np.ndarray):
        H = self.n_hidden
        return z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]

    def forward(self, x_seq: np.ndarray) -> Tuple[np.ndarray, list]:
        """x_seq is (steps, batch, n_in); returns last hidden (batch, n_hidden)."""
        _check_finite(x_seq, "lstm input")
        steps, batch, _ = x_seq.shape
        h = np.zeros((batch, self.n_hidden))
        c = np.zeros((batch, self.n_hidden))
        caches = []
        for s in range(steps):
            x = x_seq[s]
            z = x @ self.Wx + h @ self.Wh + self.b
            zi, zf, zg, zo = self._split(z)
            i, f, g, o = _sigmoid(zi), _sigmoid(zf), np.tanh(zg), _sigmoid(zo)
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            caches.append((x, h, c, i, f, g, o, c_new, tanh_c))
            h, c = h_new, c_new
        return h, caches

    def backward(self, dh_last: np.ndarray, caches: list) -> Tuple[np.ndarray, List[np.ndarray]]:
        H = self.n_hidden
        dWx = np.zeros_like(self.Wx)
        dWh = np.zeros_like(self.Wh)
        db = np.zeros_like(self.b)
        dh = dh_last
        dc = np.zeros_like(dh_last)
        dx_seq = np.zeros((len(caches), dh_last.shape[0], self.n_in))
        for s in reversed(range(len(caches))):
            x, h_prev, c_prev, i, f, g, o, c_new, tanh_c = caches[s]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dzi = di * i * (1.0 - i)
            dzf = df * f * (1.0 - f)
            dzg = dg * (1.0 - g ** 2)
            dzo = do * o * (1.0 - o)
            dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
            dWx += x.T @ dz
            dWh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx_seq[s] = dz @ self.Wx.T
            dh = dz @ self.Wh.T
            dc = dc * f
        return dx_seq, [dWx, dWh, db]

    def params(self) -> List[np.ndarray]:
        return [self.Wx, self.Wh, self.b]


class Adam:
    """Bias-corrected Adam over a flat list of parameter arrays."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient/parameter count mismatch")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            _check_finite(g, "gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g ** 2
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path: str, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "arrays": {k: {"shape": list(a.shape), "data": a.ravel().tolist()}
                   for k, a in arrays.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {k: np.array(e["data"], dtype=np.float64).reshape(e["shape"])
              for k, e in doc["arrays"].items()}
    return arrays, doc.get("meta", {})
