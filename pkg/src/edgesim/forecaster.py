"""One-step-ahead load forecasting for the agents' state vectors.

The default predictor is a small LSTM trained supervised on load traces
collected from warm-up episodes, then frozen.  Two drop-in alternatives
share the same interface: a reactive stub (returns the latest observed
loads, used for the forecasting-off ablation) and a peeking stub that
asks the engine for the freshest attainable loads (upper bound).
"""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from .nn import Adam, Dense, LstmLayer, mse


class ReactiveForecaster:
    """No forecasting: predict(window) is the most recent row."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes

    def predict(self, window: np.ndarray) -> np.ndarray:
        return np.asarray(window, dtype=float)[-1].copy()


class PeekForecaster:
    """Reads the engine's current active counts directly; stands in for a
    perfect predictor in ablations."""

    def __init__(self, env):
        self.env = env

    def predict(self, window: np.ndarray) -> np.ndarray:
        loads = self.env.current_loads().astype(float)
        for (w, dest, _, _) in self.env._deliveries.get(self.env.t, []):
            key = (w.source, dest)
            stack = self.env._public.get(key)
            if stack is None or not stack.items:
                loads[dest] += 1
        return loads


class LoadForecaster:
    """LSTM over the W-slot load window, dense readout to all node loads.
    Inputs are normalized by the maximum load N; outputs are de-normalized
    and clamped to [0, N]."""

    def __init__(self, n_nodes: int, window: int, n_hidden: int = 20,
                 seed: int = 0):
        self.n_nodes = n_nodes
        self.window = window
        self.max_load = float(n_nodes - 1)  # loads count source EAs, at most N
        rng = np.random.default_rng(seed)
        self.lstm = LstmLayer(n_nodes, n_hidden, rng=rng)
        self.readout = Dense(n_hidden, n_nodes, relu=False, rng=rng)

    # -- inference ----------------------------------------------------------

    def _normalize(self, window: np.ndarray) -> np.ndarray:
        return np.asarray(window, dtype=float) / self.max_load

    def predict(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        if window.shape != (self.window, self.n_nodes):
            raise ValueError(f"expected window shape {(self.window, self.n_nodes)}, "
                             f"got {window.shape}")
        x_seq = self._normalize(window)[:, None, :]   # (W, 1, nodes)
        h, _ = self.lstm.forward(x_seq)
        y, _ = self.readout.forward(h)
        pred = y[0] * self.max_load
        return np.clip(pred, 0.0, self.max_load)

    # -- training -----------------------------------------------------------

    def _samples(self, traces: Sequence[np.ndarray]):
        xs, ys = [], []
        for trace in traces:
            trace = np.asarray(trace, dtype=float)
            if trace.shape[0] <= self.window:
                raise ValueError("trace shorter than the lookback window")
            for s in range(trace.shape[0] - self.window):
                xs.append(trace[s:s + self.window])
                ys.append(trace[s + self.window])
        return np.array(xs), np.array(ys)

    def fit(self, traces: Sequence[np.ndarray], epochs: int = 30,
            lr: float = 5e-3, batch_size: int = 32, seed: int = 0) -> List[float]:
        """Supervised one-step-ahead fit; returns per-epoch training MSE."""
        xs, ys = self._samples(traces)
        xs = xs / self.max_load
        ys = ys / self.max_load
        rng = np.random.default_rng(seed)
        params = self.lstm.params() + self.readout.params()
        opt = Adam(params, lr=lr)
        history = []
        n = xs.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            losses = []
            for lo in range(0, n, batch_size):
                idx = order[lo:lo + batch_size]
                xb = np.transpose(xs[idx], (1, 0, 2))  # (W, B, nodes)
                yb = ys[idx]
                h, lstm_cache = self.lstm.forward(xb)
                pred, dense_cache = self.readout.forward(h)
                loss, dpred = mse(pred, yb)
                dh, dense_grads = self.readout.backward(dpred, dense_cache)
                _, lstm_grads = self.lstm.backward(dh, lstm_cache)
                opt.step(lstm_grads + dense_grads)
                losses.append(loss)
            history.append(float(np.mean(losses)))
        return history

    # -- persistence --------------------------------------------------------

    def state_arrays(self) -> dict:
        return {"lstm.Wx": self.lstm.Wx, "lstm.Wh": self.lstm.Wh,
                "lstm.b": self.lstm.b, "readout.W": self.readout.W,
                "readout.b": self.readout.b}

    def load_state(self, arrays: dict) -> None:
        self.lstm.Wx = arrays["lstm.Wx"]
        self.lstm.Wh = arrays["lstm.Wh"]
        self.lstm.b = arrays["lstm.b"]
        self.readout.W = arrays["readout.W"]
        self.readout.b = arrays["readout.b"]


def collect_load_traces(env_factory, n_episodes: int, seed: int = 0) -> List[np.ndarray]:
    """Run warm-up episodes under a seeded random policy and return the
    per-episode load time series (T x nodes)."""
    from .env import run_episode
    from .policies import RandomPolicy

    traces = []
    for ep in range(n_episodes):
        env = env_factory()
        env.reset(seed=seed * 10007 + ep)
        policy = RandomPolicy(np.random.default_rng(seed * 7919 + ep))
        run_episode(env, policy.decide)
        traces.append(np.array(env.loads_history, dtype=float))
    return traces
