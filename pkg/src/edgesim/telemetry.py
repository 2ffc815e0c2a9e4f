"""Windowed load history and per-agent shared observability.

A single logical telemetry service maintains the W x (N+1) sliding load
matrix (row W is the most recent slot) and hands each agent the view it
needs to assemble its state vector.  Pre-episode history is zero-padded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ContinuumEnv


@dataclass
class PeerView:
    """What one EA can see beyond its own stacks: the lengths of the public
    stacks holding its offloads (one entry per other node, ascending) and
    the shared load history window."""
    public_lengths: np.ndarray
    load_window: np.ndarray


class LoadMatrix:
    def __init__(self, window: int, n_nodes: int):
        self.window = window
        self.n_nodes = n_nodes
        self._m = np.zeros((window, n_nodes), dtype=np.int64)
        self._last_slot = 0

    def update(self, loads: np.ndarray, t: int) -> None:
        """Shift one slot up and append the fresh per-node active counts."""
        if t <= self._last_slot:
            raise ValueError(f"duplicate load update for slot {t}")
        self._last_slot = t
        self._m = np.vstack([self._m[1:], np.asarray(loads, dtype=np.int64)])

    @property
    def matrix(self) -> np.ndarray:
        return self._m.copy()

    def column(self, node: int) -> np.ndarray:
        return self._m[:, node].copy()


class TelemetryService:
    def __init__(self, window: int, env: ContinuumEnv):
        self.env = env
        self.loads = LoadMatrix(window, env.cfg.n_nodes)

    def on_slot_end(self, loads: np.ndarray, t: int) -> None:
        self.loads.update(loads, t)

    def peer_view(self, ea: int) -> PeerView:
        return PeerView(
            public_lengths=self.env.source_public_lengths(ea),
            load_window=self.loads.matrix,
        )
