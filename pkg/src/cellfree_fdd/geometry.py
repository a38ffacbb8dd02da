"""AP/user placement on a wrap-around square service area."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, Streams


@dataclass(frozen=True)
class Layout:
    """AP and user positions in [0, D]^2 with a toroidal distance metric."""

    ap_positions: np.ndarray    # (M, 2) km
    user_positions: np.ndarray  # (K, 2) km
    square_side: float          # D, km

    def distances(self) -> np.ndarray:
        """(M, K) wrap-around AP-to-user distances in km."""
        return wrap_distance(self.ap_positions[:, None, :],
                             self.user_positions[None, :, :],
                             self.square_side)

    def distance(self, m: int, k: int) -> float:
        return float(wrap_distance(self.ap_positions[m],
                                   self.user_positions[k],
                                   self.square_side))


def wrap_distance(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Euclidean distance with per-axis wrap-around: min(|d|, D - |d|)."""
    delta = np.abs(np.asarray(a, float) - np.asarray(b, float))
    delta = np.minimum(delta, side - delta)
    return np.sqrt((delta ** 2).sum(axis=-1))


def build_layout(config: SystemConfig, streams: Streams | None = None) -> Layout:
    """Draw M AP and K user positions i.i.d. uniform over the square."""
    rng = (streams or Streams.for_trial(config)).layout
    d = config.square_side
    ap = rng.uniform(0.0, d, size=(config.num_aps, 2))
    users = rng.uniform(0.0, d, size=(config.num_users, 2))
    return Layout(ap_positions=ap, user_positions=users, square_side=d)
