"""Flat 2-torus geometry: wrapping, minimal displacements, distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TorusConfig:
    """Flat torus R^2 / (s1 Z x s2 Z) with the Euclidean metric.

    Wrapped coordinates live in [0, s_i).  All geometry below is exact up
    to floating point; there is no atlas, a single global chart is used.
    """

    side_lengths: tuple[float, float] = (1.0, 1.0)
    _sides: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.side_lengths, dtype=float)
        if s.shape != (2,) or not np.all(s > 0) or not np.all(np.isfinite(s)):
            raise ValueError(f"side lengths must be two positive reals, got {self.side_lengths}")
        object.__setattr__(self, "side_lengths", (float(s[0]), float(s[1])))
        object.__setattr__(self, "_sides", s)

    @property
    def sides(self) -> np.ndarray:
        return self._sides

    @property
    def diameter(self) -> float:
        """Largest torus distance between two points (half the diagonal)."""
        return 0.5 * float(np.hypot(*self._sides))

    def wrap(self, q) -> np.ndarray:
        """Wrap a point (or an (n,2) array of points) into [0, s_i)."""
        return np.mod(np.asarray(q, dtype=float), self._sides)

    def wrap_centered(self, q) -> np.ndarray:
        """Wrap into the centered fundamental domain [-s_i/2, s_i/2)."""
        q = np.asarray(q, dtype=float)
        return np.mod(q + 0.5 * self._sides, self._sides) - 0.5 * self._sides

    def delta(self, q0, q1) -> np.ndarray:
        """Minimal displacement d with q0 + d ~ q1 on the torus.

        Componentwise the representative of q1 - q0 in [-s_i/2, s_i/2);
        its Euclidean norm is the torus distance.
        """
        return self.wrap_centered(np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float))

    def distance(self, q0, q1) -> float:
        d = self.delta(q0, q1)
        return float(np.hypot(d[0], d[1]))


def torus_distance(cfg: TorusConfig, q0, q1) -> float:
    """Minimum over lattice translates of the Euclidean distance."""
    return cfg.distance(q0, q1)
