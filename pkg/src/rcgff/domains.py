"""Continuum domains used both for scaled lattice interiors and for the
continuum kernels.  Rectangles and balls satisfy the cone condition at every
boundary point, so the killed Brownian motion exits them immediately from
the boundary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned open box prod_i (lo_i, hi_i)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("rectangle requires lo < hi per axis")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.logical_and((x > lo).all(axis=1), (x < hi).all(axis=1))

    def boundary_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.minimum((x - lo).min(axis=1), (hi - x).min(axis=1))

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball."""

    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball requires radius > 0")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = np.asarray(self.center)
        return ((x - c) ** 2).sum(axis=1) < self.radius ** 2

    def boundary_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = np.asarray(self.center)
        return self.radius - np.sqrt(((x - c) ** 2).sum(axis=1))


def unit_square(d: int = 2) -> Rectangle:
    return Rectangle(lo=(0.0,) * d, hi=(1.0,) * d)


def scaled_interior_mask(domain, coords: np.ndarray, n: int,
                         origin: Sequence[int] | None = None) -> np.ndarray:
    """Sites z with (z - origin)/n in the open domain."""
    pts = coords.astype(float)
    if origin is not None:
        pts = pts - np.asarray(origin, dtype=float)
    return domain.contains(pts / n)
