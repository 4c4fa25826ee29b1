"""Axis-aligned closed boxes under the infinity norm.

Boxes are the only set primitive the toolkit needs: regions, input sets,
obstacles and targets are all boxes (obstacles and targets may leave some
axes unconstrained via infinite bounds).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Closed box ``[lo_1, hi_1] x ... x [lo_n, hi_n]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise ValueError(f"empty box: lo={lo} hi={hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds) -> "Box":
        """Build from a sequence of per-axis ``(lo, hi)`` pairs."""
        arr = np.asarray(bounds, dtype=float)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())

    @classmethod
    def from_center(cls, center, halfwidths) -> "Box":
        c = np.asarray(center, dtype=float)
        h = np.asarray(halfwidths, dtype=float)
        return cls(c - h, c + h)

    @property
    def ndim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_rows(self, X, tol: float = 0.0) -> np.ndarray:
        """Vectorized containment for an ``(N, n)`` array of points."""
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=1)

    def intersects(self, other: "Box", ignore_axes=()) -> bool:
        """Closed-box overlap; shared faces count as intersection."""
        mask = np.ones(self.ndim, dtype=bool)
        for ax in ignore_axes:
            mask[ax] = False
        return bool(
            np.all(self.lo[mask] <= other.hi[mask])
            and np.all(other.lo[mask] <= self.hi[mask])
        )

    def shrink(self, margin: float) -> "Box":
        """Move every face inward by ``margin``; raises ValueError if empty."""
        lo = self.lo + margin
        hi = self.hi - margin
        if np.any(lo >= hi):
            raise ValueError("shrink margin leaves no interior")
        return Box(lo, hi)

    def inflate(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def erode(self, margins) -> "Box":
        """Per-axis inward move; infinite bounds are left untouched."""
        m = np.broadcast_to(np.asarray(margins, dtype=float), (self.ndim,))
        lo = np.where(np.isfinite(self.lo), self.lo + m, self.lo)
        hi = np.where(np.isfinite(self.hi), self.hi - m, self.hi)
        if np.any(lo > hi):
            raise ValueError("erosion margin leaves an empty box")
        return Box(lo, hi)


def prism(bounds2d, ndim: int) -> Box:
    """Extend a planar box to ``ndim`` axes, leaving extra axes unconstrained.

    Obstacles and targets constrain only the position coordinates; the
    remaining axes get infinite extent.
    """
    arr = np.asarray(bounds2d, dtype=float)
    lo = np.full(ndim, -np.inf)
    hi = np.full(ndim, np.inf)
    lo[: arr.shape[0]] = arr[:, 0]
    hi[: arr.shape[0]] = arr[:, 1]
    return Box(lo, hi)
