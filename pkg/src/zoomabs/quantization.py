"""Zoom quantizer and the embedded lattices it induces on boxes.

The quantizer rounds each axis to multiples of ``Lambda_l * mu`` inside a
symmetric range of ``2M + 1`` cells and saturates outside it.  Shrinking or
growing ``mu`` zooms the whole cell pattern, which is what makes the
abstraction dynamic: every region carries its own ``mu`` and therefore its
own lattice pitch.

Cells are half-open: ``(k - 0.5) * step <= z < (k + 0.5) * step`` maps to
``k * step``, so ties on a lower cell boundary round up.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import Box
from .errors import RangeExceeded

# Tolerance, in units of lattice index, used when snapping box faces onto
# the lattice.  Face coordinates that are within this of an exact multiple
# of the pitch count as on-lattice.
_KTOL = 1e-9


@dataclass(frozen=True)
class ZoomQuantizer:
    """Quantizer configuration: range index M, per-axis pitch vector, dead zone.

    ``range_index`` is the largest representable cell index per axis;
    ``lattice`` holds the per-axis granularity at zoom 1; ``dead_zone``
    forces small vectors to exactly zero; ``mu`` is the default zoom.
    """

    range_index: int
    lattice: np.ndarray
    dead_zone: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        lam = np.asarray(self.lattice, dtype=float)
        if lam.ndim != 1 or np.any(lam <= 0):
            raise ValueError("lattice granularities must be positive")
        lam.flags.writeable = False
        object.__setattr__(self, "lattice", lam)
        if self.range_index < 1:
            raise ValueError("range index must be a positive integer")
        if self.range_index * lam.min() <= lam.max():
            raise ValueError("range index too small for the lattice vector")
        if self.dead_zone < 0 or self.mu <= 0:
            raise ValueError("dead zone must be >= 0 and zoom > 0")

    @property
    def ndim(self) -> int:
        return self.lattice.size

    @property
    def lambda_max(self) -> float:
        return float(self.lattice.max())

    def steps(self, scale: Optional[float] = None) -> np.ndarray:
        """Per-axis cell pitch at the given zoom (default: the stored one)."""
        mu = self.mu if scale is None else scale
        return self.lattice * mu


@dataclass(frozen=True)
class LatticePoint:
    """One abstract state: integer index vector plus its coordinates.

    Identity is the pair ``(region_id, k)``; ``coords`` is derived as
    ``k * Lambda * mu`` and carried only for convenience.
    """

    region_id: int
    k: tuple
    coords: np.ndarray = field(compare=False)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))

    def __hash__(self):
        return hash((self.region_id, self.k))


def zoom_quantize_scalar(qz: ZoomQuantizer, axis: int, z: float,
                         scale: Optional[float] = None) -> float:
    """Quantize one coordinate: round to the cell pattern, saturating at +-M.

    Computed literally as ``mu * q(z / mu)`` so that rescaling the zoom is
    a bit-exact identity.
    """
    if not math.isfinite(z):
        raise ValueError("cannot quantize a non-finite value")
    mu = qz.mu if scale is None else scale
    lam = qz.lattice[axis]
    w = z / mu
    m = qz.range_index
    if w >= (m + 0.5) * lam:
        return mu * (m * lam)
    if w < -(m + 0.5) * lam:
        return mu * (-m * lam)
    k = math.floor(w / lam + 0.5)
    k = max(-m, min(m, k))
    return mu * (k * lam)


def zoom_quantize(qz: ZoomQuantizer, z, scale: Optional[float] = None) -> np.ndarray:
    """Componentwise quantization with the small-signal dead zone."""
    z = np.asarray(z, dtype=float)
    mu = qz.mu if scale is None else scale
    if np.max(np.abs(z)) <= qz.dead_zone * mu:
        return np.zeros_like(z)
    return np.array(
        [zoom_quantize_scalar(qz, ax, z[ax], scale=mu) for ax in range(z.size)]
    )


def quantize_rows(qz: ZoomQuantizer, Z: np.ndarray,
                  scale: Optional[float] = None) -> np.ndarray:
    """Vectorized ``zoom_quantize`` over an ``(N, n)`` array.

    Must agree bit-for-bit with the scalar path; both use the identical
    ``floor(z/step + 0.5)`` arithmetic.
    """
    Z = np.asarray(Z, dtype=float)
    mu = qz.mu if scale is None else scale
    m = qz.range_index
    W = Z / mu
    k = np.floor(W / qz.lattice + 0.5)
    np.clip(k, -m, m, out=k)
    out = mu * (k * qz.lattice)
    if qz.dead_zone > 0:
        small = np.max(np.abs(Z), axis=1) <= qz.dead_zone * mu
        out[small] = 0.0
    return out


def lattice_indices(qz: ZoomQuantizer, Z: np.ndarray,
                    scale: Optional[float] = None) -> np.ndarray:
    """Integer cell indices for rows of ``Z`` (no saturation clipping)."""
    mu = qz.mu if scale is None else scale
    step = qz.lattice * mu
    return np.floor(np.asarray(Z, dtype=float) / step + 0.5).astype(np.int64)


def axis_index_range(lo: float, hi: float, step: float) -> tuple[int, int]:
    """Smallest and largest lattice index whose point lies in ``[lo, hi]``.

    Returns ``(kmin, kmax)`` with ``kmax < kmin`` when the interval holds no
    lattice point.  Box faces within a relative whisker of the pitch are
    treated as on-lattice.
    """
    kmin = math.ceil(lo / step - _KTOL)
    kmax = math.floor(hi / step + _KTOL)
    return kmin, kmax


def lattice_points(region, qz: ZoomQuantizer,
                   scale: Optional[float] = None) -> list[LatticePoint]:
    """All quantizer points inside a region's box, in lexicographic k order.

    ``region`` provides the box, its id, and (by default) the zoom to use;
    pass ``scale`` to lay a differently-pitched grid over the same box, as
    the input-approximation step does.

    Raises RangeExceeded when the box extends past index ``+-M`` on some
    axis: the quantizer saturates there, so the caller must either shrink
    the region or use a larger range index.
    """
    box: Box = region.box
    mu = region.mu if scale is None else scale
    steps = qz.lattice * mu
    m = qz.range_index
    ranges = []
    for ax in range(box.ndim):
        kmin, kmax = axis_index_range(box.lo[ax], box.hi[ax], steps[ax])
        if kmax < kmin:
            return []
        if kmin < -m or kmax > m:
            raise RangeExceeded(
                f"axis {ax} needs indices [{kmin}, {kmax}] but range is +-{m}"
            )
        ranges.append(range(kmin, kmax + 1))
    pts = []
    for k in itertools.product(*ranges):
        # same arithmetic as the quantizer map, for bit-identical coordinates
        coords = np.array([mu * (k[ax] * qz.lattice[ax])
                           for ax in range(box.ndim)])
        pts.append(LatticePoint(region.id, k, coords))
    return pts


def lattice_count(box: Box, qz: ZoomQuantizer, scale: float) -> int:
    """Number of lattice points inside ``box`` at the given zoom.

    Pure counting with no range clipping: used for complexity accounting,
    where the comparator is a plain uniform grid.
    """
    steps = qz.lattice * scale
    total = 1
    for ax in range(box.ndim):
        kmin, kmax = axis_index_range(box.lo[ax], box.hi[ax], steps[ax])
        if kmax < kmin:
            return 0
        total *= kmax - kmin + 1
    return total


def cover_check(region, pts, radius: float) -> bool:
    """Verify the ball cover: grid-probe the box at pitch ``radius / 4``.

    True when every probe vertex inside the box lies within infinity
    distance ``radius`` of some point in ``pts``.
    """
    box: Box = region.box
    if not pts:
        return False
    coords = np.array([p.coords for p in pts])
    pitch = radius / 4.0
    axes = []
    for ax in range(box.ndim):
        n = max(1, int(math.floor((box.hi[ax] - box.lo[ax]) / pitch + _KTOL)) + 1)
        axes.append(np.linspace(box.lo[ax], box.hi[ax], n))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.ndim)
    # distance from each probe point to its nearest lattice point
    for start in range(0, grid.shape[0], 4096):
        chunk = grid[start:start + 4096]
        d = np.abs(chunk[:, None, :] - coords[None, :, :]).max(axis=2).min(axis=1)
        if np.any(d > radius + 1e-12):
            return False
    return True
