"""Bounded regions, their shrink margins, and the event-driven update laws.

A region is an axis-aligned box with its own zoom parameter.  The state
escaping into the outer band of the current region is the event that
generates the next region; proximity of the region to obstacles or to the
safe set decides whether the next zoom contracts or expands.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .boxes import Box
from .errors import DegenerateRegion, EmptyContraction, PrecisionBreach


class Classification(enum.Enum):
    INSIDE_CORE = "inside_core"
    BOUNDARY_BAND = "boundary_band"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class Region:
    """A box with zoom ``mu``, input pitch ``eta``, and band width ``omega``."""

    id: int
    box: Box
    mu: float
    eta: float
    omega: float

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("region id must be nonnegative")
        if self.mu <= 0 or self.eta <= 0:
            raise ValueError("mu and eta must be positive")
        if not (0 < self.omega < 1):
            raise ValueError("band width must lie in (0, 1)")


@dataclass(frozen=True)
class EventState:
    """Discrete events: band escape, obstacle proximity, safe-set proximity."""

    a: int = 0
    b: int = 0
    c: int = 0

    def __post_init__(self):
        for name in ("a", "b", "c"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"event {name} must be 0 or 1")


@dataclass(frozen=True)
class RegionPolicy:
    """How new regions are sized and how the zoom evolves.

    ``omega_in`` applies when the current region touches an obstacle or the
    safe set; ``omega_out`` applies in free space.  The degenerate choice
    ``omega_in = omega_out = 1`` keeps every region congruent.
    """

    omega: float
    omega_in: float
    omega_out: float
    base_halfwidths: np.ndarray
    mu0: float
    eta0: float

    def __post_init__(self):
        hw = np.asarray(self.base_halfwidths, dtype=float)
        if np.any(hw <= 0):
            raise ValueError("base halfwidths must be positive")
        hw.flags.writeable = False
        object.__setattr__(self, "base_halfwidths", hw)
        if not (0 < self.omega < 1):
            raise ValueError("band width must lie in (0, 1)")
        # The congruent setting needs omega_in = 1, so (0, 1] rather than (0, 1).
        if not (0 < self.omega_in <= 1.0 <= self.omega_out):
            raise ValueError("need 0 < omega_in <= 1 <= omega_out")
        if self.mu0 <= 0 or self.eta0 <= 0:
            raise ValueError("initial zoom parameters must be positive")

    def initial_region(self, center, region_id: int = 0) -> Region:
        return Region(
            id=region_id,
            box=Box.from_center(center, self.base_halfwidths * self.mu0),
            mu=self.mu0,
            eta=self.eta0,
            omega=self.omega,
        )


def contraction(r: Region) -> Box:
    """The region shrunk by its band width on every face."""
    lo = r.box.lo + r.omega
    hi = r.box.hi - r.omega
    if np.any(lo >= hi):
        raise EmptyContraction(
            f"region {r.id}: band width {r.omega} collapses the box"
        )
    return Box(lo, hi)


def classify(x, r: Region) -> Classification:
    """Locate a state relative to the region core and its boundary band."""
    x = np.asarray(x, dtype=float)
    if not r.box.contains(x):
        return Classification.OUTSIDE
    core_lo = r.box.lo + r.omega
    core_hi = r.box.hi - r.omega
    if np.all(x >= core_lo) and np.all(x <= core_hi):
        return Classification.INSIDE_CORE
    return Classification.BOUNDARY_BAND


def update_events(r: Region, obstacles: Sequence[Box], safe: Sequence[Box],
                  a: int = 0) -> EventState:
    """Recompute obstacle/safe-set proximity events for a region.

    Boxes are closed, so touching faces count as intersection (the
    conservative choice for safety).  The band event ``a`` is carried over
    from the classification that triggered the update.
    """
    b = int(any(r.box.intersects(o) for o in obstacles))
    c = int(any(r.box.intersects(s) for s in safe))
    return EventState(a=a, b=b, c=c)


def snap_center(x, halfwidths, steps) -> np.ndarray:
    """Align a prospective region center so its faces land on the lattice.

    Per axis the center moves to the nearest value with ``center - hw`` an
    exact multiple of the pitch, so congruent regions always carry the same
    number of lattice points.  Exact half-pitch ties break toward the lower
    index.
    """
    x = np.asarray(x, dtype=float)
    hw = np.asarray(halfwidths, dtype=float)
    steps = np.asarray(steps, dtype=float)
    idx = np.floor((x - hw) / steps + 0.5 - 1e-9)
    return hw + steps * idx


def next_region(x_new, r: Region, e: EventState, policy: RegionPolicy,
                snap_steps=None,
                precision_check: Optional[Callable[[float, float], bool]] = None,
                new_id: Optional[int] = None) -> Region:
    """Generate the successor region around a state that entered the band.

    The zoom contracts by ``omega_in`` when the current region touches an
    obstacle or the safe set, and expands by ``omega_out`` otherwise; the
    input pitch scales by the same factor.  The new box is centered at the
    triggering state (optionally snapped onto the lattice via
    ``snap_steps``) with halfwidths proportional to the new zoom.
    """
    x_new = np.asarray(x_new, dtype=float)
    if classify(x_new, r) is not Classification.BOUNDARY_BAND:
        raise ValueError("next_region requires the trigger state in the band")
    factor = policy.omega_in if (e.b or e.c) else policy.omega_out
    mu1 = factor * r.mu
    eta1 = factor * r.eta
    hw = policy.base_halfwidths * mu1
    if np.any(hw <= policy.omega):
        raise DegenerateRegion(
            f"halfwidths {hw} do not exceed the band width {policy.omega}"
        )
    if precision_check is not None and not precision_check(mu1, eta1):
        raise PrecisionBreach(
            f"zoom {mu1} / input pitch {eta1} violate the precision budget"
        )
    center = x_new if snap_steps is None else snap_center(x_new, hw, snap_steps)
    new = Region(
        id=r.id + 1 if new_id is None else new_id,
        box=Box.from_center(center, hw),
        mu=mu1,
        eta=eta1,
        omega=policy.omega,
    )
    # generation-rule postconditions
    if classify(x_new, new) is not Classification.INSIDE_CORE:
        raise DegenerateRegion(
            "trigger state missed the successor core; widen the region or "
            "reduce the band width"
        )
    assert new.box.intersects(r.box), "successor region lost contact"
    return new


def with_id(r: Region, new_id: int) -> Region:
    return replace(r, id=new_id)
