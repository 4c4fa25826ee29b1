"""Per-state input approximation via reachable endpoints and lattice targets.

For an abstract state q the admissible-input set is approximated in three
steps: grid the input box at the region's input pitch, integrate every grid
input from q, then keep the state-lattice nodes (at the input pitch) that
some endpoint lands near.  Each kept node is mapped back to the input whose
endpoint is nearest, which yields the finite input menu for q.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import Box
from .dynamics import SampledSystem, integrate_batch
from .errors import EmptyMenu, RangeExceeded
from .quantization import (LatticePoint, ZoomQuantizer, axis_index_range)
from .regions import Region


@dataclass(frozen=True)
class InputLattice:
    """Finite input grid for one region: pitch ``eta`` per input axis."""

    region_id: int
    spacing: float
    points: np.ndarray  # (P, m), lexicographically ordered

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            pts = pts.reshape(len(pts), -1)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class ReachCloud:
    """Sampled one-step reachable set from a single abstract state."""

    source: LatticePoint
    tau: float
    inputs: np.ndarray     # (E, m)
    endpoints: np.ndarray  # (E, n)
    escaped: np.ndarray    # (E,) bool, endpoint left the region box

    def __post_init__(self):
        for name in ("inputs", "endpoints", "escaped"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def samples(self):
        """Iterate (input, endpoint, escaped) triples."""
        return list(zip(self.inputs, self.endpoints, self.escaped))


@dataclass(frozen=True)
class InputMenu:
    """Reachable lattice targets and the input chosen for each of them."""

    source: LatticePoint
    entries: tuple  # ordered ((target LatticePoint, input vector), ...)
    tolerance: float

    def __len__(self):
        return len(self.entries)

    @property
    def targets(self):
        return [y for y, _ in self.entries]

    @property
    def chosen_inputs(self) -> np.ndarray:
        """Distinct menu inputs in lexicographic order."""
        if not self.entries:
            return np.zeros((0, 0))
        uniq = sorted({tuple(u) for _, u in self.entries})
        return np.array(uniq)


def input_grid(U: Box, eta: float) -> np.ndarray:
    """Zero-anchored grid of pitch ``eta`` per axis, clipped to the input box."""
    if eta <= 0:
        raise ValueError("input pitch must be positive")
    axes = []
    for ax in range(U.ndim):
        kmin, kmax = axis_index_range(U.lo[ax], U.hi[ax], eta)
        if kmax < kmin:
            axes.append([])
        else:
            axes.append([k * eta for k in range(kmin, kmax + 1)])
    pts = [list(combo) for combo in itertools.product(*axes)]
    return np.array(pts).reshape(len(pts), U.ndim)


def input_lattice(region: Region, U: Box, spacing: Optional[float] = None) -> InputLattice:
    """Input grid for one region, pitched at its input parameter by default."""
    eta = region.eta if spacing is None else spacing
    return InputLattice(region.id, eta, input_grid(U, eta))


def reach_cloud(sys: SampledSystem, q: LatticePoint, lat: InputLattice,
                region: Region) -> ReachCloud:
    """Integrate every lattice input from q and flag escaping endpoints."""
    if not region.box.contains(q.coords, tol=1e-9):
        raise ValueError("source state lies outside the region box")
    if len(lat) == 0:
        return ReachCloud(q, sys.tau,
                          np.zeros((0, sys.system.input_dim)),
                          np.zeros((0, sys.system.state_dim)),
                          np.zeros(0, dtype=bool))
    endpoints = integrate_batch(sys, q.coords, lat.points)
    escaped = ~region.box.contains_rows(endpoints, tol=1e-9)
    return ReachCloud(q, sys.tau, np.array(lat.points), endpoints, escaped)


def build_menu(cloud: ReachCloud, region: Region, qz: ZoomQuantizer) -> InputMenu:
    """Pick lattice targets near retained endpoints and an input for each.

    A node of the region's input-pitch state lattice enters the target set
    when some in-region endpoint is within half a cell of it; the chosen
    input minimizes the endpoint distance, ties broken by lexicographically
    smallest input (argmin over inputs already in lexicographic order).
    """
    if len(cloud) == 0:
        raise EmptyMenu("reach cloud is empty")
    keep = ~cloud.escaped
    endpoints = cloud.endpoints[keep]
    inputs = cloud.inputs[keep]
    eta = region.eta
    tol = qz.lambda_max * eta / 2.0
    if endpoints.shape[0] == 0:
        raise EmptyMenu("every endpoint escaped the region")

    steps = qz.lattice * eta
    m = qz.range_index
    ndim = endpoints.shape[1]
    axis_bounds = []
    for ax in range(ndim):
        kmin, kmax = axis_index_range(region.box.lo[ax], region.box.hi[ax],
                                      steps[ax])
        if kmin < -m or kmax > m:
            raise RangeExceeded(
                f"axis {ax} input-pitch lattice exceeds quantizer range"
            )
        axis_bounds.append((kmin, kmax))

    # collect candidate nodes from a small index window around each endpoint
    candidates = set()
    for z in endpoints:
        ranges = []
        for ax in range(ndim):
            kmin, kmax = axis_bounds[ax]
            lo = max(kmin, math.ceil((z[ax] - tol) / steps[ax] - 1e-9))
            hi = min(kmax, math.floor((z[ax] + tol) / steps[ax] + 1e-9))
            if hi < lo:
                ranges = None
                break
            ranges.append(range(lo, hi + 1))
        if ranges is None:
            continue
        candidates.update(itertools.product(*ranges))
    if not candidates:
        raise EmptyMenu("no lattice node within half a cell of the reach set")

    entries = []
    for k in sorted(candidates):
        y = np.array([eta * (k[ax] * qz.lattice[ax]) for ax in range(ndim)])
        dists = np.max(np.abs(endpoints - y), axis=1)
        j = int(np.argmin(dists))
        if dists[j] <= tol + 1e-12:
            entries.append((LatticePoint(region.id, k, y), inputs[j].copy()))
    if not entries:
        raise EmptyMenu("no lattice node within half a cell of the reach set")

    menu = InputMenu(cloud.source, tuple(entries), tol)
    _assert_menu_contract(menu, endpoints, inputs, tol)
    return menu


def _assert_menu_contract(menu: InputMenu, endpoints, inputs, tol) -> None:
    key = {tuple(u): e for u, e in zip(map(tuple, inputs), endpoints)}
    for y, u in menu.entries:
        e = key[tuple(u)]
        assert float(np.max(np.abs(y.coords - e))) <= tol + 1e-12, \
            "menu entry violates the half-cell contract"


@dataclass
class CoverReport:
    max_gap: float
    threshold: float
    violation: bool
    n_dense: int


def verify_input_cover(sys: SampledSystem, q: LatticePoint, region: Region,
                       menu: InputMenu, dense_factor: int) -> CoverReport:
    """Probe the input box on a finer grid and measure endpoint coverage.

    ``max_gap`` is the worst distance from a densely-sampled endpoint to
    the endpoints the menu can produce; the approximation contract wants it
    at most one full cell of the input-pitch lattice.
    """
    if dense_factor < 2:
        raise ValueError("dense factor must be at least 2")
    fine = input_lattice(region, sys.system.input_box,
                         spacing=region.eta / dense_factor)
    dense_end = integrate_batch(sys, q.coords, fine.points)
    menu_inputs = menu.chosen_inputs
    if menu_inputs.shape[0] == 0:
        return CoverReport(math.inf, 0.0, True, len(fine))
    menu_end = integrate_batch(sys, q.coords, menu_inputs)
    gaps = np.abs(dense_end[:, None, :] - menu_end[None, :, :]).max(axis=2).min(axis=1)
    max_gap = float(gaps.max())
    threshold = menu.tolerance * 2.0  # one full cell of the input-pitch lattice
    return CoverReport(max_gap, threshold, max_gap > threshold + 1e-12, len(fine))
