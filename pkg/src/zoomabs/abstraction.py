"""Assembly of the finite symbolic abstraction over a sequence of regions.

States are lattice points of the regions; per-state inputs come from the
reachability menus; a transition integrates the source for one period and
quantizes the endpoint under the youngest region containing it.  The
builder is incremental so the planner can grow the abstraction while it
searches; `build_abstraction` wraps it for the one-shot case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import Box
from .dynamics import SampledSystem, StabilityBound, integrate_batch
from .errors import PrecisionBreach
from .inputabs import InputLattice, build_menu, input_grid, reach_cloud
from .quantization import (LatticePoint, ZoomQuantizer, lattice_count,
                           lattice_points, quantize_rows)
from .regions import Region

_COORD_DECIMALS = 12


def state_key(coords) -> tuple:
    """Dedup key: coordinates rounded to a fixed number of decimals."""
    return tuple(round(float(c), _COORD_DECIMALS) for c in coords)


@dataclass(frozen=True)
class PrecisionBudget:
    """Desired closeness, its decay envelope, and the sampling period."""

    epsilon: float
    beta: StabilityBound
    tau: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("precision must be positive")
        if self.beta(self.epsilon, self.tau) >= self.epsilon:
            raise ValueError(
                "the decay envelope does not contract at the requested "
                "precision and period; no zoom level can satisfy the budget"
            )


def precision_ok(budget: PrecisionBudget, Lambda_max: float, eta_i: float,
                 mu_i: float) -> Tuple[bool, float]:
    """Check the closeness budget at one zoom level; returns (ok, margin).

    The margin is the slack left in
    ``beta(eps, tau) + Lambda*eta + 0.5*Lambda*mu <= eps``.
    """
    lhs = (budget.beta(budget.epsilon, budget.tau)
           + Lambda_max * eta_i + 0.5 * Lambda_max * mu_i)
    margin = budget.epsilon - lhs
    return margin >= 0.0, margin


def precision_ok_geometric(budget: PrecisionBudget, Lambda_max: float,
                           eta0: float, mu0: float, omega_in: float,
                           omega_out: float, p: int, i: int) -> bool:
    """Budget check in the geometric parameterization of the zoom schedule.

    After ``p`` contractions and ``i - p`` expansions the zoom is
    ``omega_in^p * omega_out^(i-p) * mu0``; this evaluates the budget
    directly in those terms.
    """
    if not (0 <= p <= i):
        raise ValueError("need 0 <= p <= i")
    factor = omega_in ** p * omega_out ** (i - p)
    lhs = (budget.beta(budget.epsilon, budget.tau)
           + factor * (Lambda_max * eta0 + Lambda_max * mu0 / 2.0))
    return lhs <= budget.epsilon


@dataclass
class _StateRecord:
    k: tuple
    coords: np.ndarray
    owner: int  # region id


@dataclass
class _MenuRecord:
    inputs: np.ndarray      # (E, m) distinct menu inputs, lex order
    endpoints: np.ndarray   # (E, n) endpoint reached by each input
    succ: np.ndarray        # (E,) successor state index, -1 if dropped
    succ_region: np.ndarray  # (E,) owning region id of the endpoint, -1 if none
    version: int


class AbstractionBuilder:
    """Grows the state set region by region and resolves transitions lazily.

    States in overlapping regions are deduplicated by coordinates; the
    youngest region wins ownership, which also decides the zoom used to
    quantize endpoints landing in an overlap.
    """

    def __init__(self, sys: SampledSystem, qz: ZoomQuantizer,
                 budget: Optional[PrecisionBudget] = None,
                 enforce_budget: bool = True):
        self.sys = sys
        self.qz = qz
        self.budget = budget
        self.enforce_budget = enforce_budget
        self.regions: List[Region] = []
        self._by_id: Dict[int, Region] = {}
        self._records: List[_StateRecord] = []
        self._index: Dict[tuple, int] = {}
        self._menus: Dict[int, _MenuRecord] = {}
        self._input_lattices: Dict[float, np.ndarray] = {}
        self._version = 0
        self._congruent = True
        self._coords_cache: Optional[np.ndarray] = None
        self._coords_cache_len = -1

    # -- state table ---------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self._records)

    def coords(self, idx: int) -> np.ndarray:
        return self._records[idx].coords

    def kvec(self, idx: int) -> tuple:
        return self._records[idx].k

    def owner(self, idx: int) -> Region:
        return self._by_id[self._records[idx].owner]

    def coords_matrix(self) -> np.ndarray:
        """Dense (N, n) view of all state coordinates, cached per growth."""
        if self._coords_cache_len != len(self._records):
            self._coords_cache = (np.array([r.coords for r in self._records])
                                  if self._records
                                  else np.zeros((0, self.qz.ndim)))
            self._coords_cache_len = len(self._records)
        return self._coords_cache

    def check_region_budget(self, mu: float, eta: float) -> bool:
        if self.budget is None:
            return True
        ok, _ = precision_ok(self.budget, self.qz.lambda_max, eta, mu)
        return ok

    def add_region(self, region: Region) -> List[int]:
        """Insert a region, claim its lattice points, and return their indices."""
        if self.enforce_budget and not self.check_region_budget(region.mu,
                                                                region.eta):
            _, margin = precision_ok(self.budget, self.qz.lambda_max,
                                     region.eta, region.mu)
            raise PrecisionBreach(
                f"region {region.id}: budget margin {margin:.6g} is negative"
            )
        if any(r.id == region.id for r in self.regions):
            raise ValueError(f"duplicate region id {region.id}")
        if self.regions and region.mu != self.regions[0].mu:
            self._congruent = False
        self.regions.append(region)
        self._by_id[region.id] = region
        self._version += 1
        indices = []
        for pt in lattice_points(region, self.qz):
            key = state_key(pt.coords)
            if key in self._index:
                idx = self._index[key]
                # younger region takes over the shared state
                self._records[idx].owner = region.id
                self._menus.pop(idx, None)
            else:
                idx = len(self._records)
                self._records.append(_StateRecord(pt.k, pt.coords, region.id))
                self._index[key] = idx
            indices.append(idx)
        return indices

    def state_at(self, x) -> int:
        """Map a concrete state into the abstraction by quantization."""
        x = np.asarray(x, dtype=float)
        owner = self.region_containing(x)
        if owner is None:
            return -1
        q = quantize_rows(self.qz, x[None, :], scale=owner.mu)[0]
        return self._index.get(state_key(q), -1)

    def region_containing(self, x) -> Optional[Region]:
        """Youngest region whose box contains the point."""
        for r in reversed(self.regions):
            if r.box.contains(x):
                return r
        return None

    # -- menus and transitions -------------------------------------------------

    def _lattice_inputs(self, eta: float) -> np.ndarray:
        pts = self._input_lattices.get(eta)
        if pts is None:
            pts = input_grid(self.sys.system.input_box, eta)
            self._input_lattices[eta] = pts
        return pts

    def menu(self, idx: int) -> _MenuRecord:
        """Menu arrays for one state, recomputed when regions changed."""
        rec = self._menus.get(idx)
        if rec is not None:
            if rec.version == self._version:
                return rec
            if self._congruent:
                # congruent regions never change existing coordinates, so only
                # dropped endpoints can gain a successor
                self._refresh_dropped(rec)
                rec.version = self._version
                return rec
            rec = None
        rec = self._compute_menu(idx)
        self._menus[idx] = rec
        return rec

    def _compute_menu(self, idx: int) -> _MenuRecord:
        srec = self._records[idx]
        owner = self._by_id[srec.owner]
        lat = InputLattice(owner.id, owner.eta, self._lattice_inputs(owner.eta))
        src = LatticePoint(owner.id, srec.k, srec.coords)
        cloud = reach_cloud(self.sys, src, lat, owner)
        menu = build_menu(cloud, owner, self.qz)
        inputs = menu.chosen_inputs
        end_by_input = {tuple(u): e for u, e in zip(map(tuple, cloud.inputs),
                                                    cloud.endpoints)}
        endpoints = np.array([end_by_input[tuple(u)] for u in inputs])
        succ, succ_region = self.resolve_endpoints(endpoints)
        return _MenuRecord(inputs, endpoints, succ, succ_region, self._version)

    def _refresh_dropped(self, rec: _MenuRecord) -> None:
        dropped = rec.succ < 0
        if not np.any(dropped):
            return
        succ, succ_region = self.resolve_endpoints(rec.endpoints[dropped])
        rec.succ[dropped] = succ
        rec.succ_region[dropped] = succ_region

    def resolve_endpoints(self, endpoints: np.ndarray):
        """Successor state index and owning region id for each endpoint row."""
        n = endpoints.shape[0]
        succ = np.full(n, -1, dtype=np.int64)
        owner_id = np.full(n, -1, dtype=np.int64)
        if n == 0:
            return succ, owner_id
        unresolved = np.ones(n, dtype=bool)
        for r in reversed(self.regions):
            if not np.any(unresolved):
                break
            mask = unresolved & r.box.contains_rows(endpoints)
            if not np.any(mask):
                continue
            qpts = quantize_rows(self.qz, endpoints[mask], scale=r.mu)
            rows = np.flatnonzero(mask)
            for row, q in zip(rows, qpts):
                sidx = self._index.get(state_key(q), -1)
                succ[row] = sidx
                owner_id[row] = r.id
            unresolved[mask] = False
        return succ, owner_id

    # -- finalization ----------------------------------------------------------

    def freeze(self) -> "AbstractSystem":
        """Materialize every menu and produce the immutable system."""
        if not self.regions:
            raise ValueError("no regions added")
        menus = [self.menu(i) for i in range(self.n_states)]
        all_inputs = sorted({tuple(u) for rec in menus for u in rec.inputs})
        input_index = {u: gi for gi, u in enumerate(all_inputs)}
        transitions: Dict[Tuple[int, int], int] = {}
        enabled: List[tuple] = []
        for si, rec in enumerate(menus):
            en = []
            for u, sj in zip(rec.inputs, rec.succ):
                if sj < 0:
                    continue
                gi = input_index[tuple(u)]
                transitions[(si, gi)] = int(sj)
                en.append(gi)
            enabled.append(tuple(sorted(en)))
        coords = (np.array([r.coords for r in self._records])
                  if self._records else np.zeros((0, self.qz.ndim)))
        states = tuple(
            LatticePoint(rec.owner, rec.k, rec.coords) for rec in self._records
        )
        initial = tuple(
            i for i in range(self.n_states)
            if self.regions[0].box.contains(self._records[i].coords, tol=1e-12)
        )
        return AbstractSystem(
            regions=tuple(self.regions),
            states=states,
            coords=coords,
            inputs=np.array(all_inputs) if all_inputs else np.zeros((0, 0)),
            enabled=tuple(enabled),
            transitions=transitions,
            initial=initial,
            tau=self.sys.tau,
            epsilon=self.budget.epsilon if self.budget else float("nan"),
            qz=self.qz,
        )


@dataclass(frozen=True)
class AbstractSystem:
    """Finite, deterministic transition system produced by the builder."""

    regions: tuple
    states: tuple
    coords: np.ndarray
    inputs: np.ndarray
    enabled: tuple
    transitions: dict
    initial: tuple
    tau: float
    epsilon: float
    qz: ZoomQuantizer

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[0]

    def successor(self, si: int, gi: int) -> Optional[int]:
        return self.transitions.get((si, gi))

    def enabled_inputs(self, si: int) -> tuple:
        return self.enabled[si]

    # -- serialization ---------------------------------------------------------

    def to_text(self) -> str:
        lines = ["zoomabs-abstraction 1"]
        n = self.coords.shape[1] if self.n_states else self.qz.ndim
        m = self.inputs.shape[1] if self.n_inputs else 0
        lines.append(f"n {n}")
        lines.append(f"m {m}")
        lines.append(f"tau {self.tau!r}")
        lines.append(f"epsilon {self.epsilon!r}")
        lines.append(f"M {self.qz.range_index}")
        lines.append("lambda " + " ".join(repr(v) for v in self.qz.lattice))
        lines.append(f"dead_zone {self.qz.dead_zone!r}")
        lines.append(f"regions {len(self.regions)}")
        for r in self.regions:
            bounds = " ".join(
                f"{lo!r} {hi!r}" for lo, hi in zip(r.box.lo, r.box.hi)
            )
            lines.append(
                f"region {r.id} mu {r.mu!r} eta {r.eta!r} omega {r.omega!r} "
                f"box {bounds}"
            )
        lines.append(f"states {self.n_states}")
        for i, st in enumerate(self.states):
            kstr = ",".join(str(v) for v in st.k)
            lines.append(f"state {i} {st.region_id}:{kstr}")
        lines.append(f"inputs {self.n_inputs}")
        for gi in range(self.n_inputs):
            lines.append(
                f"input {gi} " + " ".join(repr(v) for v in self.inputs[gi])
            )
        items = sorted(self.transitions.items())
        lines.append(f"transitions {len(items)}")
        for (si, gi), sj in items:
            src = self.states[si]
            dst = self.states[sj]
            kasrc = ",".join(str(v) for v in src.k)
            kadst = ",".join(str(v) for v in dst.k)
            lines.append(
                f"t {src.region_id}:{kasrc} {gi} {dst.region_id}:{kadst}"
            )
        return "\n".join(lines) + "\n"


def parse_abstraction(text: str) -> AbstractSystem:
    """Inverse of `AbstractSystem.to_text` (bitwise round-trip)."""
    lines = text.splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    header = take()
    if not header.startswith("zoomabs-abstraction"):
        raise ValueError("not an abstraction file")
    n = int(take().split()[1])
    m = int(take().split()[1])
    tau = float(take().split()[1])
    epsilon = float(take().split()[1])
    M = int(take().split()[1])
    lam = np.array([float(v) for v in take().split()[1:]])
    dead_zone = float(take().split()[1])
    qz = ZoomQuantizer(range_index=M, lattice=lam, dead_zone=dead_zone)
    n_regions = int(take().split()[1])
    regions = []
    for _ in range(n_regions):
        parts = take().split()
        rid = int(parts[1])
        mu = float(parts[3])
        eta = float(parts[5])
        omega = float(parts[7])
        nums = [float(v) for v in parts[9:]]
        lo = np.array(nums[0::2])
        hi = np.array(nums[1::2])
        regions.append(Region(rid, Box(lo, hi), mu, eta, omega))
    by_id = {r.id: r for r in regions}
    n_states = int(take().split()[1])
    states = []
    key_to_idx = {}
    for _ in range(n_states):
        parts = take().split()
        idx = int(parts[1])
        rid_s, kstr = parts[2].split(":")
        rid = int(rid_s)
        k = tuple(int(v) for v in kstr.split(","))
        r = by_id[rid]
        coords = np.array([k[ax] * (qz.lattice[ax] * r.mu) for ax in range(n)])
        states.append(LatticePoint(rid, k, coords))
        key_to_idx[(rid, k)] = idx
    n_inputs = int(take().split()[1])
    inputs = np.zeros((n_inputs, m))
    for _ in range(n_inputs):
        parts = take().split()
        inputs[int(parts[1])] = [float(v) for v in parts[2:]]
    n_trans = int(take().split()[1])
    transitions = {}
    for _ in range(n_trans):
        parts = take().split()
        rid_s, kstr = parts[1].split(":")
        si = key_to_idx[(int(rid_s), tuple(int(v) for v in kstr.split(",")))]
        gi = int(parts[2])
        rid_d, kstr_d = parts[3].split(":")
        sj = key_to_idx[(int(rid_d), tuple(int(v) for v in kstr_d.split(",")))]
        transitions[(si, gi)] = sj
    enabled = [[] for _ in range(n_states)]
    for (si, gi) in transitions:
        enabled[si].append(gi)
    coords = (np.array([s.coords for s in states])
              if states else np.zeros((0, n)))
    initial = tuple(
        i for i in range(n_states)
        if regions[0].box.contains(states[i].coords, tol=1e-12)
    ) if regions else ()
    return AbstractSystem(
        regions=tuple(regions),
        states=tuple(states),
        coords=coords,
        inputs=inputs,
        enabled=tuple(tuple(sorted(e)) for e in enabled),
        transitions=transitions,
        initial=initial,
        tau=tau,
        epsilon=epsilon,
        qz=qz,
    )


def build_abstraction(sys: SampledSystem, regions: Sequence[Region],
                      qz: ZoomQuantizer,
                      budget: PrecisionBudget) -> AbstractSystem:
    """One-shot construction over a fixed region list."""
    builder = AbstractionBuilder(sys, qz, budget)
    for r in regions:
        builder.add_region(r)
    return builder.freeze()


@dataclass
class ComplexityReport:
    """State-count accounting against a uniform-grid comparator."""

    per_region: list  # (region id, state count, theta estimate)
    total_states: int
    uniform_baseline: int

    @property
    def ratio(self) -> float:
        if self.uniform_baseline == 0:
            return math.inf
        return self.total_states / self.uniform_baseline


def complexity_report(abs_sys: AbstractSystem, full_box: Box) -> ComplexityReport:
    """Per-region counts and the single-grid baseline over the full box.

    The baseline uses the finest zoom present, mirroring what a static
    uniform quantization of the whole workspace would need.
    """
    qz = abs_sys.qz
    min_mu = min(r.mu for r in abs_sys.regions)
    baseline = lattice_count(full_box, qz, min_mu)
    full_vol = full_box.volume()
    per_region = []
    total = 0
    for r in abs_sys.regions:
        count = lattice_count(r.box, qz, r.mu)
        theta = (r.box.volume() / full_vol) * baseline if full_vol > 0 else math.inf
        per_region.append((r.id, count, theta))
        total += count
    return ComplexityReport(per_region, total, baseline)
