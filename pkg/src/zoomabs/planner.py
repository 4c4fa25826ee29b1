"""Patrol planning on a dynamically grown abstraction.

The search walks the abstraction graph, but every node also carries the
exact concrete state reached by replaying its input history from the
scenario's initial state.  Pushing a successor requires the concrete-vs-
abstract drift to stay inside a cap strictly below the precision budget, so
any plan the search returns replays open-loop inside the closeness tube by
construction.  Whenever the best frontier node's concrete endpoint lands in
the outer band of its source region, a new region is generated there and
the abstraction is extended on the fly.

The return leg runs in two phases: a coarse search back to the start state,
then a local fine search that shrinks the remaining drift (heading drift in
particular) so that repeated patrol cycles stay coherent.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .abstraction import AbstractionBuilder, PrecisionBudget, precision_ok
from .boxes import Box
from .dynamics import SampledSystem, integrate_batch
from .errors import (EmptyMenu, NoPath, PrecisionBreach, RelationBreach,
                     ScenarioError)
from .quantization import ZoomQuantizer
from .regions import (Classification, Region, RegionPolicy, classify,
                      next_region, snap_center, update_events)


@dataclass(frozen=True)
class Scenario:
    """A patrol problem: workspace, obstacles, two targets, and budgets."""

    state_box: Box
    initial_state: np.ndarray
    obstacles: tuple            # n-dim boxes (position axes constrained)
    targets: tuple              # n-dim boxes, exactly two for patrolling
    budget: PrecisionBudget
    policy: RegionPolicy
    seed: int = 0

    def __post_init__(self):
        x0 = np.asarray(self.initial_state, dtype=float)
        x0.flags.writeable = False
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.state_box.contains(x0):
            raise ScenarioError("initial state outside the workspace")
        if any(o.contains(x0) for o in self.obstacles):
            raise ScenarioError("initial state lies inside an obstacle")
        for t in self.targets:
            if any(t.intersects(o) for o in self.obstacles):
                raise ScenarioError("a target region intersects an obstacle")


@dataclass(frozen=True)
class StateRef:
    """A plan waypoint: abstract state identity plus its coordinates."""

    region_id: int
    k: tuple
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))


@dataclass
class PlanLeg:
    states: List[StateRef]
    inputs: List[np.ndarray]
    concrete: np.ndarray  # (len(states), n) planned concrete trace

    def __len__(self):
        return len(self.inputs)


@dataclass
class PatrolPlan:
    leg_forward: PlanLeg
    leg_back: PlanLeg
    regions_used: tuple
    epsilon: float
    seed: int
    stats: dict

    def reference_states(self) -> List[StateRef]:
        return self.leg_forward.states + self.leg_back.states[1:]

    def input_tape(self) -> List[np.ndarray]:
        return self.leg_forward.inputs + self.leg_back.inputs

    def to_text(self) -> str:
        lines = ["zoomabs-plan 1", f"seed {self.seed}",
                 f"epsilon {self.epsilon!r}",
                 f"regions {len(self.regions_used)}"]
        for r in self.regions_used:
            bounds = " ".join(f"{lo!r} {hi!r}"
                              for lo, hi in zip(r.box.lo, r.box.hi))
            lines.append(f"region {r.id} mu {r.mu!r} eta {r.eta!r} "
                         f"omega {r.omega!r} box {bounds}")
        for name, leg in (("forward", self.leg_forward), ("back", self.leg_back)):
            lines.append(f"leg {name} states {len(leg.states)}")
            for ref, xc in zip(leg.states, leg.concrete):
                kstr = ",".join(str(v) for v in ref.k)
                cstr = " ".join(repr(v) for v in xc)
                lines.append(f"s {ref.region_id}:{kstr} {cstr}")
            lines.append(f"leg {name} inputs {len(leg.inputs)}")
            for u in leg.inputs:
                lines.append("u " + " ".join(repr(v) for v in u))
        lines.append(f"stats {len(self.stats)}")
        for key in sorted(self.stats):
            lines.append(f"stat {key} {self.stats[key]}")
        return "\n".join(lines) + "\n"


@dataclass
class PlannerSettings:
    """Tuning constants for the drift-tracking search.

    Derived from the precision budget when left at None.  ``drift_cap``
    bounds per-axis concrete-vs-abstract drift along any plan (strictly
    below the precision), ``bucket_res`` controls how finely drift variants
    are kept apart, ``return_tol`` is the per-axis drift tolerance for
    closing the patrol loop (the last axis is held much tighter: heading
    offsets leak into position at every replayed step), and
    ``goal_erosion`` shrinks targets so replay offsets cannot push visits
    outside them.
    """

    weight: float = 3.0
    drift_cap: Optional[float] = None
    bucket_res: Optional[np.ndarray] = None
    return_tol: Optional[np.ndarray] = None
    goal_erosion: Optional[float] = None
    max_regions: int = 600
    max_expansions: int = 200000

    def resolved(self, epsilon: float, ndim: int) -> "PlannerSettings":
        cap = self.drift_cap if self.drift_cap is not None else 0.4 * epsilon
        if self.bucket_res is not None:
            res = np.asarray(self.bucket_res, dtype=float)
        else:
            res = np.full(ndim, cap / 8.0)
        if self.return_tol is not None:
            rtol = np.asarray(self.return_tol, dtype=float)
        else:
            rtol = np.full(ndim, cap / 4.0)
            if ndim >= 3:
                rtol[-1] = cap / 100.0
        erosion = (self.goal_erosion if self.goal_erosion is not None
                   else 0.75 * epsilon)
        return PlannerSettings(self.weight, cap, res, rtol, erosion,
                               self.max_regions, self.max_expansions)


@dataclass
class _Node:
    state: int
    x: np.ndarray
    g: int
    parent: Optional[int]
    input_used: Optional[np.ndarray]


class _Engine:
    """Search engine owning the growing abstraction and its safety caches."""

    def __init__(self, scn: Scenario, sys: SampledSystem, qz: ZoomQuantizer,
                 settings: PlannerSettings):
        self.scn = scn
        self.sys = sys
        self.qz = qz
        self.settings = settings
        self.builder = AbstractionBuilder(sys, qz, scn.budget)
        self._admissible: dict = {}
        self._selection: dict = {}
        self.expansions = 0
        self.band_fires = 0
        self._reg_arrays_version = -1
        self._reg_lo = None
        self._reg_hi = None
        self._reg_ids: list = []
        self.max_step = sys.tau * float(
            np.max(np.abs(np.concatenate([sys.system.input_box.lo,
                                          sys.system.input_box.hi]))))

    # -- safety and geometry helpers -------------------------------------------

    def admissible_state(self, idx: int) -> bool:
        owner = self.builder.owner(idx)
        key = (idx, owner.id)
        val = self._admissible.get(key)
        if val is None:
            coords = self.builder.coords(idx)
            if not self.scn.state_box.contains(coords, tol=1e-9):
                val = False
            else:
                cell = Box.from_center(coords, self.qz.steps(owner.mu) / 2.0)
                val = not any(cell.intersects(o) for o in self.scn.obstacles)
            self._admissible[key] = val
        return val

    def concrete_safe_rows(self, X: np.ndarray) -> np.ndarray:
        ok = np.ones(X.shape[0], dtype=bool)
        for o in self.scn.obstacles:
            ok &= ~o.contains_rows(X)
        return ok

    def step_rates(self, start_idx: int) -> np.ndarray:
        """Per-axis largest one-step move the abstraction offers at the start.

        Used to scale the search heuristic into step counts; measured from
        the start state's menu rather than assumed from the model.
        """
        menu = self.builder.menu(start_idx)
        if len(menu.inputs) == 0:
            return np.full(self.qz.ndim, self.max_step)
        moves = np.abs(menu.endpoints - self.builder.coords(start_idx))
        rates = moves.max(axis=0)
        return np.maximum(rates, 1e-6)

    # -- region generation --------------------------------------------------------

    def _region_arrays(self):
        if self._reg_arrays_version != len(self.builder.regions):
            self._reg_lo = np.array([r.box.lo for r in self.builder.regions])
            self._reg_hi = np.array([r.box.hi for r in self.builder.regions])
            self._reg_ids = [r.id for r in self.builder.regions]
            self._reg_arrays_version = len(self.builder.regions)
        return self._reg_lo, self._reg_hi, self._reg_ids

    def maybe_fire_region(self, node: _Node, arena: List[_Node]) -> None:
        if node.parent is None:
            return
        if len(self.builder.regions) >= self.settings.max_regions:
            return
        src_region = self.builder.owner(arena[node.parent].state)
        if classify(node.x, src_region) is not Classification.BOUNDARY_BAND:
            return
        lo, hi, ids = self._region_arrays()
        omegas = np.array([r.omega for r in self.builder.regions])
        in_core = np.all((node.x >= lo + omegas[:, None])
                         & (node.x <= hi - omegas[:, None]), axis=1)
        for pos in np.flatnonzero(in_core):
            if ids[pos] != src_region.id:
                return  # already covered by another region's core
        e = update_events(src_region, self.scn.obstacles, self.scn.targets, a=1)
        factor = (self.scn.policy.omega_in if (e.b or e.c)
                  else self.scn.policy.omega_out)
        mu1 = factor * src_region.mu
        new = next_region(
            node.x, src_region, e, self.scn.policy,
            snap_steps=self.qz.steps(mu1),
            precision_check=self.builder.check_region_budget,
            new_id=len(self.builder.regions),
        )
        self.builder.add_region(new)
        self.band_fires += 1

    # -- successor preparation ------------------------------------------------------

    def _prepared(self, state: int, full_menu: bool):
        """Admissible successor arrays for one state, optionally subsetted.

        The subset keeps, per (successor, abstract-drift bucket) signature,
        the lexicographically first input: variants the drift buckets cannot
        distinguish anyway are redundant for the coarse searches, while the
        fine phase uses the full menu.
        """
        version = len(self.builder.regions)
        key = (state, full_menu, version)
        prep = self._selection.get(key)
        if prep is not None:
            return prep
        try:
            menu = self.builder.menu(state)
            E = menu.inputs.shape[0]
        except EmptyMenu:
            menu = None
            E = 0
        if E == 0:
            prep = (np.zeros((0, self.sys.system.input_dim)),
                    np.zeros(0, dtype=np.int64), np.zeros((0, self.qz.ndim)))
            self._selection[key] = prep
            return prep
        admissible = np.array([
            menu.succ[j] >= 0 and self.admissible_state(int(menu.succ[j]))
            for j in range(E)
        ])
        idx = np.flatnonzero(admissible)
        if not full_menu and idx.size:
            res = self.settings.bucket_res
            coords = self.builder.coords_matrix()
            drift = menu.endpoints[idx] - coords[menu.succ[idx]]
            sig_seen = set()
            keep = []
            for pos, j in enumerate(idx):
                sig = (int(menu.succ[j]),
                       tuple(np.floor(drift[pos] / res).astype(int)))
                if sig not in sig_seen:
                    sig_seen.add(sig)
                    keep.append(j)
            idx = np.array(keep, dtype=np.int64)
        succ_coords = (self.builder.coords_matrix()[menu.succ[idx]]
                       if idx.size else np.zeros((0, self.qz.ndim)))
        prep = (menu.inputs[idx], menu.succ[idx].astype(np.int64), succ_coords)
        self._selection[key] = prep
        return prep

    # -- the weighted A* itself -------------------------------------------------------

    def search(self, start_state: int, start_x: np.ndarray,
               goal_fn: Callable[[_Node], bool],
               h_fn: Callable[[np.ndarray], float],
               full_menu: bool = False,
               max_expansions: Optional[int] = None,
               stay_within: Optional[Box] = None) -> List[_Node]:
        settings = self.settings
        budget = max_expansions or settings.max_expansions
        arena: List[_Node] = [_Node(start_state, np.array(start_x, dtype=float),
                                    0, None, None)]
        heap: List[tuple] = []
        counter = 0
        heapq.heappush(heap, (settings.weight * h_fn(arena[0].x), 0, 0))
        closed: dict = {}
        expansions = 0
        cap = settings.drift_cap
        res = settings.bucket_res

        best_f: dict = {}
        while heap:
            _, _, node_id = heapq.heappop(heap)
            node = arena[node_id]
            # goal test precedes dedup so goals finer than the bucket
            # resolution stay reachable through sibling drift variants
            if goal_fn(node):
                return self._reconstruct(arena, node_id)
            drift = node.x - self.builder.coords(node.state)
            key = (node.state, tuple(np.floor(drift / res).astype(int)))
            if key in closed:
                continue
            closed[key] = node_id
            self.maybe_fire_region(node, arena)
            expansions += 1
            self.expansions += 1
            if expansions > budget:
                raise NoPath("expansion budget exhausted")
            inputs, succs, succ_coords = self._prepared(node.state, full_menu)
            if succs.size == 0:
                continue
            conc = integrate_batch(self.sys, node.x, inputs)
            D = conc - succ_coords
            ok = np.max(np.abs(D), axis=1) <= cap
            ok &= self.concrete_safe_rows(conc)
            if stay_within is not None:
                ok &= stay_within.contains_rows(conc)
            buckets = np.floor(D / res).astype(int)
            g2 = node.g + 1
            for j in np.flatnonzero(ok):
                key2 = (int(succs[j]), tuple(buckets[j]))
                if key2 in closed:
                    continue
                f2 = g2 + settings.weight * h_fn(conc[j])
                if not full_menu:
                    # dominance pruning: keep only the best-priority variant
                    # per bucket (fine goals use the full-menu mode instead)
                    prev = best_f.get(key2)
                    if prev is not None and f2 >= prev:
                        continue
                    best_f[key2] = f2
                counter += 1
                arena.append(_Node(int(succs[j]), conc[j], g2, node_id,
                                   inputs[j]))
                heapq.heappush(heap, (f2, counter, len(arena) - 1))
        raise NoPath("frontier exhausted without reaching the goal")

    def _reconstruct(self, arena: List[_Node], node_id: int) -> List[_Node]:
        chain = []
        cur: Optional[int] = node_id
        while cur is not None:
            chain.append(arena[cur])
            cur = arena[cur].parent
        chain.reverse()
        return chain

    def leg_from_chain(self, chain: List[_Node]) -> PlanLeg:
        states = []
        for node in chain:
            owner = self.builder.owner(node.state)
            states.append(StateRef(owner.id, self.builder.kvec(node.state),
                                   self.builder.coords(node.state)))
        inputs = [node.input_used for node in chain[1:]]
        concrete = np.array([node.x for node in chain])
        return PlanLeg(states, inputs, concrete)


class _CostToGo:
    """Obstacle-aware distance field on the position plane.

    An 8-connected breadth-first sweep from the goal cells over a coarse
    grid; obstacles (inflated by the abstract cell halfwidth) are opaque.
    Without this the weighted search refuses detours that move away from
    the goal: the weight multiplies the apparent cost of any climb around
    an obstacle.
    """

    def __init__(self, scn: Scenario, pitch: float, margin: float):
        self.pitch = pitch
        self.lo = scn.state_box.lo[:2]
        hi = scn.state_box.hi[:2]
        self.shape = (int(math.ceil((hi[0] - self.lo[0]) / pitch)) + 1,
                      int(math.ceil((hi[1] - self.lo[1]) / pitch)) + 1)
        xs = self.lo[0] + pitch * np.arange(self.shape[0])
        ys = self.lo[1] + pitch * np.arange(self.shape[1])
        cx, cy = np.meshgrid(xs, ys, indexing="ij")
        blocked = np.zeros(self.shape, dtype=bool)
        for o in scn.obstacles:
            blocked |= ((cx >= o.lo[0] - margin) & (cx <= o.hi[0] + margin)
                        & (cy >= o.lo[1] - margin) & (cy <= o.hi[1] + margin))
        self.blocked = blocked
        self.dist = np.full(self.shape, np.inf)
        self.tangent = np.full(self.shape, np.nan)

    def _cell(self, x: np.ndarray) -> tuple:
        i = int(round((x[0] - self.lo[0]) / self.pitch))
        j = int(round((x[1] - self.lo[1]) / self.pitch))
        return (min(max(i, 0), self.shape[0] - 1),
                min(max(j, 0), self.shape[1] - 1))

    def seed(self, predicate) -> "_CostToGo":
        from collections import deque

        queue = deque()
        for i in range(self.shape[0]):
            for j in range(self.shape[1]):
                x = self.lo[0] + i * self.pitch
                y = self.lo[1] + j * self.pitch
                if not self.blocked[i, j] and predicate(x, y):
                    self.dist[i, j] = 0.0
                    queue.append((i, j))
        while queue:
            i, j = queue.popleft()
            d = self.dist[i, j] + self.pitch
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    a, b = i + di, j + dj
                    if (0 <= a < self.shape[0] and 0 <= b < self.shape[1]
                            and not self.blocked[a, b]
                            and d < self.dist[a, b]):
                        self.dist[a, b] = d
                        # direction of travel toward the goal from (a, b)
                        self.tangent[a, b] = math.atan2(-dj, -di)
                        queue.append((a, b))
        return self

    def lookup(self, x: np.ndarray) -> tuple:
        cell = self._cell(x)
        d = self.dist[cell]
        if not math.isfinite(d):
            return 1e6, float("nan")
        return d, self.tangent[cell]

    def __call__(self, x: np.ndarray) -> float:
        return self.lookup(x)[0]


def _alignment_debt(theta: float, tangent: float) -> float:
    """Linear turn distance to face along (or against) a travel direction.

    Heading is unwrapped, so the debt is measured against tangent + k*pi
    for nearby k: the vehicle may drive the corridor forward or in reverse,
    whichever alignment is cheaper.
    """
    if math.isnan(tangent):
        return 0.0
    best = math.inf
    for k in (-2, -1, 0, 1, 2):
        best = min(best, abs(theta - (tangent + k * math.pi)))
    return best


def _box_heuristic(scn: Scenario, goal: Box, rates: np.ndarray,
                   cell_margin: float) -> Callable[[np.ndarray], float]:
    """Obstacle-aware position cost-to-go plus corridor-alignment debt.

    The alignment term widens the outbound exploration around the corridor
    (the quantized heading cells make it oscillate slightly), and the extra
    regions fired along the way are precisely the coverage the return leg
    needs for its reverse maneuvers.  Dropping the term makes the outbound
    search leaner but starves the way back.
    """
    rate_xy = float(max(rates[0], rates[1]))
    rate_turn = float(rates[2]) if rates.size >= 3 else rate_xy
    ctg = _CostToGo(scn, pitch=0.25, margin=cell_margin).seed(
        lambda x, y: goal.lo[0] <= x <= goal.hi[0]
        and goal.lo[1] <= y <= goal.hi[1])
    has_heading = scn.state_box.ndim >= 3

    def h(x: np.ndarray) -> float:
        d, tangent = ctg.lookup(x)
        steps = d / rate_xy
        if has_heading:
            fade = min(1.0, d)
            steps += fade * _alignment_debt(x[2], tangent) / rate_turn
        return steps

    return h


def _point_heuristic(scn: Scenario, target: np.ndarray, rates: np.ndarray,
                     cell_margin: float) -> Callable[[np.ndarray], float]:
    """Position cost-to-go toward a point plus heading-alignment debt.

    Far from the target the heading term rewards facing along (or against)
    the corridor, which stops return legs from driving into heading
    dead-ends against the workspace bound; close in it blends toward the
    target's own heading.
    """
    rate_xy = float(max(rates[0], rates[1]))
    rate_turn = float(rates[2]) if rates.size >= 3 else rate_xy
    ctg = _CostToGo(scn, pitch=0.25, margin=cell_margin).seed(
        lambda x, y: max(abs(x - target[0]), abs(y - target[1])) <= 0.25)
    has_heading = target.size >= 3

    def h(x: np.ndarray) -> float:
        d, tangent = ctg.lookup(x)
        steps = d / rate_xy
        if has_heading:
            blend = min(1.0, d)
            debt = (blend * _alignment_debt(x[2], tangent)
                    + (1.0 - blend) * abs(x[2] - target[2]))
            steps += debt / rate_turn
        for ax in range(3, target.size):
            steps += abs(x[ax] - target[ax]) / rates[ax]
        return steps

    return h


def initial_region_for(scn: Scenario, qz: ZoomQuantizer) -> Region:
    """The starting region: sized by the policy, lattice-aligned, containing x0."""
    policy = scn.policy
    hw = policy.base_halfwidths * policy.mu0
    center = snap_center(scn.initial_state, hw, qz.steps(policy.mu0))
    return policy.initial_region(center, region_id=0)


def plan(scn: Scenario, sys: SampledSystem, qz: ZoomQuantizer,
         settings: Optional[PlannerSettings] = None,
         strategy: str = "search") -> PatrolPlan:
    """Plan one patrol round trip between the scenario's two targets.

    Builds the initial region around the initial state, then grows the
    abstraction while searching: forward to the second target, back to the
    exact start state within a tight drift tolerance so repeated cycles of
    the returned plan stay coherent.  Deterministic for a fixed scenario,
    seed, and settings.
    """
    if len(scn.targets) != 2:
        raise ScenarioError("patrolling needs exactly two target regions")
    ok, margin = precision_ok(scn.budget, qz.lambda_max, scn.policy.eta0,
                              scn.policy.mu0)
    if not ok:
        raise PrecisionBreach(
            f"initial zoom violates the budget (margin {margin:.6g})"
        )
    settings = (settings or PlannerSettings()).resolved(
        scn.budget.epsilon, scn.state_box.ndim)
    engine = _Engine(scn, sys, qz, settings)
    s0 = initial_region_for(scn, qz)
    engine.builder.add_region(s0)
    start_idx = engine.builder.state_at(scn.initial_state)
    if start_idx < 0:
        raise ScenarioError("initial state did not map into the first region")
    x0 = np.asarray(scn.initial_state, dtype=float)

    if strategy == "random_tree":
        return _plan_random_tree(scn, sys, qz, settings, engine, start_idx, x0)
    if strategy != "search":
        raise ValueError(f"unknown planning strategy {strategy!r}")

    rates = engine.step_rates(start_idx)
    cell_margin = float(qz.steps(scn.policy.mu0).max() / 2.0)
    goal_fwd_box = scn.targets[1].erode(settings.goal_erosion)
    h_fwd = _box_heuristic(scn, goal_fwd_box, rates, cell_margin)

    def goal_fwd(node: _Node) -> bool:
        return goal_fwd_box.contains(node.x)

    # when the grid already shows no corridor, fail fast rather than
    # flooding the whole reachable chamber at full budget
    fwd_budget = (20000 if h_fwd(x0) >= 1e5 / max(rates)
                  else settings.max_expansions)
    chain_fwd = engine.search(start_idx, x0, goal_fwd, h_fwd,
                              max_expansions=fwd_budget)
    leg_fwd = engine.leg_from_chain(chain_fwd)
    end = chain_fwd[-1]

    # phase one: coarse route back into a small box around the start
    h_back = _point_heuristic(scn, x0, rates, cell_margin)
    home_tol = np.full(x0.size, 3.75 * settings.drift_cap)

    def goal_coarse(node: _Node) -> bool:
        return bool(np.all(np.abs(node.x - x0) <= home_tol))

    back_budget = (20000 if h_back(end.x) >= 1e5 / max(rates)
                   else settings.max_expansions)
    chain_back = engine.search(end.state, end.x, goal_coarse, h_back,
                               max_expansions=back_budget)

    # phase two: local fine search onto the start state, shrinking the
    # remaining drift; the heuristic is scaled for micro-maneuvering and
    # the tolerance escalates deterministically if a rung is unreachable
    rtol = np.array(settings.return_tol, dtype=float)
    home = chain_back[-1]
    local_box = Box.from_center(x0, np.full(x0.size, max(1.0,
                                                         4 * settings.drift_cap)))

    # endgame heuristics: per-axis rates tuned for parking maneuvers, where
    # lateral and heading corrections are much slower than forward motion
    def h_mid(x: np.ndarray) -> float:
        steps = abs(x[0] - x0[0]) / 0.25
        if x0.size > 1:
            steps += abs(x[1] - x0[1]) / 0.08
        for ax in range(2, x0.size):
            steps += abs(x[ax] - x0[ax]) / 0.05
        return steps

    def h_fine(x: np.ndarray) -> float:
        steps = float(np.max(np.abs(x[:2] - x0[:2]))) / 0.2
        for ax in range(2, x0.size):
            steps += abs(x[ax] - x0[ax]) / 0.06
        return steps

    # intermediate hop onto the exact start state (cell-level needle) with
    # the cheap subset menus before the full-menu drift polishing; demand
    # drift margin so the handoff node is not starved of in-cap successors
    mid_tol = 0.75 * settings.drift_cap

    def at_start_with_margin(node: _Node) -> bool:
        return node.state == start_idx and bool(
            np.all(np.abs(node.x - x0) <= mid_tol))

    if not at_start_with_margin(home):
        try:
            chain_mid = engine.search(home.state, home.x,
                                      at_start_with_margin, h_mid,
                                      stay_within=local_box,
                                      max_expansions=min(
                                          settings.max_expansions, 120000))
        except NoPath:
            # cliff-edge fallback: accept any in-cap arrival at the state
            chain_mid = engine.search(home.state, home.x,
                                      lambda n: n.state == start_idx, h_mid,
                                      stay_within=local_box)
        chain_back = chain_back + chain_mid[1:]
        home = chain_back[-1]

    fine_chain = None
    rung_used = -1
    for rung in range(3):
        tol = rtol * (2.0 ** rung)
        if home.state == start_idx and np.all(np.abs(home.x - x0) <= tol):
            fine_chain = [home]
            rung_used = rung
            break

        def goal_fine(node: _Node, tol=tol) -> bool:
            return node.state == start_idx and bool(
                np.all(np.abs(node.x - x0) <= tol))

        try:
            fine_chain = engine.search(
                home.state, home.x, goal_fine, h_fine, full_menu=True,
                max_expansions=min(settings.max_expansions, 120000),
                stay_within=local_box)
            rung_used = rung
            break
        except NoPath:
            continue
    if fine_chain is None:
        raise NoPath("could not close the patrol loop at any return tolerance")

    # splice the fine correction onto the coarse return
    full_back = chain_back + fine_chain[1:]
    leg_back = engine.leg_from_chain(full_back)

    stats = {
        "expansions": engine.expansions,
        "region_count": len(engine.builder.regions),
        "state_count": engine.builder.n_states,
        "band_fires": engine.band_fires,
        "forward_steps": len(leg_fwd),
        "back_steps": len(leg_back),
        "return_rung": rung_used,
        "return_offset": repr(float(np.max(np.abs(leg_back.concrete[-1] - x0)))),
    }
    return PatrolPlan(leg_fwd, leg_back, tuple(engine.builder.regions),
                      scn.budget.epsilon, scn.seed, stats)


def _plan_random_tree(scn: Scenario, sys: SampledSystem, qz: ZoomQuantizer,
                      settings: PlannerSettings, engine: _Engine,
                      start_idx: int, x0: np.ndarray) -> PatrolPlan:
    """Goal-biased random tree over the same grown abstraction.

    A qualitative alternative to the deterministic search: nodes grow
    toward seeded random workspace samples (with goal bias) under the same
    drift cap and safety pruning.  The loop closure uses the coarsest rung
    of the return ladder, so multi-cycle replay guarantees are weaker than
    with the default strategy.
    """
    rng = np.random.default_rng(scn.seed)

    def grow(start_state: int, start_x: np.ndarray, goal_fn, goal_point):
        arena = [_Node(start_state, np.array(start_x), 0, None, None)]
        if goal_fn(arena[0]):
            return [arena[0]]
        for _ in range(settings.max_expansions):
            if rng.random() < 0.3:
                sample = goal_point
            else:
                lo = np.where(np.isfinite(scn.state_box.lo), scn.state_box.lo,
                              -1.0)
                hi = np.where(np.isfinite(scn.state_box.hi), scn.state_box.hi,
                              1.0)
                sample = rng.uniform(lo, hi)
            dists = [float(np.max(np.abs(n.x - sample))) for n in arena]
            node_id = int(np.argmin(dists))
            node = arena[node_id]
            engine.maybe_fire_region(node, arena)
            inputs, succs, succ_coords = engine._prepared(node.state, False)
            if succs.size == 0:
                continue
            conc = integrate_batch(sys, node.x, inputs)
            D = conc - succ_coords
            ok = np.max(np.abs(D), axis=1) <= settings.drift_cap
            ok &= engine.concrete_safe_rows(conc)
            cand = np.flatnonzero(ok)
            if cand.size == 0:
                continue
            scores = np.max(np.abs(conc[cand] - sample), axis=1)
            j = int(cand[int(np.argmin(scores))])
            arena.append(_Node(int(succs[j]), conc[j], node.g + 1, node_id,
                               inputs[j]))
            engine.expansions += 1
            if goal_fn(arena[-1]):
                return engine._reconstruct(arena, len(arena) - 1)
        raise NoPath("random tree exhausted its growth budget")

    goal_box = scn.targets[1].erode(settings.goal_erosion)
    goal_point = np.where(np.isfinite(goal_box.center), goal_box.center, 0.0)
    chain_fwd = grow(start_idx, x0, lambda n: goal_box.contains(n.x),
                     goal_point)
    leg_fwd = engine.leg_from_chain(chain_fwd)
    end = chain_fwd[-1]
    tol = np.array(settings.return_tol, dtype=float) * 4.0

    def goal_back(node: _Node) -> bool:
        return node.state == start_idx and bool(
            np.all(np.abs(node.x - x0) <= tol))

    chain_back = grow(end.state, end.x, goal_back, x0)
    leg_back = engine.leg_from_chain(chain_back)
    stats = {
        "expansions": engine.expansions,
        "region_count": len(engine.builder.regions),
        "state_count": engine.builder.n_states,
        "band_fires": engine.band_fires,
        "forward_steps": len(leg_fwd),
        "back_steps": len(leg_back),
        "strategy": "random_tree",
    }
    return PatrolPlan(leg_fwd, leg_back, tuple(engine.builder.regions),
                      scn.budget.epsilon, scn.seed, stats)


# -- refinement and patrol execution ---------------------------------------------


@dataclass
class Trajectory:
    states: np.ndarray      # (T+1, n)
    inputs: np.ndarray      # (T, m)
    deviations: np.ndarray  # (T+1,)
    region_ids: np.ndarray  # (T+1,)

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.deviations.size else 0.0


def refine(plan_: PatrolPlan, sys: SampledSystem, x0,
           strict: bool = True) -> Trajectory:
    """Replay the plan's inputs open-loop and check the closeness tube.

    At every sample the concrete state must stay within the precision of
    the plan's abstract state; with ``strict`` a breach raises, otherwise
    it is only recorded in the deviations.
    """
    refs = plan_.reference_states()
    tape = plan_.input_tape()
    x = np.asarray(x0, dtype=float)
    eps = plan_.epsilon
    if float(np.max(np.abs(x - refs[0].coords))) > eps:
        raise RelationBreach("initial state is outside the tube")
    states = [x.copy()]
    devs = []
    rids = []
    for t, ref in enumerate(refs):
        dev = float(np.max(np.abs(x - ref.coords)))
        devs.append(dev)
        rids.append(ref.region_id)
        if strict and dev > eps + 1e-9:
            raise RelationBreach(
                f"tube breached at step {t}: deviation {dev:.6g} > {eps}"
            )
        if t < len(tape):
            x = integrate_batch(sys, x, tape[t][None, :])[0]
            states.append(x.copy())
    return Trajectory(np.array(states),
                      np.array(tape).reshape(len(tape), -1),
                      np.array(devs), np.array(rids))


@dataclass
class PatrolRun:
    trajectory: Trajectory
    visits: dict            # target index -> list of sample indices
    cycles: int

    def visit_counts(self) -> dict:
        return {k: len(v) for k, v in self.visits.items()}


def patrol_loop(plan_: PatrolPlan, sys: SampledSystem, x0, cycles: int,
                targets: Optional[Sequence[Box]] = None,
                strict: bool = True) -> PatrolRun:
    """Replay forward+back legs ``cycles`` times and log target visits.

    The concrete state carries over between cycles; the tube reference
    restarts at the plan's abstract sequence each cycle.  A sample counts
    as a visit when the concrete state lies inside the target box.
    """
    if cycles < 1:
        raise ValueError("need at least one patrol cycle")
    refs = plan_.reference_states()
    tape = plan_.input_tape()
    eps = plan_.epsilon
    x = np.asarray(x0, dtype=float)
    all_states = [x.copy()]
    all_inputs = []
    devs = []
    rids = []
    visits: dict = {}
    sample = 0

    def log_visit(xs, idx):
        if targets is None:
            return
        for ti, box in enumerate(targets):
            if box.contains(xs):
                visits.setdefault(ti, []).append(idx)

    def check(ref):
        dev = float(np.max(np.abs(x - ref.coords)))
        devs.append(dev)
        rids.append(ref.region_id)
        if strict and dev > eps + 1e-9:
            raise RelationBreach(
                f"tube breached at sample {sample}: {dev:.6g} > {eps}"
            )

    check(refs[0])
    log_visit(x, 0)
    # the back leg ends at the start state, so each cycle re-enters refs[0]
    for _ in range(cycles):
        for t in range(len(tape)):
            x = integrate_batch(sys, x, tape[t][None, :])[0]
            sample += 1
            all_states.append(x.copy())
            all_inputs.append(tape[t])
            check(refs[t + 1])
            log_visit(x, sample)
    traj = Trajectory(np.array(all_states),
                      np.array(all_inputs).reshape(len(all_inputs), -1),
                      np.array(devs), np.array(rids))
    return PatrolRun(traj, visits, cycles)
