"""Finite metric transition systems and approximate equivalence checking.

The checker verifies a *given* relation: matched states must have close
outputs, and every move of one system must be answered by the other within
the relation.  It never searches for a maximal relation.  A grid harness
turns the concrete sampled system into a finite under-approximation so the
abstract-vs-concrete relation can be checked exhaustively on instances.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .abstraction import (AbstractSystem, AbstractionBuilder, PrecisionBudget,
                          precision_ok)
from .boxes import Box
from .dynamics import SampledSystem, integrate_batch
from .errors import InputMismatch, PrecisionBreach
from .quantization import ZoomQuantizer, axis_index_range
from .regions import Region


@dataclass(frozen=True)
class FiniteTS:
    """Possibly non-deterministic transition system with vector outputs."""

    n_states: int
    initial: tuple
    inputs: np.ndarray           # (U, m)
    transitions: dict            # (state, input index) -> tuple of states
    outputs: np.ndarray          # (n_states, d)

    def successors(self, si: int, gi: int) -> tuple:
        return self.transitions.get((si, gi), ())

    def enabled(self, si: int) -> tuple:
        return tuple(sorted(gi for (s, gi) in self.transitions if s == si))

    def enabled_table(self) -> list:
        table = [[] for _ in range(self.n_states)]
        for (si, gi) in self.transitions:
            table[si].append(gi)
        return [tuple(sorted(v)) for v in table]


def from_abstract_system(abs_sys: AbstractSystem) -> FiniteTS:
    """View a deterministic abstraction as a FiniteTS."""
    transitions = {k: (v,) for k, v in abs_sys.transitions.items()}
    return FiniteTS(
        n_states=abs_sys.n_states,
        initial=abs_sys.initial,
        inputs=np.array(abs_sys.inputs),
        transitions=transitions,
        outputs=np.array(abs_sys.coords),
    )


@dataclass(frozen=True)
class Relation:
    """A set of candidate matched pairs between two state spaces."""

    pairs: frozenset

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "Relation":
        return cls(frozenset((int(a), int(b)) for a, b in pairs))

    @classmethod
    def identity(cls, n: int) -> "Relation":
        return cls(frozenset((i, i) for i in range(n)))

    @classmethod
    def from_metric(cls, outputs1: np.ndarray, outputs2: np.ndarray,
                    eps: float) -> "Relation":
        """All pairs with output distance at most ``eps`` (infinity norm)."""
        pairs = []
        o1 = np.asarray(outputs1, dtype=float)
        o2 = np.asarray(outputs2, dtype=float)
        for i in range(o1.shape[0]):
            d = np.max(np.abs(o2 - o1[i]), axis=1)
            for j in np.flatnonzero(d <= eps):
                pairs.append((i, int(j)))
        return cls.from_pairs(pairs)

    def inverse(self) -> "Relation":
        return Relation(frozenset((b, a) for a, b in self.pairs))

    def __len__(self):
        return len(self.pairs)


@dataclass
class Witness:
    pair: tuple
    input_index: Optional[int]
    condition: str
    successor: Optional[tuple]
    distance: float

    def describe(self) -> str:
        return (f"pair {self.pair} input {self.input_index} "
                f"violates {self.condition} (distance {self.distance:.6g}, "
                f"successor {self.successor})")


@dataclass
class Verdict:
    holds: bool
    witness: Optional[Witness]
    checked_triples: int
    worst_output_distance: float
    worst_successor_distance: float
    surjective: Optional[bool] = None

    @property
    def equivalent(self) -> bool:
        """Conditions plus the surjectivity side requirements."""
        return self.holds and bool(self.surjective)

    def describe(self) -> str:
        status = "holds" if self.holds else "fails"
        lines = [f"verdict: {status}",
                 f"checked triples: {self.checked_triples}",
                 f"worst output distance: {self.worst_output_distance:.6g}",
                 f"worst successor distance: {self.worst_successor_distance:.6g}"]
        if self.surjective is not None:
            lines.append(f"surjective: {self.surjective}")
        if self.witness is not None:
            lines.append("witness: " + self.witness.describe())
        return "\n".join(lines)


def _check_alphabets(t1: FiniteTS, t2: FiniteTS) -> None:
    if t1.inputs.shape != t2.inputs.shape or not np.array_equal(t1.inputs,
                                                                t2.inputs):
        raise InputMismatch("transition systems use different input alphabets")


def _outdist(t1: FiniteTS, t2: FiniteTS, i: int, j: int) -> float:
    return float(np.max(np.abs(t1.outputs[i] - t2.outputs[j])))


def check_simulation(t1: FiniteTS, t2: FiniteTS, rel: Relation, eps: float,
                     successor_slack: float = 0.0) -> Verdict:
    """Verify an approximate simulation of ``t1`` by ``t2`` over ``rel``.

    For every related pair, outputs must be within ``eps`` and every move of
    ``t1`` on a jointly enabled input must be answered by a ``t2`` move that
    stays related.  ``successor_slack`` additionally accepts successor pairs
    whose outputs are within ``eps + slack`` even if they are not in the
    relation (the grid-harness relaxation); leave it at zero for the exact
    definition.
    """
    _check_alphabets(t1, t2)
    pair_set = rel.pairs
    en1 = t1.enabled_table()
    en2 = t2.enabled_table()
    checked = 0
    worst_out = 0.0
    worst_succ = 0.0
    witness = None
    n_inputs = t1.inputs.shape[0]
    for (x1, x2) in sorted(rel.pairs):
        d = _outdist(t1, t2, x1, x2)
        worst_out = max(worst_out, d)
        if d > eps + 1e-12:
            witness = Witness((x1, x2), None, "output distance", None, d)
            return Verdict(False, witness, checked, worst_out, worst_succ)
        en1_here = set(en1[x1])
        en2_here = set(en2[x2])
        for gi in range(n_inputs):
            checked += 1
            # moves exist on one side only when the input is enabled there;
            # the matching obligation is vacuous unless both sides move
            if gi not in en1_here or gi not in en2_here:
                continue
            succ2 = t2.successors(x2, gi)
            for y1 in t1.successors(x1, gi):
                best = math.inf
                matched = False
                for y2 in succ2:
                    dy = _outdist(t1, t2, y1, y2)
                    if (y1, y2) in pair_set or (
                            successor_slack > 0 and dy <= eps + successor_slack):
                        best = min(best, dy)
                        matched = True
                if not matched:
                    dy_min = min(
                        (_outdist(t1, t2, y1, y2) for y2 in succ2),
                        default=math.inf,
                    )
                    witness = Witness((x1, x2), gi, "unmatched successor",
                                      (y1,), dy_min)
                    return Verdict(False, witness, checked, worst_out,
                                   worst_succ)
                worst_succ = max(worst_succ, best)
    return Verdict(True, None, checked, worst_out, worst_succ)


def check_bisimulation(t1: FiniteTS, t2: FiniteTS, rel: Relation, eps: float,
                       successor_slack: float = 0.0) -> Verdict:
    """Both simulation directions over the same relation, plus surjectivity.

    ``holds`` covers the pairwise conditions; ``surjective`` records whether
    the relation touches every state on both sides, which full equivalence
    additionally requires.
    """
    fwd = check_simulation(t1, t2, rel, eps, successor_slack)
    if not fwd.holds:
        fwd.surjective = _surjective(rel, t1.n_states, t2.n_states)
        return fwd
    bwd = check_simulation(t2, t1, rel.inverse(), eps, successor_slack)
    surjective = _surjective(rel, t1.n_states, t2.n_states)
    if not bwd.holds:
        w = bwd.witness
        flipped = Witness((w.pair[1], w.pair[0]), w.input_index,
                          w.condition + " (reverse direction)", w.successor,
                          w.distance)
        return Verdict(False, flipped, fwd.checked_triples + bwd.checked_triples,
                       max(fwd.worst_output_distance, bwd.worst_output_distance),
                       max(fwd.worst_successor_distance,
                           bwd.worst_successor_distance),
                       surjective)
    return Verdict(True, None, fwd.checked_triples + bwd.checked_triples,
                   max(fwd.worst_output_distance, bwd.worst_output_distance),
                   max(fwd.worst_successor_distance,
                       bwd.worst_successor_distance),
                   surjective)


def _surjective(rel: Relation, n1: int, n2: int) -> bool:
    left = {a for a, _ in rel.pairs}
    right = {b for _, b in rel.pairs}
    return len(left) == n1 and len(right) == n2


# -- concrete-grid harness -----------------------------------------------------


def _grid_states(regions: Sequence[Region], pitch: float) -> np.ndarray:
    """Zero-anchored verification grid covering the region boxes."""
    seen = {}
    for r in regions:
        axes = []
        for ax in range(r.box.ndim):
            kmin, kmax = axis_index_range(r.box.lo[ax], r.box.hi[ax], pitch)
            axes.append(range(kmin, kmax + 1))
        for k in itertools.product(*axes):
            seen.setdefault(k, None)
    keys = sorted(seen)
    return np.array([[ki * pitch for ki in k] for k in keys]), keys


@dataclass
class HarnessReport:
    verdict: Verdict
    slack: float
    n_concrete: int
    n_abstract: int
    n_pairs: int
    grid_pitch: float

    @property
    def holds(self) -> bool:
        return self.verdict.holds

    def describe(self) -> str:
        head = (f"grid harness: {self.n_concrete} concrete states, "
                f"{self.n_abstract} abstract states, {self.n_pairs} pairs, "
                f"pitch {self.grid_pitch}")
        return head + "\nslack: " + f"{self.slack:.6g}" + "\n" + \
            self.verdict.describe()


def theorem1_harness(sys: SampledSystem, regions: Sequence[Region],
                     qz: ZoomQuantizer, budget: PrecisionBudget,
                     grid_pitch: float,
                     abstract_system: Optional[AbstractSystem] = None
                     ) -> HarnessReport:
    """Exhaustively test the closeness relation on a finite grid instance.

    Builds the abstraction (or takes one prebuilt), discretizes the concrete
    sampled dynamics on a grid of the given pitch restricted to the region
    boxes, relates every concrete/abstract pair with output distance at most
    the budget precision, and checks the bisimulation conditions with the
    snapping slack of the grid.  This is a test, not a proof: the grid
    under-approximates the concrete system.
    """
    for r in regions:
        ok, margin = precision_ok(budget, qz.lambda_max, r.eta, r.mu)
        if not ok:
            raise PrecisionBreach(
                f"region {r.id}: precision margin {margin:.6g} is negative"
            )
    if abstract_system is None:
        builder = AbstractionBuilder(sys, qz, budget)
        for r in regions:
            builder.add_region(r)
        abstract_system = builder.freeze()
    t2 = from_abstract_system(abstract_system)

    coords, keys = _grid_states(regions, grid_pitch)
    key_index = {k: i for i, k in enumerate(keys)}
    n1 = coords.shape[0]
    inputs = t2.inputs
    transitions: Dict[Tuple[int, int], tuple] = {}
    if inputs.shape[0]:
        for i in range(n1):
            endpoints = integrate_batch(sys, coords[i], inputs)
            snapped = np.floor(endpoints / grid_pitch + 0.5).astype(np.int64)
            for gi in range(inputs.shape[0]):
                j = key_index.get(tuple(snapped[gi]))
                if j is not None:
                    transitions[(i, gi)] = (j,)
    t1 = FiniteTS(n_states=n1, initial=tuple(range(n1)), inputs=inputs,
                  transitions=transitions, outputs=coords)

    rel = Relation.from_metric(t1.outputs, t2.outputs, budget.epsilon)
    verdict = check_bisimulation(t1, t2, rel, budget.epsilon,
                                 successor_slack=grid_pitch)
    slack = budget.epsilon - verdict.worst_successor_distance
    return HarnessReport(verdict, slack, n1, t2.n_states, len(rel), grid_pitch)
