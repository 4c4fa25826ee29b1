"""Command-line surface: abstract, plan, check, and simulate subcommands.

Scenario files are JSON; command-line flags override file values, which in
turn override built-in defaults.  Exit codes: 0 success, 2 precision budget
violated, 3 parse error, 4 no path, 5 closeness relation failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys as _sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .abstraction import (AbstractSystem, PrecisionBudget, build_abstraction,
                          complexity_report, parse_abstraction, precision_ok)
from .bisim import theorem1_harness
from .boxes import Box, prism
from .dynamics import SampledSystem, exponential_bound, get_model
from .errors import (NoPath, PrecisionBreach, RelationBreach, ScenarioError,
                     ZoomabsError)
from .planner import (PatrolPlan, Scenario, Trajectory, initial_region_for,
                      patrol_loop, plan, refine)
from .quantization import ZoomQuantizer
from .regions import RegionPolicy

EXIT_OK = 0
EXIT_PRECISION = 2
EXIT_PARSE = 3
EXIT_NO_PATH = 4
EXIT_RELATION = 5

_DEFAULTS = {
    "model": "bicycle",
    "tau": 0.3,
    "epsilon": 0.2,
    "mu0": 1.0,
    "eta0": 0.2,
    "omega": 0.1,
    "omega_in": 1.0,
    "omega_out": 1.0,
    "M": 512,
    "lambda0": 0.0,
    "seed": 0,
    "cycles": 1,
    "integrator_steps": 8,
    "grid_pitch": 0.01,
}


@dataclass
class RunConfig:
    """Effective configuration after merging defaults, file, and flags."""

    subcommand: str
    scenario_path: str
    values: dict
    out_abstraction: Optional[str] = None
    out_report: Optional[str] = None
    out_plan: Optional[str] = None
    out_svg: Optional[str] = None
    out_csv: Optional[str] = None
    abstraction_in: Optional[str] = None
    strategy: str = "search"


_OVERRIDE_KEYS = ["tau", "epsilon", "mu0", "eta0", "omega", "omega_in",
                  "omega_out", "M", "lambda", "seed", "cycles",
                  "integrator_steps", "grid_pitch", "model"]


def _merge_config(file_values: dict, flag_values: dict) -> dict:
    merged = dict(_DEFAULTS)
    merged.update({k: v for k, v in file_values.items() if v is not None})
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def _require(values: dict, key: str):
    if key not in values or values[key] is None:
        raise ScenarioError(f"scenario is missing required key {key!r}")
    return values[key]


def load_scenario(path: str, flag_values: dict):
    """Parse a scenario file and assemble the runtime objects."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario root must be a JSON object")
    values = _merge_config(raw, flag_values)

    try:
        model = get_model(str(values["model"]))
    except KeyError as exc:
        raise ScenarioError(str(exc)) from exc
    lam = _require(values, "lambda")
    lam = np.asarray(lam, dtype=float)
    if lam.size != model.state_dim:
        raise ScenarioError("lambda vector length must match the state dimension")
    state_box = Box.from_bounds(_require(values, "state_box"))
    if state_box.ndim != model.state_dim:
        raise ScenarioError("state_box dimension must match the model")
    initial = np.asarray(_require(values, "initial_state"), dtype=float)
    if initial.size != model.state_dim:
        raise ScenarioError("initial_state dimension must match the model")
    obstacles = tuple(prism(b, model.state_dim) for b in values.get("obstacles", []))
    targets = tuple(prism(b, model.state_dim) for b in values.get("targets", []))
    beta_raw = _require(values, "beta")
    try:
        bound = exponential_bound(float(beta_raw["gain"]), float(beta_raw["rate"]))
    except (KeyError, TypeError) as exc:
        raise ScenarioError("beta must be an object with gain and rate") from exc
    tau = float(values["tau"])
    try:
        budget = PrecisionBudget(float(values["epsilon"]), bound, tau)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    base_hw = values.get("base_halfwidths")
    if base_hw is None:
        base_hw = 1.5 * lam
    base_hw = np.asarray(base_hw, dtype=float)
    try:
        policy = RegionPolicy(
            omega=float(values["omega"]),
            omega_in=float(values["omega_in"]),
            omega_out=float(values["omega_out"]),
            base_halfwidths=base_hw,
            mu0=float(values["mu0"]),
            eta0=float(values["eta0"]),
        )
        qz = ZoomQuantizer(range_index=int(values["M"]), lattice=lam,
                           dead_zone=float(values["lambda0"]),
                           mu=float(values["mu0"]))
        scn = Scenario(state_box=state_box, initial_state=initial,
                       obstacles=obstacles, targets=targets, budget=budget,
                       policy=policy, seed=int(values["seed"]))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    sampled = SampledSystem(model, tau, int(values["integrator_steps"]))
    return scn, sampled, qz, values


# -- artifact writers -----------------------------------------------------------


def trajectory_csv(traj: Trajectory, tau: float) -> str:
    n = traj.states.shape[1]
    m = traj.inputs.shape[1] if traj.inputs.size else 0
    header = (["step", "t"] + [f"x{i+1}" for i in range(n)]
              + [f"u{i+1}" for i in range(m)] + ["region_id", "tube_deviation"])
    lines = [",".join(header)]
    steps = traj.states.shape[0]
    for i in range(steps):
        row = [str(i), repr(i * tau)]
        row += [repr(v) for v in traj.states[i]]
        if i < traj.inputs.shape[0]:
            row += [repr(v) for v in traj.inputs[i]]
        else:
            row += [""] * m
        row.append(str(int(traj.region_ids[i])))
        row.append(repr(float(traj.deviations[i])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _svg_rect(x, y, w, h, style) -> str:
    return (f'<rect x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" '
            f'height="{h:.3f}" {style}/>')


def render_svg(scn: Scenario, plan_: PatrolPlan, traj: Trajectory,
               size: int = 640) -> str:
    """Planar projection: obstacles black, targets outlined, path polyline."""
    lo = scn.state_box.lo[:2]
    hi = scn.state_box.hi[:2]
    span = float(max(hi - lo))
    scale = size / span

    def sx(v):
        return (v - lo[0]) * scale

    def sy(v):
        return size - (v - lo[1]) * scale  # flip y for screen coordinates

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">']
    parts.append(_svg_rect(sx(lo[0]), sy(hi[1]), (hi[0] - lo[0]) * scale,
                           (hi[1] - lo[1]) * scale,
                           'fill="white" stroke="#444444"'))
    for r in plan_.regions_used:
        parts.append(_svg_rect(
            sx(r.box.lo[0]), sy(r.box.hi[1]),
            (r.box.hi[0] - r.box.lo[0]) * scale,
            (r.box.hi[1] - r.box.lo[1]) * scale,
            'fill="none" stroke="#cccccc" stroke-width="0.5"'))
    for o in scn.obstacles:
        olo = np.maximum(o.lo[:2], lo)
        ohi = np.minimum(o.hi[:2], hi)
        parts.append(_svg_rect(sx(olo[0]), sy(ohi[1]),
                               (ohi[0] - olo[0]) * scale,
                               (ohi[1] - olo[1]) * scale, 'fill="black"'))
    for t in scn.targets:
        tlo = np.maximum(t.lo[:2], lo)
        thi = np.minimum(t.hi[:2], hi)
        parts.append(_svg_rect(sx(tlo[0]), sy(thi[1]),
                               (thi[0] - tlo[0]) * scale,
                               (thi[1] - tlo[1]) * scale,
                               'fill="none" stroke="#007700" stroke-width="1.5"'))
    pts = " ".join(f"{sx(p[0]):.3f},{sy(p[1]):.3f}" for p in traj.states)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#00aa00" '
                 f'stroke-width="1.2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def complexity_text(report) -> str:
    lines = ["zoomabs-complexity 1",
             f"total_states {report.total_states}",
             f"uniform_baseline {report.uniform_baseline}",
             f"ratio {report.ratio!r}",
             f"regions {len(report.per_region)}"]
    for rid, count, theta in report.per_region:
        lines.append(f"region {rid} states {count} theta {theta!r}")
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------


def cmd_abstract(cfg: RunConfig) -> int:
    scn, sampled, qz, values = load_scenario(cfg.scenario_path, cfg.values)
    s0 = initial_region_for(scn, qz)
    abs_sys = build_abstraction(sampled, [s0], qz, scn.budget)
    report = complexity_report(abs_sys, scn.state_box)
    if cfg.out_abstraction:
        with open(cfg.out_abstraction, "w", encoding="utf-8") as fh:
            fh.write(abs_sys.to_text())
    text = complexity_text(report)
    if cfg.out_report:
        with open(cfg.out_report, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_plan(cfg: RunConfig) -> int:
    scn, sampled, qz, values = load_scenario(cfg.scenario_path, cfg.values)
    plan_ = plan(scn, sampled, qz, strategy=cfg.strategy)
    traj = refine(plan_, sampled, scn.initial_state)
    if cfg.out_plan:
        with open(cfg.out_plan, "w", encoding="utf-8") as fh:
            fh.write(plan_.to_text())
    if cfg.out_csv:
        with open(cfg.out_csv, "w", encoding="utf-8") as fh:
            fh.write(trajectory_csv(traj, sampled.tau))
    if cfg.out_svg:
        with open(cfg.out_svg, "w", encoding="utf-8") as fh:
            fh.write(render_svg(scn, plan_, traj))
    print(f"plan: {len(plan_.leg_forward)} forward steps, "
          f"{len(plan_.leg_back)} back steps, "
          f"{plan_.stats['region_count']} regions, "
          f"{plan_.stats['state_count']} states")
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    scn, sampled, qz, values = load_scenario(cfg.scenario_path, cfg.values)
    s0 = initial_region_for(scn, qz)
    prebuilt = None
    if cfg.abstraction_in:
        with open(cfg.abstraction_in, "r", encoding="utf-8") as fh:
            prebuilt = parse_abstraction(fh.read())
    report = theorem1_harness(sampled, [s0], qz, scn.budget,
                              float(values["grid_pitch"]),
                              abstract_system=prebuilt)
    print(report.describe())
    return EXIT_OK if report.holds else EXIT_RELATION


def cmd_simulate(cfg: RunConfig) -> int:
    scn, sampled, qz, values = load_scenario(cfg.scenario_path, cfg.values)
    plan_ = plan(scn, sampled, qz, strategy=cfg.strategy)
    run = patrol_loop(plan_, sampled, scn.initial_state,
                      int(values["cycles"]), targets=scn.targets)
    if cfg.out_csv:
        with open(cfg.out_csv, "w", encoding="utf-8") as fh:
            fh.write(trajectory_csv(run.trajectory, sampled.tau))
    counts = run.visit_counts()
    for ti in range(len(scn.targets)):
        print(f"target {ti}: {counts.get(ti, 0)} visits")
    print(f"max tube deviation {run.trajectory.max_deviation!r}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--tau", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mu0", type=float)
    p.add_argument("--eta0", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--omega-in", dest="omega_in", type=float)
    p.add_argument("--omega-out", dest="omega_out", type=float)
    p.add_argument("--range-index", dest="M", type=int)
    p.add_argument("--lattice", dest="lambda_",
                   help="comma-separated per-axis granularities")
    p.add_argument("--seed", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--integrator-steps", dest="integrator_steps", type=int)
    p.add_argument("--model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoomabs",
        description="dynamic zoom-quantizer abstractions, closeness checking, "
                    "and patrol planning",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("abstract", help="build the initial-region abstraction")
    _add_common(p)
    p.add_argument("--out-abstraction")
    p.add_argument("--out-report")

    p = sub.add_parser("plan", help="plan a patrol round trip")
    _add_common(p)
    p.add_argument("--out-plan")
    p.add_argument("--out-svg")
    p.add_argument("--out-csv")
    p.add_argument("--strategy", choices=["search", "random_tree"],
                   default="search")

    p = sub.add_parser("check", help="grid-check the closeness relation")
    _add_common(p)
    p.add_argument("--grid-pitch", dest="grid_pitch", type=float)
    p.add_argument("--abstraction", dest="abstraction_in",
                   help="check a previously written abstraction file")

    p = sub.add_parser("simulate", help="replay a patrol for several cycles")
    _add_common(p)
    p.add_argument("--out-csv")
    p.add_argument("--strategy", choices=["search", "random_tree"],
                   default="search")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    flag_values = {}
    for key in _OVERRIDE_KEYS:
        attr = "lambda_" if key == "lambda" else key
        if hasattr(args, attr):
            val = getattr(args, attr)
            if key == "lambda" and val is not None:
                val = [float(v) for v in str(val).split(",")]
            flag_values[key] = val
    return RunConfig(
        subcommand=args.subcommand,
        scenario_path=args.scenario,
        values=flag_values,
        out_abstraction=getattr(args, "out_abstraction", None),
        out_report=getattr(args, "out_report", None),
        out_plan=getattr(args, "out_plan", None),
        out_svg=getattr(args, "out_svg", None),
        out_csv=getattr(args, "out_csv", None),
        abstraction_in=getattr(args, "abstraction_in", None),
        strategy=getattr(args, "strategy", "search"),
    )


_COMMANDS = {
    "abstract": cmd_abstract,
    "plan": cmd_plan,
    "check": cmd_check,
    "simulate": cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    level = os.environ.get("ZOOMABS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    cfg = _config_from_args(args)
    try:
        return _COMMANDS[cfg.subcommand](cfg)
    except PrecisionBreach as exc:
        print(f"precision budget violated: {exc}", file=_sys.stderr)
        return EXIT_PRECISION
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=_sys.stderr)
        return EXIT_PARSE
    except NoPath as exc:
        print(f"no path: {exc}", file=_sys.stderr)
        return EXIT_NO_PATH
    except RelationBreach as exc:
        print(f"relation breached: {exc}", file=_sys.stderr)
        return EXIT_RELATION


if __name__ == "__main__":
    raise SystemExit(main())
