"""Continuous plants, their sampled transition maps, and stability certificates.

The integrator is a fixed-step classical Runge-Kutta scheme.  Fixed stepping
is a hard requirement here: abstraction transitions must be bit-reproducible,
and the planner and the replay machinery rely on recomputing the exact same
endpoints.  Everything is written to broadcast over leading axes so that one
call can integrate a whole batch of (state, input) pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.stats import qmc

from .boxes import Box
from .errors import InputOutOfRange, NonFinite, UnsupportedRho

_INPUT_TOL = 1e-9


@dataclass(frozen=True)
class ControlSystem:
    """A plant ``x' = f(x, u)`` with a Lipschitz vector field and box inputs.

    ``vector_field`` must be a pure function accepting arrays shaped
    ``(..., n)`` and ``(..., m)`` and returning ``(..., n)``.
    """

    state_dim: int
    input_dim: int
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    input_box: Box
    name: str = "custom"

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.lipschitz_L < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.input_box.ndim != self.input_dim:
            raise ValueError("input box dimension mismatch")


@dataclass(frozen=True)
class SampledSystem:
    """Time discretization of a plant with period ``tau``."""

    system: ControlSystem
    tau: float
    integrator_steps: int = 8

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("sampling period must be positive")
        if self.integrator_steps < 1:
            raise ValueError("need at least one integrator sub-step")


@dataclass(frozen=True)
class LyapunovCertificate:
    """Incremental-stability certificate data.

    ``V(x1, x2)`` sandwiched between ``alpha1`` and ``alpha2`` of the state
    distance, with directional derivative bounded by ``-rho(V)``.
    """

    V: Callable[[np.ndarray, np.ndarray], float]
    grad_V: Callable[[np.ndarray, np.ndarray], tuple]
    alpha1: Callable[[float], float]
    alpha2: Callable[[float], float]
    rho: Callable[[float], float]


@dataclass(frozen=True)
class StabilityBound:
    """Two-argument decay envelope ``beta(r, t)`` for trajectory pairs."""

    beta: Callable[[float, float], float]
    params: dict = field(default_factory=dict)

    def __call__(self, r: float, t: float) -> float:
        return float(self.beta(r, t))


def exponential_bound(gain: float, rate: float) -> StabilityBound:
    """The canonical envelope ``gain * r * exp(-rate * t)``."""
    if gain <= 0 or rate <= 0:
        raise ValueError("gain and rate must be positive")

    def beta(r: float, t: float) -> float:
        return gain * r * math.exp(-rate * t)

    return StabilityBound(beta=beta, params={"gain": gain, "rate": rate})


def _rk4(field, x: np.ndarray, u: np.ndarray, tau: float, steps: int) -> np.ndarray:
    h = tau / steps
    for _ in range(steps):
        k1 = field(x, u)
        k2 = field(x + 0.5 * h * k1, u)
        k3 = field(x + 0.5 * h * k2, u)
        k4 = field(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(x)):
            raise NonFinite("state blew up inside a sampling interval")
    return x


def integrate(sys: SampledSystem, x, u) -> np.ndarray:
    """Flow the plant for one sampling period under a constant input."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("initial state is not finite")
    if not sys.system.input_box.contains(u, tol=_INPUT_TOL):
        raise InputOutOfRange(f"input {u} outside {sys.system.input_box}")
    return _rk4(sys.system.vector_field, x, u, sys.tau, sys.integrator_steps)


def integrate_batch(sys: SampledSystem, X, U) -> np.ndarray:
    """Integrate many (state, input) pairs at once.

    ``X`` is ``(N, n)`` or ``(n,)`` broadcast against ``U`` of shape
    ``(N, m)``.  Row results are bit-identical to scalar `integrate` calls.
    """
    X = np.asarray(X, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if X.ndim == 1:
        X = np.broadcast_to(X, (U.shape[0], X.size))
    if not np.all(sys.system.input_box.contains_rows(U, tol=_INPUT_TOL)):
        raise InputOutOfRange("some batch input lies outside the input box")
    if not np.all(np.isfinite(X)):
        raise NonFinite("non-finite state in batch")
    return _rk4(sys.system.vector_field, np.array(X, dtype=float), U,
                sys.tau, sys.integrator_steps)


@dataclass
class LyapunovReport:
    violations: list
    max_residual: float
    n_samples: int

    @property
    def ok(self) -> bool:
        return not self.violations


def check_lyapunov(cert: LyapunovCertificate, sys: ControlSystem,
                   sample_box: Box, n_samples: int, seed: int,
                   tol: float = 1e-9) -> LyapunovReport:
    """Spot-check the certificate inequalities on quasi-uniform samples.

    Draws ``(x1, x2, u)`` triples from ``sample_box^2 x U`` with a scrambled
    Halton sequence and records every triple where the sandwich or the
    decrease condition fails beyond ``tol``.  An all-violations report is a
    legitimate outcome; nothing raises.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    n = sys.state_dim
    m = sys.input_dim
    dim = 2 * n + m
    sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    raw = sampler.random(n_samples)
    lo = np.concatenate([sample_box.lo, sample_box.lo, sys.input_box.lo])
    hi = np.concatenate([sample_box.hi, sample_box.hi, sys.input_box.hi])
    pts = qmc.scale(raw, lo, hi)

    violations = []
    max_residual = -math.inf
    for row in pts:
        x1, x2, u = row[:n], row[n:2 * n], row[2 * n:]
        d = float(np.max(np.abs(x1 - x2)))
        v = float(cert.V(x1, x2))
        g1, g2 = cert.grad_V(x1, x2)
        vdot = float(np.dot(g1, sys.vector_field(x1, u))
                     + np.dot(g2, sys.vector_field(x2, u)))
        residuals = {
            "lower": cert.alpha1(d) - v,
            "upper": v - cert.alpha2(d),
            "decrease": vdot + cert.rho(v),
        }
        for cond, res in residuals.items():
            max_residual = max(max_residual, res)
            if res > tol:
                violations.append((x1.copy(), x2.copy(), u.copy(), cond, res))
    return LyapunovReport(violations, max_residual, n_samples)


def _bisect_increasing(fn, target: float, hi_start: float,
                       tol: float = 1e-10) -> float:
    """Invert a monotone increasing map with ``fn(0) = 0`` by bisection."""
    if target <= 0:
        return 0.0
    hi = max(hi_start, tol)
    for _ in range(200):
        if fn(hi) >= target:
            break
        hi *= 2.0
    else:
        raise ValueError("failed to bracket the inverse")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_from_lyapunov(cert: LyapunovCertificate) -> StabilityBound:
    """Derive a decay envelope from a certificate with linear decrease rate.

    With ``rho(s) = kappa * s`` the comparison argument gives
    ``beta(r, t) = alpha1^{-1}(alpha2(r) * exp(-kappa * t))``; the inverse
    is computed by bisection.
    """
    kappa = float(cert.rho(1.0))
    if kappa <= 0:
        raise UnsupportedRho("decrease rate must be positive at 1")
    for s in (1e-3, 0.37, 2.0, 7.3, 41.0):
        expected = kappa * s
        if abs(float(cert.rho(s)) - expected) > 1e-9 * max(1.0, expected):
            raise UnsupportedRho("decrease rate is not linear")

    def beta(r: float, t: float) -> float:
        if r <= 0:
            return 0.0
        target = float(cert.alpha2(r)) * math.exp(-kappa * t)
        return _bisect_increasing(cert.alpha1, target, hi_start=r)

    return StabilityBound(beta=beta, params={"kappa": kappa})


def check_lipschitz(sys: ControlSystem, box: Box, n_samples: int,
                    seed: int) -> float:
    """Worst sampled ratio ``|f(x,u)-f(y,u)| / |x-y|`` over a test box."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x = rng.uniform(box.lo, box.hi)
        y = rng.uniform(box.lo, box.hi)
        u = rng.uniform(sys.input_box.lo, sys.input_box.hi)
        dx = float(np.max(np.abs(x - y)))
        if dx < 1e-12:
            continue
        df = float(np.max(np.abs(sys.vector_field(x, u) - sys.vector_field(y, u))))
        worst = max(worst, df / dx)
    return worst


# --- built-in model registry -------------------------------------------------

def _bicycle_field(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    u1 = u[..., 0]
    steer = u[..., 1]
    alpha = np.arctan(0.5 * np.tan(steer))
    inv_cos = 1.0 / np.cos(alpha)
    heading = alpha + x[..., 2]
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (3,))
    out[..., 0] = u1 * np.cos(heading) * inv_cos
    out[..., 1] = u1 * np.sin(heading) * inv_cos
    out[..., 2] = u1 * np.tan(steer)
    return out


def _scalar_linear_field(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u - x


def _double_integrator_field(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.stack([x[..., 1], u[..., 0]], axis=-1)


def _make_bicycle() -> ControlSystem:
    # worst |df/dx| row sum is |u1| / cos(alpha) at u = (1, 1)
    lip = 1.0 / math.cos(math.atan(0.5 * math.tan(1.0)))
    return ControlSystem(
        state_dim=3,
        input_dim=2,
        vector_field=_bicycle_field,
        lipschitz_L=lip,
        input_box=Box.from_bounds([(-1.0, 1.0), (-1.0, 1.0)]),
        name="bicycle",
    )


def _make_scalar_linear() -> ControlSystem:
    return ControlSystem(
        state_dim=1,
        input_dim=1,
        vector_field=_scalar_linear_field,
        lipschitz_L=1.0,
        input_box=Box.from_bounds([(-1.0, 1.0)]),
        name="scalar_linear",
    )


def _make_double_integrator() -> ControlSystem:
    return ControlSystem(
        state_dim=2,
        input_dim=1,
        vector_field=_double_integrator_field,
        lipschitz_L=1.0,
        input_box=Box.from_bounds([(-1.0, 1.0)]),
        name="double_integrator",
    )


_REGISTRY: Dict[str, Callable[[], ControlSystem]] = {
    "bicycle": _make_bicycle,
    "scalar_linear": _make_scalar_linear,
    "double_integrator": _make_double_integrator,
}


def get_model(name: str) -> ControlSystem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(_REGISTRY)}")
    return factory()


def register_model(name: str, factory: Callable[[], ControlSystem]) -> None:
    """Plug a custom plant into the registry (library API only)."""
    _REGISTRY[name] = factory


def scalar_linear_certificate() -> LyapunovCertificate:
    """The textbook certificate for the scalar plant ``x' = -x + u``."""
    return LyapunovCertificate(
        V=lambda x1, x2: float(np.sum((x1 - x2) ** 2)),
        grad_V=lambda x1, x2: (2.0 * (x1 - x2), -2.0 * (x1 - x2)),
        alpha1=lambda s: s * s,
        alpha2=lambda s: s * s,
        rho=lambda s: 2.0 * s,
    )
