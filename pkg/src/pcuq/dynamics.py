"""Deterministic dynamics: fixed-step ODE integration with forward
sensitivities, stochastic simulation for data generation, and the two
built-in systems (a predator-prey model and an 11-species signalling
cascade with an optional kinase-inhibitor intervention).

Rates are handled in three layers so interventions compose cleanly:

    effective_rate_r(x) = modulation(x) * scale[r] * base_rates[r]

``base_rates`` is what inference acts on, ``scale`` encodes static
interventions (e.g. inhibitor knockdown of one rate), and ``modulation``
is a shared time-varying factor.  Sensitivities returned by
:func:`integrate` are with respect to ``base_rates[sens_idx]`` and
include the scale and modulation factors via the chain rule.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _fastpath
from .errors import IntegrationError

__all__ = [
    "Trajectory",
    "OdeSystem",
    "SdeSystem",
    "integrate",
    "simulate_sde",
    "lotka_volterra",
    "erk_system",
    "conserved_totals",
    "LV_STEP",
    "ERK_STEP",
    "ERK_RATES",
    "ERK_INIT",
    "ERK_CONSERVED_GROUPS",
]

#: Default integration steps.  The cascade step is 3/320 so that the
#: observation grid (multiples of 0.5625) falls exactly on step
#: boundaries; 0.5625 / (3/320) = 60 and 60 / (3/320) = 6400.
LV_STEP = 1e-2
ERK_STEP = 3.0 / 320.0

ERK_RATES = np.array(
    [0.53, 0.0072, 0.625, 0.00245, 0.0315, 0.8, 0.0075, 0.071, 0.92, 0.00122, 0.87]
)
ERK_INIT = np.array([2.0, 2.5, 0.0, 0.0, 0.0, 0.0, 2.5, 0.0, 2.5, 3.0, 0.0])

#: Index groups whose concentration sums are constant along every
#: trajectory of the cascade (total amounts of each protein across its
#: free/bound/phosphorylated forms).
ERK_CONSERVED_GROUPS = (
    (0, 2, 3),
    (6, 7),
    (3, 4, 7, 8),
    (1, 2, 3, 5, 10),
    (9, 10),
)


@dataclass
class Trajectory:
    """States (and optionally forward sensitivities) on a time grid."""

    times: np.ndarray            # (m,)
    states: np.ndarray           # (m, dim)
    sens: np.ndarray | None = None   # (m, dim, q) wrt base_rates[sens_idx]


@dataclass
class OdeSystem:
    """Autonomous-in-state ODE du/dx = rhs(u, x, rho) with layered rates."""

    name: str
    dim: int
    init: np.ndarray
    base_rates: np.ndarray
    rhs: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    jac_u: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    jac_rho: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    scale: np.ndarray | None = None
    modulation: Callable[[float], float] | None = None
    sens_idx: np.ndarray | None = None
    default_step: float = LV_STEP
    kernel: str | None = None    # "lv" / "erk" selects a compiled loop

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=float)
        self.base_rates = np.asarray(self.base_rates, dtype=float)
        if self.scale is None:
            self.scale = np.ones_like(self.base_rates)
        else:
            self.scale = np.asarray(self.scale, dtype=float)
        if self.sens_idx is None:
            self.sens_idx = np.arange(self.base_rates.shape[0])
        else:
            self.sens_idx = np.asarray(self.sens_idx, dtype=np.int64)
        if self.init.shape != (self.dim,):
            raise ValueError(f"init must have shape ({self.dim},)")
        if self.scale.shape != self.base_rates.shape:
            raise ValueError("scale must match base_rates in shape")

    def with_rates(self, base_rates) -> "OdeSystem":
        """Copy of the system with new base rates (scale/modulation kept)."""
        return dataclasses.replace(self, base_rates=np.asarray(base_rates, dtype=float))

    def effective_rates(self, x: float) -> np.ndarray:
        m = 1.0 if self.modulation is None else self.modulation(x)
        return m * self.scale * self.base_rates


@dataclass
class SdeSystem:
    """ODE drift plus additive noise eps * dW per state component."""

    ode: OdeSystem
    eps: np.ndarray
    scheme: str = "reversible_heun"

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if self.eps.shape != (self.ode.dim,):
            raise ValueError(f"eps must have shape ({self.ode.dim},)")
        if self.scheme not in ("reversible_heun", "euler_maruyama"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _grid_indices(times: np.ndarray, h: float) -> tuple[np.ndarray, int]:
    """Map requested times to step indices, requiring commensurability."""
    ratio = times / h
    idx = np.rint(ratio)
    if np.any(np.abs(ratio - idx) > 1e-6 * np.maximum(1.0, np.abs(ratio))):
        raise ValueError(
            f"requested times must be integer multiples of the step {h!r}"
        )
    idx = idx.astype(np.int64)
    if np.any(idx < 0) or np.any(np.diff(idx) <= 0):
        raise ValueError("times must be non-negative and strictly increasing")
    return idx, int(idx[-1]) if idx.size else 0


def integrate(
    system: OdeSystem,
    times: Sequence[float],
    *,
    with_sensitivities: bool = False,
    step: float | None = None,
) -> Trajectory:
    """Classical fourth-order fixed-step integration from x = 0.

    Every requested output time must sit on the step grid.  Non-finite
    states abort the sweep with :class:`IntegrationError` carrying the
    first bad time.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    h = float(system.default_step if step is None else step)
    if h <= 0:
        raise ValueError("step must be positive")
    out_idx, n_steps = _grid_indices(times, h)

    if system.kernel == "lv" and system.modulation is None:
        states, sens, bad = _fastpath.lv_path(
            system.init, system.base_rates, system.scale, h, n_steps,
            out_idx, with_sensitivities, system.sens_idx,
        )
    elif system.kernel == "erk" and system.modulation in (None, _sinusoidal_modulation):
        states, sens, bad = _fastpath.erk_path(
            system.init, system.base_rates, system.scale, h, n_steps,
            out_idx, with_sensitivities, system.sens_idx,
            system.modulation is not None,
        )
    else:
        return _integrate_generic(system, times, out_idx, n_steps, h,
                                  with_sensitivities)
    if bad >= 0:
        raise IntegrationError(
            f"{system.name}: non-finite state during integration", time=bad
        )
    return Trajectory(times, states, sens if with_sensitivities else None)


def _integrate_generic(system, times, out_idx, n_steps, h, want_sens):
    if want_sens and (system.jac_u is None or system.jac_rho is None):
        raise ValueError(
            f"{system.name}: sensitivities need jac_u and jac_rho"
        )
    dim = system.dim
    q = system.sens_idx.shape[0]
    u = system.init.copy()
    S = np.zeros((dim, q))

    n_out = out_idx.shape[0]
    states = np.empty((n_out, dim))
    sens = np.empty((n_out, dim, q))
    out_pos = 0
    if n_out and out_idx[0] == 0:
        states[0], sens[0] = u, S
        out_pos = 1

    offsets = (0.0, 0.5, 0.5, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        for step_i in range(n_steps):
            x0 = step_i * h
            ku = []
            kS = []
            for stage in range(4):
                xs = x0 + offsets[stage] * h
                if stage == 0:
                    ut, St = u, S
                elif stage == 3:
                    ut = u + h * ku[2]
                    St = S + h * kS[2]
                else:
                    ut = u + 0.5 * h * ku[stage - 1]
                    St = S + 0.5 * h * kS[stage - 1]
                m = 1.0 if system.modulation is None else system.modulation(xs)
                rho = m * system.scale * system.base_rates
                ku.append(np.asarray(system.rhs(ut, xs, rho), dtype=float))
                if want_sens:
                    Ju = np.asarray(system.jac_u(ut, xs, rho), dtype=float)
                    Jr = np.asarray(system.jac_rho(ut, xs, rho), dtype=float)
                    forcing = Jr[:, system.sens_idx] * (m * system.scale[system.sens_idx])
                    kS.append(Ju @ St + forcing)
                else:
                    kS.append(None)

            u = u + (h / 6.0) * (ku[0] + 2.0 * ku[1] + 2.0 * ku[2] + ku[3])
            if want_sens:
                S = S + (h / 6.0) * (kS[0] + 2.0 * kS[1] + 2.0 * kS[2] + kS[3])
            if not np.all(np.isfinite(u)):
                raise IntegrationError(
                    f"{system.name}: non-finite state during integration",
                    time=(step_i + 1) * h,
                )
            if out_pos < n_out and out_idx[out_pos] == step_i + 1:
                states[out_pos] = u
                if want_sens:
                    sens[out_pos] = S
                out_pos += 1

    return Trajectory(times, states, sens if want_sens else None)


def simulate_sde(
    sde: SdeSystem,
    horizon: float,
    *,
    step: float | None = None,
    times: Sequence[float] | None = None,
    seed: int | np.random.Generator = 0,
) -> Trajectory:
    """Simulate the additive-noise SDE from x = 0 to ``horizon``.

    The default scheme is the reversible Heun method (second order in
    the drift, exact for additive noise in the sense of distributional
    convergence order 1); ``euler_maruyama`` is available for checks.
    With eps = 0 both reduce to deterministic integrators, so paths can
    be validated against :func:`integrate`.
    """
    system = sde.ode
    h = float(system.default_step if step is None else step)
    if h <= 0:
        raise ValueError("step must be positive")
    n_steps = int(round(horizon / h))
    if abs(n_steps * h - horizon) > 1e-6 * max(1.0, abs(horizon)):
        raise ValueError("horizon must be an integer multiple of the step")
    if times is None:
        times = np.arange(n_steps + 1) * h
        out_idx = np.arange(n_steps + 1)
    else:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out_idx, last = _grid_indices(times, h)
        if last > n_steps:
            raise ValueError("requested times extend past the horizon")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed

    def drift(u, x):
        return np.asarray(system.rhs(u, x, system.effective_rates(x)), dtype=float)

    dim = system.dim
    y = system.init.copy()
    n_out = out_idx.shape[0]
    states = np.empty((n_out, dim))
    out_pos = 0
    if n_out and out_idx[0] == 0:
        states[0] = y
        out_pos = 1

    sqrt_h = np.sqrt(h)
    with np.errstate(over="ignore", invalid="ignore"):
        if sde.scheme == "reversible_heun":
            z = y.copy()   # auxiliary sequence of the reversible pair
            for step_i in range(n_steps):
                x0 = step_i * h
                dW = sqrt_h * rng.standard_normal(dim)
                f0 = drift(z, x0)
                z_next = 2.0 * y - z + h * f0 + sde.eps * dW
                y = y + 0.5 * h * (f0 + drift(z_next, x0 + h)) + sde.eps * dW
                z = z_next
                if not np.all(np.isfinite(y)):
                    raise IntegrationError(
                        f"{system.name}: non-finite state during simulation",
                        time=(step_i + 1) * h,
                    )
                if out_pos < n_out and out_idx[out_pos] == step_i + 1:
                    states[out_pos] = y
                    out_pos += 1
        else:
            for step_i in range(n_steps):
                x0 = step_i * h
                dW = sqrt_h * rng.standard_normal(dim)
                y = y + h * drift(y, x0) + sde.eps * dW
                if not np.all(np.isfinite(y)):
                    raise IntegrationError(
                        f"{system.name}: non-finite state during simulation",
                        time=(step_i + 1) * h,
                    )
                if out_pos < n_out and out_idx[out_pos] == step_i + 1:
                    states[out_pos] = y
                    out_pos += 1

    return Trajectory(times, states, None)


# ---------------------------------------------------------------------------
# Predator-prey system

def _lv_rhs(u, x, rho):
    a, b, g, d = rho
    return np.array([a * u[0] - b * u[0] * u[1], d * u[0] * u[1] - g * u[1]])


def _lv_jac_u(u, x, rho):
    a, b, g, d = rho
    return np.array([[a - b * u[1], -b * u[0]], [d * u[1], d * u[0] - g]])


def _lv_jac_rho(u, x, rho):
    return np.array([
        [u[0], -u[0] * u[1], 0.0, 0.0],
        [0.0, 0.0, -u[1], u[0] * u[1]],
    ])


def lotka_volterra(
    rates,
    *,
    init=(10.0, 10.0),
    eps=None,
    scheme: str = "reversible_heun",
    step: float = LV_STEP,
    sens_idx=(0, 1),
) -> OdeSystem | SdeSystem:
    """Predator-prey system du1 = (a - b u2) u1, du2 = (d u1 - g) u2.

    rates = (a, b, g, d), all non-negative.  With ``eps`` given, returns
    the additive-noise stochastic version instead (eps may be zero in
    some or all components).
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (4,):
        raise ValueError("rates must be (a, b, g, d)")
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    system = OdeSystem(
        name="lotka_volterra", dim=2, init=np.asarray(init, dtype=float),
        base_rates=rates, rhs=_lv_rhs, jac_u=_lv_jac_u, jac_rho=_lv_jac_rho,
        sens_idx=np.asarray(sens_idx, dtype=np.int64),
        default_step=step, kernel="lv",
    )
    if eps is None:
        return system
    return SdeSystem(system, np.asarray(eps, dtype=float), scheme)


# ---------------------------------------------------------------------------
# Signalling cascade

def _erk_rhs(u, x, rho):
    du = np.empty(11)
    _fastpath._erk_rhs.py_func(u, rho, du)
    return du


def _erk_jac_u(u, x, rho):
    J = np.empty((11, 11))
    _fastpath._erk_jac_u.py_func(u, rho, J)
    return J


def _erk_jac_rho(u, x, rho):
    J = np.empty((11, 11))
    col = np.empty(11)
    for r in range(11):
        _fastpath._erk_jac_rho_col.py_func(u, r, col)
        J[:, r] = col
    return J


def _sinusoidal_modulation(x: float) -> float:
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * x / 45.0)


def erk_system(
    rates=None,
    *,
    init=None,
    modulated: bool = False,
    meki: float | None = None,
    sens_idx=None,
    step: float = ERK_STEP,
) -> OdeSystem:
    """Eleven-species phosphorylation cascade driving doubly
    phosphorylated ERK (state u5, index 4).

    ``modulated`` applies the shared sinusoidal factor
    1 + sin(2 pi x / 45)/2 to every rate; ``meki`` multiplies the MEK
    activation rate (rate index 5) by the given factor, modelling a
    kinase inhibitor.  All 11 rates are differentiable targets unless
    ``sens_idx`` narrows them.
    """
    rates = ERK_RATES.copy() if rates is None else np.asarray(rates, dtype=float)
    if rates.shape != (11,):
        raise ValueError("rates must have 11 entries")
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    init = ERK_INIT.copy() if init is None else np.asarray(init, dtype=float)
    scale = np.ones(11)
    if meki is not None:
        if meki < 0:
            raise ValueError("meki factor must be non-negative")
        scale[5] = meki
    return OdeSystem(
        name="erk", dim=11, init=init, base_rates=rates,
        rhs=_erk_rhs, jac_u=_erk_jac_u, jac_rho=_erk_jac_rho,
        scale=scale,
        modulation=_sinusoidal_modulation if modulated else None,
        sens_idx=None if sens_idx is None else np.asarray(sens_idx, dtype=np.int64),
        default_step=step, kernel="erk",
    )


def conserved_totals(states: np.ndarray) -> np.ndarray:
    """Per-row sums of the cascade's five conserved concentration groups."""
    states = np.atleast_2d(states)
    return np.stack(
        [states[:, list(g)].sum(axis=1) for g in ERK_CONSERVED_GROUPS], axis=1
    )
