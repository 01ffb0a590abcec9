"""Observation layer: forward maps w_theta(x), componentwise parameter
transforms, and the Gaussian observation model y = w_theta(x) + sigma e.

Inference always runs in an unconstrained parameter space; a
:class:`ParamTransform` maps those coordinates to the native (possibly
bounded) parameters of the underlying map, and Jacobians returned by
``evaluate`` are with respect to the unconstrained coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .dynamics import OdeSystem, integrate

__all__ = [
    "ParamTransform",
    "LocationMap",
    "CallableMap",
    "OdeMap",
    "GaussianObsModel",
    "GaussianPrior",
    "log_density",
    "log_density_grad",
    "sample",
]

_FORWARD = {
    "identity": lambda t: t,
    "sigmoid": expit,
    "exp": np.exp,
}
_INVERSE = {
    "identity": lambda v: v,
    "sigmoid": logit,
    "exp": np.log,
}
_DERIV = {
    "identity": lambda t: np.ones_like(t),
    "sigmoid": lambda t: expit(t) * (1.0 - expit(t)),
    "exp": np.exp,
}


@dataclass(frozen=True)
class ParamTransform:
    """Componentwise map from unconstrained coordinates to native parameters.

    Supported kinds per component: ``identity`` (R -> R), ``sigmoid``
    (R -> (0, 1)), ``exp`` (R -> (0, inf)).
    """

    kinds: tuple[str, ...]

    def __post_init__(self):
        for k in self.kinds:
            if k not in _FORWARD:
                raise ValueError(f"unknown transform kind {k!r}")

    @classmethod
    def identity(cls, p: int) -> "ParamTransform":
        return cls(("identity",) * p)

    @property
    def dim(self) -> int:
        return len(self.kinds)

    def _apply(self, table, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.dim:
            raise ValueError(f"last axis must have length {self.dim}")
        out = np.empty_like(values)
        for j, k in enumerate(self.kinds):
            out[..., j] = table[k](values[..., j])
        return out

    def forward(self, theta):
        return self._apply(_FORWARD, theta)

    def inverse(self, native):
        """Unconstrained coordinates; out-of-range native values give nan/inf."""
        return self._apply(_INVERSE, native)

    def deriv(self, theta):
        """d(native)/d(theta), componentwise."""
        return self._apply(_DERIV, theta)


@dataclass(frozen=True)
class LocationMap:
    """w_theta(x) = theta for every covariate: the pure location model."""

    n: int
    dim: int = 1
    #: the map ignores x entirely, letting kernel sums collapse
    constant_over_x = True

    @property
    def param_dim(self) -> int:
        return self.dim

    @property
    def obs_dim(self) -> int:
        return self.dim

    def evaluate(self, theta, *, with_jacobian: bool = False):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        W = np.tile(theta, (self.n, 1))
        if not with_jacobian:
            return W, None
        J = np.tile(np.eye(self.dim), (self.n, 1, 1))
        return W, J

    def evaluate_batch(self, thetas, *, with_jacobian: bool = False):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        m = thetas.shape[0]
        W = np.broadcast_to(thetas[:, None, :], (m, self.n, self.dim)).copy()
        if not with_jacobian:
            return W, None
        J = np.broadcast_to(np.eye(self.dim), (m, self.n, self.dim, self.dim)).copy()
        return W, J


@dataclass(frozen=True)
class CallableMap:
    """Forward map from user functions; jac(theta) -> (n, d, p) optional."""

    fn: Callable[[np.ndarray], np.ndarray]
    param_dim: int
    obs_dim: int
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    #: set True only if fn returns the same row for every covariate
    constant_over_x: bool = False

    def evaluate(self, theta, *, with_jacobian: bool = False):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        W = np.atleast_2d(np.asarray(self.fn(theta), dtype=float))
        if not with_jacobian:
            return W, None
        if self.jac is None:
            raise ValueError("no Jacobian available for this map")
        return W, np.asarray(self.jac(theta), dtype=float)


class OdeMap:
    """Forward map backed by an ODE solve: w_theta(x) = observed components
    of the trajectory at time x, with rates[sens_idx] = transform(theta).
    """

    def __init__(
        self,
        system: OdeSystem,
        times,
        transform: ParamTransform | None = None,
        observed=None,
        step: float | None = None,
    ):
        self.system = system
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        p = system.sens_idx.shape[0]
        self.transform = ParamTransform.identity(p) if transform is None else transform
        if self.transform.dim != p:
            raise ValueError("transform dimension must match len(sens_idx)")
        self.observed = (
            np.arange(system.dim) if observed is None
            else np.asarray(observed, dtype=np.int64)
        )
        self.step = step

    @property
    def param_dim(self) -> int:
        return self.transform.dim

    @property
    def obs_dim(self) -> int:
        return self.observed.shape[0]

    def evaluate(self, theta, *, with_jacobian: bool = False):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.param_dim,):
            raise ValueError(f"theta must have shape ({self.param_dim},)")
        native = self.transform.forward(theta)
        rates = self.system.base_rates.copy()
        rates[self.system.sens_idx] = native
        traj = integrate(
            self.system.with_rates(rates), self.times,
            with_sensitivities=with_jacobian, step=self.step,
        )
        W = traj.states[:, self.observed]
        if not with_jacobian:
            return W, None
        # chain rule through the componentwise transform
        J = traj.sens[:, self.observed, :] * self.transform.deriv(theta)
        return W, J


@dataclass(frozen=True)
class GaussianObsModel:
    """y_i = w_theta(x_i) + sigma * e_i with e_i standard normal, iid."""

    forward: object
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if sigma.shape == (1,):
            sigma = np.full(self.forward.obs_dim, sigma[0])
        if sigma.shape != (self.forward.obs_dim,):
            raise ValueError(
                f"sigma must have shape ({self.forward.obs_dim},)"
            )
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "sigma", sigma)

    @property
    def param_dim(self) -> int:
        return self.forward.param_dim

    @property
    def obs_dim(self) -> int:
        return self.forward.obs_dim


def log_density(model: GaussianObsModel, theta, y) -> float:
    """Joint log density of observations y (n, d) given theta.

    Needs strictly positive sigma in every component.
    """
    if np.any(model.sigma == 0):
        raise ValueError("log density undefined with a zero noise scale")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    W, _ = model.forward.evaluate(theta)
    resid = (y - W) / model.sigma
    n = y.shape[0]
    return float(
        -0.5 * np.sum(resid * resid)
        - n * np.sum(np.log(model.sigma))
        - 0.5 * n * model.obs_dim * np.log(2.0 * np.pi)
    )


def log_density_grad(model: GaussianObsModel, theta, y) -> tuple[float, np.ndarray]:
    """Log density and its gradient in theta."""
    if np.any(model.sigma == 0):
        raise ValueError("log density undefined with a zero noise scale")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    W, J = model.forward.evaluate(theta, with_jacobian=True)
    resid = (y - W) / model.sigma**2
    n = y.shape[0]
    value = float(
        -0.5 * np.sum((y - W) ** 2 / model.sigma**2)
        - n * np.sum(np.log(model.sigma))
        - 0.5 * n * model.obs_dim * np.log(2.0 * np.pi)
    )
    grad = np.einsum("id,idk->k", resid, J)
    return value, grad


def sample(
    model: GaussianObsModel,
    theta,
    *,
    n_rep: int = 1,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Draw n_rep replicate datasets (n_rep, n, d) under the model at theta."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    W, _ = model.forward.evaluate(theta)
    eps = rng.standard_normal((n_rep,) + W.shape)
    return W[None] + model.sigma * eps


@dataclass(frozen=True)
class GaussianPrior:
    """Independent Gaussian reference measure on the unconstrained space."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if sd.shape != mean.shape or np.any(sd <= 0):
            raise ValueError("sd must be positive and match mean in shape")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @classmethod
    def standard(cls, p: int) -> "GaussianPrior":
        return cls(np.zeros(p), np.ones(p))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_pdf(self, theta):
        """Scalar for one point, (m,) for a stack of points."""
        z = (np.asarray(theta, dtype=float) - self.mean) / self.sd
        val = (-0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.sd))
               - 0.5 * self.dim * np.log(2.0 * np.pi))
        return float(val) if np.ndim(val) == 0 else val

    def grad_log_pdf(self, theta) -> np.ndarray:
        """Broadcasts over leading axes."""
        return -(np.asarray(theta, dtype=float) - self.mean) / self.sd**2

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return self.mean + self.sd * rng.standard_normal((n, self.dim))
