"""Brute-force grid solver for the self-consistency equation that the
optimal mixing measure satisfies:

    Q(dtheta) = (1/Z) Q0(dtheta) exp(-V_Q(theta) / lambda)
    V_Q(theta) = int <mu(P_theta), mu(P_vth)> dQ(vth) - <mu(P_n), mu(P_theta)>

On a tensor grid the integral becomes a weighted sum and the equation is
solved by damped fixed-point iteration.  Replacing the model-model inner
product with the full data-centred kernel shifts V by a theta-independent
constant, which the normalisation absorbs; the solver asserts this so the
grid oracle and the particle flow provably share one target.

The result is the reference measure that low-dimensional flow runs are
validated against (uniqueness of the minimiser makes it a true oracle).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import FixedPointError
from .kernels import SteinKernel
from .models import GaussianPrior

__all__ = ["GridMeasure", "FixedPointResult", "potential", "solve_fixed_point"]

_MAX_GRID = 5001   # dense pair matrices get quadratic; keep desk-scale


@dataclass
class GridMeasure:
    points: np.ndarray    # (G, p) grid coordinates
    axes: tuple           # per-dimension coordinate arrays
    weights: np.ndarray   # (G,) probability masses, sum 1
    cell: float           # cell volume (uniform grid)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def cov(self) -> np.ndarray:
        c = self.points - self.mean()
        return (self.weights * c.T) @ c

    def density(self) -> np.ndarray:
        """Probability density values at the grid points."""
        return self.weights / self.cell


@dataclass
class FixedPointResult:
    measure: GridMeasure
    residual: float
    n_iter: int
    residual_history: np.ndarray


def _grid_evals(kernel: SteinKernel, points: np.ndarray):
    """A values and pair matrix B over the grid."""
    G = len(points)
    with kernel.expanded_cache(G + 4):
        evals = list(kernel._ensemble_evals(points))
        A = np.array([e.A for e in evals])
        B = np.empty((G, G))
        for i in range(G):
            B[i, i] = kernel._B(evals[i], evals[i])
            for j in range(i + 1, G):
                B[i, j] = B[j, i] = kernel._B(evals[i], evals[j])
    return A, B


def potential(kernel: SteinKernel, measure: GridMeasure, thetas) -> np.ndarray:
    """V at arbitrary points against a fixed grid measure."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    G = len(measure.points)
    out = np.empty(len(thetas))
    with kernel.expanded_cache(G + len(thetas) + 4):
        grid_evals = kernel._ensemble_evals(measure.points)
        for i, t in enumerate(thetas):
            et = kernel.evaluate(t)
            Bt = np.array([kernel._B(et, eg) for eg in grid_evals])
            out[i] = measure.weights @ Bt - et.A
    return out


def solve_fixed_point(
    kernel: SteinKernel,
    prior: GaussianPrior,
    lam: float,
    *,
    n_points: int = 401,
    span: float = 5.0,
    center=None,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 5000,
    init=None,
) -> FixedPointResult:
    """Damped iteration q <- (1-g) q + g normalise(q0 exp(-V_q / lambda)).

    The grid covers center +/- span prior standard deviations per axis;
    only one- and two-dimensional parameter spaces are supported (denser
    grids would be needed beyond that, defeating the brute-force point).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must be in (0, 1]")
    p = prior.dim
    if p > 2:
        raise ValueError("the grid oracle supports p <= 2 only")
    center = prior.mean if center is None else np.asarray(center, dtype=float)
    axes = tuple(
        np.linspace(center[k] - span * prior.sd[k],
                    center[k] + span * prior.sd[k], n_points)
        for k in range(p)
    )
    if n_points**p > _MAX_GRID:
        raise ValueError(
            f"grid of {n_points**p} points is beyond the dense-solver range; "
            "reduce n_points"
        )
    points = np.array(list(product(*axes)), dtype=float)
    cell = float(np.prod([ax[1] - ax[0] for ax in axes]))
    G = len(points)

    log_q0 = prior.log_pdf(points)
    A, B = _grid_evals(kernel, points)

    if init is None:
        w = np.full(G, 1.0 / G)
    else:
        w = np.asarray(init, dtype=float).copy()
        if w.shape != (G,) or np.any(w < 0):
            raise ValueError("init must be nonnegative with one weight per point")
        w = w / w.sum()

    history = []
    for it in range(1, max_iter + 1):
        V = B @ w - A
        t = log_q0 - V / lam
        t -= t.max()
        target = np.exp(t)
        target /= target.sum()
        residual = float(np.max(np.abs(target - w)))
        history.append(residual)
        if residual < tol:
            measure = GridMeasure(points=points, axes=axes, weights=w, cell=cell)
            return FixedPointResult(
                measure=measure, residual=residual, n_iter=it,
                residual_history=np.asarray(history),
            )
        w = (1.0 - damping) * w + damping * target
    raise FixedPointError(
        f"no fixed point after {max_iter} damped sweeps "
        f"(last residual {history[-1]:.3e})",
        residuals=np.asarray(history),
    )
