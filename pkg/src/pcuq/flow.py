"""Interacting-particle Langevin dynamics for the entropy-regularised
MMD objective over mixing distributions.

N particles follow the Euler-Maruyama discretisation

    theta_i <- theta_i + h * drift_i + sqrt(2 lambda h) xi_i
    drift_i = lambda grad log q0(theta_i)
              - (1/(N-1)) sum_{j != i} grad_1 kappa(theta_i, theta_j)

whose stationary ensemble approximates the unique minimiser of the
regularised objective; the drift is, blockwise, lambda times the
gradient of the joint log-density sampled by the MCMC baseline, which
ties the two implementations together.

Each particle owns an RNG stream, so permuting particles together with
their stream keys permutes the output exactly, and parallel evaluation
order can never change results.  On divergence the run restarts from
the same initial ensemble with a halved step, a handful of times, then
gives up loudly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, IntegrationError, ModelEvaluationError, TuningWarning
from .models import GaussianPrior

__all__ = ["FlowResult", "drift", "run_flow", "step"]

_NOISE_BLOCK = 1024


@dataclass
class FlowResult:
    particles: np.ndarray        # (N, p) final ensemble
    history: np.ndarray          # (K, N, p) retained post-burn-in snapshots
    snapshot_steps: np.ndarray   # (K,) iteration index of each snapshot
    step: float                  # step size actually used
    n_halvings: int
    n_steps: int
    lam: float

    @property
    def atoms(self) -> np.ndarray:
        """Retained particles pooled into one (K*N, p) mixture support."""
        return self.history.reshape(-1, self.history.shape[-1])


def drift(particles, kernel, prior, lam: float) -> np.ndarray:
    """Drift rows for the whole ensemble against a frozen snapshot.

    ``kernel`` may be None for the interaction-free case (empty data),
    which leaves pure Langevin dynamics on the reference measure.
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    base = lam * prior.grad_log_pdf(particles)
    if kernel is None:
        return base
    return base - kernel.interaction(particles)


def step(particles, kernel, prior, lam: float, h: float, rngs) -> np.ndarray:
    """One Euler-Maruyama update with per-particle noise streams."""
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    if h < 0:
        raise ValueError("step size must be non-negative")
    d = drift(particles, kernel, prior, lam)
    p = particles.shape[1]
    xi = np.stack([rng.standard_normal(p) for rng in rngs])
    return particles + h * d + np.sqrt(2.0 * lam * h) * xi


def _particle_rngs(seed: int, attempt: int, stream_keys) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, 7, attempt, int(k)]) for k in stream_keys]


def run_flow(
    kernel,
    prior: GaussianPrior,
    lam: float,
    *,
    n_steps: int,
    n_particles: int = 10,
    step_size: float = 1e-3,
    init=None,
    seed: int = 0,
    burn_in: float = 2.0 / 3.0,
    thin: int = 10,
    max_halvings: int = 5,
    stream_keys=None,
) -> FlowResult:
    """Run the particle flow and return retained thinned snapshots.

    Snapshots are anchored at the final iteration: step k is retained
    when k >= ceil(burn_in * n_steps) and (n_steps - k) % thin == 0.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must be in [0, 1)")
    if thin < 1:
        raise ValueError("thin must be at least 1")
    if step_size <= 0:
        raise ValueError("step_size must be positive")

    p = prior.dim
    if init is None:
        init = prior.sample(n_particles, seed=np.random.default_rng([seed, 3]))
    else:
        init = np.array(init, dtype=float, copy=True)
        if init.ndim != 2 or init.shape[1] != p:
            raise ValueError(f"init must have shape (N, {p})")
    N = init.shape[0]
    if N < 2:
        raise ValueError("at least 2 particles are needed for the interaction term")
    if stream_keys is None:
        stream_keys = np.arange(N)
    elif len(stream_keys) != N:
        raise ValueError("stream_keys must have one entry per particle")

    start = int(np.ceil(burn_in * n_steps))
    kept_steps = [k for k in range(max(start, 1), n_steps + 1)
                  if (n_steps - k) % thin == 0]

    last_good = init
    for attempt in range(max_halvings + 1):
        h = step_size / 2**attempt
        rngs = _particle_rngs(seed, attempt, stream_keys)
        buffers = np.empty((N, 0, p))
        buf_pos = 0
        particles = init.copy()
        snapshots = []
        next_keep = 0
        diverged_at = None
        # non-finite states are caught below, so let overflow pass silently
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, n_steps + 1):
                if buf_pos >= buffers.shape[1]:
                    block = min(_NOISE_BLOCK, n_steps - k + 1)
                    buffers = np.stack([rng.standard_normal((block, p))
                                        for rng in rngs])
                    buf_pos = 0
                try:
                    d = drift(particles, kernel, prior, lam)
                except (IntegrationError, ModelEvaluationError):
                    diverged_at = k
                    break
                last_good = particles
                particles = (particles + h * d
                             + np.sqrt(2.0 * lam * h) * buffers[:, buf_pos, :])
                buf_pos += 1
                if not np.all(np.isfinite(particles)):
                    diverged_at = k
                    break
                if next_keep < len(kept_steps) and k == kept_steps[next_keep]:
                    snapshots.append(particles.copy())
                    next_keep += 1
        if diverged_at is None:
            history = (np.stack(snapshots) if snapshots
                       else particles[None].copy())
            steps_arr = (np.asarray(kept_steps, dtype=np.int64) if snapshots
                         else np.array([n_steps], dtype=np.int64))
            return FlowResult(
                particles=particles, history=history, snapshot_steps=steps_arr,
                step=h, n_halvings=attempt, n_steps=n_steps, lam=lam,
            )
        if attempt < max_halvings:
            warnings.warn(
                TuningWarning(
                    f"flow diverged at step {diverged_at} with h={h:g}; "
                    f"retrying with h={h / 2:g}"
                ),
                stacklevel=2,
            )
    raise DivergenceError(
        f"flow diverged after {max_halvings} halvings (final step {h:g})",
        step=h, last_ensemble=last_good,
    )
