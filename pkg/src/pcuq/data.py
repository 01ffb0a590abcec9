"""Dataset container: paired covariates (times) and observations.

A dataset is the empirical measure the predictive fit is computed
against.  Covariates are stored once, as read, and never recomputed, so
exact (bitwise) covariate ties are well defined downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """n paired records: covariate x_i (scalar, typically time) and y_i in R^d."""

    x: np.ndarray  # (n,)
    y: np.ndarray  # (n, d)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 1:
            raise ValueError("covariates must be a 1-D array of scalars")
        if y.ndim != 2 or y.shape[0] != x.shape[0]:
            raise ValueError(
                f"observations must be (n, d) with n={x.shape[0]}, got {y.shape}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.y.shape[1]
