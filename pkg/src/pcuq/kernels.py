"""Gaussian kernel mean embeddings in closed form, Monte Carlo checks for
them, and the data-dependent interaction kernel

    kappa(theta, vartheta) = <mu_n - mu_theta, mu_n - mu_vartheta>

between the empirical embedding mu_n of the data and the embeddings of
the model laws P_theta = N(w_theta(x), diag(sigma^2)).  With a product
kernel k_X * k_Y on covariate-observation pairs the inner product
decomposes into weighted double sums

    kappa = c0 - A(theta) - A(vartheta) + B(theta, vartheta)
    c0             = (1/n^2) sum_ij M_ij k_Y(y_i, y_j)
    A(theta)       = (1/n^2) sum_ij M_ij nu(y_i; w_theta(x_j))
    B(theta, vth)  = (1/n^2) sum_ij M_ij xi(w_theta(x_i), w_vth(x_j))

with nu / xi the singly and doubly smoothed kernels below and covariate
weights M_ij = k_X(x_i, x_j).  The vanishing-lengthscale limit of k_X
makes M_ij the indicator of exactly equal covariates; when covariates
are also pairwise distinct only the diagonal survives and every sum is
O(n).  Exchangeable data (all covariates equal) recovers the plain
embedding without covariate weighting as the other extreme of the same
formula.

Note kappa(theta, theta) equals the squared discrepancy
MMD^2(P_n, P_theta), which the Gibbs-posterior baseline uses directly.

Gradient strategies: ``analytic`` differentiates the closed forms;
``reparam`` and ``score`` are Monte Carlo estimators of the same
gradients (draws are derived deterministically from the parameter bytes
so repeated evaluation is stable).  The strategy affects gradients only;
values always use the closed forms.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import GaussianObsModel

__all__ = [
    "gauss_kernel",
    "embed_single",
    "embed_single_grad",
    "embed_double",
    "embed_double_grad1",
    "embed_single_mc",
    "embed_double_mc",
    "SteinKernel",
]


def gauss_kernel(a, b, ell):
    """exp(-sum_d (a_d - b_d)^2 / (2 ell_d^2)); broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    z = (a - b) / np.asarray(ell, dtype=float)
    return np.exp(-0.5 * np.sum(z * z, axis=-1))


def _smoothed(ell, sigma, factor):
    """Variance ell^2 + factor * sigma^2 and the matching prefactor."""
    ell = np.asarray(ell, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    s = ell * ell + factor * sigma * sigma
    pref = float(np.sqrt(np.prod(ell * ell / s)))
    return s, pref


def embed_single(y, w, sigma, ell):
    """E_z k(y, z) for z ~ N(w, diag(sigma^2)): one smoothed Gaussian."""
    s, pref = _smoothed(ell, sigma, 1.0)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    d2 = np.sum((y - w) ** 2 / s, axis=-1)
    return pref * np.exp(-0.5 * d2)


def embed_single_grad(y, w, J, sigma, ell):
    """Value and gradient of embed_single in theta, with J = dw/dtheta."""
    s, _ = _smoothed(ell, sigma, 1.0)
    value = embed_single(y, w, sigma, ell)
    c = (np.asarray(y, dtype=float) - np.asarray(w, dtype=float)) / s
    grad = value * (np.asarray(J, dtype=float).T @ c)
    return value, grad


def embed_double(w, v, sigma, ell):
    """E_z E_z' k(z, z') for z ~ N(w, .), z' ~ N(v, .): doubly smoothed."""
    s, pref = _smoothed(ell, sigma, 2.0)
    d2 = np.sum((np.asarray(w, dtype=float) - np.asarray(v, dtype=float)) ** 2 / s,
                axis=-1)
    return pref * np.exp(-0.5 * d2)


def embed_double_grad1(w, v, Jw, sigma, ell):
    """Value and gradient of embed_double in the first argument's theta."""
    s, _ = _smoothed(ell, sigma, 2.0)
    value = embed_double(w, v, sigma, ell)
    c = (np.asarray(v, dtype=float) - np.asarray(w, dtype=float)) / s
    grad = value * (np.asarray(Jw, dtype=float).T @ c)
    return value, grad


def embed_single_mc(y, w, sigma, ell, n_samples, seed=0):
    """Monte Carlo estimate of embed_single; returns (mean, standard error)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.asarray(w, dtype=float)
    z = w + np.asarray(sigma, dtype=float) * rng.standard_normal((n_samples,) + w.shape)
    vals = gauss_kernel(np.asarray(y, dtype=float), z, ell)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))


def embed_double_mc(w, v, sigma, ell, n_samples, seed=0):
    """Monte Carlo estimate of embed_double; returns (mean, standard error)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = w + sigma * rng.standard_normal((n_samples,) + w.shape)
    zp = v + sigma * rng.standard_normal((n_samples,) + v.shape)
    vals = gauss_kernel(z, zp, ell)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))


@dataclass
class _Eval:
    """Per-parameter quantities reused across kernel evaluations."""

    W: np.ndarray            # (n, d) forward-map values
    J: np.ndarray            # (n, d, p) Jacobian wrt unconstrained theta
    A: float                 # data-vs-model cross term
    gradA: np.ndarray        # (p,)
    eps: np.ndarray | None   # (n_mc, n, d) draws for MC gradient strategies


def _theta_key(theta: np.ndarray) -> bytes:
    return theta.tobytes()


def _theta_seed(theta: np.ndarray, base: int) -> np.random.Generator:
    digest = hashlib.blake2b(theta.tobytes(), digest_size=8).digest()
    return np.random.default_rng([base, int.from_bytes(digest, "little")])


class SteinKernel:
    """The interaction kernel bound to one dataset and observation model.

    Per-parameter forward solves and embedding sums are cached in an LRU
    keyed by the exact parameter bytes, sized for one particle ensemble
    plus scratch evaluations.
    """

    def __init__(
        self,
        dataset: Dataset,
        model: GaussianObsModel,
        *,
        ell_y=None,
        ell_x: float | str = "zero",
        gradient_strategy: str = "analytic",
        n_mc: int = 128,
        cache_size: int = 16,
        seed: int = 0,
    ):
        if gradient_strategy not in ("analytic", "reparam", "score"):
            raise ValueError(f"unknown gradient strategy {gradient_strategy!r}")
        self.dataset = dataset
        self.model = model
        self.sigma = model.sigma
        if ell_y is None:
            if np.any(self.sigma == 0):
                raise ValueError("ell_y must be given when sigma has zero entries")
            ell_y = self.sigma.copy()
        self.ell_y = np.atleast_1d(np.asarray(ell_y, dtype=float))
        if self.ell_y.shape != (model.obs_dim,) or np.any(self.ell_y <= 0):
            raise ValueError("ell_y must be positive with one entry per output dimension")
        if gradient_strategy == "score" and np.any(self.sigma == 0):
            raise ValueError("score gradients need strictly positive sigma")
        self.strategy = gradient_strategy
        self.n_mc = int(n_mc)
        self.seed = int(seed)

        x = dataset.x
        if ell_x == "zero":
            M = (x[:, None] == x[None, :]).astype(float)
        else:
            ell_x = float(ell_x)
            if ell_x <= 0:
                raise ValueError("ell_x must be positive or 'zero'")
            dx = x[:, None] - x[None, :]
            M = np.exp(-0.5 * (dx / ell_x) ** 2)
        self._M = M
        # with exact-equality weights and pairwise-distinct covariates only
        # the diagonal survives, so the double sums collapse to O(n)
        self._diag = bool(ell_x == "zero" and not np.any(M - np.diag(np.diag(M))))
        # maps that ignore the covariate (w_theta(x) = w_theta) collapse the
        # model-side sums to a single embedding against aggregated weights
        self._const = bool(getattr(model.forward, "constant_over_x", False))
        self._row_w = M.sum(axis=1) / dataset.n**2
        self._tot_w = float(M.sum()) / dataset.n**2

        self._s1, self._pref1 = _smoothed(self.ell_y, self.sigma, 1.0)
        self._s2, self._pref2 = _smoothed(self.ell_y, self.sigma, 2.0)

        y = dataset.y
        ky = gauss_kernel(y[:, None, :], y[None, :, :], self.ell_y)
        self.c0 = float(np.sum(M * ky) / dataset.n**2)

        self._cache: OrderedDict[bytes, _Eval] = OrderedDict()
        self.cache_size = int(cache_size)

    # -- per-particle evaluation ------------------------------------------

    def evaluate(self, theta) -> _Eval:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        key = _theta_key(theta)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        W, J = self.model.forward.evaluate(theta, with_jacobian=True)
        ev = self._finish_eval(theta, W, J)
        self._insert(key, ev)
        return ev

    def _insert(self, key: bytes, ev: _Eval):
        self._cache[key] = ev
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)

    @contextmanager
    def expanded_cache(self, size: int):
        """Temporarily hold at least ``size`` evaluations (grid sweeps)."""
        old = self.cache_size
        self.cache_size = max(old, size)
        try:
            yield
        finally:
            self.cache_size = old
            while len(self._cache) > old:
                self._cache.popitem(last=False)

    def _finish_eval(self, theta, W, J) -> _Eval:
        n, d = self.dataset.n, self.model.obs_dim
        if W.shape != (n, d):
            raise ValueError("forward map output does not match the dataset")
        y = self.dataset.y
        M = self._M

        if self._const and self.strategy == "analytic":
            diff = y - W[0]
            S = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            A = float(S @ self._row_w)
            gradA = np.einsum("i,id,dk->k", self._row_w * S, diff / self._s1, J[0])
            return _Eval(W=W, J=J, A=A, gradA=gradA, eps=None)
        if self._diag:
            S = self._pref1 * np.exp(-0.5 * np.sum((y - W) ** 2 / self._s1, axis=-1))
            A = float(S.sum() / n**2)
            gradA = np.einsum("i,id,idk->k", S, (y - W) / self._s1, J) / n**2
        else:
            diff = y[:, None, :] - W[None, :, :]
            S = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            A = float(np.sum(M * S) / n**2)
            gradA = np.einsum("ij,ijd,jdk->k", M * S, diff / self._s1, J) / n**2

        eps = None
        if self.strategy != "analytic":
            rng = _theta_seed(theta, self.seed)
            eps = rng.standard_normal((self.n_mc, n, d))
            gradA = self._gradA_mc(W, J, eps)
        return _Eval(W=W, J=J, A=A, gradA=gradA, eps=eps)

    def _ensemble_evals(self, thetas) -> list[_Eval]:
        """Cached lookups plus one batched forward pass for the misses."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        evals: list[_Eval | None] = []
        missing: list[int] = []
        for idx, t in enumerate(thetas):
            hit = self._cache.get(_theta_key(t))
            if hit is not None:
                self._cache.move_to_end(_theta_key(t))
            else:
                missing.append(idx)
            evals.append(hit)
        if missing:
            batch = getattr(self.model.forward, "evaluate_batch", None)
            if batch is not None:
                Ws, Js = batch(thetas[missing], with_jacobian=True)
            else:
                out = [self.model.forward.evaluate(thetas[i], with_jacobian=True)
                       for i in missing]
                Ws = np.stack([W for W, _ in out])
                Js = np.stack([J for _, J in out])
            if self.strategy == "analytic":
                made = self._finish_eval_batch(Ws, Js)
            else:
                made = [self._finish_eval(thetas[i], W, J)
                        for i, W, J in zip(missing, Ws, Js)]
            for idx, ev in zip(missing, made):
                self._insert(_theta_key(thetas[idx]), ev)
                evals[idx] = ev
        return evals

    def _finish_eval_batch(self, Ws, Js) -> list[_Eval]:
        """Analytic A and gradA for a stack of particles in one pass."""
        n, d = self.dataset.n, self.model.obs_dim
        if Ws.shape[1:] != (n, d):
            raise ValueError("forward map output does not match the dataset")
        y = self.dataset.y
        if self._const:
            diff = y[None] - Ws[:, :1, :]                         # (m, n, d)
            S = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            A = S @ self._row_w
            gradA = np.einsum("ai,aid,adk->ak",
                              self._row_w * S, diff / self._s1, Js[:, 0])
        elif self._diag:
            diff = y[None] - Ws                                   # (m, n, d)
            S = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            A = S.sum(axis=1) / n**2
            gradA = np.einsum("ai,aid,aidk->ak", S, diff / self._s1, Js) / n**2
        else:
            diff = y[None, :, None, :] - Ws[:, None, :, :]        # (m, n, n, d)
            S = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            A = np.einsum("ij,aij->a", self._M, S) / n**2
            gradA = np.einsum("ij,aij,aijd,ajdk->ak",
                              self._M, S, diff / self._s1, Js) / n**2
        return [_Eval(W=W, J=J, A=float(a), gradA=g, eps=None)
                for W, J, a, g in zip(Ws, Js, A, gradA)]

    def _gradA_mc(self, W, J, eps):
        """MC gradient of A: smooth k_Y(y_i, .) over z ~ N(w_j, sigma^2)."""
        n = self.dataset.n
        y = self.dataset.y
        z = W[None] + self.sigma * eps          # (S, n, d)
        if self._diag:
            k = gauss_kernel(y[None], z, self.ell_y)            # (S, n)
            if self.strategy == "reparam":
                c = (y[None] - z) / self.ell_y**2               # (S, n, d)
            else:
                c = eps / self.sigma
            return np.einsum("sj,sjd,jdk->k", k, c, J) / (self.n_mc * n**2)
        k = gauss_kernel(y[:, None, None, :], z[None], self.ell_y)   # (n, S, n)
        if self.strategy == "reparam":
            c = (y[:, None, None, :] - z[None]) / self.ell_y**2      # (n, S, n, d)
            terms = np.einsum("isj,isjd,jdk->ijk", k, c, J)
        else:
            c = eps / self.sigma
            terms = np.einsum("isj,sjd,jdk->ijk", k, c, J)
        return np.einsum("ij,ijk->k", self._M, terms) / (self.n_mc * n**2)

    # -- pair terms -------------------------------------------------------

    def _B(self, ea: _Eval, eb: _Eval) -> float:
        n = self.dataset.n
        if self._const:
            return float(self._tot_w * embed_double(
                ea.W[0], eb.W[0], self.sigma, self.ell_y))
        if self._diag:
            D = self._pref2 * np.exp(
                -0.5 * np.sum((ea.W - eb.W) ** 2 / self._s2, axis=-1))
            return float(D.sum() / n**2)
        diff = ea.W[:, None, :] - eb.W[None, :, :]
        D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
        return float(np.sum(self._M * D) / n**2)

    def _B_grad1(self, ea: _Eval, eb: _Eval) -> np.ndarray:
        """Gradient of B in the first argument's theta."""
        n = self.dataset.n
        if self.strategy == "analytic":
            if self._const:
                val, grad = embed_double_grad1(
                    ea.W[0], eb.W[0], ea.J[0], self.sigma, self.ell_y)
                return self._tot_w * grad
            if self._diag:
                diff = ea.W - eb.W
                D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
                return np.einsum("i,id,idk->k", D, -diff / self._s2, ea.J) / n**2
            diff = ea.W[:, None, :] - eb.W[None, :, :]
            D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
            return np.einsum("ij,ijd,idk->k", self._M * D, -diff / self._s2, ea.J) / n**2
        # MC: z from the first argument, second argument smoothed in closed
        # form, giving the singly smoothed kernel as integrand
        z = ea.W[None] + self.sigma * ea.eps     # (S, n, d)
        if self._diag:
            diff = z - eb.W[None]                # (S, n, d)
            g = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
            if self.strategy == "reparam":
                c = -diff / self._s1
            else:
                c = ea.eps / self.sigma
            return np.einsum("si,sid,idk->k", g, c, ea.J) / (self.n_mc * n**2)
        diff = z[:, :, None, :] - eb.W[None, None, :, :]       # (S, n, n, d)
        g = self._pref1 * np.exp(-0.5 * np.sum(diff**2 / self._s1, axis=-1))
        if self.strategy == "reparam":
            terms = np.einsum("sij,sijd,idk->ijk", g, -diff / self._s1, ea.J)
        else:
            terms = np.einsum("sij,sid,idk->ijk", g, ea.eps / self.sigma, ea.J)
        return np.einsum("ij,ijk->k", self._M, terms) / (self.n_mc * n**2)

    # -- public kernel interface ------------------------------------------

    def kappa(self, theta, vartheta) -> float:
        ea = self.evaluate(theta)
        eb = self.evaluate(vartheta)
        return self.c0 - ea.A - eb.A + self._B(ea, eb)

    def kappa_grad1(self, theta, vartheta) -> np.ndarray:
        """Gradient of kappa in its first argument."""
        ea = self.evaluate(theta)
        eb = self.evaluate(vartheta)
        return -ea.gradA + self._B_grad1(ea, eb)

    def mmd_squared(self, theta) -> float:
        """MMD^2 between the data embedding and P_theta."""
        ev = self.evaluate(theta)
        return self.c0 - 2.0 * ev.A + self._B(ev, ev)

    def mmd_squared_grad(self, theta) -> tuple[float, np.ndarray]:
        ev = self.evaluate(theta)
        value = self.c0 - 2.0 * ev.A + self._B(ev, ev)
        grad = -2.0 * ev.gradA + 2.0 * self._B_grad1(ev, ev)
        return value, grad

    def gram(self, thetas) -> np.ndarray:
        """kappa matrix over an ensemble (N, p) of parameters."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        evals = self._ensemble_evals(thetas)
        N = len(evals)
        K = np.empty((N, N))
        for i in range(N):
            for j in range(i, N):
                K[i, j] = K[j, i] = (
                    self.c0 - evals[i].A - evals[j].A + self._B(evals[i], evals[j])
                )
        return K

    def interaction(self, thetas) -> np.ndarray:
        """Row i: mean over j != i of grad_1 kappa(theta_i, theta_j).

        This is the ensemble coupling term of the particle flow drift and
        of the joint-density gradient; a single particle gets zeros.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        evals = self._ensemble_evals(thetas)
        N = len(evals)
        p = thetas.shape[1]
        if N == 1:
            return np.zeros((N, p))
        gradA = np.stack([e.gradA for e in evals])
        if self.strategy != "analytic":
            pair_sum = np.zeros((N, p))
            for i in range(N):
                for j in range(N):
                    if j != i:
                        pair_sum[i] += self._B_grad1(evals[i], evals[j])
            return -gradA + pair_sum / (N - 1)

        n = self.dataset.n
        W = np.stack([e.W for e in evals])
        J = np.stack([e.J for e in evals])
        if self._const:
            w0 = W[:, 0, :]                                       # (N, d)
            diff = w0[:, None] - w0[None, :]                      # (N, N, d)
            D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
            pair = self._tot_w * np.einsum(
                "ab,abd,adk->abk", D, -diff / self._s2, J[:, 0])
        elif self._diag:
            diff = W[:, None] - W[None, :]                        # (N, N, n, d)
            D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
            pair = np.einsum("abi,abid,aidk->abk", D, -diff / self._s2, J) / n**2
        else:
            diff = W[:, None, :, None, :] - W[None, :, None, :, :]  # (N,N,n,n,d)
            D = self._pref2 * np.exp(-0.5 * np.sum(diff**2 / self._s2, axis=-1))
            pair = np.einsum("ij,abij,abijd,aidk->abk",
                             self._M, D, -diff / self._s2, J) / n**2
        pair_sum = pair.sum(axis=1) - np.einsum("aak->ak", pair)
        return -gradA + pair_sum / (N - 1)
