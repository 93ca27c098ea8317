"""Image reconstruction from a new voxel vector.

The latent posterior of a test row combines the linear-Gaussian voxel model
(with the private latents integrated out into the precision operator T) and a
kNN manifold term pulling it toward the latent means of neighbouring training
rows. Images are decoded by Monte-Carlo averaging the generative mean head.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg as sla
from scipy.spatial.distance import pdist

from .errors import DegenerateFolds, EmptyTrainingSet, NotPositiveDefinite, PreconditionError, ShapeMismatch
from .linalg import RngState, cholesky_solve, spd_inverse, symmetrize
from .models import AffinityWeights, FittedModel, RegularizedLatentPosterior
from .nets import forward_generative

import logging
logger = logging.getLogger("dgmmkit.predictor")

DEFAULT_RHO_GRID: Tuple[float, ...] = tuple(2.0 ** e for e in range(-8, 1))


@dataclass(slots=True)
class PrecisionSurrogate:
    """T = (H^T H + gamma^-1 I)^-1 kept in factored form.

    T = gamma I - gamma^2 H^T (I + gamma H H^T)^-1 H, so only the Kbar x Kbar
    matrix ``inner_inv`` is ever inverted.
    """
    gamma: float
    h: np.ndarray
    inner_inv: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        """T @ v for a D2-vector or a D2 x m matrix."""
        return self.gamma * v - self.gamma**2 * (self.h.T @ (self.inner_inv @ (self.h @ v)))

    def sandwich(self, b: np.ndarray) -> np.ndarray:
        """B T B^T for a K x D2 matrix B."""
        bh = b @ self.h.T
        return symmetrize(self.gamma * (b @ b.T) - self.gamma**2 * (bh @ self.inner_inv @ bh.T))

    def dense(self) -> np.ndarray:
        """Materialized D2 x D2 matrix (debugging and tests only)."""
        return symmetrize(self.apply(np.eye(self.h.shape[1])))


def compute_t(h_mean: np.ndarray, gamma_mean: float) -> PrecisionSurrogate:
    if not gamma_mean > 0:
        raise PreconditionError(f"<gamma> must be positive, got {gamma_mean}")
    h = np.asarray(h_mean, dtype=np.float64)
    inner = np.eye(h.shape[0]) + gamma_mean * symmetrize(h @ h.T)
    return PrecisionSurrogate(gamma=float(gamma_mean), h=h, inner_inv=spd_inverse(inner))


def median_bandwidth(y_train: np.ndarray) -> float:
    """Median pairwise Euclidean distance between training voxel rows."""
    if y_train.shape[0] < 2:
        raise EmptyTrainingSet("bandwidth heuristic needs at least 2 training rows")
    d = pdist(y_train, metric="euclidean")
    t = float(np.median(d))
    return t if t > 0 else 1.0


def affinity(y_star, y_train, k: int, t: float) -> AffinityWeights:
    """Gaussian weights on the k nearest training rows; ties go to the lower row id."""
    y_train = np.asarray(y_train, dtype=np.float64)
    y_star = np.asarray(y_star, dtype=np.float64)
    n = y_train.shape[0]
    if n == 0:
        raise EmptyTrainingSet("no training rows to build neighbors from")
    if not 1 <= k <= n:
        raise PreconditionError(f"k must be in [1, {n}], got {k}")
    if not t > 0:
        raise PreconditionError(f"bandwidth must be positive, got {t}")
    if y_star.shape != (y_train.shape[1],):
        raise ShapeMismatch(f"y_star has shape {y_star.shape}, training rows have {y_train.shape[1]} voxels")
    d2 = np.sum((y_train - y_star) ** 2, axis=1)
    idx = np.argsort(d2, kind="stable")[:k]
    # far rows keep the smallest positive weight instead of underflowing to 0
    w = np.maximum(np.exp(-d2[idx] / (2.0 * t * t)), np.finfo(np.float64).tiny)
    return AffinityWeights(indices=idx, weights=w, bandwidth=float(t), k=k)


def posterior_latent(y_star, model: FittedModel, aff: Optional[AffinityWeights], rho: float,
                     surrogate: Optional[PrecisionSurrogate] = None) -> RegularizedLatentPosterior:
    """Gaussian p(z*|y*) with mean plug-in for B, H and gamma plus the kNN pull.

    Sigma = [B T B^T + (1 + rho sum s_i) I]^-1
    mu    = Sigma [B T y* + rho sum s_i <z_i>]
    """
    if rho < 0:
        raise PreconditionError(f"rho must be non-negative, got {rho}")
    y_star = np.asarray(y_star, dtype=np.float64)
    b = model.vb.q_b.mean
    if y_star.shape != (b.shape[1],):
        raise ShapeMismatch(f"y_star has shape {y_star.shape}, model has D2={b.shape[1]}")
    t = surrogate or compute_t(model.vb.q_h.mean, model.vb.gamma_mean)
    k = b.shape[0]
    pull = np.zeros(k)
    mass = 0.0
    if aff is not None and rho > 0:
        mass = rho * aff.total()
        pull = rho * (aff.weights @ model.train_latent[aff.indices])
    prec = t.sandwich(b) + (1.0 + mass) * np.eye(k)
    rhs = b @ t.apply(y_star) + pull
    return RegularizedLatentPosterior(
        mean=cholesky_solve(prec, rhs), cov=spd_inverse(prec), rho=float(rho)
    )


@dataclass(slots=True)
class Reconstruction:
    image: np.ndarray
    draws: np.ndarray
    posterior: RegularizedLatentPosterior
    pixel_variance: np.ndarray


def reconstruct(y_star, model: FittedModel, n_samples: int = 64, rng: Optional[RngState] = None,
                rho: float = 0.0, k_neighbors: int = 10, bandwidth: Optional[float] = None,
                eps: Optional[np.ndarray] = None, posterior: Optional[RegularizedLatentPosterior] = None,
                surrogate: Optional[PrecisionSurrogate] = None) -> Reconstruction:
    """Mean of the generative mean head over L draws z ~ p(z*|y*).

    ``y_star`` must already be in model voxel space (see
    :meth:`FittedModel.transform_voxels`). ``eps`` (L x K) replaces the normal
    draws; ``posterior`` skips the latent solve.
    """
    if n_samples < 1:
        raise PreconditionError(f"number of Monte-Carlo samples must be >= 1, got {n_samples}")
    if posterior is None:
        aff = None
        if rho > 0:
            t_bw = bandwidth if bandwidth is not None else median_bandwidth(model.train_y)
            aff = affinity(y_star, model.train_y, min(k_neighbors, model.train_y.shape[0]), t_bw)
        posterior = posterior_latent(y_star, model, aff, rho, surrogate)
    k = posterior.mean.shape[0]
    if eps is None:
        if rng is None:
            raise PreconditionError("either rng or eps must be given")
        eps = rng.normal((n_samples, k))
    elif eps.shape != (n_samples, k):
        raise ShapeMismatch(f"eps must be {(n_samples, k)}, got {eps.shape}")
    try:
        chol = sla.cholesky(symmetrize(posterior.cov), lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"latent posterior covariance: {e}") from e
    draws = posterior.mean + eps @ chol.T
    mu_x, var_x = forward_generative(model.gen, draws, model.pixel_log_variance)
    return Reconstruction(image=mu_x.mean(axis=0), draws=mu_x, posterior=posterior,
                          pixel_variance=var_x.mean(axis=0))


def reconstruct_many(y_rows: np.ndarray, model: FittedModel, row_ids: Sequence[int],
                     n_samples: int = 64, seed: int = 0, rho: float = 0.0, k_neighbors: int = 10,
                     bandwidth: Optional[float] = None) -> np.ndarray:
    """Reconstruct every row; row ``row_ids[i]`` draws from its own child stream,
    so results do not depend on row order."""
    y_rows = np.asarray(y_rows, dtype=np.float64)
    if len(row_ids) != y_rows.shape[0]:
        raise ShapeMismatch("one row id per voxel row is required")
    base = RngState(seed)
    t = compute_t(model.vb.q_h.mean, model.vb.gamma_mean)
    if rho > 0 and bandwidth is None:
        bandwidth = median_bandwidth(model.train_y)
    out = np.empty((y_rows.shape[0], model.d1))
    for i, (row, y) in enumerate(zip(row_ids, y_rows)):
        out[i] = reconstruct(y, model, n_samples, base.child(int(row)), rho, k_neighbors,
                             bandwidth, surrogate=t).image
    return out


def _kfold(n: int, folds: int) -> List[np.ndarray]:
    if folds < 2 or n < folds:
        raise DegenerateFolds(f"cannot split {n} rows into {folds} folds")
    return np.array_split(np.arange(n), folds)


def select_rho(model: FittedModel, train_x: np.ndarray, grid: Sequence[float] = DEFAULT_RHO_GRID,
               folds: int = 5, k_neighbors: int = 10, n_samples: int = 16, seed: int = 0
               ) -> Tuple[float, pd.DataFrame]:
    """Pick rho by k-fold CV on the training split.

    Each held-out fold is reconstructed from its voxels with the kNN pool
    restricted to the remaining folds; the rho with the lowest mean squared
    error wins (ties go to the smaller rho). Returns the choice and the
    per-rho score table.
    """
    n = model.train_y.shape[0]
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.shape != (n, model.d1):
        raise ShapeMismatch(f"train_x must be {(n, model.d1)}, got {train_x.shape}")
    parts = _kfold(n, folds)
    bandwidth = median_bandwidth(model.train_y)
    scores = []
    for rho in grid:
        errs = []
        for held in parts:
            keep = np.setdiff1d(np.arange(n), held)
            pool = FittedModel(
                recog=model.recog, gen=model.gen, vb=model.vb,
                train_latent=model.train_latent[keep], train_y=model.train_y[keep],
                voxel_ids=model.voxel_ids, y_mean=model.y_mean, y_std=model.y_std,
                pixel_log_variance=model.pixel_log_variance, seed=model.seed, steps=model.steps,
            )
            pred = reconstruct_many(model.train_y[held], pool, held, n_samples, seed, rho,
                                    min(k_neighbors, keep.size), bandwidth)
            errs.append(np.mean((pred - train_x[held]) ** 2, axis=1))
        score = float(np.mean(np.concatenate(errs)))
        scores.append({"rho": float(rho), "cv_mse": score})
        logger.debug(f"rho={rho:.6g}: cv mse={score:.6g}")
    table = pd.DataFrame(scores)
    best = float(table.loc[table["cv_mse"].idxmin(), "rho"])
    logger.info(f"Selected rho={best:.6g} by {folds}-fold cross-validation over {len(grid)} values")
    return best, table
