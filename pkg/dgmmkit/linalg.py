"""Dense linear algebra, probability primitives and the seeded RNG.

All arrays are float64. A "matrix" in this package is a 2-D ``numpy.ndarray``
whose entries are finite; :func:`as_matrix` is the single place where that is
enforced for external input.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .errors import (
    NonPositiveVariance,
    NotPositiveDefinite,
    PreconditionError,
    ShapeMismatch,
)

import logging
logger = logging.getLogger("dgmmkit.linalg")

_SYMMETRY_RTOL = 1e-10


def as_matrix(a, name: str = "matrix", cols: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite float64 2-D array (1-D input becomes one row)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeMismatch(f"{name} has {m.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError(f"{name} contains non-finite entries")
    return m


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def cholesky_solve(a, b) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive-definite ``A``.

    ``A`` is symmetrized as (A + A^T)/2 before factorization; it is never
    modified in place. Raises :class:`NotPositiveDefinite` when the
    factorization hits a non-positive pivot.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ShapeMismatch(f"A must be square and non-empty, got {a.shape}")
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"A is {a.shape}, B has {b.shape[0]} rows")
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > _SYMMETRY_RTOL * scale:
        raise PreconditionError("A is not symmetric within tolerance")
    try:
        factor = sla.cho_factor(symmetrize(a), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {e}") from e
    x = sla.cho_solve(factor, b, check_finite=False)
    return x[:, 0] if vector_rhs else x


def spd_inverse(a) -> np.ndarray:
    """Inverse of an SPD matrix, returned exactly symmetric."""
    a = np.asarray(a, dtype=np.float64)
    return symmetrize(cholesky_solve(a, np.eye(a.shape[0])))


def spd_logdet(a) -> float:
    a = symmetrize(np.asarray(a, dtype=np.float64))
    try:
        c = sla.cholesky(a, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"log-determinant of non-SPD matrix: {e}") from e
    return 2.0 * float(np.sum(np.log(np.diag(c))))


@dataclass(slots=True)
class RngState:
    """Seeded PCG64 stream; ``position`` counts the normals drawn so far.

    Normals come from numpy's ziggurat sampler, so a seed plus a call
    sequence replays bit-for-bit on one platform.
    """
    seed: int
    position: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        if self.position:
            self._gen.standard_normal(self.position)

    def child(self, key: int) -> "RngState":
        """Independent stream keyed by (seed, key); does not advance self."""
        mixed = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint32)
        return RngState(seed=int(mixed[0]) << 32 | int(mixed[1]))

    def normal(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.position += int(out.size)
        return out

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def standard_normal_draw(rng: RngState, n: int) -> np.ndarray:
    if n < 1:
        raise PreconditionError(f"n must be >= 1, got {n}")
    return rng.normal(n)


def gaussian_kl_to_standard(mu, var) -> float:
    """KL( N(mu, diag(var)) || N(0, I) ), summed over all entries."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.shape != var.shape:
        raise ShapeMismatch(f"mu {mu.shape} and var {var.shape} differ")
    if np.any(var <= 0):
        raise NonPositiveVariance("variances must be strictly positive")
    return float(-0.5 * np.sum(1.0 + np.log(var) - mu**2 - var))
