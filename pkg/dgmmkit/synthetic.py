"""Two-view data drawn from the model's own generative process.

Voxels follow y_i = B^T z_i + H^T zbar_i + noise with ARD-scaled columns of
B and H; images are a fixed map of the shared latents plus pixel noise. The
ground truth is returned alongside so recovery can be checked exactly.
"""
from __future__ import annotations
from dataclasses import dataclass
from math import isqrt
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import InvalidConfig
from .linalg import RngState
from .models import DatasetManifest, SyntheticGroundTruth, TwoViewDataset
from .types import MapKind

import logging
logger = logging.getLogger("dgmmkit.synthetic")

# keeps Gamma(1, 1) draws near zero from producing unbounded column scales
MIN_ARD_PRECISION = 1e-2


@dataclass(slots=True)
class SyntheticConfig:
    n: int = 100
    d1: int = 784
    d2: int = 3092
    k: int = 10
    k_bar: Optional[int] = None
    test_fraction: float = 0.1
    map_kind: MapKind = MapKind.LINEAR
    gamma: float = 10.0
    pixel_noise_std: float = 0.05
    hidden: int = 64
    ard_shape: float = 1.0
    ard_rate: float = 1.0
    image_width: Optional[int] = None
    image_height: Optional[int] = None
    seed: int = 0
    name: str = "synthetic"

    @property
    def latent_private(self) -> int:
        return self.k if self.k_bar is None else self.k_bar

    def image_shape(self) -> Tuple[int, int]:
        if self.image_width is not None and self.image_height is not None:
            return self.image_width, self.image_height
        side = isqrt(self.d1)
        return (side, side) if side * side == self.d1 else (self.d1, 1)

    def validate(self) -> None:
        for name in ("n", "d1", "d2", "k", "hidden"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.latent_private < 1:
            raise InvalidConfig(f"k_bar must be >= 1, got {self.latent_private}")
        if not self.gamma > 0:
            raise InvalidConfig(f"voxel noise precision must be positive, got {self.gamma}")
        if self.pixel_noise_std < 0:
            raise InvalidConfig(f"pixel noise std must be non-negative, got {self.pixel_noise_std}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise InvalidConfig(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        if self.ard_shape <= 0 or self.ard_rate <= 0:
            raise InvalidConfig("ARD Gamma prior parameters must be positive")
        try:
            MapKind(self.map_kind)
        except ValueError as e:
            raise InvalidConfig(f"unknown map kind '{self.map_kind}'") from e
        if MapKind(self.map_kind) is MapKind.LINEAR and self.k > self.d1:
            raise InvalidConfig("a linear map needs k <= d1")
        w, h = self.image_shape()
        if w * h != self.d1:
            raise InvalidConfig(f"image {w}x{h} does not have d1={self.d1} pixels")


def _linear_map(gen: np.random.Generator, k: int, d1: int) -> list[np.ndarray]:
    # orthonormal rows scaled to unit pixel variance
    q, _ = np.linalg.qr(gen.standard_normal((d1, k)))
    return [q.T * np.sqrt(d1 / k)]


def _mlp_map(gen: np.random.Generator, k: int, hidden: int, d1: int) -> list[np.ndarray]:
    return [
        gen.standard_normal((k, hidden)) / np.sqrt(k),
        0.1 * gen.standard_normal((1, hidden)),
        3.0 * gen.standard_normal((hidden, d1)) / np.sqrt(hidden),
        np.zeros((1, d1)),
    ]


def apply_map(kind: MapKind, weights: list[np.ndarray], z: np.ndarray) -> np.ndarray:
    """Noise-free image of every latent row."""
    if MapKind(kind) is MapKind.LINEAR:
        return z @ weights[0]
    w0, b0, w1, b1 = weights
    return expit(np.tanh(z @ w0 + b0) @ w1 + b1)


def generate_synthetic(config: SyntheticConfig) -> Tuple[TwoViewDataset, SyntheticGroundTruth]:
    config.validate()
    kind = MapKind(config.map_kind)
    n, d1, d2, k, kb = config.n, config.d1, config.d2, config.k, config.latent_private
    gen = RngState(config.seed).generator

    scale = 1.0 / config.ard_rate
    tau = np.maximum(gen.gamma(config.ard_shape, scale, size=d2), MIN_ARD_PRECISION)
    eta = np.maximum(gen.gamma(config.ard_shape, scale, size=d2), MIN_ARD_PRECISION)
    b = gen.standard_normal((k, d2)) / np.sqrt(tau)
    h = gen.standard_normal((kb, d2)) / np.sqrt(eta)
    z = gen.standard_normal((n, k))
    zbar = gen.standard_normal((n, kb))
    y = z @ b + zbar @ h
    if np.isfinite(config.gamma):
        y = y + gen.standard_normal((n, d2)) / np.sqrt(config.gamma)

    if kind is MapKind.LINEAR:
        weights = _linear_map(gen, k, d1)
    else:
        weights = _mlp_map(gen, k, config.hidden, d1)
    x = apply_map(kind, weights, z)
    if config.pixel_noise_std > 0:
        x = x + config.pixel_noise_std * gen.standard_normal((n, d1))
    bounded = kind is MapKind.MLP
    if bounded:
        x = np.clip(x, 0.0, 1.0)

    perm = gen.permutation(n)
    n_test = int(round(config.test_fraction * n))
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])

    w, hgt = config.image_shape()
    manifest = DatasetManifest(
        name=config.name, n=n, d1=d1, d2=d2, image_width=w, image_height=hgt,
        pixel_min=0.0 if bounded else float(x.min()),
        pixel_max=1.0 if bounded else float(x.max()),
        bounded=bounded, seed=config.seed, latent_dim=k,
    )
    truth = SyntheticGroundTruth(
        b=b, h=h, z=z, zbar=zbar, gamma=float(config.gamma), pixel_noise_std=config.pixel_noise_std,
        map_weights=weights, map_kind=kind.value, tau=tau, eta=eta,
    )
    logger.info(f"Generated '{config.name}': N={n} ({train.size} train / {test.size} test), "
                f"D1={d1}, D2={d2}, K={k}, Kbar={kb}, map={kind.value}, gamma={config.gamma}")
    return TwoViewDataset(x=x, y=y, train=train, test=test, manifest=manifest), truth
