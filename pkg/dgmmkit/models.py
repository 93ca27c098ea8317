from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import special

from .errors import PreconditionError, ShapeMismatch
from .linalg import RngState
from .types import OutputKind

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(slots=True)
class GammaPosterior:
    """Gamma(shape, rate); shape/rate may be scalars or equal-length arrays."""
    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self) -> None:
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.rate = np.asarray(self.rate, dtype=np.float64)
        if np.any(self.shape <= 0) or np.any(self.rate <= 0):
            raise PreconditionError("Gamma shape and rate must be positive")

    @classmethod
    def prior(cls, alpha: float, beta: float, size: Optional[int] = None) -> "GammaPosterior":
        if size is None:
            return cls(np.float64(alpha), np.float64(beta))
        return cls(np.full(size, alpha), np.full(size, beta))

    def mean(self) -> np.ndarray:
        return self.shape / self.rate

    def mean_log(self) -> np.ndarray:
        return special.digamma(self.shape) - np.log(self.rate)

    def kl_to(self, alpha0: float, beta0: float) -> float:
        """KL(self || Gamma(alpha0, beta0)), summed over entries."""
        a, b = self.shape, self.rate
        kl = (
            (a - alpha0) * special.digamma(a)
            - special.gammaln(a)
            + special.gammaln(alpha0)
            + alpha0 * (np.log(b) - np.log(beta0))
            + a * (beta0 - b) / b
        )
        return float(np.sum(kl))


@dataclass(slots=True)
class MlpParams:
    """Tanh MLP trunk with two affine heads producing (mu, log-variance).

    Weights are stored (fan_in, fan_out) so a batch propagates as ``h @ W + b``.
    An empty trunk is allowed: the heads then read the input directly.
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    mu_weight: np.ndarray
    mu_bias: np.ndarray
    logvar_weight: np.ndarray
    logvar_bias: np.ndarray
    output: OutputKind = OutputKind.IDENTITY

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch("weights and biases differ in length")
        width = self.input_size
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != width or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i} does not chain: W{w.shape}, b{b.shape}, input {width}")
            width = w.shape[1]
        out = self.mu_weight.shape[1]
        for name, w, b in (("mu", self.mu_weight, self.mu_bias), ("logvar", self.logvar_weight, self.logvar_bias)):
            if w.shape != (width, out) or b.shape != (out,):
                raise ShapeMismatch(f"{name} head has W{w.shape}, b{b.shape}; expected ({width}, {out})")

    @property
    def input_size(self) -> int:
        return (self.weights[0] if self.weights else self.mu_weight).shape[0]

    @property
    def output_size(self) -> int:
        return self.mu_weight.shape[1]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_size] + [w.shape[1] for w in self.weights] + [self.output_size]

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng: RngState,
                   output: OutputKind = OutputKind.IDENTITY) -> "MlpParams":
        """Zero-mean normal weights with std 1/sqrt(fan_in); zero biases."""
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise PreconditionError(f"invalid layer sizes {sizes}")

        def draw(fan_in: int, fan_out: int) -> np.ndarray:
            return rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)

        weights = [draw(a, b) for a, b in zip(sizes[:-2], sizes[1:-1])]
        biases = [np.zeros(b) for b in sizes[1:-1]]
        last, out = sizes[-2], sizes[-1]
        return cls(
            weights=weights,
            biases=biases,
            mu_weight=draw(last, out),
            mu_bias=np.zeros(out),
            logvar_weight=draw(last, out),
            logvar_bias=np.zeros(out),
            output=output,
        )

    # --- flat views used by optimizers and checkpoints ---
    def array_names(self) -> List[str]:
        n = len(self.weights)
        return ([f"w{i}" for i in range(n)] + [f"b{i}" for i in range(n)]
                + ["mu_w", "mu_b", "logvar_w", "logvar_b"])

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases,
                self.mu_weight, self.mu_bias, self.logvar_weight, self.logvar_bias]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        if len(arrays) != 2 * n + 4:
            raise ShapeMismatch(f"expected {2 * n + 4} arrays, got {len(arrays)}")
        for old, new in zip(self.arrays(), arrays):
            if old.shape != np.shape(new):
                raise ShapeMismatch(f"array shape {np.shape(new)} does not match {old.shape}")
        return MlpParams(
            weights=list(arrays[:n]),
            biases=list(arrays[n:2 * n]),
            mu_weight=arrays[2 * n],
            mu_bias=arrays[2 * n + 1],
            logvar_weight=arrays[2 * n + 2],
            logvar_bias=arrays[2 * n + 3],
            output=self.output,
        )

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass(slots=True)
class RecognitionOutput:
    """Per-row latent Gaussian; variances are clamped into [e^-10, e^10]."""
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.var = np.clip(np.asarray(self.var, dtype=np.float64),
                           np.exp(LOGVAR_MIN), np.exp(LOGVAR_MAX))
        if self.mu.ndim != 2 or self.mu.shape != self.var.shape:
            raise ShapeMismatch(f"mu {self.mu.shape} and var {self.var.shape} must be equal N x K")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.mu.shape[1]

    def rows(self, idx) -> "RecognitionOutput":
        return RecognitionOutput(self.mu[idx], self.var[idx])


@dataclass(slots=True)
class OptimizerState:
    lr: float
    accumulators: List[np.ndarray]
    step: int = 0


@dataclass(slots=True)
class GaussianMatrixPosterior:
    """Column-factorized Gaussian over a K x D2 projection matrix.

    ``cov[j]`` is the K x K covariance of column j.
    """
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        k, d2 = self.mean.shape
        if self.cov.shape != (d2, k, k):
            raise ShapeMismatch(f"cov must be ({d2}, {k}, {k}), got {self.cov.shape}")

    @classmethod
    def initialize(cls, k: int, d2: int, rng: RngState, std: float = 0.1) -> "GaussianMatrixPosterior":
        return cls(mean=std * rng.normal((k, d2)), cov=np.broadcast_to(np.eye(k), (d2, k, k)).copy())

    @property
    def k(self) -> int:
        return self.mean.shape[0]

    @property
    def d2(self) -> int:
        return self.mean.shape[1]

    def column_second_moments(self) -> np.ndarray:
        """<b_j^T b_j> = |<b_j>|^2 + tr(Sigma_j) for every column j."""
        return np.sum(self.mean**2, axis=0) + np.trace(self.cov, axis1=1, axis2=2)

    def outer_sum(self) -> np.ndarray:
        """<B B^T> = sum_j (<b_j><b_j>^T + Sigma_j)."""
        return self.mean @ self.mean.T + self.cov.sum(axis=0)


@dataclass(slots=True)
class PrivateLatentPosterior:
    """q(Zbar): per-row means (N x Kbar) sharing one Kbar x Kbar covariance."""
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def initialize(cls, n: int, k_bar: int) -> "PrivateLatentPosterior":
        return cls(mean=np.zeros((n, k_bar)), cov=np.eye(k_bar))

    def outer_sum(self) -> np.ndarray:
        """<Zbar Zbar^T> = sum_i (<zbar_i><zbar_i>^T + Sigma)."""
        return self.mean.T @ self.mean + self.mean.shape[0] * self.cov


@dataclass(slots=True, frozen=True)
class Hyperparameters:
    alpha_tau: float = 1.0
    beta_tau: float = 1.0
    alpha_eta: float = 1.0
    beta_eta: float = 1.0
    alpha_gamma: float = 1.0
    beta_gamma: float = 1.0


@dataclass(slots=True)
class VbState:
    q_b: GaussianMatrixPosterior
    q_h: GaussianMatrixPosterior
    q_zbar: PrivateLatentPosterior
    q_tau: GammaPosterior
    q_eta: GammaPosterior
    q_gamma: GammaPosterior
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    @classmethod
    def initialize(cls, n: int, d2: int, k: int, k_bar: int, rng: RngState,
                   hyper: Optional[Hyperparameters] = None) -> "VbState":
        """Prior-consistent cold start: small random projection means, unit covariances."""
        hyper = hyper or Hyperparameters()
        return cls(
            q_b=GaussianMatrixPosterior.initialize(k, d2, rng),
            q_h=GaussianMatrixPosterior.initialize(k_bar, d2, rng),
            q_zbar=PrivateLatentPosterior.initialize(n, k_bar),
            q_tau=GammaPosterior.prior(hyper.alpha_tau, hyper.beta_tau, d2),
            q_eta=GammaPosterior.prior(hyper.alpha_eta, hyper.beta_eta, d2),
            q_gamma=GammaPosterior.prior(hyper.alpha_gamma, hyper.beta_gamma),
            hyper=hyper,
        )

    @property
    def k(self) -> int:
        return self.q_b.k

    @property
    def k_bar(self) -> int:
        return self.q_h.k

    @property
    def d2(self) -> int:
        return self.q_b.d2

    @property
    def gamma_mean(self) -> float:
        return float(self.q_gamma.mean())

    def copy(self) -> "VbState":
        return VbState(
            q_b=GaussianMatrixPosterior(self.q_b.mean.copy(), self.q_b.cov.copy()),
            q_h=GaussianMatrixPosterior(self.q_h.mean.copy(), self.q_h.cov.copy()),
            q_zbar=PrivateLatentPosterior(self.q_zbar.mean.copy(), self.q_zbar.cov.copy()),
            q_tau=GammaPosterior(self.q_tau.shape.copy(), self.q_tau.rate.copy()),
            q_eta=GammaPosterior(self.q_eta.shape.copy(), self.q_eta.rate.copy()),
            q_gamma=GammaPosterior(self.q_gamma.shape.copy(), self.q_gamma.rate.copy()),
            hyper=self.hyper,
        )


@dataclass(slots=True)
class AffinityWeights:
    """kNN affinities s_i of a test voxel vector to training rows."""
    indices: np.ndarray
    weights: np.ndarray
    bandwidth: float
    k: int

    def total(self) -> float:
        return float(np.sum(self.weights))


@dataclass(slots=True)
class RegularizedLatentPosterior:
    mean: np.ndarray
    cov: np.ndarray
    rho: float


@dataclass(slots=True)
class DatasetManifest:
    """Flat key/value description of a two-view dataset directory."""
    name: str
    n: int
    d1: int
    d2: int
    image_width: int
    image_height: int
    pixel_min: float
    pixel_max: float
    bounded: bool = False
    seed: Optional[int] = None
    latent_dim: Optional[int] = None
    voxel_ids: Optional[List[int]] = None
    dropped_voxels: List[int] = field(default_factory=list)

    @property
    def dynamic_range(self) -> float:
        return float(self.pixel_max - self.pixel_min)

    def to_dict(self) -> Dict[str, str]:
        out = {
            "name": self.name,
            "n": str(self.n),
            "d1": str(self.d1),
            "d2": str(self.d2),
            "image_width": str(self.image_width),
            "image_height": str(self.image_height),
            "pixel_min": repr(float(self.pixel_min)),
            "pixel_max": repr(float(self.pixel_max)),
            "bounded": "true" if self.bounded else "false",
            "dropped_voxels": ",".join(str(j) for j in self.dropped_voxels),
        }
        if self.seed is not None:
            out["seed"] = str(self.seed)
        if self.latent_dim is not None:
            out["latent_dim"] = str(self.latent_dim)
        if self.voxel_ids is not None:
            out["voxel_ids"] = ",".join(str(j) for j in self.voxel_ids)
        return out


@dataclass(slots=True)
class TwoViewDataset:
    """Paired images ``x`` (N x D1) and voxels ``y`` (N x D2) with a split."""
    x: np.ndarray
    y: np.ndarray
    train: np.ndarray
    test: np.ndarray
    manifest: DatasetManifest

    def __post_init__(self) -> None:
        n = self.x.shape[0]
        if self.y.shape[0] != n:
            raise ShapeMismatch(f"x has {n} rows, y has {self.y.shape[0]}")
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        for name, idx in (("train", self.train), ("test", self.test)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise PreconditionError(f"{name} split indexes outside [0, {n})")
        if np.intersect1d(self.train, self.test).size:
            raise PreconditionError("train and test splits overlap")
        if self.manifest.image_width * self.manifest.image_height != self.x.shape[1]:
            raise ShapeMismatch("image_width * image_height must equal D1")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d1(self) -> int:
        return self.x.shape[1]

    @property
    def d2(self) -> int:
        return self.y.shape[1]

    def with_voxels(self, y: np.ndarray, manifest: DatasetManifest) -> "TwoViewDataset":
        return replace(self, y=y, manifest=manifest)


@dataclass(slots=True)
class SyntheticGroundTruth:
    b: np.ndarray
    h: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    gamma: float
    pixel_noise_std: float
    map_weights: List[np.ndarray]
    map_kind: str
    tau: np.ndarray
    eta: np.ndarray


@dataclass(slots=True)
class FittedModel:
    """Everything reconstruction needs: networks, conjugate factors, the kNN
    pool (training voxels and their latent means) and the voxel transform that
    maps raw dataset columns into model space."""
    recog: MlpParams
    gen: MlpParams
    vb: VbState
    train_latent: np.ndarray
    train_y: np.ndarray
    voxel_ids: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    pixel_log_variance: Optional[float] = None
    seed: int = 0
    steps: int = 0

    def __post_init__(self) -> None:
        d2 = self.vb.d2
        if self.train_y.shape[1] != d2 or self.voxel_ids.shape != (d2,):
            raise ShapeMismatch(f"voxel pool/ids do not match D2={d2}")
        if self.y_mean.shape != (d2,) or self.y_std.shape != (d2,):
            raise ShapeMismatch("z-score statistics do not match D2")
        if self.train_latent.shape != (self.train_y.shape[0], self.vb.k):
            raise ShapeMismatch("training latent means must be N x K")

    @property
    def k(self) -> int:
        return self.vb.k

    @property
    def d1(self) -> int:
        return self.gen.output_size

    @property
    def d2(self) -> int:
        return self.vb.d2

    def transform_voxels(self, y_raw: np.ndarray) -> np.ndarray:
        """Select the model's voxel columns and standardize them."""
        return (np.asarray(y_raw, dtype=np.float64)[:, self.voxel_ids] - self.y_mean) / self.y_std


@dataclass(slots=True)
class VoxelTransform:
    """Raw-column selection plus train-split z-score statistics."""
    voxel_ids: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    dropped: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.voxel_ids = np.asarray(self.voxel_ids, dtype=np.int64)
        if self.mean.shape != self.voxel_ids.shape or self.std.shape != self.voxel_ids.shape:
            raise ShapeMismatch("voxel statistics must have one entry per kept voxel")

    @property
    def d2(self) -> int:
        return int(self.voxel_ids.size)

    def apply(self, y_raw: np.ndarray) -> np.ndarray:
        return (np.asarray(y_raw, dtype=np.float64)[:, self.voxel_ids] - self.mean) / self.std

    def select(self, positions) -> "VoxelTransform":
        """Keep only ``positions`` (indices into the currently kept voxels)."""
        positions = np.asarray(positions, dtype=np.int64)
        gone = np.setdiff1d(np.arange(self.d2), positions)
        return VoxelTransform(
            voxel_ids=self.voxel_ids[positions], mean=self.mean[positions], std=self.std[positions],
            dropped=sorted(self.dropped + [int(j) for j in self.voxel_ids[gone]]),
        )
