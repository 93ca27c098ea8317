from __future__ import annotations

import numpy as np
import pytest

from dgmmkit.engine import TrainConfig, train
from dgmmkit.io import fit_voxel_transform, apply_voxel_transform
from dgmmkit.linalg import RngState
from dgmmkit.models import (
    GammaPosterior,
    GaussianMatrixPosterior,
    MlpParams,
    PrivateLatentPosterior,
    RecognitionOutput,
    VbState,
)
from dgmmkit.synthetic import SyntheticConfig, generate_synthetic


def random_spd(gen: np.random.Generator, n: int) -> np.ndarray:
    m = gen.standard_normal((n, n))
    return m.T @ m + np.eye(n)


def random_vb(seed: int, n: int, d2: int, k: int, k_bar: int) -> VbState:
    """VbState with random (valid) factors everywhere."""
    gen = np.random.default_rng(seed)

    def covs(dim: int, count: int) -> np.ndarray:
        return np.stack([np.linalg.inv(random_spd(gen, dim)) for _ in range(count)])

    return VbState(
        q_b=GaussianMatrixPosterior(gen.standard_normal((k, d2)), covs(k, d2)),
        q_h=GaussianMatrixPosterior(gen.standard_normal((k_bar, d2)), covs(k_bar, d2)),
        q_zbar=PrivateLatentPosterior(gen.standard_normal((n, k_bar)), covs(k_bar, 1)[0]),
        q_tau=GammaPosterior(gen.uniform(0.5, 3.0, d2), gen.uniform(0.5, 3.0, d2)),
        q_eta=GammaPosterior(gen.uniform(0.5, 3.0, d2), gen.uniform(0.5, 3.0, d2)),
        q_gamma=GammaPosterior(gen.uniform(1.0, 5.0), gen.uniform(0.5, 3.0)),
    )


def random_recognition(seed: int, n: int, k: int) -> RecognitionOutput:
    gen = np.random.default_rng(seed)
    return RecognitionOutput(mu=gen.standard_normal((n, k)), var=gen.uniform(0.05, 1.5, (n, k)))


@pytest.fixture
def rng() -> RngState:
    return RngState(1234)


@pytest.fixture
def tiny_nets():
    """6-3-2 recognition and 2-3-6 generative networks."""
    r = RngState(7)
    recog = MlpParams.initialize([6, 3, 2], r)
    gen = MlpParams.initialize([2, 3, 6], r)
    return recog, gen


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(SyntheticConfig(
        n=60, d1=16, d2=12, k=2, k_bar=2, test_fraction=0.2, gamma=50.0,
        pixel_noise_std=0.01, seed=3,
    ))


@pytest.fixture(scope="session")
def fitted_model(small_synthetic):
    """A briefly trained model on the small synthetic dataset."""
    dataset, _ = small_synthetic
    transform = fit_voxel_transform(dataset.y, dataset.train)
    z = apply_voxel_transform(dataset, transform)
    cfg = TrainConfig(k=2, k_bar=2, hidden=(8,), max_epochs=5, lr=1e-2, seed=11)
    result = train(z, cfg)
    model = result.to_model(z.y[z.train], transform.voxel_ids, transform.mean, transform.std)
    return model, dataset
