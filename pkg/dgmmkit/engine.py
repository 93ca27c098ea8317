from __future__ import annotations
from dataclasses import asdict, dataclass, field
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg as sla

from .errors import (
    EmptyTrainingSet,
    NonFiniteLoss,
    NotPositiveDefinite,
    PreconditionError,
    ShapeMismatch,
)
from .linalg import RngState, as_matrix, cholesky_solve, gaussian_kl_to_standard, spd_inverse, spd_logdet, symmetrize
from .models import (
    GammaPosterior,
    GaussianMatrixPosterior,
    Hyperparameters,
    MlpParams,
    PrivateLatentPosterior,
    RecognitionOutput,
    TwoViewDataset,
    VbState,
)
from .nets import LOG_2PI, elbo_minibatch_grad, forward_recognition, _forward
from .optimizers import get_optimizer
from .results import TrainingResult
from .types import GammaRate, OutputKind, SweepStep

import logging
logger = logging.getLogger("dgmmkit.engine")

DEFAULT_SWEEP: Tuple[SweepStep, ...] = (SweepStep.ZBAR, SweepStep.B, SweepStep.H, SweepStep.PRECISIONS)

LOG_COLUMNS = [
    "epoch", "bound", "kl_z", "log_lik_x", "log_lik_y", "kl_b", "kl_h", "kl_zbar",
    "kl_tau", "kl_eta", "kl_gamma", "gamma_mean", "minibatch_loss", "wall_time",
]


@dataclass(slots=True)
class TrainConfig:
    """Model shape and optimization schedule.

    ``hidden`` lists the recognition trunk widths; the generative trunk mirrors
    them reversed. ``k_bar`` defaults to ``k``.
    """
    k: int = 10
    k_bar: Optional[int] = None
    hidden: Tuple[int, ...] = (256, 128)
    max_epochs: int = 500
    batch_size: int = 32
    full_batch_below: int = 128
    lr: float = 1e-3
    optimizer: str = "rmsprop"
    mc_samples: int = 1
    seed: int = 0
    tol: float = 1e-5
    window: int = 5
    sweep_order: Tuple[SweepStep, ...] = DEFAULT_SWEEP
    gamma_rate: GammaRate = GammaRate.PLUGIN
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    freeze_pixel_variance: bool = False
    pixel_log_variance: float = 0.0
    output: Optional[OutputKind] = None

    @property
    def latent_private(self) -> int:
        return self.k if self.k_bar is None else self.k_bar

    def recognition_sizes(self, d1: int) -> List[int]:
        return [d1, *self.hidden, self.k]

    def generative_sizes(self, d1: int) -> List[int]:
        return [self.k, *reversed(self.hidden), d1]


# --- conjugate updates ---

def expected_outer_z(rec: RecognitionOutput) -> np.ndarray:
    """<Z Z^T> = sum_i (mu_i mu_i^T + diag(var_i))."""
    return rec.mu.T @ rec.mu + np.diag(rec.var.sum(axis=0))


def _column_posteriors(gram: np.ndarray, prior_prec: np.ndarray, gamma: float,
                       rhs: np.ndarray) -> GaussianMatrixPosterior:
    """Column j gets precision prior_prec[j] I + gamma * gram and mean Sigma_j rhs[:, j].

    ``gram`` is shared by all columns, so one eigendecomposition serves every
    solve.
    """
    lam, u = sla.eigh(symmetrize(gram))
    denom = prior_prec[:, None] + gamma * lam[None, :]
    if not np.all(denom > 0):
        raise NotPositiveDefinite("column precision has a non-positive eigenvalue")
    inv = 1.0 / denom
    mean = u @ ((u.T @ rhs) * inv.T)
    cov = np.einsum("ik,jk,lk->jil", u, inv, u)
    return GaussianMatrixPosterior(mean=mean, cov=cov)


def _check_voxels(state: VbState, rec: RecognitionOutput, y: np.ndarray) -> np.ndarray:
    y = as_matrix(y, "Y", cols=state.d2)
    if y.shape[0] != rec.n or state.q_zbar.mean.shape[0] != rec.n:
        raise ShapeMismatch(f"Y has {y.shape[0]} rows, q(Z) {rec.n}, q(Zbar) {state.q_zbar.mean.shape[0]}")
    if rec.k != state.k:
        raise ShapeMismatch(f"q(Z) has K={rec.k}, q(B) has K={state.k}")
    return y


def update_b(state: VbState, rec: RecognitionOutput, y) -> GaussianMatrixPosterior:
    y = _check_voxels(state, rec, y)
    gamma = state.gamma_mean
    resid = y - state.q_zbar.mean @ state.q_h.mean
    return _column_posteriors(expected_outer_z(rec), state.q_tau.mean(), gamma,
                              gamma * rec.mu.T @ resid)


def update_h(state: VbState, rec: RecognitionOutput, y) -> GaussianMatrixPosterior:
    y = _check_voxels(state, rec, y)
    gamma = state.gamma_mean
    resid = y - rec.mu @ state.q_b.mean
    return _column_posteriors(state.q_zbar.outer_sum(), state.q_eta.mean(), gamma,
                              gamma * state.q_zbar.mean.T @ resid)


def update_zbar(state: VbState, rec: RecognitionOutput, y) -> PrivateLatentPosterior:
    y = _check_voxels(state, rec, y)
    gamma = state.gamma_mean
    h = state.q_h.mean
    prec = np.eye(state.k_bar) + gamma * symmetrize(state.q_h.outer_sum())
    resid = y - rec.mu @ state.q_b.mean
    mean = cholesky_solve(prec, gamma * (h @ resid.T)).T
    return PrivateLatentPosterior(mean=mean, cov=spd_inverse(prec))


def squared_residuals(state: VbState, rec: RecognitionOutput, y, expected: bool = False) -> float:
    """sum_ij delta_ij^2 with plugged-in means; ``expected`` adds the
    second-moment corrections of the full mean-field expectation."""
    y = _check_voxels(state, rec, y)
    b, h = state.q_b, state.q_h
    delta = y - rec.mu @ b.mean - state.q_zbar.mean @ h.mean
    total = float(np.sum(delta**2))
    if expected:
        zz = expected_outer_z(rec)
        zbzb = state.q_zbar.outer_sum()
        var_z = rec.var.sum(axis=0)
        n = rec.n
        total += float(np.sum(b.mean**2 * var_z[:, None]))
        total += float(np.sum(b.cov * zz[None, :, :]))
        total += float(n * np.einsum("kj,kl,lj->", h.mean, state.q_zbar.cov, h.mean))
        total += float(np.sum(h.cov * zbzb[None, :, :]))
    return total


def update_precisions(state: VbState, rec: RecognitionOutput, y,
                      gamma_rate: GammaRate = GammaRate.PLUGIN
                      ) -> Tuple[GammaPosterior, GammaPosterior, GammaPosterior]:
    y = _check_voxels(state, rec, y)
    hp = state.hyper
    n, d2 = y.shape
    tau = GammaPosterior(np.full(d2, hp.alpha_tau + 0.5 * state.k),
                         hp.beta_tau + 0.5 * state.q_b.column_second_moments())
    eta = GammaPosterior(np.full(d2, hp.alpha_eta + 0.5 * state.k_bar),
                         hp.beta_eta + 0.5 * state.q_h.column_second_moments())
    sq = squared_residuals(state, rec, y, expected=GammaRate(gamma_rate) == GammaRate.EXPECTED)
    gamma = GammaPosterior(hp.alpha_gamma + 0.5 * n * d2, hp.beta_gamma + 0.5 * sq)
    return tau, eta, gamma


def conjugate_sweep(state: VbState, rec: RecognitionOutput, y,
                    order: Sequence[SweepStep] = DEFAULT_SWEEP,
                    gamma_rate: GammaRate = GammaRate.PLUGIN) -> VbState:
    """One pass of the conjugate updates, each seeing the ones before it."""
    for step in order:
        step = SweepStep(step)
        if step == SweepStep.ZBAR:
            state.q_zbar = update_zbar(state, rec, y)
        elif step == SweepStep.B:
            state.q_b = update_b(state, rec, y)
        elif step == SweepStep.H:
            state.q_h = update_h(state, rec, y)
        else:
            state.q_tau, state.q_eta, state.q_gamma = update_precisions(state, rec, y, gamma_rate)
        logger.debug(f"sweep step {step.value}: <gamma>={state.gamma_mean:.6g}")
    return state


# --- evidence lower bound ---

@dataclass(slots=True)
class ElboComponents:
    kl_z: float
    log_lik_x: float
    log_lik_y: float
    kl_b: float
    kl_h: float
    kl_zbar: float
    kl_tau: float
    kl_eta: float
    kl_gamma: float

    @property
    def voxel_bound(self) -> float:
        """Terms that depend on the conjugate factors (networks held fixed)."""
        return (self.log_lik_y - self.kl_b - self.kl_h - self.kl_zbar
                - self.kl_tau - self.kl_eta - self.kl_gamma)

    @property
    def total(self) -> float:
        return -self.kl_z + self.log_lik_x + self.voxel_bound

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _projection_kl(q: GaussianMatrixPosterior, prec: GammaPosterior) -> float:
    """sum_j E_q[log q(b_j) - log p(b_j | tau_j)]."""
    k = q.k
    logdets = np.linalg.slogdet(q.cov)[1]
    return float(np.sum(
        -0.5 * k * prec.mean_log() + 0.5 * prec.mean() * q.column_second_moments()
        - 0.5 * logdets - 0.5 * k
    ))


def voxel_bound_terms(state: VbState, rec: RecognitionOutput, y) -> Dict[str, float]:
    """Analytic Y-side terms of the bound under the full mean-field expectation."""
    y = _check_voxels(state, rec, y)
    hp = state.hyper
    n, d2 = y.shape
    q_g = state.q_gamma
    sq = squared_residuals(state, rec, y, expected=True)
    log_lik_y = 0.5 * n * d2 * (float(q_g.mean_log()) - LOG_2PI) - 0.5 * state.gamma_mean * sq
    zb = state.q_zbar
    kb = state.k_bar
    kl_zbar = 0.5 * n * (float(np.trace(zb.cov)) - kb - spd_logdet(zb.cov)) + 0.5 * float(np.sum(zb.mean**2))
    return {
        "log_lik_y": log_lik_y,
        "kl_b": _projection_kl(state.q_b, state.q_tau),
        "kl_h": _projection_kl(state.q_h, state.q_eta),
        "kl_zbar": kl_zbar,
        "kl_tau": state.q_tau.kl_to(hp.alpha_tau, hp.beta_tau),
        "kl_eta": state.q_eta.kl_to(hp.alpha_eta, hp.beta_eta),
        "kl_gamma": q_g.kl_to(hp.alpha_gamma, hp.beta_gamma),
    }


def image_log_likelihood(gen: MlpParams, rec: RecognitionOutput, x, n_samples: int,
                         rng: Optional[RngState] = None, eps: Optional[np.ndarray] = None,
                         pixel_log_variance: Optional[float] = None) -> float:
    """Monte-Carlo estimate of sum_i E_q[log p(x_i | z_i)]."""
    x = as_matrix(x, "X", cols=gen.output_size)
    if n_samples < 1:
        raise PreconditionError(f"number of Monte-Carlo samples must be >= 1, got {n_samples}")
    if eps is None:
        if rng is None:
            raise PreconditionError("either rng or eps must be given")
        eps = rng.normal((n_samples, rec.n, rec.k))
    sd = np.sqrt(rec.var)
    total = 0.0
    for e in eps:
        gp = _forward(gen, rec.mu + sd * e)
        lv = gp.logvar if pixel_log_variance is None else np.full_like(gp.mu, pixel_log_variance)
        total += -0.5 * float(np.sum(LOG_2PI + lv + (x - gp.mu) ** 2 * np.exp(-lv)))
    return total / len(eps)


def elbo_components(state: VbState, rec: RecognitionOutput, gen: MlpParams, x, y,
                    n_samples: int = 1, rng: Optional[RngState] = None,
                    eps: Optional[np.ndarray] = None,
                    pixel_log_variance: Optional[float] = None) -> ElboComponents:
    if rec.n == 0:
        raise PreconditionError("the bound needs at least one row")
    comps = ElboComponents(
        kl_z=gaussian_kl_to_standard(rec.mu, rec.var),
        log_lik_x=image_log_likelihood(gen, rec, x, n_samples, rng, eps, pixel_log_variance),
        **voxel_bound_terms(state, rec, y),
    )
    if not np.isfinite(comps.total):
        raise NonFiniteLoss(f"bound is {comps.total}: {comps.as_dict()}")
    return comps


def elbo(state: VbState, rec: RecognitionOutput, gen: MlpParams, x, y, n_samples: int = 1,
         rng: Optional[RngState] = None, eps: Optional[np.ndarray] = None,
         pixel_log_variance: Optional[float] = None) -> float:
    return elbo_components(state, rec, gen, x, y, n_samples, rng, eps, pixel_log_variance).total


# --- training ---

class VBEngine:
    """Hybrid trainer: minibatch gradient steps on the networks, then one
    conjugate sweep over q(Zbar), q(B), q(H) and the precisions per epoch.

    Returns a :class:`TrainingResult` whose ``log`` has one row per epoch with
    columns ``LOG_COLUMNS``.
    """

    def __init__(self, config: TrainConfig) -> None:
        self.config = config
        self.optimizer = get_optimizer(config.optimizer)

    def _pixel_log_variance(self) -> Optional[float]:
        return self.config.pixel_log_variance if self.config.freeze_pixel_variance else None

    def _batches(self, n: int, rng: RngState) -> List[np.ndarray]:
        cfg = self.config
        order = rng.permutation(n)
        if n < cfg.full_batch_below:
            return [np.sort(order)]
        return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]

    def fit(self, x, y, output: OutputKind = OutputKind.IDENTITY) -> TrainingResult:
        cfg = self.config
        x = as_matrix(x, "X")
        y = as_matrix(y, "Y")
        n, d1 = x.shape
        if n < 2:
            raise EmptyTrainingSet(f"training needs at least 2 rows, got {n}")
        if y.shape[0] != n:
            raise ShapeMismatch(f"X has {n} rows, Y has {y.shape[0]}")
        if cfg.max_epochs < 0 or cfg.mc_samples < 1 or cfg.k < 1 or cfg.latent_private < 1:
            raise PreconditionError("max_epochs >= 0, mc_samples >= 1 and K, Kbar >= 1 are required")

        rng = RngState(cfg.seed)
        out_kind = cfg.output or output
        recog = MlpParams.initialize(cfg.recognition_sizes(d1), rng)
        gen = MlpParams.initialize(cfg.generative_sizes(d1), rng, output=out_kind)
        vb = VbState.initialize(n, y.shape[1], cfg.k, cfg.latent_private, rng, cfg.hyper)
        opt_r = self.optimizer.init_state(recog, cfg.lr)
        opt_g = self.optimizer.init_state(gen, cfg.lr)
        frozen_lv = self._pixel_log_variance()

        logger.info(
            f"Training DGMM: N={n}, D1={d1}, D2={y.shape[1]}, K={cfg.k}, Kbar={cfg.latent_private}, "
            f"recognition {recog.layer_sizes}, generative {gen.layer_sizes}, optimizer {self.optimizer.name}"
        )
        rows: List[Dict[str, float]] = []
        last_good = (recog, gen, vb.copy())
        converged = False
        start = time.perf_counter()

        def result(params: Tuple[MlpParams, MlpParams, VbState]) -> TrainingResult:
            r, g, v = params
            return TrainingResult(
                recog=r, gen=g, vb=v,
                log=pd.DataFrame(rows, columns=LOG_COLUMNS),
                config=cfg, train_latent=forward_recognition(r, x),
                converged=converged, steps=opt_r.step, pixel_log_variance=frozen_lv,
            )

        for epoch in range(1, cfg.max_epochs + 1):
            try:
                loss_sum = 0.0
                for batch in self._batches(n, rng):
                    loss, g_r, g_g = elbo_minibatch_grad(
                        recog, gen, x[batch], y[batch], vb, batch,
                        n_samples=cfg.mc_samples, rng=rng, pixel_log_variance=frozen_lv,
                    )
                    loss_sum += loss
                    recog = self.optimizer.step(recog, g_r, opt_r)
                    gen = self.optimizer.step(gen, g_g, opt_g)
                rec = forward_recognition(recog, x)
                conjugate_sweep(vb, rec, y, cfg.sweep_order, cfg.gamma_rate)
                comps = elbo_components(vb, rec, gen, x, y, cfg.mc_samples, rng,
                                        pixel_log_variance=frozen_lv)
            except (NonFiniteLoss, NotPositiveDefinite) as e:
                logger.error(f"Epoch {epoch}: training diverged ({e}); keeping epoch {epoch - 1} state")
                raise NonFiniteLoss(str(e), checkpoint=result(last_good)) from e

            rows.append({
                "epoch": epoch,
                "bound": comps.total,
                **comps.as_dict(),
                "gamma_mean": vb.gamma_mean,
                "minibatch_loss": loss_sum / n,
                "wall_time": time.perf_counter() - start,
            })
            last_good = (recog, gen, vb.copy())
            logger.info(f"Epoch {epoch:4d} | bound={comps.total:14.4f} | <gamma>={vb.gamma_mean:.5g}")

            if epoch > cfg.window:
                prev = rows[-1 - cfg.window]["bound"]
                rel = abs(comps.total - prev) / max(abs(prev), 1e-300)
                if rel < cfg.tol:
                    converged = True
                    logger.info(f"Converged after {epoch} epochs (relative change {rel:.3g} < {cfg.tol:g})")
                    break

        return result(last_good)


def train(dataset: TwoViewDataset, config: TrainConfig) -> TrainingResult:
    """Fit on the dataset's train split; logistic image head when pixels are declared in [0, 1]."""
    idx = dataset.train
    if idx.size < 2:
        raise EmptyTrainingSet(f"train split has {idx.size} rows, need at least 2")
    m = dataset.manifest
    bounded = m.bounded and m.pixel_min >= 0.0 and m.pixel_max <= 1.0
    output = OutputKind.SIGMOID if bounded else OutputKind.IDENTITY
    return VBEngine(config).fit(dataset.x[idx], dataset.y[idx], output=output)
