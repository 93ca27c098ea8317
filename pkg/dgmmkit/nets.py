"""Tanh MLPs for the recognition network q(z|x) and the generative network p(x|z).

Backpropagation is written out by hand for this one architecture family: a
tanh trunk followed by a mean head (optionally logistic) and a clamped
log-variance head.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from .errors import NonFiniteLoss, NonPositiveVariance, PreconditionError, ShapeMismatch
from .linalg import RngState, as_matrix
from .models import LOGVAR_MAX, LOGVAR_MIN, MlpParams, RecognitionOutput, VbState
from .types import OutputKind

import logging
logger = logging.getLogger("dgmmkit.nets")

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(slots=True)
class _Pass:
    """Activations kept from a forward pass for the backward pass."""
    acts: List[np.ndarray]
    mu: np.ndarray
    logvar_raw: np.ndarray

    @property
    def logvar(self) -> np.ndarray:
        return np.clip(self.logvar_raw, LOGVAR_MIN, LOGVAR_MAX)


def _forward(params: MlpParams, inputs: np.ndarray) -> _Pass:
    if inputs.shape[1] != params.input_size:
        raise ShapeMismatch(f"input has {inputs.shape[1]} columns, network expects {params.input_size}")
    acts = [inputs]
    h = inputs
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
        acts.append(h)
    mu = h @ params.mu_weight + params.mu_bias
    if params.output == OutputKind.SIGMOID:
        mu = special.expit(mu)
    logvar_raw = h @ params.logvar_weight + params.logvar_bias
    return _Pass(acts=acts, mu=mu, logvar_raw=logvar_raw)


def _backward(params: MlpParams, fp: _Pass, d_mu: np.ndarray,
              d_logvar: Optional[np.ndarray]) -> Tuple[MlpParams, np.ndarray]:
    """Gradients w.r.t. every parameter and the input, given head gradients.

    ``d_mu`` is taken w.r.t. the (post-logistic) mean, ``d_logvar`` w.r.t. the
    clamped log-variance; ``None`` means the log-variance head is unused.
    """
    if params.output == OutputKind.SIGMOID:
        d_mu = d_mu * fp.mu * (1.0 - fp.mu)
    if d_logvar is None:
        d_lv = np.zeros_like(fp.logvar_raw)
    else:
        inside = (fp.logvar_raw > LOGVAR_MIN) & (fp.logvar_raw < LOGVAR_MAX)
        d_lv = d_logvar * inside
    h = fp.acts[-1]
    g_mu_w, g_mu_b = h.T @ d_mu, d_mu.sum(axis=0)
    g_lv_w, g_lv_b = h.T @ d_lv, d_lv.sum(axis=0)
    dh = d_mu @ params.mu_weight.T + d_lv @ params.logvar_weight.T

    n = len(params.weights)
    g_w: List[np.ndarray] = [np.empty(0)] * n
    g_b: List[np.ndarray] = [np.empty(0)] * n
    for i in reversed(range(n)):
        out = fp.acts[i + 1]
        da = dh * (1.0 - out**2)
        g_w[i] = fp.acts[i].T @ da
        g_b[i] = da.sum(axis=0)
        dh = da @ params.weights[i].T
    grads = MlpParams(
        weights=g_w, biases=g_b,
        mu_weight=g_mu_w, mu_bias=g_mu_b,
        logvar_weight=g_lv_w, logvar_bias=g_lv_b,
        output=params.output,
    )
    return grads, dh


def forward_recognition(params: MlpParams, x) -> RecognitionOutput:
    """(mu_z, sigma^2_z) for every row of ``x``."""
    x = as_matrix(x, "X", cols=params.input_size)
    fp = _forward(params, x)
    return RecognitionOutput(mu=fp.mu, var=np.exp(fp.logvar))


def forward_generative(params: MlpParams, z, log_variance: Optional[float] = None
                       ) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of p(x|z) per row; ``log_variance`` freezes the variance."""
    z = as_matrix(z, "Z", cols=params.input_size)
    fp = _forward(params, z)
    if log_variance is None:
        var = np.exp(fp.logvar)
    else:
        var = np.full_like(fp.mu, np.exp(log_variance))
    return fp.mu, var


def reparameterize(mu, var, rng: Optional[RngState] = None,
                   eps: Optional[np.ndarray] = None) -> np.ndarray:
    """mu + sqrt(var) * eps; ``eps`` is drawn from ``rng`` unless injected."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise NonPositiveVariance("reparameterize needs strictly positive variances")
    if eps is None:
        if rng is None:
            raise PreconditionError("either rng or eps must be given")
        eps = rng.normal(mu.shape)
    return mu + np.sqrt(var) * eps


def elbo_minibatch_grad(
    recog: MlpParams,
    gen: MlpParams,
    x,
    y,
    vb: VbState,
    rows,
    n_samples: int = 1,
    rng: Optional[RngState] = None,
    eps: Optional[np.ndarray] = None,
    pixel_log_variance: Optional[float] = None,
) -> Tuple[float, MlpParams, MlpParams]:
    """Negative ELBO of a minibatch and its gradients w.r.t. phi and theta.

    loss = KL(q(z|x) || p(z)) - (1/L) sum_l [log p(x|z_l) + log N(y | B^T z_l + H^T zbar, 1/gamma)]
    with the conjugate factors entering through their means. ``rows`` are the
    training-row ids of the batch (they select <zbar_i>). ``eps`` has shape
    (L, N, K) when injected.
    """
    x = as_matrix(x, "X batch", cols=recog.input_size)
    y = as_matrix(y, "Y batch")
    n = x.shape[0]
    if n == 0:
        raise PreconditionError("empty minibatch")
    if n_samples < 1:
        raise PreconditionError(f"number of Monte-Carlo samples must be >= 1, got {n_samples}")
    k = recog.output_size
    b_mean = vb.q_b.mean
    h_mean = vb.q_h.mean
    gamma_mean = vb.gamma_mean
    zbar_mean = vb.q_zbar.mean[np.asarray(rows)]
    if gen.input_size != k or gen.output_size != x.shape[1]:
        raise ShapeMismatch(f"generative network {gen.layer_sizes} does not match K={k}, D1={x.shape[1]}")
    if y.shape[0] != n or b_mean.shape != (k, y.shape[1]) or zbar_mean.shape != (n, h_mean.shape[0]):
        raise ShapeMismatch("voxel batch, <B>, <H> or <Zbar> shapes are inconsistent")
    if eps is None:
        if rng is None:
            raise PreconditionError("either rng or eps must be given")
        eps = rng.normal((n_samples, n, k))
    elif eps.shape != (n_samples, n, k):
        raise ShapeMismatch(f"eps must be {(n_samples, n, k)}, got {eps.shape}")

    rp = _forward(recog, x)
    mu_z = rp.mu
    lv_z = rp.logvar
    var_z = np.exp(lv_z)
    sd_z = np.sqrt(var_z)

    kl = 0.5 * float(np.sum(mu_z**2 + var_z - 1.0 - lv_z))
    d_mu_z = mu_z.copy()
    d_lv_z = 0.5 * (var_z - 1.0)

    offset = zbar_mean @ h_mean
    d2 = y.shape[1]
    recon = 0.0
    gen_grads = gen.zeros_like()
    gen_arrays = gen_grads.arrays()
    inv_l = 1.0 / n_samples
    for e in eps:
        z = mu_z + sd_z * e
        gp = _forward(gen, z)
        if pixel_log_variance is None:
            lv_x = gp.logvar
        else:
            lv_x = np.full_like(gp.mu, pixel_log_variance)
        prec_x = np.exp(-lv_x)
        diff_x = x - gp.mu
        nll_x = 0.5 * float(np.sum(LOG_2PI + lv_x + diff_x**2 * prec_x))

        diff_y = y - z @ b_mean - offset
        nll_y = 0.5 * float(n * d2 * (LOG_2PI - np.log(gamma_mean)) + gamma_mean * np.sum(diff_y**2))
        recon += inv_l * (nll_x + nll_y)

        d_mu_x = -diff_x * prec_x * inv_l
        d_lv_x = None if pixel_log_variance is not None else 0.5 * (1.0 - diff_x**2 * prec_x) * inv_l
        g, dz = _backward(gen, gp, d_mu_x, d_lv_x)
        for acc, part in zip(gen_arrays, g.arrays()):
            acc += part
        dz = dz - gamma_mean * inv_l * (diff_y @ b_mean.T)

        d_mu_z += dz
        d_lv_z += dz * 0.5 * sd_z * e

    loss = kl + recon
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"minibatch loss is {loss}")
    recog_grads, _ = _backward(recog, rp, d_mu_z, d_lv_z)
    return loss, recog_grads, gen_grads
