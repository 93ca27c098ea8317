# metrics.py
from __future__ import annotations
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import convolve2d
from sklearn.linear_model import Ridge
from sklearn.metrics import r2_score
from sklearn.model_selection import KFold, cross_val_predict

from .errors import DegenerateFolds, PreconditionError, ShapeMismatch, ZeroVariance
from .results import MetricReport, VoxelScreeningReport

import logging
logger = logging.getLogger("dgmmkit.metrics")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"vectors differ in length: {a.size} vs {b.size}")
    return a, b


def pcc(a, b) -> float:
    """Pearson correlation of two vectorized images.

    One constant argument gives 0.0; two constant arguments are undefined.
    """
    a, b = _pair(a, b)
    if a.size < 2:
        raise PreconditionError("pcc needs at least 2 entries")
    da = a - a.mean()
    db = b - b.mean()
    sa = float(np.sqrt(da @ da))
    sb = float(np.sqrt(db @ db))
    if sa == 0.0 and sb == 0.0:
        raise ZeroVariance("both vectors are constant")
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_map(mu_a, mu_b, var_a, var_b, cov, c1, c2):
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> float:
    """Mean SSIM over 11x11 Gaussian windows (valid positions only).

    Images smaller than the window in either direction use the global
    statistics of the whole image instead.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(f"ssim needs two equal 2-D images, got {a.shape} and {b.shape}")
    if not dynamic_range > 0:
        raise PreconditionError(f"dynamic range must be positive, got {dynamic_range}")
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    if min(a.shape) < SSIM_WINDOW:
        return ssim_global(a, b, dynamic_range)
    w = gaussian_window()
    filt = lambda img: convolve2d(img, w, mode="valid")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    return float(np.mean(_ssim_map(mu_a, mu_b, var_a, var_b, cov, c1, c2)))


def ssim_global(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> float:
    a, b = _pair(a, b)
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    cov = float(np.mean((a - a.mean()) * (b - b.mean())))
    return float(_ssim_map(a.mean(), b.mean(), a.var(), b.var(), cov, c1, c2))


def screen_voxels(x: np.ndarray, y: np.ndarray, folds: int = 10, alpha: float = 1.0) -> VoxelScreeningReport:
    """Out-of-fold R^2 of a ridge encoder from pixels to every voxel.

    Folds are contiguous (no shuffling) so the split is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X has {x.shape[0]} rows, Y has {y.shape[0]}")
    n = x.shape[0]
    if folds < 2 or n < folds:
        raise DegenerateFolds(f"cannot run {folds}-fold CV on {n} rows")
    pred = cross_val_predict(Ridge(alpha=alpha), x, y, cv=KFold(n_splits=folds))
    pred = pred.reshape(y.shape)
    r2 = np.asarray(r2_score(y, pred, multioutput="raw_values"), dtype=np.float64)
    report = VoxelScreeningReport(r2=r2, folds=folds)
    logger.info(report.report_string())
    return report


def evaluate_reconstructions(pred: np.ndarray, truth: np.ndarray, width: int, height: int,
                             dynamic_range: float = 1.0, rows: Optional[Sequence[int]] = None,
                             label: str = "DGMM") -> MetricReport:
    """Per-instance PCC, MSE and SSIM of row-wise reconstructions (row-major W x H images)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"reconstructions {pred.shape} vs ground truth {truth.shape}")
    if width * height != pred.shape[1]:
        raise ShapeMismatch(f"{width}x{height} images do not have {pred.shape[1]} pixels")
    rows = list(range(pred.shape[0])) if rows is None else list(rows)
    records = []
    for r, p, t in zip(rows, pred, truth):
        records.append({
            "row": int(r),
            "pcc": pcc(p, t),
            "mse": mse(p, t),
            "ssim": ssim(p.reshape(height, width), t.reshape(height, width), dynamic_range),
        })
    return MetricReport(df=pd.DataFrame(records, columns=["row", "pcc", "mse", "ssim"]), label=label)


def pixel_mean_baseline(train_x: np.ndarray, n_rows: int) -> np.ndarray:
    """Predict the training-set mean image for every row."""
    mean = np.asarray(train_x, dtype=np.float64).mean(axis=0)
    return np.tile(mean, (n_rows, 1))
