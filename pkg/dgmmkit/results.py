# dgmmkit/results.py
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional

import numpy as np
import pandas as pd

from .models import FittedModel, MlpParams, RecognitionOutput, VbState

if TYPE_CHECKING:
    from .engine import TrainConfig

PRUNE_PRECISION = 1e3


@dataclass
class TrainingResult:
    """
    Trained networks, conjugate factors and the per-epoch log.

    log: one row per epoch with columns
        epoch, bound,
        kl_z, log_lik_x, log_lik_y, kl_b, kl_h, kl_zbar, kl_tau, kl_eta, kl_gamma,
        gamma_mean, minibatch_loss, wall_time
    """
    recog: MlpParams
    gen: MlpParams
    vb: VbState
    log: pd.DataFrame
    config: "TrainConfig"
    train_latent: RecognitionOutput
    converged: bool = False
    steps: int = 0
    pixel_log_variance: Optional[float] = None

    # -------- numeric accessors --------
    @property
    def epochs_run(self) -> int:
        return len(self.log)

    def final_bound(self) -> float:
        return float(self.log["bound"].iloc[-1]) if not self.log.empty else float("nan")

    def pruned_columns(self) -> Dict[str, int]:
        """Voxel columns whose ARD precision has shrunk the projection to ~0."""
        return {
            "B": int(np.sum(self.vb.q_tau.mean() > PRUNE_PRECISION)),
            "H": int(np.sum(self.vb.q_eta.mean() > PRUNE_PRECISION)),
        }

    def kpis(self) -> dict:
        pruned = self.pruned_columns()
        return {
            "epochs": self.epochs_run,
            "converged": self.converged,
            "final_bound": self.final_bound(),
            "gamma_mean": self.vb.gamma_mean,
            "pruned_b_columns": pruned["B"],
            "pruned_h_columns": pruned["H"],
            "gradient_steps": self.steps,
        }

    def to_model(self, train_y: np.ndarray, voxel_ids: np.ndarray,
                 y_mean: np.ndarray, y_std: np.ndarray) -> FittedModel:
        return FittedModel(
            recog=self.recog, gen=self.gen, vb=self.vb,
            train_latent=self.train_latent.mu, train_y=np.asarray(train_y, dtype=np.float64),
            voxel_ids=np.asarray(voxel_ids, dtype=np.int64),
            y_mean=np.asarray(y_mean, dtype=np.float64), y_std=np.asarray(y_std, dtype=np.float64),
            pixel_log_variance=self.pixel_log_variance,
            seed=self.config.seed, steps=self.steps,
        )

    # -------- exports --------
    def to_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.log.to_csv(path, index=False, float_format="%.17g")

    def report_string(self) -> str:
        k = self.kpis()
        lines = []
        lines.append("Training Report")
        lines.append("=" * 44)
        lines.append(f"Epochs run:        {k['epochs']}")
        lines.append(f"Converged:         {'yes' if k['converged'] else 'no'}")
        lines.append(f"Gradient steps:    {k['gradient_steps']}")
        lines.append(f"Final bound:       {k['final_bound']:,.4f}")
        lines.append(f"<gamma>:           {k['gamma_mean']:.6g}")
        lines.append(f"Pruned B columns:  {k['pruned_b_columns']} / {self.vb.d2}")
        lines.append(f"Pruned H columns:  {k['pruned_h_columns']} / {self.vb.d2}")
        if not self.log.empty:
            last = self.log.iloc[-1]
            lines.append("")
            lines.append("Bound components (last epoch):")
            for col in ("kl_z", "log_lik_x", "log_lik_y", "kl_b", "kl_h", "kl_zbar",
                        "kl_tau", "kl_eta", "kl_gamma"):
                lines.append(f"  {col.ljust(10)} {float(last[col]):>18,.4f}")
        lines.append("=" * 44)
        return "\n".join(lines)


@dataclass
class MetricReport:
    """
    Per-instance reconstruction quality.

    df: one row per test instance with columns row, pcc, mse, ssim.
    """
    df: pd.DataFrame
    label: str = "DGMM"

    def aggregates(self) -> Dict[str, Dict[str, float]]:
        """Mean and (population) std of every metric, recomputed from ``df``."""
        out: Dict[str, Dict[str, float]] = {}
        for col in ("pcc", "mse", "ssim"):
            vals = self.df[col].to_numpy(dtype=float)
            out[col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return out

    @property
    def pcc(self) -> float:
        return self.aggregates()["pcc"]["mean"]

    @property
    def mse(self) -> float:
        return self.aggregates()["mse"]["mean"]

    @property
    def ssim(self) -> float:
        return self.aggregates()["ssim"]["mean"]

    def to_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.df.to_csv(path, index=False, float_format="%.17g")

    def summary_frame(self) -> pd.DataFrame:
        agg = self.aggregates()
        return pd.DataFrame(
            [{"metric": m, "mean": v["mean"], "std": v["std"]} for m, v in agg.items()]
        )

    def report_string(self, others: Optional[List["MetricReport"]] = None) -> str:
        """Table of mean +/- std for this report and any ``others`` side by side."""
        reports = [self] + list(others or [])
        lab_w = max(len("Method"), *(len(r.label) for r in reports))
        num_w = 18
        lines = []
        lines.append(f"Reconstruction Metrics ({len(self.df)} instances)")
        lines.append("=" * (lab_w + 3 * (num_w + 2)))
        lines.append(f"{'Method'.ljust(lab_w)}  {'PCC'.rjust(num_w)}  {'MSE'.rjust(num_w)}  {'SSIM'.rjust(num_w)}")
        lines.append("-" * (lab_w + 3 * (num_w + 2)))
        for r in reports:
            agg = r.aggregates()
            cells = [f"{agg[m]['mean']:.4f} +/- {agg[m]['std']:.4f}".rjust(num_w) for m in ("pcc", "mse", "ssim")]
            lines.append(f"{r.label.ljust(lab_w)}  " + "  ".join(cells))
        lines.append("=" * (lab_w + 3 * (num_w + 2)))
        return "\n".join(lines)


@dataclass
class VoxelScreeningReport:
    """Out-of-fold R^2 of every voxel; ``selected`` holds the voxels with R^2 > 0."""
    r2: np.ndarray
    folds: int

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.r2 > 0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "voxel": np.arange(self.r2.size),
            "r2": self.r2,
            "selected": self.r2 > 0.0,
        })

    def to_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def report_string(self) -> str:
        return (f"Voxel screening: {self.selected.size} / {self.r2.size} voxels with positive "
                f"{self.folds}-fold R^2 (median R^2 {float(np.median(self.r2)):.4f})")
