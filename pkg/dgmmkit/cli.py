# cli.py
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from .checkpoint import load_model, save_model
from .config import RunConfig
from .engine import train
from .errors import (
    ConfigError,
    DgmmError,
    DimensionMismatch,
    InvalidConfig,
    IoError,
    NonFiniteLoss,
    PreconditionError,
)
from .io import (
    TRUTH_DIR,
    apply_voxel_transform,
    fit_voxel_transform,
    load_dataset,
    read_matrix_csv,
    read_split,
    save_dataset,
    save_truth,
    write_matrix_csv,
)
from .metrics import evaluate_reconstructions, pixel_mean_baseline, screen_voxels
from .models import FittedModel, TwoViewDataset
from .predictor import reconstruct_many, select_rho
from .synthetic import generate_synthetic
from .viz import plot_training_curve, save_image_grid, save_images

logger = logging.getLogger("dgmmkit.cli")

RUN_CONFIG = "run_config.txt"
SEED_FILE = "seed.txt"
RECON_FILE = "reconstructions.csv"
ROWS_FILE = "rows.txt"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIMENSION = 3
EXIT_IO = 4
EXIT_NON_FINITE = 5


def exit_code(err: DgmmError) -> int:
    if isinstance(err, (ConfigError, InvalidConfig)):
        return EXIT_CONFIG
    if isinstance(err, DimensionMismatch):
        return EXIT_DIMENSION
    if isinstance(err, IoError):
        return EXIT_IO
    if isinstance(err, NonFiniteLoss):
        return EXIT_NON_FINITE
    return EXIT_ERROR


def error_line(err: BaseException) -> str:
    msg = " ".join(str(err).split()).replace('"', '\\"')
    return f'error={type(err).__name__} message="{msg}"'


def write_snapshot(cfg: RunConfig, out_dir: Path, seed: int, notes: Optional[List[str]] = None) -> None:
    """Resolved config + seed; re-running with the snapshot reproduces the outputs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    header = "".join(f"# {n}\n" for n in (notes or []))
    (out_dir / RUN_CONFIG).write_text(header + cfg.to_text(), encoding="utf-8")
    (out_dir / SEED_FILE).write_text(f"{seed}\n", encoding="utf-8")


def _log_block(title: str, text: str) -> None:
    logger.info("-" * 60)
    logger.info(title)
    logger.info("-" * 60)
    for line in text.split("\n"):
        logger.info(line)


# -------- commands --------

def cmd_generate(cfg: RunConfig) -> Path:
    cfg.validate("generate")
    out_dir = Path(cfg.output.dir)
    dataset, truth = generate_synthetic(cfg.synthetic_config())
    save_dataset(dataset, out_dir)
    save_truth(truth, out_dir / TRUTH_DIR)
    write_snapshot(cfg, out_dir, cfg.generate.seed)
    return out_dir


def _select_voxels(cfg: RunConfig, dataset: TwoViewDataset, out_dir: Path):
    transform = fit_voxel_transform(dataset.y, dataset.train)
    if not cfg.screen.enabled:
        return transform
    z = apply_voxel_transform(dataset, transform)
    report = screen_voxels(z.x[z.train], z.y[z.train], folds=cfg.screen.folds, alpha=cfg.screen.alpha)
    report.to_csv(out_dir / "screening.csv")
    if report.selected.size == 0:
        raise PreconditionError("voxel screening kept no voxel with positive R^2")
    return transform.select(report.selected)


def cmd_train(cfg: RunConfig) -> Path:
    cfg.validate("train")
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg.data.path)
    transform = _select_voxels(cfg, dataset, out_dir)
    dataset = apply_voxel_transform(dataset, transform)
    logger.info(f"Training on {dataset.train.size} rows with {transform.d2} voxels "
                f"({len(transform.dropped)} dropped)")

    def to_model(result) -> FittedModel:
        return result.to_model(dataset.y[dataset.train], transform.voxel_ids, transform.mean, transform.std)

    write_snapshot(cfg, out_dir, cfg.train.seed)
    try:
        result = train(dataset, cfg.train_config())
    except NonFiniteLoss as e:
        if e.checkpoint is not None and e.checkpoint.epochs_run > 0:
            save_model(to_model(e.checkpoint), out_dir / "model_last_finite")
            e.checkpoint.to_csv(out_dir / "training_log.csv")
            logger.error(f"Saved last finite state to {out_dir / 'model_last_finite'}")
        raise

    model_dir = save_model(to_model(result), out_dir / "model")
    result.to_csv(out_dir / "training_log.csv")
    _log_block("TRAINING REPORT", result.report_string())
    if cfg.output.plots and result.epochs_run > 0:
        try:
            plot_training_curve(result.log, save_path=str(out_dir / "training"))
        except Exception as e:
            logger.error(f"Failed to generate training plot: {e}")
    return model_dir


def _check_dimensions(model: FittedModel, dataset: TwoViewDataset) -> None:
    m = dataset.manifest
    if m.latent_dim is not None and m.latent_dim != model.k:
        raise DimensionMismatch(f"model has K={model.k}, dataset manifest declares K={m.latent_dim}")
    if dataset.d1 != model.d1:
        raise DimensionMismatch(f"model decodes D1={model.d1} pixels, dataset images have {dataset.d1}")
    if model.voxel_ids.size and int(model.voxel_ids.max()) >= dataset.d2:
        raise DimensionMismatch(f"model reads voxel {int(model.voxel_ids.max())}, dataset has D2={dataset.d2}")


def cmd_reconstruct(cfg: RunConfig) -> Path:
    cfg.validate("reconstruct")
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(cfg.data.model)
    dataset = load_dataset(cfg.data.path)
    _check_dimensions(model, dataset)
    p = cfg.predict

    rho = cfg.rho_value()
    notes = []
    if rho is None:
        if model.train_y.shape[0] != dataset.train.size:
            raise DimensionMismatch(f"model was fit on {model.train_y.shape[0]} rows, "
                                    f"dataset train split has {dataset.train.size}")
        rho, table = select_rho(model, dataset.x[dataset.train], folds=p.cv_folds,
                                k_neighbors=p.k_neighbors, n_samples=p.cv_mc_samples, seed=p.seed)
        table.to_csv(out_dir / "rho_cv.csv", index=False, float_format="%.17g")
        notes.append(f"predict.rho = cv: chosen by {p.cv_folds}-fold cross-validation over the training split")
    snapshot = cfg.with_overrides()
    snapshot.predict.rho = repr(float(rho))

    rows = dataset.test
    y_test = model.transform_voxels(dataset.y[rows])
    start = time.perf_counter()
    pred = reconstruct_many(y_test, model, rows, n_samples=p.mc_samples, seed=p.seed, rho=rho,
                            k_neighbors=p.k_neighbors, bandwidth=cfg.bandwidth_value())
    logger.info(f"Reconstructed {rows.size} images (rho={rho:.6g}, L={p.mc_samples}) "
                f"in {time.perf_counter() - start:.2f}s")
    write_matrix_csv(out_dir / RECON_FILE, pred)
    (out_dir / ROWS_FILE).write_text("".join(f"{int(r)}\n" for r in rows), encoding="utf-8")

    m = dataset.manifest
    if cfg.output.save_images and m.image_width == m.image_height and rows.size:
        save_images(pred, m.image_width, m.image_height, out_dir / "images", m.pixel_min, m.pixel_max, rows)
        save_image_grid(dataset.x[rows], pred, m.image_width, m.image_height,
                        out_dir / "reconstructions.png", m.pixel_min, m.pixel_max)
    elif cfg.output.save_images:
        logger.info("Images are not square; writing CSV only")
    write_snapshot(snapshot, out_dir, p.seed, notes)
    return out_dir


def cmd_evaluate(cfg: RunConfig) -> Path:
    cfg.validate("evaluate")
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg.data.path)
    recon_dir = Path(cfg.data.reconstructions)
    pred = read_matrix_csv(recon_dir / RECON_FILE, cols=dataset.d1)
    rows = read_split(recon_dir / ROWS_FILE)
    if rows.size != pred.shape[0]:
        raise DimensionMismatch(f"{rows.size} row ids for {pred.shape[0]} reconstructions")
    if rows.size and (rows.min() < 0 or rows.max() >= dataset.n):
        raise DimensionMismatch(f"reconstruction row ids fall outside the dataset's {dataset.n} rows")

    m = dataset.manifest
    truth = dataset.x[rows]
    report = evaluate_reconstructions(pred, truth, m.image_width, m.image_height, m.dynamic_range, rows)
    baseline = evaluate_reconstructions(pixel_mean_baseline(dataset.x[dataset.train], rows.size), truth,
                                        m.image_width, m.image_height, m.dynamic_range, rows,
                                        label="Pixel mean")
    report.to_csv(out_dir / "metrics.csv")
    report.summary_frame().to_csv(out_dir / "metrics_summary.csv", index=False, float_format="%.17g")
    baseline.to_csv(out_dir / "baseline_metrics.csv")
    _log_block("RECONSTRUCTION METRICS", report.report_string([baseline]))
    write_snapshot(cfg, out_dir, cfg.predict.seed)
    return out_dir


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Run configuration (section.key = value lines).")
    common.add_argument("--seed", type=int, help="Overrides train.seed, generate.seed and predict.seed.")
    common.add_argument("--out", "-o", help="Output directory (overrides output.dir).")
    common.add_argument("--data", "-d", help="Dataset directory (overrides data.path).")
    common.add_argument("--log-level", default="INFO", help="Logging level (e.g., DEBUG, INFO, WARNING, ERROR).")

    parser = argparse.ArgumentParser(description="Cross-view image reconstruction from voxel responses.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="Write a synthetic two-view dataset.")
    sub.add_parser("train", parents=[common], help="Fit a model on the dataset's train split.")
    p = sub.add_parser("reconstruct", parents=[common], help="Reconstruct test images from voxels.")
    p.add_argument("--model", "-m", help="Model directory (overrides data.model).")
    p = sub.add_parser("evaluate", parents=[common], help="Score reconstructions against the dataset.")
    p.add_argument("--recon", "-r", help="Reconstruction directory (overrides data.reconstructions).")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    return base.with_overrides(
        seed=args.seed, out=args.out, path=args.data,
        model=getattr(args, "model", None), reconstructions=getattr(args, "recon", None),
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    start = time.perf_counter()
    logger.info("=" * 60)
    logger.info(f"dgmm {args.command} started")
    try:
        cfg = resolve_config(args)
        logger.info(f"Output directory: {cfg.output.dir}")
        logger.info("=" * 60)
        out = COMMANDS[args.command](cfg)
    except DgmmError as e:
        logger.error(f"{args.command} failed: {e}")
        print(error_line(e), file=sys.stderr)
        return exit_code(e)
    except OSError as e:
        # filesystem failures outside the io helpers (mkdir, PNG and log writes)
        err = IoError(f"{type(e).__name__}: {e}")
        logger.error(f"{args.command} failed: {err}")
        print(error_line(err), file=sys.stderr)
        return EXIT_IO

    logger.info("=" * 60)
    logger.info(f"dgmm {args.command} completed in {time.perf_counter() - start:.1f}s")
    logger.info(f"All outputs saved to: {out}")
    logger.info("=" * 60)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
