# checkpoint.py
"""Model directories: ``manifest.json`` plus one raw little-endian float64
file per array (``<name>.f64``). A model directory alone is enough to
reconstruct images from raw voxel rows."""
from __future__ import annotations
import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import IoError, MissingFile, ShapeMismatchWithManifest
from .models import (
    FittedModel,
    GammaPosterior,
    GaussianMatrixPosterior,
    Hyperparameters,
    MlpParams,
    PrivateLatentPosterior,
    VbState,
)
from .types import OutputKind

import logging
logger = logging.getLogger("dgmmkit.checkpoint")

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_LE_F64 = np.dtype("<f8")


def _net_entry(prefix: str, params: MlpParams, arrays: Dict[str, np.ndarray]) -> dict:
    for name, a in zip(params.array_names(), params.arrays()):
        arrays[f"{prefix}.{name}"] = a
    return {"layers": len(params.weights), "output": params.output.value}


def save_model(model: FittedModel, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    vb = model.vb
    manifest = {
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "k_bar": vb.k_bar,
        "d1": model.d1,
        "d2": model.d2,
        "seed": model.seed,
        "steps": model.steps,
        "pixel_log_variance": model.pixel_log_variance,
        "recognition": _net_entry("recog", model.recog, arrays),
        "generative": _net_entry("gen", model.gen, arrays),
        "gamma": {"shape": float(vb.q_gamma.shape), "rate": float(vb.q_gamma.rate)},
        "hyper": asdict(vb.hyper),
    }
    arrays.update({
        "vb.b_mean": vb.q_b.mean, "vb.b_cov": vb.q_b.cov,
        "vb.h_mean": vb.q_h.mean, "vb.h_cov": vb.q_h.cov,
        "vb.zbar_mean": vb.q_zbar.mean, "vb.zbar_cov": vb.q_zbar.cov,
        "vb.tau_shape": vb.q_tau.shape, "vb.tau_rate": vb.q_tau.rate,
        "vb.eta_shape": vb.q_eta.shape, "vb.eta_rate": vb.q_eta.rate,
        "train_latent": model.train_latent, "train_y": model.train_y,
        "voxel_ids": model.voxel_ids.astype(np.float64),
        "y_mean": model.y_mean, "y_std": model.y_std,
    })
    manifest["arrays"] = {}
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype=_LE_F64)
        a.tofile(path / f"{name}.f64")
        manifest["arrays"][name] = list(a.shape)
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved model (K={model.k}, D1={model.d1}, D2={model.d2}) to {path}")
    return path


def _read_array(path: Path, name: str, shape) -> np.ndarray:
    f = path / f"{name}.f64"
    if not f.is_file():
        raise MissingFile(f"missing model array: {f}")
    a = np.fromfile(f, dtype=_LE_F64)
    expected = int(np.prod(shape)) if shape else 1
    if a.size != expected:
        raise ShapeMismatchWithManifest(f"{f.name}: manifest shape {shape}, file holds {a.size} values")
    return a.astype(np.float64).reshape(shape)


def _load_net(prefix: str, entry: dict, arrays: Dict[str, np.ndarray]) -> MlpParams:
    n = int(entry["layers"])
    return MlpParams(
        weights=[arrays[f"{prefix}.w{i}"] for i in range(n)],
        biases=[arrays[f"{prefix}.b{i}"] for i in range(n)],
        mu_weight=arrays[f"{prefix}.mu_w"],
        mu_bias=arrays[f"{prefix}.mu_b"],
        logvar_weight=arrays[f"{prefix}.logvar_w"],
        logvar_bias=arrays[f"{prefix}.logvar_b"],
        output=OutputKind(entry["output"]),
    )


def load_model(path: str | Path) -> FittedModel:
    path = Path(path)
    mf = path / MANIFEST_NAME
    if not mf.is_file():
        raise MissingFile(f"not a model directory (no {MANIFEST_NAME}): {path}")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IoError(f"{mf}: invalid JSON ({e})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IoError(f"{mf}: unsupported format version {manifest.get('format_version')!r}")
    arrays = {name: _read_array(path, name, tuple(shape)) for name, shape in manifest["arrays"].items()}
    try:
        vb = VbState(
            q_b=GaussianMatrixPosterior(arrays["vb.b_mean"], arrays["vb.b_cov"]),
            q_h=GaussianMatrixPosterior(arrays["vb.h_mean"], arrays["vb.h_cov"]),
            q_zbar=PrivateLatentPosterior(arrays["vb.zbar_mean"], arrays["vb.zbar_cov"]),
            q_tau=GammaPosterior(arrays["vb.tau_shape"], arrays["vb.tau_rate"]),
            q_eta=GammaPosterior(arrays["vb.eta_shape"], arrays["vb.eta_rate"]),
            q_gamma=GammaPosterior(manifest["gamma"]["shape"], manifest["gamma"]["rate"]),
            hyper=Hyperparameters(**manifest["hyper"]),
        )
        model = FittedModel(
            recog=_load_net("recog", manifest["recognition"], arrays),
            gen=_load_net("gen", manifest["generative"], arrays),
            vb=vb,
            train_latent=arrays["train_latent"],
            train_y=arrays["train_y"],
            voxel_ids=arrays["voxel_ids"].astype(np.int64),
            y_mean=arrays["y_mean"],
            y_std=arrays["y_std"],
            pixel_log_variance=manifest["pixel_log_variance"],
            seed=int(manifest["seed"]),
            steps=int(manifest["steps"]),
        )
    except KeyError as e:
        raise IoError(f"{mf}: missing entry {e}") from e
    logger.info(f"Loaded model (K={model.k}, D1={model.d1}, D2={model.d2}) from {path}")
    return model
