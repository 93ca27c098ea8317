# io.py
from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import MissingFile, NonFiniteEntry, ShapeMismatchWithManifest, IoError, PreconditionError
from .models import DatasetManifest, SyntheticGroundTruth, TwoViewDataset, VoxelTransform

import logging
logger = logging.getLogger("dgmmkit.io")

MANIFEST = "manifest.txt"
X_FILE = "X.csv"
Y_FILE = "Y.csv"
SPLIT_TRAIN = "split_train.txt"
SPLIT_TEST = "split_test.txt"
TRUTH_DIR = "truth"

_INT_KEYS = {"n", "d1", "d2", "image_width", "image_height", "seed", "latent_dim"}
_FLOAT_KEYS = {"pixel_min", "pixel_max"}
_LIST_KEYS = {"voxel_ids", "dropped_voxels"}
_REQUIRED = ("name", "n", "d1", "d2", "image_width", "image_height", "pixel_min", "pixel_max")


# -------- flat key = value files --------

def read_key_values(path: str | Path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise IoError(f"{path}: not UTF-8 text ({e})") from e
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IoError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def write_key_values(path: str | Path, values: Dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")


def _int_list(s: str) -> List[int]:
    return [int(t) for t in s.split(",") if t.strip()]


def read_manifest(path: str | Path) -> DatasetManifest:
    kv = read_key_values(path)
    missing = [k for k in _REQUIRED if k not in kv]
    if missing:
        raise IoError(f"{path}: manifest lacks {', '.join(missing)}")
    fields: dict = {}
    try:
        for key, value in kv.items():
            if key in _INT_KEYS:
                fields[key] = int(value)
            elif key in _FLOAT_KEYS:
                fields[key] = float(value)
            elif key in _LIST_KEYS:
                fields[key] = _int_list(value)
            elif key == "bounded":
                fields[key] = value.lower() in {"true", "1", "yes"}
            elif key == "name":
                fields[key] = value
            else:
                logger.warning("Ignoring unknown manifest key '%s' in %s", key, path)
    except ValueError as e:
        raise IoError(f"{path}: unparsable manifest value ({e})") from e
    return DatasetManifest(**fields)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    write_key_values(path, manifest.to_dict())


# -------- matrices --------

def _read_frame(path: Path) -> Optional[pd.DataFrame]:
    """Raw cells of a headerless CSV; None for an empty file."""
    # round_trip keeps %.17g values bit-exact; unparsable cells stay as text
    try:
        return pd.read_csv(path, header=None, float_precision="round_trip", keep_default_na=False)
    except pd.errors.EmptyDataError:
        return None
    except pd.errors.ParserError as e:
        raise IoError(f"{path.name}: malformed CSV ({e})") from e
    except (OSError, UnicodeDecodeError) as e:
        raise IoError(f"{path.name}: cannot read ({e})") from e


def _as_float(df: pd.DataFrame) -> np.ndarray:
    return df.apply(lambda col: pd.to_numeric(col, errors="coerce")).to_numpy(dtype=np.float64)


def _read_matrix(path: Path, rows: int, cols: int) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    if rows == 0:
        return np.zeros((0, cols))
    df = _read_frame(path)
    if df is None:
        raise ShapeMismatchWithManifest(f"{path.name}: manifest declares {rows}x{cols}, file is empty")
    if df.shape != (rows, cols):
        raise ShapeMismatchWithManifest(
            f"{path.name}: manifest declares {rows}x{cols}, file holds {df.shape[0]}x{df.shape[1]}"
        )
    values = _as_float(df)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = (int(v) for v in bad[0])
        raise NonFiniteEntry(f"{path.name}: non-finite entry {df.iat[r, c]!r} at row {r}, column {c}")
    return values


def _write_matrix(path: Path, a: np.ndarray) -> None:
    pd.DataFrame(a).to_csv(path, header=False, index=False, float_format="%.17g")


def read_split(path: str | Path) -> np.ndarray:
    """One integer row id per line."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    try:
        ids = [int(line) for line in path.read_text(encoding="utf-8").split()]
    except ValueError as e:
        raise IoError(f"{path}: split files hold one integer row id per line ({e})") from e
    return np.asarray(ids, dtype=np.int64)


def _write_split(path: Path, ids: Sequence[int]) -> None:
    path.write_text("".join(f"{int(i)}\n" for i in ids), encoding="utf-8")


def save_dataset(dataset: TwoViewDataset, path: str | Path) -> Path:
    """Write manifest.txt, X.csv, Y.csv and both split files into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_manifest(path / MANIFEST, dataset.manifest)
    _write_matrix(path / X_FILE, dataset.x)
    _write_matrix(path / Y_FILE, dataset.y)
    _write_split(path / SPLIT_TRAIN, dataset.train)
    _write_split(path / SPLIT_TEST, dataset.test)
    logger.info(f"Saved dataset '{dataset.manifest.name}' ({dataset.n} rows) to {path}")
    return path


def load_dataset(path: str | Path) -> TwoViewDataset:
    path = Path(path)
    if not path.is_dir():
        raise MissingFile(f"dataset directory not found: {path}")
    manifest = read_manifest(path / MANIFEST)
    x = _read_matrix(path / X_FILE, manifest.n, manifest.d1)
    y = _read_matrix(path / Y_FILE, manifest.n, manifest.d2)
    train = read_split(path / SPLIT_TRAIN)
    test = read_split(path / SPLIT_TEST)
    logger.info(f"Loaded dataset '{manifest.name}': N={manifest.n}, D1={manifest.d1}, D2={manifest.d2}, "
                f"{train.size} train / {test.size} test rows")
    return TwoViewDataset(x=x, y=y, train=train, test=test, manifest=manifest)


def read_matrix_csv(path: str | Path, cols: Optional[int] = None) -> np.ndarray:
    """Headerless numeric CSV of unknown row count (reconstruction outputs)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    df = _read_frame(path)
    if df is None:
        return np.zeros((0, cols or 0))
    a = _as_float(df)
    if cols is not None and a.shape[1] != cols:
        raise ShapeMismatchWithManifest(f"{path.name}: expected {cols} columns, found {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        r, c = (int(v) for v in np.argwhere(~np.isfinite(a))[0])
        raise NonFiniteEntry(f"{path.name}: non-finite entry at row {r}, column {c}")
    return a


def write_matrix_csv(path: str | Path, a: np.ndarray) -> None:
    _write_matrix(Path(path), np.asarray(a, dtype=np.float64))


# -------- voxel standardization --------

def fit_voxel_transform(y: np.ndarray, train: np.ndarray) -> VoxelTransform:
    """Train-split means/stds; columns constant over the train split are dropped."""
    train = np.asarray(train, dtype=np.int64)
    if train.size == 0:
        raise PreconditionError("z-scoring needs a non-empty train split")
    yt = np.asarray(y, dtype=np.float64)[train]
    constant = np.ptp(yt, axis=0) == 0.0
    dropped = [int(j) for j in np.flatnonzero(constant)]
    if dropped:
        logger.warning(f"Dropping {len(dropped)} voxel column(s) constant over the train split: {dropped}")
    keep = np.flatnonzero(~constant)
    std = yt[:, keep].std(axis=0)
    return VoxelTransform(voxel_ids=keep, mean=yt[:, keep].mean(axis=0), std=std, dropped=dropped)


def apply_voxel_transform(dataset: TwoViewDataset, transform: VoxelTransform) -> TwoViewDataset:
    """Apply a stored selection + z-score to every row of ``dataset``."""
    manifest = dataset.manifest
    prior_ids = manifest.voxel_ids
    raw_ids = transform.voxel_ids if prior_ids is None else np.asarray(prior_ids)[transform.voxel_ids]
    prior_dropped = manifest.dropped_voxels
    dropped = transform.dropped if prior_ids is None else [int(prior_ids[j]) for j in transform.dropped]
    new_manifest = DatasetManifest(
        name=manifest.name, n=manifest.n, d1=manifest.d1, d2=transform.d2,
        image_width=manifest.image_width, image_height=manifest.image_height,
        pixel_min=manifest.pixel_min, pixel_max=manifest.pixel_max, bounded=manifest.bounded,
        seed=manifest.seed, latent_dim=manifest.latent_dim,
        voxel_ids=[int(j) for j in raw_ids],
        dropped_voxels=sorted(set(prior_dropped) | set(dropped)),
    )
    return dataset.with_voxels(transform.apply(dataset.y), new_manifest)


def zscore_voxels(dataset: TwoViewDataset) -> TwoViewDataset:
    return apply_voxel_transform(dataset, fit_voxel_transform(dataset.y, dataset.train))


# -------- synthetic ground truth --------

def save_truth(truth: SyntheticGroundTruth, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, a in (("B", truth.b), ("H", truth.h), ("Z", truth.z), ("Zbar", truth.zbar),
                    ("tau", truth.tau[None, :]), ("eta", truth.eta[None, :])):
        _write_matrix(path / f"{name}.csv", a)
    for i, w in enumerate(truth.map_weights):
        _write_matrix(path / f"map{i}.csv", np.atleast_2d(w))
    write_key_values(path / "truth.txt", {
        "gamma": repr(float(truth.gamma)),
        "pixel_noise_std": repr(float(truth.pixel_noise_std)),
        "map_kind": truth.map_kind,
        "map_arrays": str(len(truth.map_weights)),
    })
    return path


def load_truth(path: str | Path) -> SyntheticGroundTruth:
    path = Path(path)
    kv = read_key_values(path / "truth.txt")

    def read(name: str) -> np.ndarray:
        p = path / f"{name}.csv"
        if not p.is_file():
            raise MissingFile(f"missing file: {p}")
        return _as_float(_read_frame(p))

    return SyntheticGroundTruth(
        b=read("B"), h=read("H"), z=read("Z"), zbar=read("Zbar"),
        gamma=float(kv["gamma"]), pixel_noise_std=float(kv["pixel_noise_std"]),
        map_weights=[read(f"map{i}") for i in range(int(kv["map_arrays"]))],
        map_kind=kv["map_kind"], tau=read("tau")[0], eta=read("eta")[0],
    )
