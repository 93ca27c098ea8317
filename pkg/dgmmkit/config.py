# config.py
"""Run configuration read from flat ``section.key = value`` text.

Every field has a default except ``data.path``; unknown sections or keys are
errors. ``RunConfig.to_text()`` renders the fully resolved configuration,
which parses back to an equal object.
"""
from __future__ import annotations
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .engine import TrainConfig
from .errors import ConfigError
from .models import Hyperparameters
from .optimizers import available as available_optimizers
from .synthetic import SyntheticConfig
from .types import GammaRate, MapKind

import logging
logger = logging.getLogger("dgmmkit.config")


@dataclass(slots=True)
class DataSection:
    path: Optional[str] = None
    model: Optional[str] = None
    reconstructions: Optional[str] = None


@dataclass(slots=True)
class ModelSection:
    k: int = 10
    k_bar: Optional[int] = None
    hidden: Tuple[int, ...] = (256, 128)
    gamma_rate: str = GammaRate.PLUGIN.value
    freeze_pixel_variance: bool = False
    pixel_log_variance: float = 0.0
    alpha_tau: float = 1.0
    beta_tau: float = 1.0
    alpha_eta: float = 1.0
    beta_eta: float = 1.0
    alpha_gamma: float = 1.0
    beta_gamma: float = 1.0


@dataclass(slots=True)
class TrainSection:
    max_epochs: int = 500
    batch_size: int = 32
    full_batch_below: int = 128
    lr: float = 1e-3
    optimizer: str = "rmsprop"
    mc_samples: int = 1
    seed: int = 0
    tol: float = 1e-5
    window: int = 5


@dataclass(slots=True)
class PredictSection:
    k_neighbors: int = 10
    bandwidth: str = "median"
    rho: str = "cv"
    mc_samples: int = 64
    cv_folds: int = 5
    cv_mc_samples: int = 16
    seed: int = 0


@dataclass(slots=True)
class ScreenSection:
    enabled: bool = False
    folds: int = 10
    alpha: float = 1.0


@dataclass(slots=True)
class GenerateSection:
    n: int = 100
    d1: int = 784
    d2: int = 3092
    k: int = 10
    k_bar: Optional[int] = None
    test_fraction: float = 0.1
    map_kind: str = MapKind.LINEAR.value
    gamma: float = 10.0
    pixel_noise_std: float = 0.05
    hidden: int = 64
    image_width: Optional[int] = None
    image_height: Optional[int] = None
    seed: int = 0
    name: str = "synthetic"


@dataclass(slots=True)
class OutputSection:
    dir: str = "out"
    save_images: bool = True
    plots: bool = True


@dataclass(slots=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    predict: PredictSection = field(default_factory=PredictSection)
    screen: ScreenSection = field(default_factory=ScreenSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -------- parsing --------
    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        seen: Dict[str, int] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{source}:{lineno}"
            if "=" not in line:
                raise ConfigError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
            lhs, value = (s.strip() for s in line.split("=", 1))
            if lhs in seen:
                raise ConfigError(f"{where}: '{lhs}' already set on line {seen[lhs]}")
            seen[lhs] = lineno
            cfg.set(lhs, value, where)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def set(self, dotted: str, value: str, where: str = "<override>") -> None:
        if "." not in dotted:
            raise ConfigError(f"{where}: key '{dotted}' lacks a section prefix")
        section_name, key = dotted.split(".", 1)
        section = getattr(self, section_name, None) if section_name in _section_names() else None
        if section is None:
            raise ConfigError(f"{where}: unknown section '{section_name}' (known: {', '.join(_section_names())})")
        hints = _hints(type(section))
        if key not in hints:
            raise ConfigError(f"{where}: unknown key '{dotted}'")
        try:
            setattr(section, key, _converter(hints[key])(value))
        except ValueError as e:
            raise ConfigError(f"{where}: bad value {value!r} for '{dotted}' ({e})") from e

    # -------- rendering --------
    def to_text(self) -> str:
        lines = []
        for name in _section_names():
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{name}.{f.name} = {_render(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    # -------- validation and views --------
    def validate(self, command: str) -> None:
        if command in {"train", "reconstruct", "evaluate"}:
            if not self.data.path:
                raise ConfigError("data.path is required")
            if not Path(self.data.path).is_dir():
                raise ConfigError(f"data.path does not exist: {self.data.path}")
        for cmd, key in (("reconstruct", "model"), ("evaluate", "reconstructions")):
            if command == cmd:
                value = getattr(self.data, key)
                if not value:
                    raise ConfigError(f"data.{key} is required for {cmd}")
                if not Path(value).is_dir():
                    raise ConfigError(f"data.{key} does not exist: {value}")
        if self.model.gamma_rate not in {g.value for g in GammaRate}:
            raise ConfigError(f"model.gamma_rate must be one of {[g.value for g in GammaRate]}")
        if self.train.optimizer.lower() not in available_optimizers():
            raise ConfigError(f"train.optimizer must be one of {available_optimizers()}")
        if self.generate.map_kind not in {m.value for m in MapKind}:
            raise ConfigError(f"generate.map_kind must be one of {[m.value for m in MapKind]}")
        try:
            self.rho_value()
            self.bandwidth_value()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.predict.k_neighbors < 1 or self.predict.mc_samples < 1:
            raise ConfigError("predict.k_neighbors and predict.mc_samples must be >= 1")

    def rho_value(self) -> Optional[float]:
        """Fixed rho, or None when it is chosen by cross-validation."""
        if self.predict.rho.lower() == "cv":
            return None
        rho = float(self.predict.rho)
        if rho < 0:
            raise ValueError(f"predict.rho must be 'cv' or a non-negative number, got {rho}")
        return rho

    def bandwidth_value(self) -> Optional[float]:
        """Fixed kNN bandwidth, or None for the median-distance heuristic."""
        if self.predict.bandwidth.lower() == "median":
            return None
        t = float(self.predict.bandwidth)
        if not t > 0:
            raise ValueError(f"predict.bandwidth must be 'median' or positive, got {t}")
        return t

    def train_config(self) -> TrainConfig:
        m, t = self.model, self.train
        return TrainConfig(
            k=m.k, k_bar=m.k_bar, hidden=tuple(m.hidden),
            max_epochs=t.max_epochs, batch_size=t.batch_size, full_batch_below=t.full_batch_below,
            lr=t.lr, optimizer=t.optimizer, mc_samples=t.mc_samples, seed=t.seed,
            tol=t.tol, window=t.window, gamma_rate=GammaRate(m.gamma_rate),
            hyper=Hyperparameters(m.alpha_tau, m.beta_tau, m.alpha_eta, m.beta_eta,
                                  m.alpha_gamma, m.beta_gamma),
            freeze_pixel_variance=m.freeze_pixel_variance, pixel_log_variance=m.pixel_log_variance,
        )

    def synthetic_config(self) -> SyntheticConfig:
        g = self.generate
        return SyntheticConfig(
            n=g.n, d1=g.d1, d2=g.d2, k=g.k, k_bar=g.k_bar, test_fraction=g.test_fraction,
            map_kind=MapKind(g.map_kind), gamma=g.gamma, pixel_noise_std=g.pixel_noise_std,
            hidden=g.hidden, image_width=g.image_width, image_height=g.image_height,
            seed=g.seed, name=g.name,
        )

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       **data_paths: Optional[str]) -> "RunConfig":
        """Copy with command-line overrides; ``data_paths`` sets ``data.<key>`` when not None."""
        cfg = RunConfig(**{name: replace(getattr(self, name)) for name in _section_names()})
        for key, value in data_paths.items():
            if value is not None:
                cfg.set(f"data.{key}", value, "--" + key)
        if seed is not None:
            cfg.train.seed = seed
            cfg.generate.seed = seed
            cfg.predict.seed = seed
        if out is not None:
            cfg.output.dir = out
        return cfg


def _section_names() -> Tuple[str, ...]:
    return tuple(f.name for f in fields(RunConfig))


def _hints(cls) -> Dict[str, object]:
    return typing.get_type_hints(cls)


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in {"true", "yes", "1", "on"}:
        return True
    if v in {"false", "no", "0", "off"}:
        return False
    raise ValueError("expected true/false")


def _parse_int_tuple(s: str) -> Tuple[int, ...]:
    out = tuple(int(t) for t in s.split(",") if t.strip())
    if any(v < 1 for v in out):
        raise ValueError("layer widths must be positive")
    return out


_SCALARS: Dict[object, Callable[[str], object]] = {
    int: int,
    float: float,
    bool: _parse_bool,
    str: str,
    Tuple[int, ...]: _parse_int_tuple,
}


def _converter(tp) -> Callable[[str], object]:
    if typing.get_origin(tp) is typing.Union:
        inner = next(a for a in typing.get_args(tp) if a is not type(None))
        base = _SCALARS[inner]
        return lambda s: None if s.strip().lower() in {"", "none", "auto"} else base(s)
    return _SCALARS[tp]


def _render(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)
