from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import InvalidConfig, ShapeMismatch
from .models import MlpParams, OptimizerState


def _check(params: MlpParams, grads: MlpParams, state: OptimizerState) -> None:
    shapes = [a.shape for a in params.arrays()]
    if [g.shape for g in grads.arrays()] != shapes:
        raise ShapeMismatch("gradient shapes do not mirror the parameters")
    if [a.shape for a in state.accumulators] != shapes:
        raise ShapeMismatch("optimizer accumulators do not mirror the parameters")


class Optimizer(ABC):
    """Stochastic-gradient rule applied to one network's parameters."""
    name: str

    def init_state(self, params: MlpParams, lr: float) -> OptimizerState:
        return OptimizerState(lr=lr, accumulators=[np.zeros_like(a) for a in params.arrays()])

    def step(self, params: MlpParams, grads: MlpParams, state: OptimizerState) -> MlpParams:
        """Return updated params; accumulators and the step counter advance in ``state``."""
        _check(params, grads, state)
        updated = [
            w - self._delta(g, acc, state.lr)
            for w, g, acc in zip(params.arrays(), grads.arrays(), state.accumulators)
        ]
        state.step += 1
        return params.with_arrays(updated)

    @abstractmethod
    def _delta(self, grad: np.ndarray, acc: np.ndarray, lr: float) -> np.ndarray:
        """Parameter decrement for one array; may update ``acc`` in place."""
        ...


@dataclass
class SGD(Optimizer):
    name: str = "sgd"

    def _delta(self, grad, acc, lr):
        return lr * grad


@dataclass
class RMSprop(Optimizer):
    name: str = "rmsprop"
    decay: float = 0.9
    eps: float = 1e-8

    def _delta(self, grad, acc, lr):
        acc *= self.decay
        acc += (1.0 - self.decay) * grad**2
        return lr * grad / (np.sqrt(acc) + self.eps)


@dataclass
class AdaGrad(Optimizer):
    name: str = "adagrad"
    eps: float = 1e-8

    def _delta(self, grad, acc, lr):
        acc += grad**2
        return lr * grad / (np.sqrt(acc) + self.eps)


_OPTIMIZERS = {
    "SGD": SGD,
    "RMSPROP": RMSprop,
    "ADAGRAD": AdaGrad,
}

def available() -> List[str]:
    return [cls().name for cls in _OPTIMIZERS.values()]

def get_optimizer(name: str) -> Optimizer:
    key = name.upper()
    if key not in _OPTIMIZERS:
        raise InvalidConfig(f"Unknown optimizer '{name}'. Available: {', '.join(available())}")
    return _OPTIMIZERS[key]()


def optimizer_step(params: MlpParams, grads: MlpParams, state: OptimizerState,
                   optimizer: Optimizer | None = None) -> MlpParams:
    return (optimizer or RMSprop()).step(params, grads, state)
