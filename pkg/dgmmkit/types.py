from __future__ import annotations
from enum import Enum

class OutputKind(str, Enum):
    """Mean head of a network: affine, or affine followed by the logistic."""
    IDENTITY = "identity"
    SIGMOID = "sigmoid"

class MapKind(str, Enum):
    LINEAR = "linear"
    MLP = "mlp"

class SweepStep(str, Enum):
    ZBAR = "zbar"
    B = "b"
    H = "h"
    PRECISIONS = "precisions"

class GammaRate(str, Enum):
    # "plugin" drops the second-moment corrections from the noise rate
    PLUGIN = "plugin"
    EXPECTED = "expected"
