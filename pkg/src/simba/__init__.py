"""Selective state-space sequence mixing with FFT-domain channel mixing.

A small numpy-backed library: a tape-based autodiff core, spectral
gating (FFT + block-diagonal complex weights + soft shrinkage), the
selective scan and its linear time-invariant reference path, two
desk-scale model heads (hierarchical image classifier, multivariate
forecaster), dataset generators, a training loop, and a CLI.
"""

from . import audit, bench, checkpoint, config, container, data, gradcheck, model, spectral, ssm, train
from .errors import (
    ConfigError,
    CsvFormatError,
    CsvParseError,
    DataError,
    NumericError,
    ParameterError,
    ShapeError,
    SimbaError,
)
from .rng import substream
from .tensor import ComplexTensor, Tensor, backward, no_grad

__version__ = "0.1.0"
