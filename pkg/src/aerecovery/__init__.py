"""Matrix recovery from linear trace measurements.

Numerical tools for checking how many measurements are needed to recover
low-rank, symmetric and Hermitian matrices, either everywhere or for almost
every matrix on the variety.
"""

from .core import (
    Field,
    MeasurementVector,
    apply_measurement_map,
    field_of,
    realify,
    trace_inner,
)
from .varieties import VarietySpec, TangentBasis, delta_spec, variety_dim, ambient_dim
from .ensembles import EnsembleSpec, MeasurementEnsemble, generate

__version__ = "0.1.0"

__all__ = [
    "Field",
    "MeasurementVector",
    "apply_measurement_map",
    "field_of",
    "realify",
    "trace_inner",
    "VarietySpec",
    "TangentBasis",
    "delta_spec",
    "variety_dim",
    "ambient_dim",
    "EnsembleSpec",
    "MeasurementEnsemble",
    "generate",
]
