"""Numerical dimension and identifiability certificates.

The local test: at a smooth point ``P`` of the recovered variety, restrict
the measurement map to the tangent space and compute its rank. The kernel
dimension ``dim - rank`` is the local dimension of the fiber through ``P``;
zero means ``P`` is locally identifiable.
"""

from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np

from .core import Field, FieldMismatch, ShapeMismatch, as_matrix, pairing_stack, realify_rows
from .varieties import (
    SingularStratum,
    TangentBasis,
    VarietySpec,
    numerical_rank,
    sample_point,
    tangent_basis,
)

MAX_RESAMPLES = 10
ADMISSIBLE_TOL = 1e-8
VANISH_TOL = 1e-12


@dataclass
class RankReport:
    jacobian_rows: int
    jacobian_cols: int
    singular_values: np.ndarray
    rank: int
    tolerance_used: float
    field: Field = Field.REAL

    def to_json(self):
        return {
            "schema": 1,
            "type": "rank_report",
            "jacobian_rows": self.jacobian_rows,
            "jacobian_cols": self.jacobian_cols,
            "singular_values": [float(s) for s in self.singular_values],
            "rank": self.rank,
            "tolerance_used": float(self.tolerance_used),
            "field": self.field.value,
            "fiber_dim": fiber_dim_estimate(self),
        }


def numerical_variety_dim(spec: VarietySpec, trials, rng) -> int:
    """Generic tangent rank of ``spec`` in real units, maximized over ``trials`` points."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    best = 0
    for _ in range(trials):
        for attempt in range(MAX_RESAMPLES):
            X = sample_point(spec, rng)
            try:
                tb = tangent_basis(spec, X)
                break
            except SingularStratum:
                if attempt == MAX_RESAMPLES - 1:
                    raise
        rank, _, _ = numerical_rank(tb.realified())
        best = max(best, rank)
    return best


def jacobian_matrix(ensemble, tb: TangentBasis):
    """``J[j, k]`` = derivative of measurement ``j`` along tangent direction ``k``.

    Returns ``(J, field)`` where ``field`` is the field over which the rank is
    to be taken.
    """
    if tuple(ensemble.shape) != tb.base_point.shape:
        raise ShapeMismatch("tangent basis and ensemble shapes differ")
    basis = tb.basis
    if ensemble.field is not Field.COMPLEX and np.iscomplexobj(basis):
        raise FieldMismatch("complex tangent directions with real measurements")
    if ensemble.field is Field.COMPLEX and not np.iscomplexobj(basis):
        basis = basis.astype(np.complex128)
    B = pairing_stack(ensemble)
    J = np.einsum("nij,kij->nk", B, basis) if len(basis) else np.zeros((ensemble.N, 0))
    if ensemble.quadratic_hermitian:
        J = J.real
    if tb.counting_field is Field.COMPLEX:
        if ensemble.scalar_field is not Field.COMPLEX:
            raise FieldMismatch("complex-counted variety needs complex measurements")
        return J, Field.COMPLEX
    return realify_rows(J), Field.REAL


def measurement_jacobian(ensemble, tb: TangentBasis) -> RankReport:
    J, fld = jacobian_matrix(ensemble, tb)
    rows, cols = J.shape
    if rows == 0 or cols == 0:
        return RankReport(rows, cols, np.zeros(0), 0, 0.0, fld)
    rank, s, tol = numerical_rank(J)
    return RankReport(rows, cols, s, rank, tol, fld)


def fiber_dim_estimate(report: RankReport) -> int:
    return report.jacobian_cols - report.rank


def local_identifiability(ensemble, spec: VarietySpec, P) -> RankReport:
    """Rank report of the measurement map restricted to the tangent space at ``P``."""
    return measurement_jacobian(ensemble, tangent_basis(spec, P))


class Verdict(str, Enum):
    ADMISSIBLE = "Admissible"
    NOT_ADMISSIBLE = "NotAdmissible"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class AdmissibilityVerdict:
    variety: VarietySpec
    functional_witness: np.ndarray
    probes_tried: int
    verdict: Verdict
    max_abs_value: float
    max_tangent_value: float = dc_field(default=0.0)

    def to_json(self):
        from .serialize import matrix_to_json

        return {
            "schema": 1,
            "type": "admissibility",
            "variety": self.variety.to_text(),
            "functional_witness": matrix_to_json(self.functional_witness),
            "probes_tried": self.probes_tried,
            "verdict": self.verdict.value,
            "max_abs_value": float(self.max_abs_value),
            "max_tangent_value": float(self.max_tangent_value),
        }


def admissibility_probe(V: VarietySpec, P, probes, rng) -> AdmissibilityVerdict:
    """Probe whether ``Q -> Tr(P^T Q)`` vanishes identically on ``V``.

    Values are normalized by ``||P||_F ||v||_F``. One value above 1e-8 makes
    the verdict Admissible. NotAdmissible needs every probe value and every
    tangent-direction value at every probe point below 1e-12.
    """
    P = np.asarray(P)
    if V.field is Field.COMPLEX and not np.iscomplexobj(P):
        P = P.astype(np.complex128)
    P = as_matrix(P, V.field)
    if P.shape != V.shape:
        raise ShapeMismatch(f"functional shape {P.shape} does not match {V.shape}")
    nP = np.linalg.norm(P)
    if nP == 0:
        raise ValueError("the zero functional is excluded")
    max_val = 0.0
    max_tan = 0.0
    for _ in range(probes):
        v = sample_point(V, rng)
        val = abs(np.sum(P * v)) / (nP * np.linalg.norm(v))
        max_val = max(max_val, val)
        if max_val <= VANISH_TOL:
            try:
                tb = tangent_basis(V, v)
            except SingularStratum:
                continue
            for T in tb.basis:
                t = abs(np.sum(P * T)) / (nP * np.linalg.norm(T))
                max_tan = max(max_tan, t)
    if max_val > ADMISSIBLE_TOL:
        verdict = Verdict.ADMISSIBLE
    elif probes > 0 and max_val <= VANISH_TOL and max_tan <= VANISH_TOL:
        verdict = Verdict.NOT_ADMISSIBLE
    else:
        verdict = Verdict.INCONCLUSIVE
    return AdmissibilityVerdict(V, P, probes, verdict, max_val, max_tan)


def skew_symmetric(rng, p, field=Field.REAL):
    from .varieties import gaussian

    G = gaussian(rng, (p, p), field)
    return (G - G.T) / np.sqrt(2)
