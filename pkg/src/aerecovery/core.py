"""Dense matrices over R or C, the trace pairing and the measurement map.

Matrices are plain ``numpy`` arrays. The scalar field is read from the dtype:
real floating arrays are ``Field.REAL`` and complex arrays are
``Field.COMPLEX``. Operations that combine two matrices insist that both
carry the same field.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

HERMITIAN_TOL = 1e-10


class Field(str, Enum):
    REAL = "R"
    COMPLEX = "C"

    @property
    def dtype(self):
        return np.float64 if self is Field.REAL else np.complex128

    @property
    def real_units(self) -> int:
        """Number of real coordinates per scalar."""
        return 1 if self is Field.REAL else 2

    @classmethod
    def parse(cls, text):
        if isinstance(text, Field):
            return text
        key = str(text).strip().upper()
        if key in ("R", "REAL"):
            return cls.REAL
        if key in ("C", "COMPLEX"):
            return cls.COMPLEX
        raise ValueError(f"unknown field {text!r}")


class FieldMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NotHermitian(ValueError):
    pass


def field_of(M) -> Field:
    return Field.COMPLEX if np.iscomplexobj(M) else Field.REAL


def as_matrix(M, field=None) -> np.ndarray:
    """Return ``M`` as a 2-D float64 or complex128 array."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeMismatch(f"expected a nonempty 2-D matrix, got shape {M.shape}")
    if field is None:
        field = field_of(M)
    field = Field.parse(field)
    if field is Field.REAL:
        if np.iscomplexobj(M):
            if np.any(M.imag != 0):
                raise FieldMismatch("real matrix with nonzero imaginary part")
            M = M.real
        return np.ascontiguousarray(M, dtype=np.float64)
    return np.ascontiguousarray(M, dtype=np.complex128)


def _check_pair(A, P):
    if A.shape != P.shape:
        raise ShapeMismatch(f"shapes {A.shape} and {P.shape} differ")
    if field_of(A) is not field_of(P):
        raise FieldMismatch(f"fields {field_of(A).value} and {field_of(P).value} differ")


def trace_inner(A, P):
    """Tr(A^T P) with a plain (unconjugated) transpose."""
    A = np.asarray(A)
    P = np.asarray(P)
    _check_pair(A, P)
    return np.sum(A * P)


def is_hermitian(P, tol=HERMITIAN_TOL) -> bool:
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    dev = np.linalg.norm(P - P.conj().T)
    return dev <= tol * max(1.0, np.linalg.norm(P))


@dataclass(frozen=True)
class MeasurementVector:
    """The ``N`` measured scalars ``b = L_A(P)``."""

    values: np.ndarray
    field: Field

    def __len__(self):
        return len(self.values)


def pairing_stack(ensemble) -> np.ndarray:
    """Matrices ``B_j`` with measurement ``j`` equal to ``sum(B_j * P)``.

    For trace measurements this is the ensemble itself. For the Hermitian
    rank-one kind the value is ``x^* P x = sum(conj(x x^*) * P)``.
    """
    if ensemble.quadratic_hermitian:
        return ensemble.matrices.conj()
    return ensemble.matrices


def apply_measurement_map(ensemble, P) -> MeasurementVector:
    """Evaluate ``L_A(P)`` for every matrix of ``ensemble``."""
    P = np.asarray(P)
    shape = tuple(ensemble.shape)
    if P.shape != shape:
        raise ShapeMismatch(f"matrix shape {P.shape} does not match ensemble shape {shape}")
    if field_of(P) is not ensemble.field:
        raise FieldMismatch(
            f"matrix field {field_of(P).value} does not match ensemble field {ensemble.field.value}"
        )
    if ensemble.quadratic_hermitian:
        if not is_hermitian(P):
            raise NotHermitian("Hermitian rank-one measurements need a Hermitian matrix")
        vals = np.einsum("nij,ij->n", ensemble.matrices.conj(), P).real
        return MeasurementVector(np.ascontiguousarray(vals), Field.REAL)
    vals = np.einsum("nij,ij->n", ensemble.matrices, P)
    if ensemble.scalar_field is Field.REAL:
        vals = np.real(vals)
    return MeasurementVector(np.ascontiguousarray(vals), ensemble.scalar_field)


def realify(M) -> np.ndarray:
    """Real coordinate vector of ``M``.

    Real matrices give their row-major entries. Complex matrices give
    ``(Re M_00, Im M_00, Re M_01, Im M_01, ...)``, i.e. real and imaginary
    parts interleaved per entry in row-major order.
    """
    M = np.asarray(M)
    if np.iscomplexobj(M):
        flat = M.reshape(-1)
        out = np.empty(2 * flat.size)
        out[0::2] = flat.real
        out[1::2] = flat.imag
        return out
    return np.asarray(M, dtype=np.float64).reshape(-1).copy()


def realify_rows(J) -> np.ndarray:
    """Split each complex row of ``J`` into a real row and an imaginary row."""
    J = np.asarray(J)
    if not np.iscomplexobj(J):
        return np.asarray(J, dtype=np.float64)
    out = np.empty((2 * J.shape[0], J.shape[1]))
    out[0::2] = J.real
    out[1::2] = J.imag
    return out
