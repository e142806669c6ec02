"""Matrix varieties: dimensions, random points, tangent spaces.

Each variety is described by a :class:`VarietySpec` with a canonical text
form::

    lowrank:4x4:r1:C     rank <= 1 in C^{4x4}
    sym:4:r2             real symmetric 4x4 of rank <= 2 (``sym:4:r2:C`` for complex symmetric)
    herm:5:r2            Hermitian 5x5 of rank <= 2
    orth:6               6x6 real orthogonal matrices
    proj:6:r2            6x6 real orthogonal projections of rank 2
    rank1psd:4:R         x x^T (``:C`` for x x^*)
    full:4x4:C           the whole matrix space

Dimensions are reported in the *counting field* of the variety: complex
units for complex varieties (``lowrank``/``sym``/``full`` over C), real units
for the real varieties sitting inside complex matrix space (``herm``,
``rank1psd:…:C``) and for every real variety.
"""

import re
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import Field, as_matrix, field_of, realify

KINDS = ("lowrank", "sym", "herm", "orth", "proj", "rank1psd", "full")
RANK_TOL_FACTOR = 64
MEMBERSHIP_TOL = 1e-8


class InvalidSpec(ValueError):
    pass


class OffVariety(ValueError):
    pass


class SingularStratum(ValueError):
    pass


class UnsupportedKind(ValueError):
    pass


@dataclass(frozen=True)
class VarietySpec:
    kind: str
    p: int
    q: int
    r: int = 0
    field: Field = Field.REAL

    def __post_init__(self):
        object.__setattr__(self, "field", Field.parse(self.field))
        self.validate()

    def validate(self):
        k, p, q, r = self.kind, self.p, self.q, self.r
        if k not in KINDS:
            raise InvalidSpec(f"unknown variety kind {k!r}")
        if p < 1 or q < 1:
            raise InvalidSpec(f"matrix sizes must be positive, got {p}x{q}")
        if k in ("sym", "herm", "orth", "proj", "rank1psd") and p != q:
            raise InvalidSpec(f"{k} needs square matrices")
        if k == "lowrank" and not 1 <= r <= min(p, q):
            raise InvalidSpec(f"rank {r} outside [1, {min(p, q)}]")
        if k in ("sym", "herm") and not 1 <= r <= p:
            raise InvalidSpec(f"rank {r} outside [1, {p}]")
        if k == "proj" and not 1 <= r <= p - 1:
            raise InvalidSpec(f"projection rank {r} outside [1, {p - 1}]")
        if k == "herm" and self.field is not Field.COMPLEX:
            raise InvalidSpec("Hermitian matrices live in complex matrix space")
        if k in ("orth", "proj") and self.field is not Field.REAL:
            raise InvalidSpec(f"{k} is only supported over R")

    # -- constructors -------------------------------------------------

    @classmethod
    def lowrank(cls, p, q, r, field=Field.REAL):
        return cls("lowrank", p, q, r, field)

    @classmethod
    def symmetric(cls, p, r, field=Field.REAL):
        return cls("sym", p, p, r, field)

    @classmethod
    def hermitian(cls, p, r):
        return cls("herm", p, p, r, Field.COMPLEX)

    @classmethod
    def orthogonal(cls, d):
        return cls("orth", d, d, 0, Field.REAL)

    @classmethod
    def projection(cls, d, r):
        return cls("proj", d, d, r, Field.REAL)

    @classmethod
    def rank_one_psd(cls, p, field=Field.REAL):
        return cls("rank1psd", p, p, 1, field)

    @classmethod
    def full_space(cls, p, q, field=Field.REAL):
        return cls("full", p, q, 0, field)

    # -- text form ----------------------------------------------------

    @classmethod
    def parse(cls, text):
        if isinstance(text, VarietySpec):
            return text
        parts = str(text).strip().split(":")
        kind = parts[0].lower()
        rest = parts[1:]
        try:
            if kind in ("lowrank", "full"):
                p, q = _parse_shape(rest[0])
                r = 0
                i = 1
                if kind == "lowrank":
                    r = _parse_rank(rest[1])
                    i = 2
                field = Field.parse(rest[i]) if len(rest) > i else Field.REAL
                if len(rest) > i + 1:
                    raise InvalidSpec(f"trailing fields in {text!r}")
                return cls(kind, p, q, r, field)
            if kind in ("sym", "herm", "proj"):
                d = _parse_size(rest[0])
                r = _parse_rank(rest[1])
                field = Field.COMPLEX if kind == "herm" else Field.REAL
                if len(rest) > 2:
                    if kind != "sym" or len(rest) > 3:
                        raise InvalidSpec(f"trailing fields in {text!r}")
                    field = Field.parse(rest[2])
                return cls(kind, d, d, r, field)
            if kind == "orth":
                if len(rest) != 1:
                    raise InvalidSpec(f"expected orth:<d>, got {text!r}")
                d = _parse_size(rest[0])
                return cls(kind, d, d, 0, Field.REAL)
            if kind == "rank1psd":
                d = _parse_size(rest[0])
                field = Field.parse(rest[1]) if len(rest) > 1 else Field.REAL
                if len(rest) > 2:
                    raise InvalidSpec(f"trailing fields in {text!r}")
                return cls(kind, d, d, 1, field)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"cannot parse variety {text!r}: {exc}") from None
        raise InvalidSpec(f"unknown variety kind in {text!r}")

    def to_text(self):
        k = self.kind
        if k == "lowrank":
            return f"lowrank:{self.p}x{self.q}:r{self.r}:{self.field.value}"
        if k == "full":
            return f"full:{self.p}x{self.q}:{self.field.value}"
        if k == "sym":
            suffix = ":C" if self.field is Field.COMPLEX else ""
            return f"sym:{self.p}:r{self.r}{suffix}"
        if k in ("herm", "proj"):
            return f"{k}:{self.p}:r{self.r}"
        if k == "orth":
            return f"orth:{self.p}"
        return f"rank1psd:{self.p}:{self.field.value}"

    def __str__(self):
        return self.to_text()

    @property
    def shape(self):
        return (self.p, self.q)

    @property
    def counting_field(self) -> Field:
        if self.kind in ("herm", "rank1psd", "orth", "proj"):
            return Field.REAL
        return self.field

    @property
    def is_bounded_rank(self):
        return self.kind in ("lowrank", "sym", "herm")

    @property
    def rank_bound(self):
        if self.kind in ("lowrank", "sym", "herm", "proj"):
            return self.r
        if self.kind == "rank1psd":
            return 1
        return min(self.p, self.q)


def _parse_size(tok):
    n = int(tok)
    if n < 1:
        raise InvalidSpec(f"size must be positive, got {tok!r}")
    return n


def _parse_shape(tok):
    m = re.fullmatch(r"(\d+)x(\d+)", tok.strip().lower())
    if not m:
        raise InvalidSpec(f"bad shape {tok!r}, expected <p>x<q>")
    p, q = int(m.group(1)), int(m.group(2))
    if p < 1 or q < 1:
        raise InvalidSpec(f"matrix sizes must be positive, got {tok!r}")
    return p, q


def _parse_rank(tok):
    m = re.fullmatch(r"r(\d+)", tok.strip().lower())
    if not m:
        raise InvalidSpec(f"bad rank {tok!r}, expected r<k>")
    return int(m.group(1))


# ---------------------------------------------------------------------------
# dimensions


def variety_dim(spec: VarietySpec) -> int:
    """Dimension of the variety in its counting field."""
    p, q, r = spec.p, spec.q, spec.r
    k = spec.kind
    if k == "lowrank":
        return (p + q) * r - r * r
    if k == "sym":
        return p * r - r * (r - 1) // 2
    if k == "herm":
        return 2 * p * r - r * r
    if k == "orth":
        return p * (p - 1) // 2
    if k == "proj":
        return r * (p - r)
    if k == "rank1psd":
        return p if spec.field is Field.REAL else 2 * p - 1
    return p * q


def real_dim(spec: VarietySpec) -> int:
    """Dimension counted in real units."""
    return variety_dim(spec) * spec.counting_field.real_units


def ambient_dim(spec: VarietySpec) -> int:
    """Dimension of the ambient matrix space in the counting field.

    For Hermitian-type varieties this is the real dimension ``p^2`` of the
    space of Hermitian matrices.
    """
    return spec.p * spec.q


def delta_spec(spec: VarietySpec) -> VarietySpec:
    """Bounded-rank variety containing all differences ``X - Y``."""
    if spec.kind == "lowrank":
        return VarietySpec.lowrank(spec.p, spec.q, min(2 * spec.r, spec.p, spec.q), spec.field)
    if spec.kind == "sym":
        return VarietySpec.symmetric(spec.p, min(2 * spec.r, spec.p), spec.field)
    if spec.kind == "herm":
        return VarietySpec.hermitian(spec.p, min(2 * spec.r, spec.p))
    if spec.kind == "rank1psd":
        if spec.field is Field.REAL:
            return VarietySpec.symmetric(spec.p, min(2, spec.p))
        return VarietySpec.hermitian(spec.p, min(2, spec.p))
    raise UnsupportedKind(f"differences of {spec.kind} are not a bounded-rank variety")


# ---------------------------------------------------------------------------
# sampling


def gaussian(rng, shape, field):
    """Standard Gaussian array; complex entries have N(0,1) real and imaginary parts."""
    if Field.parse(field) is Field.REAL:
        return rng.standard_normal(shape)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def haar_orthogonal(d, rng):
    """Haar-distributed orthogonal matrix from QR with R-diagonal sign fix."""
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _sym_gaussian(rng, r, field):
    G = gaussian(rng, (r, r), field)
    return (G + G.T) / np.sqrt(2)


def _herm_gaussian(rng, r):
    G = gaussian(rng, (r, r), Field.COMPLEX)
    return (G + G.conj().T) / 2


def sample_point(spec: VarietySpec, rng) -> np.ndarray:
    """Random point on the variety from an absolutely continuous law."""
    p, q, r, f = spec.p, spec.q, spec.r, spec.field
    k = spec.kind
    if k == "lowrank":
        G = gaussian(rng, (p, r), f)
        H = gaussian(rng, (q, r), f)
        return G @ H.T
    if k == "sym":
        Y = gaussian(rng, (p, r), f)
        return Y @ _sym_gaussian(rng, r, f) @ Y.T
    if k == "herm":
        Y = gaussian(rng, (p, r), Field.COMPLEX)
        M = Y @ _herm_gaussian(rng, r) @ Y.conj().T
        return (M + M.conj().T) / 2
    if k == "orth":
        return haar_orthogonal(p, rng)
    if k == "proj":
        U = haar_orthogonal(p, rng)[:, :r]
        M = U @ U.T
        return (M + M.T) / 2
    if k == "rank1psd":
        x = gaussian(rng, p, f)
        return np.outer(x, x.conj())
    return gaussian(rng, (p, q), f)


# ---------------------------------------------------------------------------
# membership, projection


def rank_tolerance(shape):
    return max(shape) * np.finfo(float).eps * RANK_TOL_FACTOR


def numerical_rank(M, tol=None):
    """Return ``(rank, singular_values, tol)`` with rank = #{s_k > tol * s_1}."""
    M = np.asarray(M)
    if M.size == 0:
        return 0, np.zeros(0), 0.0 if tol is None else tol
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = rank_tolerance(M.shape)
    if s[0] == 0:
        return 0, s, tol
    return int(np.sum(s > tol * s[0])), s, tol


def project_to_variety(spec: VarietySpec, M) -> np.ndarray:
    """A nearest (or near-nearest) point of the variety to ``M``."""
    M = np.asarray(M)
    k, r = spec.kind, spec.r
    if k == "full":
        return M.copy()
    if k == "lowrank":
        U, s, Vh = np.linalg.svd(M)
        return (U[:, :r] * s[:r]) @ Vh[:r]
    if k in ("sym", "herm", "rank1psd"):
        if k == "sym" and spec.field is Field.COMPLEX:
            # complex symmetric: Takagi factorization via SVD of the symmetric part
            S = (M + M.T) / 2
            U, s, Vh = np.linalg.svd(S)
            return (U[:, :r] * s[:r]) @ Vh[:r]
        H = (M + M.conj().T) / 2
        w, V = np.linalg.eigh(H)
        if k == "rank1psd":
            i = int(np.argmax(w))
            lam = max(w[i], 0.0)
            return lam * np.outer(V[:, i], V[:, i].conj())
        idx = np.argsort(-np.abs(w))[:r]
        return (V[:, idx] * w[idx]) @ V[:, idx].conj().T
    if k == "orth":
        U, _, Vh = np.linalg.svd(M)
        return U @ Vh
    if k == "proj":
        w, V = np.linalg.eigh((M + M.T) / 2)
        U = V[:, np.argsort(-w)[:r]]
        return U @ U.T
    raise UnsupportedKind(k)


def membership_residual(spec: VarietySpec, M) -> float:
    """Relative distance-like residual of the defining equations of the variety."""
    M = np.asarray(M)
    if M.shape != spec.shape:
        return np.inf
    scale = max(1.0, np.linalg.norm(M))
    k = spec.kind
    if k == "orth":
        return np.linalg.norm(M @ M.T - np.eye(spec.p))
    if k == "proj":
        return max(
            np.linalg.norm(M @ M - M),
            np.linalg.norm(M - M.T),
            abs(np.trace(M) - spec.r),
        )
    res = 0.0
    if k in ("herm", "rank1psd") or (k == "sym" and spec.field is Field.REAL):
        res = np.linalg.norm(M - M.conj().T) / scale
    elif k == "sym":
        res = np.linalg.norm(M - M.T) / scale
    if k == "full":
        return res
    s = np.linalg.svd(M, compute_uv=False)
    bound = spec.rank_bound
    tail = np.sqrt(np.sum(s[bound:] ** 2)) / max(s[0], np.finfo(float).tiny) if s[0] > 0 else 0.0
    res = max(res, tail)
    if k == "rank1psd":
        w = np.linalg.eigvalsh((M + M.conj().T) / 2)
        if w[0] < -MEMBERSHIP_TOL * scale:
            res = max(res, -w[0] / scale)
    return res


# ---------------------------------------------------------------------------
# tangent spaces


@dataclass(frozen=True)
class TangentBasis:
    """Spanning set of the tangent space at ``base_point``.

    ``basis`` has shape ``(k, p, q)``. When ``counting_field`` is complex the
    span is taken over C; otherwise over R even if the matrices are complex.
    """

    base_point: np.ndarray
    basis: np.ndarray
    counting_field: Field

    def __len__(self):
        return self.basis.shape[0]

    def realified(self) -> np.ndarray:
        """Rows are real coordinate vectors spanning the tangent space over R."""
        rows = [realify(T) for T in self.basis]
        if self.counting_field is Field.COMPLEX:
            rows += [realify(1j * T) for T in self.basis]
        if not rows:
            return np.zeros((0, self.base_point.size * field_of(self.base_point).real_units))
        return np.array(rows)


def _outer(u, v):
    return np.outer(u, v)


def _prune(mats):
    """Keep a numerically independent subset of ``mats`` (column-pivoted QR)."""
    if len(mats) == 0:
        return mats
    R = np.array([realify(T) for T in mats]).T
    rank, _, _ = numerical_rank(R, tol=1e-8)
    _, _, piv = scipy.linalg.qr(R, mode="economic", pivoting=True)
    keep = np.sort(piv[:rank])
    return mats[keep]


def _check_point(spec, X):
    res = membership_residual(spec, X)
    if not res <= MEMBERSHIP_TOL:
        raise OffVariety(f"point is off {spec} (residual {res:.3g})")


def _check_rank(spec, s, r):
    tol = rank_tolerance(spec.shape)
    if r > 0 and (s[0] == 0 or s[r - 1] <= tol * s[0]):
        raise SingularStratum(f"point of {spec} has rank below {r}")


def tangent_basis(spec: VarietySpec, point) -> TangentBasis:
    """Tangent space of ``spec`` at a smooth point of exact top rank."""
    X = as_matrix(point, spec.field)
    if X.shape != spec.shape:
        raise OffVariety(f"point shape {X.shape} does not match {spec.shape}")
    _check_point(spec, X)
    p, q, r = spec.p, spec.q, spec.r
    k = spec.kind
    dtype = spec.field.dtype
    mats = []

    if k == "full":
        for i in range(p):
            for j in range(q):
                E = np.zeros((p, q), dtype=dtype)
                E[i, j] = 1
                mats.append(E)

    elif k == "lowrank":
        U, s, Vh = np.linalg.svd(X)
        _check_rank(spec, s, r)
        for a in range(p):
            for b in range(q):
                if a < r or b < r:
                    mats.append(_outer(U[:, a], Vh[b]))

    elif k in ("sym", "herm"):
        if k == "sym" and spec.field is Field.COMPLEX:
            # Takagi-style frame: left singular vectors of a complex symmetric matrix
            U, s, _ = np.linalg.svd(X)
            _check_rank(spec, s, r)
            Uc = U
            conj_t = lambda M: M.T  # noqa: E731
        else:
            w, V = np.linalg.eigh((X + X.conj().T) / 2)
            order = np.argsort(-np.abs(w))
            w, Uc = w[order], V[:, order]
            _check_rank(spec, np.abs(w), r)
            conj_t = (lambda M: M.conj().T) if k == "herm" else (lambda M: M.T)
        Ur, Up = Uc[:, :r], Uc[:, r:]
        for a in range(r):
            for b in range(a, r):
                S = np.zeros((r, r), dtype=dtype)
                S[a, b] = S[b, a] = 1
                mats.append(Ur @ S @ conj_t(Ur))
                if k == "herm" and a != b:
                    S = np.zeros((r, r), dtype=dtype)
                    S[a, b], S[b, a] = 1j, -1j
                    mats.append(Ur @ S @ conj_t(Ur))
        scalars = (1, 1j) if k == "herm" else (1,)
        for i in range(p - r):
            for a in range(r):
                for c in scalars:
                    D = c * _outer(Up[:, i], Ur[:, a].conj() if k == "herm" else Ur[:, a])
                    mats.append(D + conj_t(D))

    elif k == "orth":
        for a in range(p):
            for b in range(a + 1, p):
                S = np.zeros((p, p))
                S[a, b], S[b, a] = 1.0, -1.0
                mats.append(S @ X)

    elif k == "proj":
        w = np.linalg.eigvalsh(X)
        if abs(np.sum(w > 0.5) - r) > 0:
            raise SingularStratum(f"projection does not have rank {r}")
        for a in range(p):
            for b in range(a + 1, p):
                S = np.zeros((p, p))
                S[a, b], S[b, a] = 1.0, -1.0
                mats.append(S @ X - X @ S)
        mats = _prune(np.array(mats))

    elif k == "rank1psd":
        w, V = np.linalg.eigh((X + X.conj().T) / 2)
        if w[-1] <= 0 or (p > 1 and np.max(np.abs(w[:-1])) > rank_tolerance(X.shape) * w[-1]):
            raise SingularStratum("rank-one PSD point must have exactly one positive eigenvalue")
        x = np.sqrt(w[-1]) * V[:, -1]
        scalars = (1,) if spec.field is Field.REAL else (1, 1j)
        for i in range(p):
            for c in scalars:
                e = np.zeros(p, dtype=dtype)
                e[i] = c
                mats.append(np.outer(e, x.conj()) + np.outer(x, e.conj()))
        mats = _prune(np.array(mats))

    basis = np.array(mats, dtype=dtype) if len(mats) else np.zeros((0, p, q), dtype=dtype)
    return TangentBasis(X, basis, spec.counting_field)
