"""Random measurement ensembles ``A = (A_1, ..., A_N)``.

Text forms (``N`` and ``seed`` may be omitted inside a scenario)::

    gauss:N20:4x4:C:seed7        i.i.d. Gaussian entries
    lowrank:N20:4x4:s2:R:seed1   rank-2 Gaussian factor products
    orth:N10:4:seed1             Haar orthogonal (real only)
    proj:N10:4:s2:seed1          Haar rank-2 orthogonal projections (real only)
    rank1sym:N5:4:seed0          x x^T with real Gaussian x
    rank1herm:N9:4:seed3         x x^* with complex Gaussian x

Matrix ``j`` is drawn from its own generator seeded with
``mix_seed(seed, j)``, so any subset of the ensemble can be regenerated
independently and in any order.
"""

import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Field
from .seeding import rng_for
from .serialize import SCHEMA, matrix_from_json, matrix_to_json
from .varieties import VarietySpec, gaussian, haar_orthogonal, membership_residual, sample_point

KINDS = ("gauss", "lowrank", "orth", "proj", "rank1sym", "rank1herm")


class InvalidEnsemble(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    p: int
    q: int
    field: Field = Field.REAL
    N: int = 0
    seed: int = 0
    s: int = 0

    def __post_init__(self):
        object.__setattr__(self, "field", Field.parse(self.field))
        self.validate()

    def validate(self):
        k, p, q, s = self.kind, self.p, self.q, self.s
        if k not in KINDS:
            raise InvalidEnsemble(f"unknown ensemble kind {k!r}")
        if p < 1 or q < 1:
            raise InvalidEnsemble(f"matrix sizes must be positive, got {p}x{q}")
        if self.N < 0:
            raise InvalidEnsemble("N must be nonnegative")
        if k == "lowrank" and not 1 <= s <= min(p, q):
            raise InvalidEnsemble(f"measurement rank {s} outside [1, {min(p, q)}]")
        if k in ("orth", "proj"):
            if p != q:
                raise InvalidEnsemble(f"{k} measurements need square matrices")
            if self.field is not Field.REAL:
                raise InvalidEnsemble(f"{k} measurements are only supported over R")
        if k == "proj" and not 1 <= s <= p - 1:
            raise InvalidEnsemble(f"projection rank {s} outside [1, {p - 1}]")
        if k == "rank1sym" and (p != q or self.field is not Field.REAL):
            raise InvalidEnsemble("rank1sym needs square real matrices")
        if k == "rank1herm" and (p != q or self.field is not Field.COMPLEX):
            raise InvalidEnsemble("rank1herm needs square complex matrices")

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def shape(self):
        return (self.p, self.q)

    @property
    def scalar_field(self) -> Field:
        if self.kind in ("rank1sym", "rank1herm"):
            return Field.REAL
        return self.field

    @classmethod
    def parse(cls, text, N=None, seed=None):
        if isinstance(text, EnsembleSpec):
            return text
        parts = str(text).strip().split(":")
        kind = parts[0].lower()
        if kind not in KINDS:
            raise InvalidEnsemble(f"unknown ensemble kind in {text!r}")
        kw = {"field": Field.COMPLEX if kind == "rank1herm" else Field.REAL}
        shape = None
        for tok in parts[1:]:
            t = tok.strip()
            if m := re.fullmatch(r"N(\d+)", t):
                kw["N"] = int(m.group(1))
            elif m := re.fullmatch(r"seed(\d+)", t, flags=re.I):
                kw["seed"] = int(m.group(1))
            elif m := re.fullmatch(r"s(\d+)", t):
                kw["s"] = int(m.group(1))
            elif m := re.fullmatch(r"(\d+)x(\d+)", t):
                shape = (int(m.group(1)), int(m.group(2)))
            elif re.fullmatch(r"\d+", t):
                shape = (int(t), int(t))
            elif t.upper() in ("R", "C"):
                kw["field"] = Field.parse(t)
            else:
                raise InvalidEnsemble(f"cannot parse token {tok!r} in {text!r}")
        if shape is None:
            raise InvalidEnsemble(f"missing shape in {text!r}")
        if N is not None:
            kw["N"] = int(N)
        if seed is not None:
            kw["seed"] = int(seed)
        return cls(kind, shape[0], shape[1], **kw)

    def to_text(self, with_n=True, with_seed=True):
        toks = [self.kind]
        if with_n:
            toks.append(f"N{self.N}")
        if self.kind in ("gauss", "lowrank"):
            toks.append(f"{self.p}x{self.q}")
        else:
            toks.append(str(self.p))
        if self.kind in ("lowrank", "proj"):
            toks.append(f"s{self.s}")
        if self.kind in ("gauss", "lowrank"):
            toks.append(self.field.value)
        if with_seed:
            toks.append(f"seed{self.seed}")
        return ":".join(toks)

    def __str__(self):
        return self.to_text()


@dataclass(frozen=True)
class MeasurementEnsemble:
    """``N`` measurement matrices stacked as an ``(N, p, q)`` array.

    Rank-one kinds also keep the generating vectors ``x_j`` as ``vectors``.
    """

    spec: EnsembleSpec
    matrices: np.ndarray
    vectors: Optional[np.ndarray] = None

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def N(self):
        return self.matrices.shape[0]

    @property
    def shape(self):
        return self.spec.shape

    @property
    def field(self) -> Field:
        return self.spec.field

    @property
    def scalar_field(self) -> Field:
        return self.spec.scalar_field

    @property
    def quadratic_hermitian(self) -> bool:
        return self.spec.kind == "rank1herm"

    def prefix(self, n):
        v = None if self.vectors is None else self.vectors[:n]
        return MeasurementEnsemble(self.spec.with_(N=n), self.matrices[:n], v)

    def to_json(self):
        d = {
            "schema": SCHEMA,
            "type": "ensemble",
            "spec": self.spec.to_text(),
            "kind": self.spec.kind,
            "shape": list(self.shape),
            "field": self.field.value,
            "seed": self.spec.seed,
            "N": self.N,
            "rank": self.spec.s,
            "matrices": [matrix_to_json(A) for A in self.matrices],
        }
        if self.vectors is not None:
            d["vectors"] = [matrix_to_json(x) for x in self.vectors]
        return d

    @classmethod
    def from_json(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported ensemble schema {d.get('schema')!r}")
        spec = EnsembleSpec.parse(d["spec"])
        p, q = spec.shape
        mats = [matrix_from_json(m, spec.field) for m in d["matrices"]]
        matrices = np.array(mats, dtype=spec.field.dtype).reshape(len(mats), p, q)
        vectors = None
        if "vectors" in d:
            vectors = np.array(
                [matrix_from_json(x, spec.field) for x in d["vectors"]], dtype=spec.field.dtype
            ).reshape(len(mats), p)
        if matrices.shape[0] != spec.N:
            raise ValueError("matrix count does not match N")
        return cls(spec, matrices, vectors)


def _draw(spec: EnsembleSpec, j: int):
    rng = rng_for(spec.seed, j)
    p, q = spec.shape
    k = spec.kind
    if k == "gauss":
        return gaussian(rng, (p, q), spec.field), None
    if k == "lowrank":
        return sample_point(VarietySpec.lowrank(p, q, spec.s, spec.field), rng), None
    if k == "orth":
        return haar_orthogonal(p, rng), None
    if k == "proj":
        return sample_point(VarietySpec.projection(p, spec.s), rng), None
    x = gaussian(rng, p, spec.field)
    return np.outer(x, x.conj()), x


def generate(spec: EnsembleSpec, indices=None) -> MeasurementEnsemble:
    """Draw the ensemble described by ``spec``; a pure function of ``spec``.

    ``indices`` restricts generation to a subset of matrix indices, which is
    what parallel chunked generation uses; the drawn matrices are identical
    to the corresponding entries of the full ensemble.
    """
    p, q = spec.shape
    idx = range(spec.N) if indices is None else list(indices)
    mats = np.zeros((len(idx), p, q), dtype=spec.field.dtype)
    vecs = None
    if spec.kind in ("rank1sym", "rank1herm"):
        vecs = np.zeros((len(idx), p), dtype=spec.field.dtype)
    for n, j in enumerate(idx):
        A, x = _draw(spec, j)
        mats[n] = A
        if vecs is not None:
            vecs[n] = x
    if indices is not None:
        spec = spec.with_(N=len(idx))
    return MeasurementEnsemble(spec, mats, vecs)


def measurement_variety_of(spec: EnsembleSpec) -> VarietySpec:
    p, q = spec.shape
    k = spec.kind
    if k == "gauss":
        return VarietySpec.full_space(p, q, spec.field)
    if k == "lowrank":
        return VarietySpec.lowrank(p, q, spec.s, spec.field)
    if k == "orth":
        return VarietySpec.orthogonal(p)
    if k == "proj":
        return VarietySpec.projection(p, spec.s)
    if k == "rank1sym":
        return VarietySpec.symmetric(p, 1)
    return VarietySpec.hermitian(p, 1)


def concatenate(first: MeasurementEnsemble, second: MeasurementEnsemble) -> MeasurementEnsemble:
    """Stack two ensembles of the same shape and field (e.g. to mix ranks)."""
    if first.shape != second.shape or first.field is not second.field:
        raise InvalidEnsemble("cannot concatenate ensembles of different shape or field")
    if first.quadratic_hermitian != second.quadratic_hermitian:
        raise InvalidEnsemble("cannot mix Hermitian quadratic and trace measurements")
    mats = np.concatenate([first.matrices, second.matrices])
    vecs = None
    if first.vectors is not None and second.vectors is not None:
        vecs = np.concatenate([first.vectors, second.vectors])
    return MeasurementEnsemble(first.spec.with_(N=len(mats)), mats, vecs)


def ensemble_residual(ensemble: MeasurementEnsemble) -> float:
    """Largest membership residual over the ensemble's matrices."""
    V = measurement_variety_of(ensemble.spec)
    if ensemble.N == 0:
        return 0.0
    return max(membership_residual(V, A) for A in ensemble.matrices)
