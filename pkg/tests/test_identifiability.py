import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from aerecovery.core import Field
from aerecovery.ensembles import EnsembleSpec, MeasurementEnsemble, generate
from aerecovery.identifiability import (
    RankReport,
    Verdict,
    admissibility_probe,
    fiber_dim_estimate,
    local_identifiability,
    measurement_jacobian,
    numerical_variety_dim,
    skew_symmetric,
)
from aerecovery.recovery import Parametrization
from aerecovery.seeding import rng_for
from aerecovery.varieties import VarietySpec, delta_spec, sample_point, tangent_basis, variety_dim


def test_numerical_dim_examples(rng):
    assert numerical_variety_dim(VarietySpec.lowrank(4, 4, 1, Field.COMPLEX), 3, rng) == 14
    assert numerical_variety_dim(VarietySpec.hermitian(4, 1), 3, rng) == 7
    assert numerical_variety_dim(VarietySpec.projection(4, 1), 3, rng) == 3


def test_projection_dim_against_orbit_jacobian(rng):
    # independent oracle: finite-difference Jacobian of S -> e^S P e^-S over skew S
    d, r = 4, 1
    P = sample_point(VarietySpec.projection(d, r), rng)
    cols = []
    h = 1e-6
    for a in range(d):
        for b in range(a + 1, d):
            S = np.zeros((d, d))
            S[a, b], S[b, a] = 1, -1
            f = lambda t: scipy.linalg.expm(t * S) @ P @ scipy.linalg.expm(-t * S)  # noqa: E731
            cols.append(((f(h) - f(-h)) / (2 * h)).ravel())
    s = np.linalg.svd(np.array(cols), compute_uv=False)
    oracle = int(np.sum(s > 1e-6 * s[0]))
    assert oracle == 3 == numerical_variety_dim(VarietySpec.projection(d, r), 3, rng)


def test_empty_ensemble_rank_zero(rng):
    spec = VarietySpec.lowrank(3, 3, 1)
    ens = generate(EnsembleSpec.parse("gauss:N0:3x3:R:seed1"))
    rep = local_identifiability(ens, spec, sample_point(spec, rng))
    assert rep.rank == 0 and fiber_dim_estimate(rep) == variety_dim(spec)


def _factor_oracle_rank(ens, spec, P):
    """Rank of L_A on the image of the factor map's differential, via dense SVD."""
    param = Parametrization(spec)
    if spec.kind == "lowrank":
        U, s, Vh = np.linalg.svd(P)
        r = spec.r
        from aerecovery.recovery import FactoredPoint

        theta = param.pack(FactoredPoint("lowrank", (U[:, :r] * s[:r], Vh[:r].T), spec.field))
    D = param.derivatives(theta)
    M = np.einsum("nij,kij->nk", ens.matrices, D)
    if spec.field is Field.COMPLEX:
        # derivative pairs (Re, Im) -> keep Re columns, rank over C
        M = M[:, 0::2]
    return np.linalg.matrix_rank(M, tol=1e-8 * np.abs(M).max())


@pytest.mark.parametrize("N", [7, 8, 12, 20])
def test_gaussian_full_rank_above_dim(N):
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    for t in range(10):
        ens = generate(EnsembleSpec.parse("gauss:4x4:C", N=N, seed=t))
        P = sample_point(spec, rng_for(99, t))
        rep = local_identifiability(ens, spec, P)
        assert rep.rank == 7 == _factor_oracle_rank(ens, spec, P)
        assert fiber_dim_estimate(rep) == 0


def test_oracle_below_dim():
    spec = VarietySpec.lowrank(4, 3, 2)
    ens = generate(EnsembleSpec.parse("gauss:N6:4x3:R:seed3"))
    P = sample_point(spec, rng_for(1, 2))
    assert local_identifiability(ens, spec, P).rank == 6 == _factor_oracle_rank(ens, spec, P)


def test_duplicated_ensemble(rng):
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    base = generate(EnsembleSpec.parse("gauss:N1:4x4:C:seed5"))
    ens = MeasurementEnsemble(base.spec.with_(N=9), np.repeat(base.matrices, 9, axis=0))
    assert local_identifiability(ens, spec, sample_point(spec, rng)).rank <= 1


def test_fiber_dim_examples(rng):
    assert fiber_dim_estimate(RankReport(7, 7, np.ones(7), 7, 0.0)) == 0
    full = VarietySpec.full_space(4, 4, Field.COMPLEX)
    ens = generate(EnsembleSpec.parse("gauss:N13:4x4:C:seed0"))
    assert fiber_dim_estimate(local_identifiability(ens, full, sample_point(full, rng))) == 3
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    ens = generate(EnsembleSpec.parse("gauss:N20:4x4:C:seed0"))
    assert fiber_dim_estimate(local_identifiability(ens, spec, sample_point(spec, rng))) == 0


def test_rank_report_json(rng):
    spec = VarietySpec.hermitian(3, 1)
    ens = generate(EnsembleSpec.parse("rank1herm:N4:3:seed0"))
    rep = local_identifiability(ens, spec, sample_point(spec, rng))
    d = json.loads(json.dumps(rep.to_json()))
    assert d["jacobian_cols"] == 5 and d["rank"] == 4 and d["fiber_dim"] == 1
    assert d["singular_values"] == sorted(d["singular_values"], reverse=True)


SCENARIOS = [
    ("lowrank:4x4:r1:C", "gauss:4x4:C"),
    ("lowrank:3x5:r2:R", "gauss:3x5:R"),
    ("sym:4:r2", "gauss:4x4:R"),
    ("sym:4:r1", "rank1sym:4"),
    ("herm:3:r1", "rank1herm:3"),
    ("herm:4:r2", "rank1herm:4"),
    ("full:2x3:C", "gauss:2x3:C"),
]


@pytest.mark.parametrize("rec,ens_text", SCENARIOS)
def test_local_threshold_at_dim(rec, ens_text):
    spec = VarietySpec.parse(rec)
    dim = variety_dim(spec)
    for N in sorted({0, 1, dim - 1, dim, dim + 1, dim + 3}):
        if N < 0:
            continue
        hits = 0
        for t in range(200):
            ens = generate(EnsembleSpec.parse(ens_text, N=N, seed=1000 * N + t))
            P = sample_point(spec, rng_for(7, N, t))
            hits += fiber_dim_estimate(local_identifiability(ens, spec, P)) == max(dim - N, 0)
        assert hits >= 198, (N, hits)


def test_prefix_monotone(rng):
    spec = VarietySpec.hermitian(4, 2)
    ens = generate(EnsembleSpec.parse("rank1herm:N14:4:seed3"))
    tb = tangent_basis(spec, sample_point(spec, rng))
    ranks = [measurement_jacobian(ens.prefix(n), tb).rank for n in range(15)]
    assert ranks == sorted(ranks)
    assert ranks[-1] == 12


def test_admissible_full_space(rng):
    V = VarietySpec.full_space(3, 3)
    v = admissibility_probe(V, rng.standard_normal((3, 3)), 5, rng)
    assert v.verdict is Verdict.ADMISSIBLE


def test_symmetric_skew_not_admissible(rng):
    for p in (2, 3, 4):
        V = VarietySpec.symmetric(p, p)
        v = admissibility_probe(V, skew_symmetric(rng, p), 30, rng)
        assert v.verdict is Verdict.NOT_ADMISSIBLE
        assert v.max_abs_value <= 1e-12 and v.max_tangent_value <= 1e-12


def test_orthogonal_admissible(rng):
    V = VarietySpec.orthogonal(3)
    for _ in range(20):
        v = admissibility_probe(V, rng.standard_normal((3, 3)), 100, rng)
        assert v.verdict is Verdict.ADMISSIBLE and v.probes_tried == 100


def test_zero_functional_rejected(rng):
    with pytest.raises(ValueError):
        admissibility_probe(VarietySpec.orthogonal(3), np.zeros((3, 3)), 3, rng)


def test_admissibility_json(rng):
    v = admissibility_probe(VarietySpec.projection(4, 2), sample_point(delta_spec(VarietySpec.lowrank(4, 4, 1)), rng), 10, rng)
    d = json.loads(json.dumps(v.to_json()))
    assert d["verdict"] == "Admissible" and d["variety"] == "proj:4:r2"


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), p=st.integers(1, 7))
def test_symmetric_skew_annihilation(seed, p):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((p, p))
    Psym = (G + G.T) / 2
    Q = skew_symmetric(rng, p)
    nP, nQ = np.linalg.norm(Psym), np.linalg.norm(Q)
    if nP == 0 or nQ == 0:
        return
    assert abs(np.sum(Psym * Q)) / (nP * nQ) <= 1e-14
