import json

import numpy as np
import pytest

from aerecovery.core import Field, apply_measurement_map
from aerecovery.ensembles import EnsembleSpec, generate
from aerecovery.recovery import (
    FactoredPoint,
    Parametrization,
    SolveConfig,
    Status,
    _Problem,
    counterexample_search,
    distinct_solution_search,
    residual_and_gradient,
    solve,
    verify_counterexample,
)
from aerecovery.seeding import rng_for
from aerecovery.serialize import matrix_from_json
from aerecovery.varieties import OffVariety, UnsupportedKind, VarietySpec, sample_point

KIND_CASES = [
    ("lowrank:4x3:r2:R", "gauss:4x3:R"),
    ("lowrank:4x4:r1:C", "gauss:4x4:C"),
    ("sym:4:r2", "rank1sym:4"),
    ("sym:3:r2:C", "gauss:3x3:C"),
    ("herm:4:r2", "rank1herm:4"),
    ("herm:3:r1", "gauss:3x3:C"),
    ("rank1psd:4:R", "rank1sym:4"),
    ("rank1psd:3:C", "rank1herm:3"),
]


def _fd_grad(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


@pytest.mark.parametrize("rec,ens_text", KIND_CASES)
def test_gradient_matches_finite_differences(rec, ens_text):
    spec = VarietySpec.parse(rec)
    param = Parametrization(spec)
    for i in range(50):
        ens = generate(EnsembleSpec.parse(ens_text, N=6, seed=i))
        rng = rng_for(123, i)
        b = apply_measurement_map(ens, sample_point(spec, rng)).values
        theta = param.random_point(rng)
        x = param.unpack(theta)
        val, grad = residual_and_gradient(x, ens, b, spec)
        prob = _Problem(ens, b, param)
        f = lambda t: 0.5 * float(np.sum(prob.residual(t) ** 2))  # noqa: E731
        assert val == pytest.approx(f(theta), rel=1e-12)
        fd = _fd_grad(f, theta)
        assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(grad)


@pytest.mark.parametrize("rec,ens_text", KIND_CASES[:5])
def test_rayleigh_jacobian_matches_finite_differences(rec, ens_text):
    spec = VarietySpec.parse(rec)
    from aerecovery.varieties import delta_spec

    param = Parametrization(delta_spec(spec))
    for i in range(10):
        ens = generate(EnsembleSpec.parse(ens_text, N=5, seed=i))
        prob = _Problem(ens, None, param, rayleigh=True)
        theta = param.random_point(rng_for(5, i))
        r, J = prob.residual_and_jacobian(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = 1e-6
            col = (prob.residual(theta + e) - prob.residual(theta - e)) / 2e-6
            assert np.linalg.norm(col - J[:, k]) <= 1e-5 * max(np.linalg.norm(J), 1e-12)


def test_zero_at_global_minimum():
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    ens = generate(EnsembleSpec.parse("gauss:N9:4x4:C:seed1"))
    rng = rng_for(1, 1)
    U = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    V = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    x = FactoredPoint("lowrank", (U, V), Field.COMPLEX)
    b = apply_measurement_map(ens, x.assembled()).values
    val, grad = residual_and_gradient(x, ens, b, spec)
    assert val <= 1e-24 and np.linalg.norm(grad) <= 1e-12


def test_zero_factors_zero_data():
    ens = generate(EnsembleSpec.parse("gauss:N5:3x3:R:seed1"))
    x = FactoredPoint("lowrank", (np.zeros((3, 1)), np.zeros((3, 1))), Field.REAL)
    val, grad = residual_and_gradient(x, ens, np.zeros(5))
    assert val == 0 and not np.any(grad)


def test_gauge_invariance():
    spec = VarietySpec.lowrank(5, 4, 2, Field.COMPLEX)
    ens = generate(EnsembleSpec.parse("gauss:N10:5x4:C:seed3"))
    b = apply_measurement_map(ens, sample_point(spec, rng_for(3, 0))).values
    for i in range(10):
        rng = rng_for(3, i + 1)
        U = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        V = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        G = np.eye(2) + 0.3 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        x = FactoredPoint("lowrank", (U, V), Field.COMPLEX)
        y = FactoredPoint("lowrank", (U @ G, V @ np.linalg.inv(G).T), Field.COMPLEX)
        W1, W2 = x.assembled(), y.assembled()
        assert np.linalg.norm(W1 - W2) <= 1e-10 * np.linalg.norm(W1)
        f1, _ = residual_and_gradient(x, ens, b, spec)
        f2, _ = residual_and_gradient(y, ens, b, spec)
        assert f2 == pytest.approx(f1, rel=1e-10)


def test_balance_preserves_point():
    for rec in ("lowrank:4x4:r2:C", "sym:4:r2", "herm:4:r2"):
        param = Parametrization(VarietySpec.parse(rec))
        theta = param.random_point(rng_for(0, 1))
        W = param.assemble(theta)
        assert np.linalg.norm(param.assemble(param.balance(theta)) - W) <= 1e-12 * np.linalg.norm(W)


def test_solve_empty_ensemble():
    spec = VarietySpec.lowrank(3, 3, 1)
    ens = generate(EnsembleSpec.parse("gauss:N0:3x3:R:seed0"))
    out = solve(ens, np.zeros(0), spec, SolveConfig(), rng=4)
    assert out.status is Status.CONVERGED and out.residual == 0 and out.restart_index == 0


def _pinv_oracle(ens, b):
    """Lifted linear system vec(A_j) . vec(P) = b solved by pseudoinverse."""
    M = ens.matrices.reshape(ens.N, -1)
    return (np.linalg.pinv(M) @ b).reshape(ens.shape)


def test_planted_recovery_at_ambient_dim():
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    ok = 0
    for t in range(100):
        ens = generate(EnsembleSpec.parse("gauss:N16:4x4:C", seed=t))
        P = sample_point(spec, rng_for(8, t))
        b = apply_measurement_map(ens, P).values
        oracle = _pinv_oracle(ens, b)
        assert np.linalg.norm(oracle - P) <= 1e-8 * np.linalg.norm(P)
        out = solve(ens, b, spec, SolveConfig(), rng=t)
        ok += out.converged and np.linalg.norm(out.solution - oracle) <= 1e-6 * np.linalg.norm(oracle)
    assert ok >= 95


def test_inconsistent_data_finds_nothing():
    spec = VarietySpec.lowrank(4, 4, 1)
    for t in range(5):
        ens = generate(EnsembleSpec.parse("gauss:N16:4x4:R", seed=t))
        P2 = sample_point(VarietySpec.lowrank(4, 4, 2), rng_for(2, t))
        b = apply_measurement_map(ens, P2).values
        # oracle: best rank-1 fit of the unique lifted solution leaves a residual
        lifted = _pinv_oracle(ens, b)
        U, s, Vh = np.linalg.svd(lifted)
        floor = np.linalg.norm(apply_measurement_map(ens, s[0] * np.outer(U[:, 0], Vh[0])).values - b)
        assert floor > 1e-3 * np.linalg.norm(b)
        out = solve(ens, b, spec, SolveConfig(restarts=5), rng=t)
        assert out.status is not Status.CONVERGED and out.solution is None
        assert out.residual > 1e-8 * np.linalg.norm(b)


def test_distinct_search_with_no_measurements():
    spec = VarietySpec.lowrank(3, 3, 1)
    ens = generate(EnsembleSpec.parse("gauss:N0:3x3:R:seed0"))
    P = sample_point(spec, rng_for(0, 0))
    out = distinct_solution_search(ens, P, spec, SolveConfig(), rng=1)
    assert out.converged and np.linalg.norm(out.solution - P) > 1e-3 * np.linalg.norm(P)


def test_distinct_search_rejects_off_variety():
    ens = generate(EnsembleSpec.parse("gauss:N4:3x3:R:seed0"))
    with pytest.raises(OffVariety):
        distinct_solution_search(ens, np.eye(3), VarietySpec.lowrank(3, 3, 1))


def _distinct_rate(N, trials):
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    found = 0
    for t in range(trials):
        ens = generate(EnsembleSpec.parse("gauss:4x4:C", N=N, seed=500 + t))
        P = sample_point(spec, rng_for(17, t))
        out = distinct_solution_search(ens, P, spec, SolveConfig(), rng=t)
        if out.converged:
            Q = out.solution
            assert np.linalg.norm(apply_measurement_map(ens, Q).values
                                  - apply_measurement_map(ens, P).values) <= 1e-7 * np.linalg.norm(
                apply_measurement_map(ens, P).values)
            assert np.linalg.svd(Q, compute_uv=False)[1] <= 1e-8 * np.linalg.norm(Q)
        found += out.converged
    return found


def test_distinct_preimages_below_dimension():
    assert _distinct_rate(6, 30) >= 27


def test_no_distinct_preimage_above_dimension():
    assert _distinct_rate(8, 20) <= 1


def test_counterexample_empty_ensemble():
    spec = VarietySpec.lowrank(3, 3, 1)
    ens = generate(EnsembleSpec.parse("gauss:N0:3x3:R:seed0"))
    out = counterexample_search(ens, spec, SolveConfig(), rng=0)
    assert out.converged and np.linalg.norm(out.solution) == pytest.approx(1)


def test_counterexample_certificate_roundtrip():
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    for t in range(5):
        ens = generate(EnsembleSpec.parse("gauss:N11:4x4:C", seed=t))
        out = counterexample_search(ens, spec, SolveConfig(), rng=t)
        assert out.converged
        d = json.loads(json.dumps(out.to_json()))
        W = matrix_from_json(d["solution"], Field.COMPLEX)
        ok, rank, ratio = verify_counterexample(ens, W, spec)
        assert ok and rank <= 2 and ratio <= 1e-8
        assert np.linalg.norm(W) == pytest.approx(1, rel=1e-9)


def test_counterexample_unsupported():
    ens = generate(EnsembleSpec.parse("gauss:N3:3x3:R:seed0"))
    with pytest.raises(UnsupportedKind):
        counterexample_search(ens, VarietySpec.orthogonal(3))


def test_solution_roundtrip_residual():
    spec = VarietySpec.hermitian(4, 1)
    ens = generate(EnsembleSpec.parse("rank1herm:N10:4:seed2"))
    P = sample_point(spec, rng_for(2, 2))
    b = apply_measurement_map(ens, P).values
    out = solve(ens, b, spec, SolveConfig(), rng=2)
    assert out.converged
    Q = matrix_from_json(json.loads(json.dumps(out.to_json()))["solution"], Field.COMPLEX)
    Q = (Q + Q.conj().T) / 2
    assert np.linalg.norm(apply_measurement_map(ens, Q).values - b) <= 1e-8 * np.linalg.norm(b)


def test_solve_config_json():
    cfg = SolveConfig(restarts=3, max_iters=40)
    assert SolveConfig.from_json(json.dumps(cfg.to_json())) == cfg
    with pytest.raises(ValueError):
        SolveConfig.from_json({"restarts": 0})
    with pytest.raises(ValueError):
        SolveConfig.from_json({"bogus": 1})
    with pytest.raises(ValueError):
        SolveConfig(grad_tol=0)


def test_restart_determinism():
    spec = VarietySpec.lowrank(4, 4, 1, Field.COMPLEX)
    ens = generate(EnsembleSpec.parse("gauss:N12:4x4:C:seed4"))
    a = counterexample_search(ens, spec, SolveConfig(restarts=3), rng=9)
    b = counterexample_search(ens, spec, SolveConfig(restarts=3), rng=9)
    assert a.residual == b.residual and a.restart_index == b.restart_index
