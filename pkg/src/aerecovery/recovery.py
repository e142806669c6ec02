"""Nonconvex recovery over bounded-rank varieties.

Points are carried as factors (``U V^T``, ``Y C Y^T``, ``Y C Y^*`` or
``x x^*``) packed into one real parameter vector; complex entries contribute
their real and imaginary parts, interleaved. A small Levenberg-Marquardt loop
minimizes the realified residual of the measurement equations from several
random starts.

Three searches are built on it:

* :func:`solve` finds any point of the variety reproducing ``b``;
* :func:`distinct_solution_search` looks for a preimage different from a
  planted ``P`` (a witness against almost-everywhere recovery of ``P``);
* :func:`counterexample_search` looks for a unit-norm ``W`` in the difference
  variety with ``L_A(W) = 0`` (a witness against recovery of every matrix).

A failed search is evidence, not proof: nonconvex search cannot certify that
no solution exists.
"""

import json
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Optional

import numpy as np

from .core import Field, apply_measurement_map, pairing_stack
from .seeding import rng_for
from .serialize import matrix_to_json
from .varieties import (
    OffVariety,
    UnsupportedKind,
    VarietySpec,
    delta_spec,
    gaussian,
    membership_residual,
    numerical_rank,
)

MEMBERSHIP_TOL = 1e-8


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 500
    restarts: int = 20
    grad_tol: float = 1e-10
    residual_success_tol: float = 1e-8
    lm_lambda0: float = 1e-3
    lm_factor: float = 10.0
    success_rel_err: float = 1e-6
    separation_tol: float = 1e-3

    def __post_init__(self):
        for name in ("grad_tol", "residual_success_tol", "lm_lambda0", "success_rel_err",
                     "separation_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lm_factor <= 1:
            raise ValueError("lm_factor must exceed 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


class Status(str, Enum):
    CONVERGED = "Converged"
    NO_SOLUTION = "NoSolutionFound"
    MAX_ITERS = "MaxItersExhausted"


@dataclass
class SolveOutcome:
    solution: Optional[np.ndarray]
    residual: float
    iterations: int
    restart_index: int
    status: Status
    restarts_tried: int = 0

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    def to_json(self):
        return {
            "schema": 1,
            "type": "solve_outcome",
            "solution": None if self.solution is None else matrix_to_json(self.solution),
            "residual": float(self.residual),
            "iterations": self.iterations,
            "restart_index": self.restart_index,
            "restarts_tried": self.restarts_tried,
            "status": self.status.value,
        }


# ---------------------------------------------------------------------------
# parametrizations


def _units(field):
    return (1,) if field is Field.REAL else (1, 1j)


def _pack(*arrays):
    parts = []
    for a in arrays:
        a = np.asarray(a)
        if np.iscomplexobj(a):
            flat = a.reshape(-1)
            v = np.empty(2 * flat.size)
            v[0::2], v[1::2] = flat.real, flat.imag
            parts.append(v)
        else:
            parts.append(a.reshape(-1).astype(np.float64))
    return np.concatenate(parts) if parts else np.zeros(0)


def _complexify(block, field):
    """Expand derivative matrices of complex entries into (Re, Im) pairs."""
    if field is Field.REAL:
        return block
    m = block.shape[0]
    return np.stack([block, 1j * block], axis=1).reshape(2 * m, *block.shape[1:])


@dataclass
class FactoredPoint:
    """Factors of a point on a bounded-rank variety.

    ``kind`` is ``lowrank`` (factors ``U, V``), ``sym``/``herm`` (``Y, C``) or
    ``rank1psd`` (``x``).
    """

    kind: str
    factors: tuple
    field: Field

    def assembled(self):
        k = self.kind
        if k == "lowrank":
            U, V = self.factors
            return U @ V.T
        if k == "sym":
            Y, C = self.factors
            return Y @ C @ Y.T
        if k == "herm":
            Y, C = self.factors
            return Y @ C @ Y.conj().T
        (x,) = self.factors
        return np.outer(x, x.conj())


class Parametrization:
    """Factor coordinates of ``spec``; one real vector ``theta`` per point."""

    def __init__(self, spec: VarietySpec):
        if spec.kind not in ("lowrank", "sym", "herm", "rank1psd"):
            raise UnsupportedKind(f"no factored parametrization for {spec.kind}")
        self.spec = spec
        self.kind = spec.kind
        self.field = spec.field
        p, q, r = spec.p, spec.q, spec.rank_bound
        self.p, self.q, self.r = p, q, r
        u = self.field.real_units
        if self.kind == "lowrank":
            self.n_params = u * (p + q) * r
        elif self.kind == "sym":
            self.n_params = u * (p * r + r * (r + 1) // 2)
        elif self.kind == "herm":
            self.n_params = 2 * p * r + r * r
        else:
            self.n_params = u * p
        self._core_basis = self._make_core_basis()

    def _make_core_basis(self):
        r = self.r
        if self.kind not in ("sym", "herm"):
            return None
        mats = []
        for a in range(r):
            for b in range(a, r):
                if self.kind == "sym":
                    for c in _units(self.field):
                        S = np.zeros((r, r), dtype=self.field.dtype)
                        S[a, b] = S[b, a] = c
                        mats.append(S)
                else:
                    S = np.zeros((r, r), dtype=np.complex128)
                    S[a, b] = S[b, a] = 1
                    mats.append(S)
                    if a != b:
                        S = np.zeros((r, r), dtype=np.complex128)
                        S[a, b], S[b, a] = 1j, -1j
                        mats.append(S)
        return np.array(mats)

    # packing

    def pack(self, point: FactoredPoint):
        if self.kind in ("lowrank", "rank1psd"):
            return _pack(*point.factors)
        Y, C = point.factors
        return np.concatenate([_pack(Y), self._pack_core(C)])

    def _pack_core(self, C):
        r = self.r
        vals = []
        for a in range(r):
            for b in range(a, r):
                if self.kind == "sym":
                    if self.field is Field.REAL:
                        vals.append(C[a, b].real)
                    else:
                        vals += [C[a, b].real, C[a, b].imag]
                else:
                    vals.append(C[a, b].real)
                    if a != b:
                        vals.append(C[a, b].imag)
        return np.array(vals, dtype=np.float64)

    def _split(self, theta, n, shape, field):
        if field is Field.REAL:
            return theta[:n].reshape(shape), theta[n:]
        c = theta[0:2 * n:2] + 1j * theta[1:2 * n:2]
        return c.reshape(shape), theta[2 * n:]

    def unpack(self, theta) -> FactoredPoint:
        theta = np.asarray(theta, dtype=np.float64)
        p, q, r = self.p, self.q, self.r
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        if self.kind == "lowrank":
            U, rest = self._split(theta, p * r, (p, r), self.field)
            V, _ = self._split(rest, q * r, (q, r), self.field)
            return FactoredPoint("lowrank", (U, V), self.field)
        if self.kind == "rank1psd":
            x, _ = self._split(theta, p, (p,), self.field)
            return FactoredPoint("rank1psd", (x,), self.field)
        yfield = Field.COMPLEX if self.kind == "herm" else self.field
        Y, rest = self._split(theta, p * r, (p, r), yfield)
        C = np.tensordot(rest, self._core_basis, axes=(0, 0))
        return FactoredPoint(self.kind, (Y, C), self.field)

    def assemble(self, theta):
        return self.unpack(theta).assembled()

    def derivatives(self, theta):
        """``dW/dtheta_k`` stacked as an ``(n_params, p, q)`` array."""
        pt = self.unpack(theta)
        p, q, r = self.p, self.q, self.r
        f = self.field
        if self.kind == "lowrank":
            U, V = pt.factors
            dU = np.eye(p)[:, None, :, None] * V.T[None, :, None, :]
            dV = U.T[None, :, :, None] * np.eye(q)[:, None, None, :]
            dU = _complexify(dU.reshape(p * r, p, q).astype(f.dtype), f)
            dV = _complexify(dV.reshape(q * r, p, q).astype(f.dtype), f)
            return np.concatenate([dU, dV])
        if self.kind == "rank1psd":
            (x,) = pt.factors
            D1 = np.eye(p)[:, :, None] * x.conj()[None, None, :]
            D1 = _complexify(D1.astype(f.dtype), f)
            return D1 + np.conj(np.swapaxes(D1, 1, 2))
        Y, C = pt.factors
        if self.kind == "herm":
            G = C @ Y.conj().T
            yf = Field.COMPLEX
            tr = lambda D: np.conj(np.swapaxes(D, -1, -2))  # noqa: E731
            Yt = Y.conj().T
        else:
            G = C @ Y.T
            yf = f
            tr = lambda D: np.swapaxes(D, -1, -2)  # noqa: E731
            Yt = Y.T
        D1 = np.eye(p)[:, None, :, None] * G[None, :, None, :]
        D1 = _complexify(D1.reshape(p * r, p, p).astype(yf.dtype), yf)
        dY = D1 + tr(D1)
        dC = np.einsum("ia,kab,bj->kij", Y, self._core_basis, Yt)
        return np.concatenate([dY, dC])

    # initialization, gauge fixing

    def random_point(self, rng, scale=1.0) -> np.ndarray:
        p, q, r = self.p, self.q, self.r
        f = self.field
        if self.kind == "lowrank":
            pt = FactoredPoint("lowrank", (gaussian(rng, (p, r), f), gaussian(rng, (q, r), f)), f)
        elif self.kind == "rank1psd":
            pt = FactoredPoint("rank1psd", (gaussian(rng, p, f),), f)
        elif self.kind == "sym":
            G = gaussian(rng, (r, r), f)
            pt = FactoredPoint("sym", (gaussian(rng, (p, r), f), (G + G.T) / 2), f)
        else:
            G = gaussian(rng, (r, r), Field.COMPLEX)
            pt = FactoredPoint("herm", (gaussian(rng, (p, r), Field.COMPLEX), (G + G.conj().T) / 2), f)
        theta = self.pack(pt)
        return self.rescale(theta, scale)

    def rescale(self, theta, target):
        """Scale factors so that ``||assemble(theta)||_F == target``."""
        n = np.linalg.norm(self.assemble(theta))
        if n == 0 or target <= 0:
            return theta
        pt = self.unpack(theta)
        c = target / n
        if self.kind in ("lowrank", "rank1psd"):
            s = np.sqrt(c)
            return self.pack(FactoredPoint(pt.kind, tuple(s * F for F in pt.factors), pt.field))
        Y, C = pt.factors
        return self.pack(FactoredPoint(pt.kind, (Y, c * C), pt.field))

    def balance(self, theta):
        """Same assembled matrix, better conditioned factors."""
        pt = self.unpack(theta)
        if self.kind == "lowrank":
            U, V = pt.factors
            Qu, Ru = np.linalg.qr(U)
            Qv, Rv = np.linalg.qr(V)
            A, s, Bh = np.linalg.svd(Ru @ Rv.T)
            rs = np.sqrt(s)
            U2 = (Qu @ A) * rs
            V2 = (Qv @ Bh.T) * rs
            return self.pack(FactoredPoint("lowrank", (U2, V2), pt.field))
        if self.kind in ("sym", "herm"):
            Y, C = pt.factors
            Q, R = np.linalg.qr(Y)
            if self.kind == "herm":
                C2 = R @ C @ R.conj().T
                C2 = (C2 + C2.conj().T) / 2
            else:
                C2 = R @ C @ R.T
                C2 = (C2 + C2.T) / 2
            return self.pack(FactoredPoint(self.kind, (Q, C2), pt.field))
        return theta


# ---------------------------------------------------------------------------
# residuals


class _Problem:
    """Realified residual ``L_A(W(theta)) - b`` and its Jacobian."""

    def __init__(self, ensemble, b, param: Parametrization, rayleigh=False):
        if tuple(ensemble.shape) != param.spec.shape:
            raise ValueError(f"ensemble shape {ensemble.shape} does not match {param.spec}")
        if ensemble.field is not param.field:
            raise ValueError("ensemble and variety fields differ")
        if ensemble.quadratic_hermitian and param.kind not in ("herm", "rank1psd"):
            raise ValueError("Hermitian rank-one measurements need a Hermitian variety")
        self.param = param
        self.N = ensemble.N
        p, q = ensemble.shape
        self.B = pairing_stack(ensemble).reshape(self.N, p * q)
        self.take_real = ensemble.scalar_field is Field.REAL
        b = np.zeros(self.N) if b is None else np.asarray(b)
        if b.shape != (self.N,):
            raise ValueError(f"expected {self.N} measurements, got shape {b.shape}")
        self.b = self._realify(b.astype(np.complex128) if not self.take_real else b.real)
        self.rayleigh = rayleigh

    def _realify(self, v):
        if self.take_real:
            return np.real(v).astype(np.float64)
        v = np.asarray(v, dtype=np.complex128)
        out = np.empty(2 * v.shape[0], dtype=np.float64) if v.ndim == 1 else None
        if v.ndim == 1:
            out[0::2], out[1::2] = v.real, v.imag
            return out
        out = np.empty((2 * v.shape[0], v.shape[1]))
        out[0::2], out[1::2] = v.real, v.imag
        return out

    def residual(self, theta):
        W = self.param.assemble(theta)
        r = self._realify(self.B @ W.reshape(-1)) - self.b
        if self.rayleigh:
            n = np.linalg.norm(W)
            return r / n if n > 0 else r
        return r

    def residual_and_jacobian(self, theta):
        W = self.param.assemble(theta)
        D = self.param.derivatives(theta)
        K = D.shape[0]
        Lw = self._realify(self.B @ W.reshape(-1))
        J = self._realify(self.B @ D.reshape(K, -1).T) if self.N else np.zeros((0, K))
        r = Lw - self.b
        if self.rayleigh:
            n = np.linalg.norm(W)
            if n > 0:
                dn = np.real(np.conj(W.reshape(-1)) @ D.reshape(K, -1).T) / n
                J = J / n - np.outer(Lw, dn) / n ** 2
                r = r / n
        return r, J


def residual_and_gradient(x: FactoredPoint, ensemble, b, spec=None):
    """Objective ``0.5 * ||L_A(W) - b||^2`` and its gradient in packed factor coordinates."""
    if spec is None:
        p, q = ensemble.shape
        r = x.factors[0].shape[1] if x.kind != "rank1psd" else 1
        spec = VarietySpec(x.kind, p, q, r, x.field)
    param = Parametrization(spec)
    prob = _Problem(ensemble, b, param)
    theta = param.pack(x)
    r, J = prob.residual_and_jacobian(theta)
    return 0.5 * float(r @ r), J.T @ r


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class _Run:
    theta: np.ndarray
    residual: float
    iterations: int
    hit_max_iters: bool


def levenberg_marquardt(problem: _Problem, theta, cfg: SolveConfig, tol_abs, renormalize=False):
    """Damped Gauss-Newton with damping ``lam * mean(diag(J^T J)) * I``.

    Accepted steps divide ``lam`` by ``cfg.lm_factor``, rejected ones multiply.
    Stops at ``||r|| <= tol_abs``, ``||J^T r|| <= grad_tol``, a negligible
    step, or ``lam > 1e16``.
    """
    param = problem.param
    lam = cfg.lm_lambda0
    r, J = problem.residual_and_jacobian(theta)
    cost = float(r @ r)
    it = 0
    while it < cfg.max_iters:
        if np.sqrt(cost) <= tol_abs:
            break
        g = J.T @ r
        if np.linalg.norm(g) <= cfg.grad_tol:
            break
        H = J.T @ J
        mu = np.mean(np.diag(H))
        if mu <= 0:
            mu = 1.0
        accepted = False
        while lam <= 1e16:
            try:
                step = np.linalg.solve(H + lam * mu * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lm_factor
                continue
            trial = theta + step
            r_new = problem.residual(trial)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                break
            lam *= cfg.lm_factor
        it += 1
        if not accepted:
            break
        lam = max(lam / cfg.lm_factor, 1e-15)
        small = np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(theta))
        rel_gain = (cost - cost_new) / cost
        theta = trial
        if renormalize:
            theta = param.rescale(theta, 1.0)
        theta = param.balance(theta)
        r, J = problem.residual_and_jacobian(theta)
        cost = float(r @ r)
        if small or rel_gain < 1e-15:
            break
    return _Run(theta, float(np.sqrt(cost)), it, it >= cfg.max_iters)


def _base_seed(rng):
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    return int(rng)


def _tol_abs(cfg, b):
    nb = np.linalg.norm(b) if b is not None and len(b) else 0.0
    return cfg.residual_success_tol * (nb if nb > 0 else 1.0)


def _init_scale(b, N):
    nb = np.linalg.norm(b) if N else 0.0
    return nb / np.sqrt(N) if nb > 0 else 1.0


def _best(runs):
    # lowest residual wins; ties go to the earlier restart
    return min(runs, key=lambda kr: (kr[1].residual, kr[0]))


def _outcome(best_k, run: _Run, param, tol, total_iters, tried, converged):
    if converged:
        return SolveOutcome(param.assemble(run.theta), run.residual, total_iters, best_k,
                            Status.CONVERGED, tried)
    status = Status.MAX_ITERS if run.hit_max_iters else Status.NO_SOLUTION
    return SolveOutcome(None, run.residual, total_iters, best_k, status, tried)


def _recovery_param(spec: VarietySpec) -> Parametrization:
    if not (spec.is_bounded_rank or spec.kind == "rank1psd"):
        raise UnsupportedKind(f"recovery needs a bounded-rank variety, got {spec}")
    return Parametrization(spec)


def solve(ensemble, b, spec: VarietySpec, cfg: SolveConfig = SolveConfig(), rng=0) -> SolveOutcome:
    """Multi-start LM search for a point of ``spec`` with ``L_A(W) = b``."""
    param = _recovery_param(spec)
    b = np.asarray(getattr(b, "values", b))
    prob = _Problem(ensemble, b, param)
    tol = _tol_abs(cfg, b)
    scale = _init_scale(b, ensemble.N)
    seed = _base_seed(rng)
    runs, total = [], 0
    for k in range(cfg.restarts):
        theta0 = param.random_point(rng_for(seed, k), scale)
        run = levenberg_marquardt(prob, theta0, cfg, tol)
        total += run.iterations
        runs.append((k, run))
        if run.residual <= tol:
            return _outcome(k, run, param, tol, total, k + 1, True)
    k, run = _best(runs)
    return _outcome(k, run, param, tol, total, len(runs), False)


def _check_on_variety(spec, P):
    res = membership_residual(spec, P)
    if not res <= MEMBERSHIP_TOL:
        raise OffVariety(f"planted matrix is off {spec} (residual {res:.3g})")


def distinct_solution_search(ensemble, P, spec: VarietySpec, cfg: SolveConfig = SolveConfig(),
                             rng=0) -> SolveOutcome:
    """Look for ``Q != P`` on ``spec`` with ``L_A(Q) = L_A(P)``.

    Converged means such a ``Q`` was found (``||Q - P|| / ||P|| >
    separation_tol``). Otherwise the reported residual is the best one among
    restarts that did not end at ``P``.
    """
    _check_on_variety(spec, P)
    param = _recovery_param(spec)
    b = apply_measurement_map(ensemble, P).values
    prob = _Problem(ensemble, b, param)
    tol = _tol_abs(cfg, b)
    scale = _init_scale(b, ensemble.N)
    nP = max(np.linalg.norm(P), np.finfo(float).tiny)
    seed = _base_seed(rng)
    runs, total = [], 0
    for k in range(cfg.restarts):
        theta0 = param.random_point(rng_for(seed, k), scale)
        run = levenberg_marquardt(prob, theta0, cfg, tol)
        total += run.iterations
        Q = param.assemble(run.theta)
        if np.linalg.norm(Q - P) / nP <= cfg.separation_tol:
            continue
        runs.append((k, run))
        if run.residual <= tol:
            return _outcome(k, run, param, tol, total, k + 1, True)
    if not runs:
        return SolveOutcome(None, np.inf, total, -1, Status.NO_SOLUTION, cfg.restarts)
    k, run = _best(runs)
    return _outcome(k, run, param, tol, total, cfg.restarts, False)


def counterexample_search(ensemble, spec: VarietySpec, cfg: SolveConfig = SolveConfig(),
                          rng=0) -> SolveOutcome:
    """Minimize ``||L_A(W)|| / ||W||_F`` over ``W`` in the difference variety of ``spec``.

    Converged means a unit-norm kernel element with ``||L_A(W)|| <=
    residual_success_tol`` was found. The reported residual of a failed
    search is the floor reached across restarts.
    """
    dspec = delta_spec(spec)
    param = Parametrization(dspec)
    prob = _Problem(ensemble, None, param, rayleigh=True)
    tol = cfg.residual_success_tol
    seed = _base_seed(rng)
    runs, total = [], 0
    for k in range(cfg.restarts):
        theta0 = param.random_point(rng_for(seed, k), 1.0)
        run = levenberg_marquardt(prob, theta0, cfg, tol, renormalize=True)
        total += run.iterations
        runs.append((k, run))
        if run.residual <= tol:
            return _outcome(k, run, param, tol, total, k + 1, True)
    k, run = _best(runs)
    return _outcome(k, run, param, tol, total, len(runs), False)


def verify_counterexample(ensemble, W, spec: VarietySpec, tol=1e-8):
    """Check a kernel certificate without the optimizer.

    Returns ``(ok, rank, ratio)`` with ``ratio = ||L_A(W)|| / ||W||_F``; ``ok``
    requires ``rank <= rank_bound(delta_spec(spec))`` and ``ratio <= tol``.
    """
    W = np.asarray(W)
    nW = np.linalg.norm(W)
    if nW == 0:
        return False, 0, np.inf
    ratio = np.linalg.norm(apply_measurement_map(ensemble, W).values) / nW
    rank, _, _ = numerical_rank(W, tol=1e-9)
    bound = delta_spec(spec).rank_bound
    return bool(rank <= bound and ratio <= tol), rank, float(ratio)
