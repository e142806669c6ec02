"""Seeded Monte Carlo sweeps over the number of measurements.

Each ``(N, trial)`` cell draws its own ensemble and planted matrix from a
seed derived from ``(base_seed, N, trial)``, so a sweep gives the same rows
whatever the worker count or scheduling order.

Three tests per cell:

``LocalRank``
    the measurement map restricted to the tangent space at the planted
    matrix is injective; ``detail`` is the fiber dimension.
``AeRecovery``
    no preimage other than the planted matrix was found; ``detail`` is the
    best residual among restarts that did not return to the plant, or
    ``-1`` if all of them did.
``Everywhere``
    no unit-norm kernel element of the difference variety was found;
    ``detail`` is the residual floor.

A cell whose computation raises is recorded as a failed row with ``detail``
``-2`` and does not abort the sweep.
"""

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import Field
from .ensembles import EnsembleSpec, generate
from .identifiability import fiber_dim_estimate, local_identifiability
from .recovery import SolveConfig, counterexample_search, distinct_solution_search
from .seeding import mix_seed, rng_for
from .serialize import SCHEMA, dumps
from .varieties import (
    SingularStratum,
    UnsupportedKind,
    VarietySpec,
    delta_spec,
    sample_point,
    tangent_basis,
    variety_dim,
)

log = logging.getLogger(__name__)

TESTS = ("LocalRank", "AeRecovery", "Everywhere")
DETAIL_ALL_RETURNED = -1.0
DETAIL_ERROR = -2.0
CSV_HEADER = ("N", "test", "trial", "seed", "success", "detail")


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """A recovered variety paired with a measurement ensemble kind."""

    recovered: VarietySpec
    ensemble: EnsembleSpec

    def __post_init__(self):
        rec, ens = self.recovered, self.ensemble
        if rec.shape != ens.shape:
            raise InvalidScenario(f"{rec} and {ens.to_text(False, False)} have different shapes")
        if rec.field is not ens.field:
            raise InvalidScenario("recovered variety and measurements must share a field")
        if ens.kind == "rank1herm" and rec.kind not in ("herm", "rank1psd"):
            raise InvalidScenario("Hermitian rank-one measurements need a Hermitian variety")
        if rec.counting_field is Field.COMPLEX and ens.scalar_field is not Field.COMPLEX:
            raise InvalidScenario("a complex-counted variety needs complex measurements")
        object.__setattr__(self, "ensemble", ens.with_(N=0, seed=0))

    @classmethod
    def parse(cls, recovered, ensemble):
        return cls(VarietySpec.parse(recovered), EnsembleSpec.parse(ensemble))

    @property
    def counting_field(self) -> Field:
        return self.recovered.counting_field

    @property
    def dim(self):
        return variety_dim(self.recovered)

    @property
    def theoretical_ae_threshold(self):
        return self.dim + 1

    @property
    def theoretical_everywhere_threshold(self):
        try:
            return variety_dim(delta_spec(self.recovered))
        except UnsupportedKind:
            return None

    @property
    def delta_saturates(self):
        """True when ``2r`` exceeds the rank cap, where the everywhere-recovery count no longer applies."""
        rec = self.recovered
        if rec.kind in ("lowrank", "sym", "herm"):
            return 2 * rec.r > min(rec.p, rec.q)
        if rec.kind == "rank1psd":
            return rec.p < 2
        return False

    def threshold(self, test):
        if test == "LocalRank":
            return self.dim
        if test == "AeRecovery":
            return self.theoretical_ae_threshold
        if test == "Everywhere":
            return self.theoretical_everywhere_threshold
        raise ValueError(f"unknown test {test!r}")

    def to_json(self):
        return {
            "recovered": self.recovered.to_text(),
            "ensemble": self.ensemble.to_text(with_n=False, with_seed=False),
            "counting_field": self.counting_field.value,
            "dim": self.dim,
            "ae_threshold": self.theoretical_ae_threshold,
            "everywhere_threshold": self.theoretical_everywhere_threshold,
        }


@dataclass(frozen=True)
class Row:
    N: int
    test: str
    trial: int
    seed: int
    success: bool
    detail: float


def trial_seed(base_seed, N, trial_index):
    return mix_seed(base_seed, N, trial_index)


def _plant(scenario, seed):
    rng = rng_for(seed, 1)
    for _ in range(10):
        P = sample_point(scenario.recovered, rng)
        if scenario.recovered.kind in ("orth", "proj", "full"):
            return P
        try:
            tangent_basis(scenario.recovered, P)
            return P
        except SingularStratum:
            continue
    raise SingularStratum("could not sample a smooth planted point")


def run_trial(scenario: Scenario, N, trial_index, base_seed, tests=TESTS,
              solve_cfg: SolveConfig = SolveConfig()):
    """Rows for one ``(N, trial)`` cell, one per requested test."""
    seed = trial_seed(base_seed, N, trial_index)
    rows = []
    try:
        ens = generate(scenario.ensemble.with_(N=N, seed=mix_seed(seed, 0)))
        P = _plant(scenario, seed)
    except Exception as exc:  # recorded, never raised
        log.warning("trial N=%d #%d setup failed: %s", N, trial_index, exc)
        return [Row(N, t, trial_index, seed, False, DETAIL_ERROR) for t in tests]
    for t in tests:
        try:
            if t == "LocalRank":
                rep = local_identifiability(ens, scenario.recovered, P)
                fd = fiber_dim_estimate(rep)
                rows.append(Row(N, t, trial_index, seed, fd == 0, float(fd)))
            elif t == "AeRecovery":
                out = distinct_solution_search(ens, P, scenario.recovered, solve_cfg,
                                               rng=mix_seed(seed, 2))
                detail = out.residual if math.isfinite(out.residual) else DETAIL_ALL_RETURNED
                rows.append(Row(N, t, trial_index, seed, not out.converged, float(detail)))
            elif t == "Everywhere":
                out = counterexample_search(ens, scenario.recovered, solve_cfg,
                                            rng=mix_seed(seed, 3))
                rows.append(Row(N, t, trial_index, seed, not out.converged, float(out.residual)))
            else:
                raise ValueError(f"unknown test {t!r}")
        except Exception as exc:
            log.warning("trial N=%d #%d test %s failed: %s", N, trial_index, t, exc)
            rows.append(Row(N, t, trial_index, seed, False, DETAIL_ERROR))
    return rows


@dataclass(frozen=True)
class SweepConfig:
    scenario: Scenario
    N_range: tuple
    trials: int
    base_seed: int = 0
    tests: tuple = TESTS
    solve_cfg: SolveConfig = SolveConfig()

    def __post_init__(self):
        lo, hi = self.N_range
        if lo < 0 or hi < lo:
            raise ValueError(f"empty or negative N range {self.N_range}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = [t for t in self.tests if t not in TESTS]
        if bad or not self.tests:
            raise ValueError(f"tests must be a nonempty subset of {TESTS}, got {self.tests}")
        object.__setattr__(self, "tests", tuple(t for t in TESTS if t in self.tests))
        object.__setattr__(self, "N_range", (int(lo), int(hi)))

    @property
    def Ns(self):
        return list(range(self.N_range[0], self.N_range[1] + 1))

    @classmethod
    def from_json(cls, d):
        if d.get("schema", SCHEMA) != SCHEMA:
            raise ValueError(f"unsupported config schema {d.get('schema')!r}")
        sc = d["scenario"]
        scenario = Scenario.parse(sc["recovered"], sc["ensemble"])
        nr = d["N_range"]
        if isinstance(nr, dict):
            nr = (nr["min"], nr["max"])
        return cls(
            scenario=scenario,
            N_range=tuple(nr),
            trials=int(d["trials"]),
            base_seed=int(d.get("base_seed", 0)),
            tests=tuple(d.get("tests", TESTS)),
            solve_cfg=SolveConfig.from_json(d.get("solver", {})),
        )

    def to_json(self):
        sc = self.scenario.to_json()
        return {
            "schema": SCHEMA,
            "scenario": {"recovered": sc["recovered"], "ensemble": sc["ensemble"]},
            "N_range": list(self.N_range),
            "trials": self.trials,
            "base_seed": self.base_seed,
            "tests": list(self.tests),
            "solver": self.solve_cfg.to_json(),
        }


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list
    summaries: dict = dc_field(default_factory=dict)
    transitions: dict = dc_field(default_factory=dict)
    warnings: list = dc_field(default_factory=list)

    def rate(self, N, test):
        return self.summaries[(N, test)]

    def rates(self, test):
        return [(N, self.summaries[(N, test)]) for N in self.config.Ns]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.N, r.test, r.trial, r.seed, int(r.success), repr(float(r.detail))])
        return buf.getvalue()

    def summary_json(self):
        sc = self.config.scenario
        summaries = []
        for t in self.config.tests:
            for N in self.config.Ns:
                n_ok = sum(r.success for r in self.rows if r.N == N and r.test == t)
                summaries.append({"N": N, "test": t, "successes": n_ok,
                                  "trials": self.config.trials,
                                  "rate": self.summaries[(N, t)]})
        return {
            "schema": SCHEMA,
            "type": "sweep",
            "config": self.config.to_json(),
            "scenario": sc.to_json(),
            "thresholds": {t: sc.threshold(t) for t in self.config.tests},
            "summaries": summaries,
            "transitions": {t: self.transitions.get(t) for t in self.config.tests},
            "row_count": len(self.rows),
            "warnings": list(self.warnings),
        }

    def to_json_text(self):
        return dumps(self.summary_json())

    def curve_text(self, test, with_threshold=False):
        lines = []
        thr = self.config.scenario.threshold(test)
        lines.append(f"# N rate{' threshold' if with_threshold else ''}  test={test}")
        for N, rate in self.rates(test):
            if with_threshold:
                lines.append(f"{N} {rate!r} {thr if thr is not None else 'nan'}")
            else:
                lines.append(f"{N} {rate!r}")
        return "\n".join(lines) + "\n"


def _cell(args):
    scenario, N, trial, base_seed, tests, cfg = args
    return run_trial(scenario, N, trial, base_seed, tests, cfg)


def run_sweep(cfg: SweepConfig, workers=1) -> SweepResult:
    """Run every ``(N, trial)`` cell and aggregate per-``(N, test)`` rates."""
    notes = []
    if "Everywhere" in cfg.tests and cfg.scenario.delta_saturates:
        msg = "delta saturates ambient: 2r exceeds the rank cap, Everywhere results are exploratory"
        warnings.warn(msg)
        notes.append(msg)
    jobs = [(cfg.scenario, N, t, cfg.base_seed, cfg.tests, cfg.solve_cfg)
            for N in cfg.Ns for t in range(cfg.trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_cell(j) for j in jobs]
    order = {t: i for i, t in enumerate(TESTS)}
    rows = sorted((r for c in chunks for r in c), key=lambda r: (r.N, order[r.test], r.trial))
    res = SweepResult(cfg, rows, warnings=notes)
    for N in cfg.Ns:
        for t in cfg.tests:
            sel = [r.success for r in rows if r.N == N and r.test == t]
            res.summaries[(N, t)] = sum(sel) / len(sel)
    for t in cfg.tests:
        res.transitions[t] = estimate_transition(res, t)
    return res


def transition_from_rates(Ns, rates, level=0.5):
    """Smallest ``N`` with rate >= level at it and at every larger sampled ``N``."""
    best = None
    for N, rate in sorted(zip(Ns, rates), reverse=True):
        if rate >= level:
            best = N
        else:
            break
    return best


def estimate_transition(result: SweepResult, test):
    if test not in result.config.tests:
        raise ValueError(f"sweep has no {test!r} test")
    Ns = result.config.Ns
    return transition_from_rates(Ns, [result.summaries[(N, test)] for N in Ns])


def rows_from_csv(text):
    rd = csv.DictReader(io.StringIO(text))
    if tuple(rd.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {rd.fieldnames}")
    return [Row(int(d["N"]), d["test"], int(d["trial"]), int(d["seed"]), d["success"] == "1",
                float(d["detail"])) for d in rd]


def rates_array(result: SweepResult, test):
    return np.array([r for _, r in result.rates(test)])
