"""Command-line interface.

Exit codes: 0 success, 1 negative verdict (e.g. a counterexample was found,
dimensions disagree, functional not admissible), 2 usage error, 3 runtime
error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .core import Field, apply_measurement_map
from .ensembles import EnsembleSpec, InvalidEnsemble, MeasurementEnsemble, generate
from .harness import (
    TESTS,
    InvalidScenario,
    SweepConfig,
    run_sweep,
    transition_from_rates,
)
from .identifiability import (
    Verdict,
    admissibility_probe,
    local_identifiability,
    numerical_variety_dim,
    skew_symmetric,
)
from .recovery import (
    SolveConfig,
    counterexample_search,
    distinct_solution_search,
    solve,
    verify_counterexample,
)
from .seeding import mix_seed, rng_for
from .serialize import SCHEMA, atomic_write, dumps, matrix_to_json
from .varieties import InvalidSpec, VarietySpec, real_dim, sample_point, variety_dim

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _emit(args, text):
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _fmt_guard(args, allowed):
    if args.format not in allowed:
        raise UsageError(f"--format {args.format} is not supported by {args.cmd}")


def _solver_cfg(args):
    if not getattr(args, "solver", None):
        return SolveConfig()
    text = args.solver
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return SolveConfig.from_json(json.loads(text))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad solver options: {exc}") from None


def _ensemble(args, shape_hint=None):
    if getattr(args, "ensemble_file", None):
        try:
            with open(args.ensemble_file) as fh:
                return MeasurementEnsemble.from_json(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read ensemble: {exc}") from None
    if not args.ensemble:
        raise UsageError("one of --ensemble or --ensemble-file is required")
    spec = EnsembleSpec.parse(args.ensemble, N=args.N, seed=args.seed)
    return generate(spec)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dim(args):
    _fmt_guard(args, ("json", "csv", "text"))
    spec = VarietySpec.parse(args.variety)
    formula = variety_dim(spec)
    units = spec.counting_field.real_units
    numerical_real = numerical_variety_dim(spec, args.trials, rng_for(args.seed, 0))
    numerical = numerical_real / units
    numerical = int(numerical) if numerical == int(numerical) else numerical
    agree = numerical_real == real_dim(spec)
    unit_name = "complex" if spec.counting_field is Field.COMPLEX else "real"
    if args.format == "text":
        text = (f"formula {formula} ({unit_name}), numerical {numerical}, "
                f"{'agree' if agree else 'DISAGREE'}\n")
    elif args.format == "csv":
        text = ("variety,counting_field,formula,numerical,numerical_real,agree\n"
                f"{spec},{unit_name},{formula},{numerical},{numerical_real},{int(agree)}\n")
    else:
        text = dumps({"schema": SCHEMA, "type": "dim", "variety": spec.to_text(),
                      "counting_field": unit_name, "formula": formula,
                      "numerical": numerical, "numerical_real": numerical_real,
                      "agree": agree})
    _emit(args, text)
    return EXIT_OK if agree else EXIT_NEGATIVE


def cmd_admissible(args):
    _fmt_guard(args, ("json", "text"))
    V = VarietySpec.parse(args.variety)
    rng = rng_for(args.seed, 0)
    if args.functional == "skew":
        P = skew_symmetric(rng, V.p, V.field)
    else:
        W = VarietySpec.parse(args.functional) if args.functional else VarietySpec.full_space(V.p, V.q, V.field)
        if W.shape != V.shape:
            raise UsageError("functional variety must have the same shape as --variety")
        P = sample_point(W, rng)
    verdict = admissibility_probe(V, P, args.probes, rng_for(args.seed, 1))
    if args.format == "text":
        text = (f"{verdict.verdict.value} over {verdict.probes_tried} probes "
                f"(max |Tr(P^T v)| / (|P||v|) = {verdict.max_abs_value:.3e})\n")
    else:
        text = dumps(verdict.to_json())
    _emit(args, text)
    return EXIT_OK if verdict.verdict is Verdict.ADMISSIBLE else EXIT_NEGATIVE


def cmd_generate(args):
    _fmt_guard(args, ("json", "text"))
    ens = _ensemble(args)
    if args.format == "text":
        text = f"{ens.spec}: {ens.N} matrices of shape {ens.shape[0]}x{ens.shape[1]}\n"
    else:
        text = dumps(ens.to_json())
    _emit(args, text)
    return EXIT_OK


def _plant(spec, seed):
    return sample_point(spec, rng_for(seed, 1))


def cmd_recover(args):
    _fmt_guard(args, ("json", "text"))
    spec = VarietySpec.parse(args.variety)
    ens = _ensemble(args)
    cfg = _solver_cfg(args)
    P = _plant(spec, args.seed)
    rep = local_identifiability(ens, spec, P)
    if args.distinct:
        out = distinct_solution_search(ens, P, spec, cfg, rng=mix_seed(args.seed, 2))
        negative = out.converged
        label = "distinct preimage found" if negative else "no distinct preimage found"
    else:
        b = apply_measurement_map(ens, P).values
        out = solve(ens, b, spec, cfg, rng=mix_seed(args.seed, 2))
        negative = not out.converged
        label = "no solution found" if negative else "solution found"
    rel_err = None
    if out.solution is not None:
        rel_err = float(np.linalg.norm(out.solution - P) / np.linalg.norm(P))
        if not args.distinct and rel_err > cfg.success_rel_err:
            negative = True
            label = "converged to a different preimage"
    if args.format == "text":
        text = (f"{label}: residual {out.residual:.3e}, restarts {out.restarts_tried}, "
                f"fiber dim {rep.jacobian_cols - rep.rank}"
                + (f", rel. error {rel_err:.3e}" if rel_err is not None else "") + "\n")
    else:
        d = out.to_json()
        d.update({"planted": matrix_to_json(P), "relative_error": rel_err,
                  "variety": spec.to_text(), "ensemble": str(ens.spec),
                  "local_rank": rep.to_json(), "mode": "distinct" if args.distinct else "solve"})
        text = dumps(d)
    _emit(args, text)
    return EXIT_NEGATIVE if negative else EXIT_OK


def cmd_counterexample(args):
    _fmt_guard(args, ("json", "text"))
    spec = VarietySpec.parse(args.variety)
    ens = _ensemble(args)
    cfg = _solver_cfg(args)
    out = counterexample_search(ens, spec, cfg, rng=mix_seed(args.seed, 3))
    verified = None
    if out.converged:
        ok, rank, ratio = verify_counterexample(ens, out.solution, spec, cfg.residual_success_tol)
        verified = {"ok": ok, "rank": rank, "ratio": ratio}
    if args.format == "text":
        if out.converged:
            text = (f"counterexample found: |L_A(W)|/|W| = {out.residual:.3e}, "
                    f"rank {verified['rank']}\n")
        else:
            text = f"no counterexample found: residual floor {out.residual:.3e} over {out.restarts_tried} restarts\n"
    else:
        d = out.to_json()
        d.update({"variety": spec.to_text(), "ensemble": str(ens.spec), "verified": verified})
        text = dumps(d)
    _emit(args, text)
    return EXIT_NEGATIVE if out.converged else EXIT_OK


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def cmd_sweep(args):
    _fmt_guard(args, ("json", "csv", "text"))
    d = _load_json(args.config)
    try:
        if args.seed is not None:
            d = dict(d, base_seed=args.seed)
        cfg = SweepConfig.from_json(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad sweep config: {exc}") from None
    workers = args.workers if args.workers is not None else int(d.get("workers", 1))
    res = run_sweep(cfg, workers=workers)
    out = args.out or "."
    prefix = args.prefix
    atomic_write(os.path.join(out, f"{prefix}.csv"), res.to_csv())
    atomic_write(os.path.join(out, f"{prefix}.json"), res.to_json_text())
    for t in cfg.tests:
        atomic_write(os.path.join(out, f"{prefix}_{t}.dat"), res.curve_text(t))
    if args.format == "json":
        sys.stdout.write(dumps({"transitions": res.summary_json()["transitions"]}))
    elif args.format == "csv":
        sys.stdout.write("test,transition,threshold\n")
        for t in cfg.tests:
            tr = res.transitions[t]
            sys.stdout.write(f"{t},{'' if tr is None else tr},{cfg.scenario.threshold(t)}\n")
    else:
        for t in cfg.tests:
            tr = res.transitions[t]
            sys.stdout.write(f"{t} transition {'none' if tr is None else tr} "
                             f"(theory {cfg.scenario.threshold(t)})\n")
    return EXIT_OK


def _report_curves(d):
    try:
        if d.get("schema") != SCHEMA or d.get("type") != "sweep":
            raise ValueError("not a schema-1 sweep summary")
        thresholds = d["thresholds"]
        curves = {}
        for s in d["summaries"]:
            curves.setdefault(s["test"], []).append((int(s["N"]), float(s["rate"])))
        for t in curves:
            if t not in TESTS:
                raise ValueError(f"unknown test {t!r}")
            curves[t].sort()
            thresholds[t]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"malformed sweep summary: {exc}") from None
    return curves, thresholds


def cmd_report(args):
    _fmt_guard(args, ("json", "csv", "text"))
    d = _load_json(args.input)
    curves, thresholds = _report_curves(d)
    out = args.out or "."
    for t, pts in curves.items():
        thr = thresholds[t]
        lines = [f"# N rate threshold  test={t}"]
        lines += [f"{N} {rate!r} {thr if thr is not None else 'nan'}" for N, rate in pts]
        atomic_write(os.path.join(out, f"{args.prefix}_{t}.dat"), "\n".join(lines) + "\n")
    transitions = {t: transition_from_rates([N for N, _ in pts], [r for _, r in pts])
                   for t, pts in curves.items()}
    if args.format == "json":
        sys.stdout.write(dumps({"schema": SCHEMA, "type": "report",
                                "curves": {t: [[N, r] for N, r in pts] for t, pts in curves.items()},
                                "thresholds": {t: thresholds[t] for t in curves},
                                "transitions": transitions}))
    else:
        tests = list(curves)
        Ns = sorted({N for pts in curves.values() for N, _ in pts})
        table = {t: dict(pts) for t, pts in curves.items()}
        if args.format == "csv":
            sys.stdout.write("N," + ",".join(tests) + "\n")
            for N in Ns:
                sys.stdout.write(f"{N}," + ",".join(repr(table[t].get(N, float('nan'))) for t in tests) + "\n")
        else:
            sys.stdout.write(f"{'N':>4} " + " ".join(f"{t:>11}" for t in tests) + "\n")
            for N in Ns:
                sys.stdout.write(f"{N:>4} " + " ".join(f"{table[t].get(N, float('nan')):>11.3f}" for t in tests) + "\n")
            for t in tests:
                sys.stdout.write(f"{t}: transition {transitions[t]}, theory {thresholds[t]}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    ap = _Parser(prog="aerecovery", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("json", "csv", "text"), default="text")

    p = sub.add_parser("dim", help="formula vs numerical dimension of a variety")
    p.add_argument("--variety", required=True)
    p.add_argument("--trials", type=int, default=3)
    common(p)
    p.set_defaults(func=cmd_dim)

    p = sub.add_parser("admissible", help="probe admissibility of a measurement variety")
    p.add_argument("--variety", required=True)
    p.add_argument("--functional", default=None,
                   help="variety to draw the functional from, or 'skew' (default: full space)")
    p.add_argument("--probes", type=int, default=100)
    common(p)
    p.set_defaults(func=cmd_admissible)

    def ens_args(p):
        p.add_argument("--ensemble", default=None, help="e.g. gauss:N20:4x4:C:seed7")
        p.add_argument("--ensemble-file", default=None, help="ensemble JSON from `generate`")
        p.add_argument("--N", type=int, default=None, help="override N of --ensemble")

    p = sub.add_parser("generate", help="draw a measurement ensemble")
    ens_args(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv", "text"), default="json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("recover", help="recover a planted matrix, or search for a distinct preimage")
    p.add_argument("--variety", required=True)
    ens_args(p)
    p.add_argument("--distinct", action="store_true")
    p.add_argument("--solver", default=None, help="solver options as JSON text or file")
    common(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("counterexample", help="search for a kernel element of the difference variety")
    p.add_argument("--variety", required=True)
    ens_args(p)
    p.add_argument("--solver", default=None)
    common(p)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("sweep", help="Monte Carlo sweep over N")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--prefix", default="sweep")
    common(p, seed_default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="rate curves with theoretical thresholds from a sweep summary")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--prefix", default="report")
    common(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidSpec, InvalidEnsemble, InvalidScenario) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
