"""Command-line front end.

Exit codes: 0 success, 1 malformed input, 2 I/O failure, 3 no convergence,
4 numerical failure (non-positive-definite gain, or worker-count results
that differ in ``bench``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .case_io import CaseError, parse_case, parse_measurements, report_dict, write_measurements, write_report
from .engine import StageError
from .estimator import EstimationOptions, EstimationResult, estimate
from .measurement import NoiseSigmas, bind, generate_measurements, truth_state
from .network import SingularBranchError, build_graph
from .sparse import NotPositiveDefiniteError

log = logging.getLogger("graphse")

EXIT_OK, EXIT_PARSE, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_NUMERIC = range(5)
MODE_FLAGS = {"full": "full_newton", "decoupled": "fast_decoupled"}
BUILTIN = "builtin:"


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: str, text: str):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _load_case(path: str):
    if path.startswith(BUILTIN):
        name = path[len(BUILTIN):]
        try:
            text = fixtures.case_text(name)
        except KeyError as exc:
            raise _Exit(EXIT_IO, str(exc.args[0])) from None
    else:
        text, name = _read(path), Path(path).stem
    try:
        case = parse_case(text, name=name)
        return case, build_graph(case)
    except (CaseError, SingularBranchError) as exc:
        raise _Exit(EXIT_PARSE, f"{path}: {exc}") from None


def _noise(args) -> NoiseSigmas:
    d = NoiseSigmas()
    if args.sigma is not None:
        d = NoiseSigmas(args.sigma, args.sigma, args.sigma)
    return NoiseSigmas(
        args.sigma_v if args.sigma_v is not None else d.voltage,
        args.sigma_inj if args.sigma_inj is not None else d.injection,
        args.sigma_flow if args.sigma_flow is not None else d.flow,
    )


def _options(args, mode: str | None = None, workers: int | None = None) -> EstimationOptions:
    try:
        return EstimationOptions(
            mode=mode or MODE_FLAGS[args.mode],
            tol=args.tol,
            max_iter=args.max_iter,
            workers=workers or args.workers,
            fd_blocks=args.fd_blocks,
            ordering=args.ordering,
        )
    except ValueError as exc:
        raise _Exit(EXIT_PARSE, str(exc)) from None


def _run(graph, model, opts) -> EstimationResult:
    try:
        return estimate(graph, model, opts)
    except NotPositiveDefiniteError as exc:
        raise _Exit(EXIT_NUMERIC, f"gain matrix is not positive definite: {exc}") from None
    except StageError as exc:
        raise _Exit(EXIT_NUMERIC, str(exc)) from None


def cmd_gen_meas(args) -> int:
    case, graph = _load_case(args.case)
    noise = _noise(args)
    if min(noise.voltage, noise.injection, noise.flow) < 0:
        raise _Exit(EXIT_PARSE, "noise sigmas must be non-negative")
    mset = generate_measurements(graph, truth_state(case), noise, args.seed)
    _write(args.out, write_measurements(mset))
    print(f"wrote {len(mset)} measurements for {graph.n} buses / {graph.m} branches to {args.out}")
    return EXIT_OK


def _summary(name: str, res: EstimationResult) -> str:
    t = res.timings
    return (
        f"{name}  mode={res.mode}  iterations={res.iterations}  converged={res.converged}\n"
        f"  mse={res.mse:.3e}  J={res.objective:.4e}  max|r_V|={res.max_abs_voltage_residual:.3e}\n"
        f"  gain formulation {t.gain_formulation:9.3f} ms\n"
        f"  gain factorization {t.factorization:7.3f} ms\n"
        f"  residual + substitution / iter {t.residual_and_substitution_per_iter:7.3f} ms\n"
        f"  RHS vector / iter {t.rhs_per_iter:8.3f} ms\n"
        f"  total {t.total:20.3f} ms"
    )


def cmd_estimate(args) -> int:
    case, graph = _load_case(args.case)
    text = _read(args.measurements)
    try:
        model = bind(graph, parse_measurements(text))
    except CaseError as exc:
        raise _Exit(EXIT_PARSE, f"{args.measurements}: {exc}") from None
    if len(model) == 0:
        raise _Exit(EXIT_PARSE, f"{args.measurements}: no measurements")
    res = _run(graph, model, _options(args))
    print(_summary(case.name, res))
    if args.out:
        _write(args.out, write_report(res, case=case.name, workers=args.workers))
    if not res.converged:
        log.error("no convergence after %d iterations", res.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _same(a: EstimationResult, b: EstimationResult) -> bool:
    return (
        a.iterations == b.iterations
        and a.converged == b.converged
        and np.array_equal(a.state.v, b.state.v)
        and np.array_equal(a.state.theta, b.state.theta)
        and a.objective == b.objective
    )


def cmd_bench(args) -> int:
    case, graph = _load_case(args.case)
    mset = generate_measurements(graph, truth_state(case), _noise(args), args.seed)
    model = bind(graph, mset)
    many = args.workers if args.workers > 1 else max(2, os.cpu_count() or 1)
    runs, levels, status = [], {}, EXIT_OK
    print(f"{case.name}: {graph.n} buses, {graph.m} branches, {len(model)} measurements, seed {args.seed}")
    for mode in ("fast_decoupled", "full_newton"):
        by_workers = {}
        for workers in (1, many):
            res = _run(graph, model, _options(args, mode, workers))
            by_workers[workers] = res
            runs.append(report_dict(res, case=case.name, workers=workers))
        base = by_workers[1]
        levels[mode] = base.level_stats
        print(_summary(f"[{mode}, workers=1]", base))
        print(f"  elimination-tree levels: {json.dumps(base.level_stats)}")
        if not _same(base, by_workers[many]):
            raise _Exit(EXIT_NUMERIC, f"{mode}: results differ between 1 and {many} workers")
        print(f"  workers=1 and workers={many} results are bit-identical")
        if not base.converged:
            status = EXIT_NOT_CONVERGED
    doc = {"case": case.name, "seed": args.seed, "deterministic": True, "runs": runs, "levels": levels}
    if args.out:
        _write(args.out, json.dumps(doc, indent=2) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphse", description="Graph-parallel WLS state estimation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, measurements=False, out_required=False):
        sp.add_argument("--case", required=True, help=f"case file, or {BUILTIN}NAME for a bundled case")
        if measurements:
            sp.add_argument("--measurements", required=True)
        sp.add_argument("--out", required=out_required)

    def noise(sp):
        sp.add_argument("--sigma", type=float, help="one sigma for every measurement class")
        sp.add_argument("--sigma-v", type=float)
        sp.add_argument("--sigma-inj", type=float)
        sp.add_argument("--sigma-flow", type=float)
        sp.add_argument("--seed", type=int, default=0)

    def solver(sp):
        sp.add_argument("--mode", choices=sorted(MODE_FLAGS), default="decoupled")
        sp.add_argument("--tol", type=float, default=1e-6)
        sp.add_argument("--max-iter", type=int, default=50)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--fd-blocks", choices=("xb", "exact"), default="xb")
        sp.add_argument("--ordering", choices=("natural", "min_degree"), default="natural")

    sp = sub.add_parser("gen-meas", help="synthesize a full measurement set from case truth")
    common(sp, out_required=True)
    noise(sp)
    sp.set_defaults(func=cmd_gen_meas)

    sp = sub.add_parser("estimate", help="run state estimation")
    common(sp, measurements=True)
    solver(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("bench", help="time both modes at 1 and many workers")
    common(sp)
    noise(sp)
    solver(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Exit as exc:
        print(f"graphse: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
