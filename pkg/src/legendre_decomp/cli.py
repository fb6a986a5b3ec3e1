"""Command-line front end.

Exit codes: 0 success, 1 bad input, 2 numerical failure, 3 no convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .boltzmann import empirical_from_samples, fit_boltzmann, load_graph, load_samples
from .errors import NumericalError, ParseError
from .eval_oracle import EvalReport, rmse, synthetic_tensor
from .model import kl_divergence
from .optimizer import GD, NG, SolverConfig, decompose, write_trace
from .poset_basis import parse_basis_spec
from .tensor_core import (
    DENSE,
    FORMATS,
    build_sample_space,
    denormalize,
    dump_tensor,
    nonzero_sample_space,
    normalize,
    read_tensor,
)

log = logging.getLogger("legendre_decomp")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 1, 2, 3


@dataclass
class RunManifest:
    """Everything that determines a run; copied into every output."""

    command: str
    input: str | None = None
    format: str = DENSE
    basis: str | None = None
    algorithm: str = NG
    learning_rate: float = 0.1
    tolerance: float = 1e-5
    max_iterations: int | None = None
    damping: float = 0.0
    seed: int = 0
    exclude_zeros: bool = False
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    def solver_config(self, record_trace: bool = False) -> SolverConfig:
        return SolverConfig(
            algorithm=self.algorithm,
            learning_rate=self.learning_rate,
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            damping=self.damping,
            record_trace=record_trace,
        )


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(a) -> list[float]:
    return [float(x) for x in a]


# ------------------------------------------------------------------ decompose


def cmd_decompose(args) -> int:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"result": str(out_dir / "result.json"), "reconstruction": str(out_dir / "q.tensor")}
    if args.trace:
        outputs["trace"] = str(out_dir / "trace.csv")
    manifest = RunManifest(
        command="decompose",
        input=args.input,
        format=args.format,
        basis=args.basis,
        algorithm=args.algorithm,
        learning_rate=args.lr,
        tolerance=args.tol,
        max_iterations=args.max_iter,
        damping=args.damping,
        seed=args.seed,
        exclude_zeros=args.exclude_zeros,
        outputs=outputs,
    )
    x = read_tensor(args.input, args.format)
    space = nonzero_sample_space(x) if args.exclude_zeros else build_sample_space(x.shape)
    p = normalize(x, space)
    basis = parse_basis_spec(args.basis, space, p)
    result = decompose(p, basis, manifest.solver_config(record_trace=args.trace))
    payload = {
        "manifest": asdict(manifest),
        "shape": list(x.shape),
        "omega_size": len(space),
        "basis_size": len(basis),
        "basis": [list(v) for v in basis],
        "theta": _floats(result.theta),
        "eta": _floats(result.eta),
        "eta_hat": _floats(result.eta_hat),
        "log_partition": result.psi,
        "kl": result.kl,
        "max_residual": result.max_residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "wall_time": result.wall_time,
        "total_mass": p.total_mass,
    }
    _write_json(Path(outputs["result"]), payload)
    with open(outputs["reconstruction"], "w", encoding="utf-8") as fh:
        dump_tensor(denormalize(result.q), fh, DENSE)
    if args.trace:
        with open(outputs["trace"], "w", encoding="utf-8") as fh:
            write_trace(result, fh)
    log.info(
        "%s: |B|=%d |Omega|=%d kl=%.6g iterations=%d converged=%s",
        args.input, len(basis), len(space), result.kl, result.iterations, result.converged,
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------- bench

BENCH_COLUMNS = (
    "shape", "cells", "basis", "basis_size", "algorithm", "iterations", "converged",
    "time_ms", "time_per_iter_ms", "kl", "status",
)


def bench_row(shape, basis_spec, algorithm, manifest: RunManifest, repeats: int = 1) -> dict:
    """Decompose a seeded synthetic tensor; timings are the best of ``repeats``.

    One untimed warm-up run comes first. The per-iteration time is minimized
    separately from the total so a single slow setup does not hide it.
    """
    row = dict.fromkeys(BENCH_COLUMNS, "")
    row.update(shape="x".join(map(str, shape)), basis=basis_spec, algorithm=algorithm)
    try:
        x = synthetic_tensor(shape, manifest.seed)
        p = normalize(x)
        basis = parse_basis_spec(basis_spec, p.space, p)
        cfg = SolverConfig(
            algorithm=algorithm,
            learning_rate=manifest.learning_rate,
            tolerance=manifest.tolerance,
            max_iterations=manifest.max_iterations,
            damping=manifest.damping,
        )
        decompose(p, basis, cfg)
        best, per_iter = None, float("inf")
        for _ in range(max(repeats, 1)):
            result = decompose(p, basis, cfg)
            per_iter = min(per_iter, result.time_per_iteration)
            if best is None or result.wall_time < best.wall_time:
                best = result
        row.update(
            cells=len(p.space),
            basis_size=len(basis),
            iterations=best.iterations,
            converged=best.converged,
            time_ms=f"{1000 * best.wall_time:.3f}",
            time_per_iter_ms=f"{1000 * per_iter:.4f}",
            kl=repr(best.kl),
            status="ok" if best.converged else "not-converged",
        )
    except (NumericalError, ValueError) as exc:
        row["status"] = f"error: {exc}"
    return row


def run_bench(shapes, basis_specs, algorithms, manifest: RunManifest, repeats: int = 1, workers: int = 1):
    jobs = [(tuple(s), b, a) for s in shapes for b in basis_specs for a in algorithms]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(bench_row, s, b, a, manifest, repeats) for s, b, a in jobs]
            return [f.result() for f in futures]
    return [bench_row(s, b, a, manifest, repeats) for s, b, a in jobs]


def write_bench_csv(rows, stream, manifest: RunManifest) -> None:
    stream.write("# manifest: " + json.dumps(asdict(manifest), sort_keys=True) + "\n")
    writer = csv.DictWriter(stream, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


def _parse_shapes(text: str) -> list[tuple[int, ...]]:
    shapes = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        dims = tuple(int(d) for d in item.lower().split("x"))
        shapes.append(dims * 3 if len(dims) == 1 else dims)
    return shapes


def cmd_bench(args) -> int:
    out = Path(args.output)
    manifest = RunManifest(
        command="bench",
        basis=";".join(args.basis),
        algorithm=",".join(args.algorithms),
        learning_rate=args.lr,
        tolerance=args.tol,
        max_iterations=args.max_iter,
        damping=args.damping,
        seed=args.seed,
        outputs={"bench": str(out)},
    )
    workers = max(int(os.environ.get("THREADS", "1") or 1), 1)
    rows = run_bench(_parse_shapes(args.sizes), args.basis, args.algorithms, manifest, args.repeats, workers)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        write_bench_csv(rows, fh, manifest)
    failed = [r for r in rows if r["status"].startswith("error")]
    if failed:
        return EXIT_NUMERIC
    return EXIT_NOT_CONVERGED if any(r["status"] != "ok" for r in rows) else EXIT_OK


# ----------------------------------------------------------- eval / basis / bm


def cmd_eval(args) -> int:
    started = time.perf_counter()
    x = read_tensor(args.input, args.format)
    x_hat = read_tensor(args.reconstruction, args.format)
    params, kl = 0, None
    if args.result:
        with open(args.result, encoding="utf-8") as fh:
            summary = json.load(fh)
        params, kl = summary["basis_size"], summary["kl"]
    if kl is None:
        kl = kl_divergence(normalize(x), normalize(x_hat))
    report = EvalReport(rmse(x, x_hat), kl, params, time.perf_counter() - started)
    print(EvalReport.CSV_HEADER)
    print(report.csv_row())
    return EXIT_OK


def cmd_basis(args) -> int:
    if args.input:
        x = read_tensor(args.input, args.format)
        space = nonzero_sample_space(x) if args.exclude_zeros else build_sample_space(x.shape)
        p = normalize(x, space)
    elif args.shape:
        space, p = build_sample_space(args.shape), None
    else:
        raise ValueError("give either --input or --shape")
    for v in parse_basis_spec(args.basis, space, p):
        print(" ".join(map(str, v)))
    return EXIT_OK


def cmd_boltzmann(args) -> int:
    graph = load_graph(Path(args.graph).read_text(encoding="utf-8"))
    if args.samples:
        empirical = empirical_from_samples(load_samples(Path(args.samples).read_text(encoding="utf-8")))
    elif args.input:
        empirical = normalize(read_tensor(args.input, args.format))
    else:
        raise ValueError("give either --input or --samples")
    cfg = SolverConfig(
        algorithm=args.algorithm, learning_rate=args.lr, tolerance=args.tol,
        max_iterations=args.max_iter, damping=args.damping,
    )
    fit = fit_boltzmann(empirical, graph, cfg)
    payload = fit.to_json()
    payload["converged"] = fit.result.converged
    payload["manifest"] = asdict(RunManifest(
        command="boltzmann", input=args.samples or args.input, format=args.format,
        basis=f"graph:{args.graph}", algorithm=args.algorithm, learning_rate=args.lr,
        tolerance=args.tol, max_iterations=args.max_iter, damping=args.damping,
        outputs={"boltzmann": args.output or "-"},
    ))
    if args.output:
        _write_json(Path(args.output), payload)
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK if fit.result.converged else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------- parser


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-a", "--algorithm", choices=(NG, GD), default=NG)
    p.add_argument("--lr", type=float, default=0.1, help="gradient descent learning rate")
    p.add_argument("--tol", type=float, default=1e-5, help="tolerance on max |eta - eta_hat|")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--damping", type=float, default=0.0, help="initial ridge for the Newton solve")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="legendre-decomp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose a tensor file")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-f", "--format", choices=FORMATS, default=DENSE)
    p.add_argument("-b", "--basis", default="b1", help='e.g. "b1+b2:3+b3:5" or "file:basis.txt"')
    _add_solver_flags(p)
    p.add_argument("--exclude-zeros", action="store_true", help="drop zero entries from the sample space")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="write trace.csv")
    p.add_argument("-o", "--output-dir", default=".")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("bench", help="timing sweep on seeded synthetic tensors")
    p.add_argument("--sizes", default="20,40,80", help='cube sides or shapes like "20x20x10"')
    p.add_argument("-b", "--basis", action="append", default=None, help="basis spec (repeatable)")
    p.add_argument("--algorithms", type=lambda s: [a for a in s.split(",") if a], default=[NG])
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("-o", "--output", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="RMSE between an input and its reconstruction")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-r", "--reconstruction", required=True)
    p.add_argument("-f", "--format", choices=FORMATS, default=DENSE)
    p.add_argument("--result", help="result.json of the decomposition (for kl and params)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("basis", help="list the members of a basis")
    p.add_argument("-b", "--basis", required=True)
    p.add_argument("--shape", type=int, nargs="+")
    p.add_argument("-i", "--input")
    p.add_argument("-f", "--format", choices=FORMATS, default=DENSE)
    p.add_argument("--exclude-zeros", action="store_true")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("boltzmann", help="fit a fully visible Boltzmann machine exactly")
    p.add_argument("-g", "--graph", required=True)
    p.add_argument("-i", "--input", help="empirical distribution as a 2x...x2 tensor")
    p.add_argument("-f", "--format", choices=FORMATS, default=DENSE)
    p.add_argument("--samples", help="file of 0/1 sample rows")
    _add_solver_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_boltzmann)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "bench" and args.basis is None:
        args.basis = ["top:50"]
    try:
        return args.func(args)
    except (ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
