"""Command-line front door: benchmarks, one-off solves, the survey service.

Exit codes: 0 success, 2 usage or configuration error, 3 domain
infeasibility (an empty response polyhedron, reported with the customer
id), 4 solver failure.  All randomness flows from the single --seed flag,
and every output embeds the seed plus a digest of the inputs that
produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import socket
import sys
from pathlib import Path

import numpy as np

from prodline.conjoint import AttributeSchema, PartworthBox, ResponseSet, SchemaError
from prodline.harness import ExperimentConfig, run_experiment, summarize
from prodline.milp import SolverError, export_model
from prodline.polyhedra import InfeasiblePolyhedron, analytic_center, is_feasible
from prodline.socmodels import (
    build_pco_rt,
    build_socd,
    customer_polyhedra,
    solve_pco_rt,
    solve_socd,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prodline",
        description="Robust share-of-choice product line design tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("benchmark", help="run the four-setting benchmark and write a CSV")
    bench.add_argument("--config", type=Path, help="JSON file of config fields (flags override)")
    bench.add_argument("--instances", type=int)
    bench.add_argument("--customers", type=int)
    bench.add_argument("--products", type=int)
    bench.add_argument("--sweep", help="comma-separated question counts, e.g. 5,10,21,27")
    bench.add_argument("--settings", help="comma-separated setting names")
    bench.add_argument("--seed", type=int)
    bench.add_argument("--solver")
    bench.add_argument("--master-method", dest="master_method")
    bench.add_argument("--box", type=float, dest="box_half_width", help="box half-width")
    bench.add_argument("--max-workers", type=int, dest="max_workers")
    bench.add_argument("--output", type=Path, default=Path("benchmark.csv"))
    bench.set_defaults(func=_cmd_benchmark)

    solve = sub.add_parser("solve", help="solve one model from a responses JSON file")
    solve.add_argument("--responses", type=Path, required=True)
    solve.add_argument("--model", choices=("socd", "pco"), required=True)
    solve.add_argument("--M", type=int, default=None, help="products in the line")
    solve.add_argument("--box", type=float, default=None, help="box half-width")
    solve.add_argument("--export", type=Path, default=None, help="write the model as an LP file")
    solve.add_argument("--seed", type=int, default=0)
    solve.set_defaults(func=_cmd_solve)

    serve = sub.add_parser("serve", help="run the survey HTTP service")
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--data-dir", dest="data_dir", default=None)
    serve.add_argument("--solver", default=None)
    serve.add_argument("--soft-timeout", dest="soft_timeout", type=float, default=None)
    serve.set_defaults(func=_cmd_serve)

    return parser


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def _cmd_benchmark(args: argparse.Namespace) -> int:
    fields: dict = {}
    if args.config is not None:
        try:
            fields = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
    for key in ("instances", "customers", "products", "seed", "solver",
                "master_method", "box_half_width", "max_workers"):
        value = getattr(args, key)
        if value is not None:
            fields[key] = value
    if args.sweep is not None:
        try:
            fields["sweep"] = [int(v) for v in args.sweep.split(",") if v.strip()]
        except ValueError:
            print(f"cannot parse sweep {args.sweep!r}", file=sys.stderr)
            return EXIT_USAGE
    if args.settings is not None:
        fields["settings"] = [s.strip() for s in args.settings.split(",") if s.strip()]
    fields["output"] = str(args.output)
    try:
        config = ExperimentConfig.from_json(fields)
    except (ValueError, TypeError, SchemaError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        records = run_experiment(config)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for (setting, k), row in summarize(records).items():
        print(
            f"{setting:11s} k={k:2d}  mean={row.mean:.4f}  sd={row.sd:.4f}"
            f"  n={row.count}  excluded={row.excluded}"
        )
    print(f"wrote {config.output} and {Path(config.output).with_suffix('.json')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _parse_schema(raw) -> AttributeSchema:
    if isinstance(raw, dict):
        return AttributeSchema.from_json(raw)
    return AttributeSchema(tuple(int(v) for v in raw))


def _cmd_solve(args: argparse.Namespace) -> int:
    try:
        blob = args.responses.read_bytes()
        data = json.loads(blob)
        schema = _parse_schema(data["schema"])
        responses = [ResponseSet.from_json(r) for r in data["responses"]]
        ke = data.get("known_equalities")
        known = (
            (np.asarray(ke["Q"], dtype=np.float64), np.asarray(ke["r"], dtype=np.float64))
            if ke
            else None
        )
        M = args.M if args.M is not None else int(data.get("M", 1))
        half_width = (
            args.box if args.box is not None else float(data.get("box_half_width", 50.0))
        )
    except (OSError, KeyError, ValueError, TypeError, SchemaError, json.JSONDecodeError) as exc:
        print(f"cannot read responses: {exc}", file=sys.stderr)
        return EXIT_USAGE
    box = PartworthBox.symmetric(schema.total_levels, half_width)

    polys = customer_polyhedra(responses, box, known)
    for rs, P in zip(responses, polys):
        if not is_feasible(P):
            print(
                json.dumps({"error": "empty response polyhedron", "customer_id": rs.customer_id}),
                file=sys.stderr,
            )
            return EXIT_INFEASIBLE

    digest = hashlib.sha256(
        blob + f"|{args.model}|{M}|{half_width}|{args.seed}".encode()
    ).hexdigest()[:12]
    try:
        if args.model == "socd":
            centers = np.stack([analytic_center(P) for P in polys])
            if args.export is not None:
                export_model(build_socd(centers, schema, M), str(args.export))
            sol = solve_socd(centers, schema, M)
        else:
            if args.export is not None:
                export_model(
                    build_pco_rt(responses, schema, M, box=box, known_equalities=known),
                    str(args.export),
                )
            sol = solve_pco_rt(responses, schema, M, box, known_equalities=known, method="auto")
    except InfeasiblePolyhedron as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    out = {
        "model": args.model,
        "product_line": sol.product_line.to_json(),
        "objective": float(sol.objective),
        "covered_count": int(sol.covered_count),
        "status": sol.status,
        "seed": args.seed,
        "input_digest": digest,
    }
    if args.model == "pco":
        out["worst_case_soc"] = float(sol.objective)
    if args.export is not None:
        out["exported"] = str(args.export)
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def _cmd_serve(args: argparse.Namespace) -> int:
    import os

    import uvicorn

    from prodline.service import create_app

    port = args.port if args.port is not None else int(os.environ.get("PRODLINE_PORT", "8000"))
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, port))
    except OSError as exc:
        print(f"cannot bind {args.host}:{port}: {exc}", file=sys.stderr)
        return 1
    finally:
        probe.close()
    try:
        app = create_app(args.data_dir, solver=args.solver, soft_timeout=args.soft_timeout)
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
