"""Command-line client for the experiment operations.

Subcommands run in-process by default; pass --server to send the same
request to a running service instead. Exit codes: 0 success, 2 for config
problems (missing file, invalid JSON, schema violations — the offending
field path is printed), 1 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys

from pydantic import ValidationError

from .config import ExperimentConfig
from .kbio import canonical_json
from .reports import RunReport, emit_report

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [
            f"  {'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
            for err in exc.errors()
        ]
        raise ConfigError(f"config {path} failed validation:\n" + "\n".join(lines))


class ConfigError(Exception):
    pass


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w") as f:
        f.write(canonical_json(payload) + "\n")


def _post(server: str, path: str, body: dict) -> dict:
    import httpx

    response = httpx.post(server.rstrip("/") + path, json=body, timeout=3600.0)
    response.raise_for_status()
    return response.json()


def _report_from_dict(d: dict, timing: dict) -> RunReport:
    return RunReport(
        config=d["config"],
        seed=d["seed"],
        accuracy_rows=tuple(tuple(row) for row in d["accuracy_matrix"]),
        acc=d["metrics"]["acc"],
        fwt=d["metrics"]["fwt"],
        bwt=d["metrics"]["bwt"],
        one_baseline=d["one_baseline"],
        similarity=d["similarity"],
        reuse=d["reuse"],
        sdm=d["sdm"],
        timing=timing,
    )


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.server:
        payload = _post(args.server, "/run", {"config": config.model_dump()})
        report = _report_from_dict(payload["report"], payload["timing"])
    else:
        from .runner import run_experiment

        report, _, _ = run_experiment(config, kb_path=args.kb)
    emit_report(report, args.out, csv_dir=args.csv)
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_one(args) -> int:
    config = _load_config(args.config)
    if args.server:
        payload = _post(args.server, "/one", {"config": config.model_dump()})["report"]
    else:
        from .runner import one_baselines

        payload = one_baselines(config)
    _write_json(payload, args.out)
    print(f"baselines written to {args.out}")
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    if args.server:
        payload = _post(
            args.server, "/verify-bounds", {"trials": args.trials, "seed": args.seed}
        )["report"]
    else:
        from .runner import verify_bounds

        payload = verify_bounds(args.trials, args.seed)
    if args.out:
        _write_json(payload, args.out)
    violations = payload["violation_count"]
    print(
        f"{payload['trials']} trials, {violations} violations, "
        f"max slack {payload['max_slack']['slack']:.6g}, "
        f"tightest slack {payload['tightest']['slack']:.6g}"
    )
    return EXIT_OK if violations == 0 else EXIT_RUNTIME


def cmd_stress(args) -> int:
    base = _load_config(args.config) if args.config else None
    if args.server:
        body = {"tasks": args.tasks}
        if base is not None:
            body["config"] = base.model_dump()
        payload = _post(args.server, "/stress", body)["report"]
    else:
        from .runner import stress_config, stress_run

        payload = stress_run(stress_config(args.tasks, base))
    _write_json(payload, args.out)
    bits = payload["mask_storage_bits_per_weight_per_task"]
    print(
        f"{payload['tasks']} tasks, acc {payload['acc']:.4f}, "
        f"mask storage {payload['mask_storage_bytes']} bytes "
        f"({bits:.3f} bits/weight/task)"
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("maskcl.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskcl")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="learn a task sequence and emit the report")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--csv", default=None, help="directory for CSV views")
    run.add_argument("--kb", default=None, help="also save the knowledge base here")
    run.add_argument("--server", default=None)
    run.set_defaults(fn=cmd_run)

    one = sub.add_parser("one", help="independent single-task baselines only")
    one.add_argument("--config", required=True)
    one.add_argument("--out", required=True)
    one.add_argument("--server", default=None)
    one.set_defaults(fn=cmd_one)

    vb = sub.add_parser("verify-bounds", help="check the transfer bounds empirically")
    vb.add_argument("--trials", type=int, default=1000)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--out", default=None)
    vb.add_argument("--server", default=None)
    vb.set_defaults(fn=cmd_verify_bounds)

    stress = sub.add_parser("stress", help="task-count scaling run")
    stress.add_argument("--tasks", type=int, required=True)
    stress.add_argument("--config", default=None)
    stress.add_argument("--out", required=True)
    stress.add_argument("--server", default=None)
    stress.set_defaults(fn=cmd_stress)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
