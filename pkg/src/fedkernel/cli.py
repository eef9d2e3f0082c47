"""Command-line driver: scenario execution, ledger verification, masking and
anonymization over files, and the HTTP service for the dashboard."""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import canonical
from .anonymization import (DpQuery, GeneralizationHierarchy,
                            dataset_from_text, dataset_to_text, dp_release,
                            k_anonymize)
from .errors import AssertionFailed, FederationError, ParseError
from .masking import MaskingEngine, MaskingPolicy
from .registry import verify_file
from .scenario import run_scenario


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        code, ctx = run_scenario(args.scenario,
                                 ledger_path=Path(args.ledger) if args.ledger else None)
    except (AssertionFailed, ParseError) as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        return 1
    for line in ctx.event_log:
        print(line)
    if ctx.federation is not None:
        print(f"ledger tip: {ctx.federation.ledger.tip_digest()}")
    return code


def _cmd_verify(args: argparse.Namespace) -> int:
    status = verify_file(args.ledger)
    if status.valid:
        print("valid")
        return 0
    print(f"violation at block {status.first_bad_index}")
    return 1


def _load_engine(args: argparse.Namespace) -> MaskingEngine:
    engine = MaskingEngine(rng=random.Random(args.seed))
    engine.add_key("fed-default", bytes.fromhex(args.key) if args.key
                   else b"\x11" * 32)
    if getattr(args, "table", None) and Path(args.table).exists():
        from .masking import TokenizationTable

        engine._table = TokenizationTable.from_payload(
            Path(args.table).read_bytes())
    return engine


def _cmd_mask(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    payload = json.loads(Path(args.payload).read_text(encoding="utf-8"))
    policy = MaskingPolicy.from_doc(
        json.loads(Path(args.policy).read_text(encoding="utf-8")))
    masked = engine.mask(payload, policy)
    print(canonical.canonical_dumps(masked))
    if args.table:
        Path(args.table).write_bytes(engine._table.to_payload())
    return 0


def _cmd_unmask(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    payload = json.loads(Path(args.payload).read_text(encoding="utf-8"))
    policy = MaskingPolicy.from_doc(
        json.loads(Path(args.policy).read_text(encoding="utf-8")))
    print(canonical.canonical_dumps(engine.unmask(payload, policy)))
    return 0


def _cmd_anonymize(args: argparse.Namespace) -> int:
    dataset = dataset_from_text(Path(args.dataset).read_text(encoding="utf-8"))
    hierarchies = {}
    if args.hierarchies:
        doc = json.loads(Path(args.hierarchies).read_text(encoding="utf-8"))
        hierarchies = {name: GeneralizationHierarchy(name, levels)
                       for name, levels in doc.items()}
    for name in dataset.qi_columns():
        hierarchies.setdefault(name, GeneralizationHierarchy.suppression(
            name, dataset.values(name)))
    result = k_anonymize(dataset, args.k, hierarchies)
    sys.stdout.write(dataset_to_text(result.dataset))
    print(f"# levels={result.levels} suppressed={result.suppressed}",
          file=sys.stderr)
    return 0


def _cmd_dp_query(args: argparse.Namespace) -> int:
    dataset = dataset_from_text(Path(args.dataset).read_text(encoding="utf-8"))
    release = dp_release(dataset, DpQuery(args.query), args.epsilon,
                         sensitivity=args.sensitivity, column=args.column,
                         rng=random.Random(args.seed))
    print(canonical.canonical_dumps({"value": release.value,
                                     "scale": release.scale,
                                     "component_scales": release.component_scales}))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .httpapi import build_app

    code, ctx = run_scenario(args.scenario,
                             ledger_path=Path(args.ledger) if args.ledger else None)
    if ctx.federation is None:
        print("scenario did not create a federation", file=sys.stderr)
        return 1
    app = build_app(ctx.federation)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedkernel")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("scenario")
    run.add_argument("--ledger", help="persist the chain to this file")
    run.set_defaults(fn=_cmd_run)

    verify = sub.add_parser("verify", help="verify a persisted ledger file")
    verify.add_argument("ledger")
    verify.set_defaults(fn=_cmd_verify)

    mask = sub.add_parser("mask", help="mask a JSON payload file")
    mask.add_argument("payload")
    mask.add_argument("policy")
    mask.add_argument("--table", help="tokenization table file to read/update")
    mask.add_argument("--key", help="hex key for ENCRYPT/FPE rules")
    mask.add_argument("--seed", type=int, default=0)
    mask.set_defaults(fn=_cmd_mask)

    unmask = sub.add_parser("unmask", help="restore a masked JSON payload file")
    unmask.add_argument("payload")
    unmask.add_argument("policy")
    unmask.add_argument("--table")
    unmask.add_argument("--key")
    unmask.add_argument("--seed", type=int, default=0)
    unmask.set_defaults(fn=_cmd_unmask)

    anon = sub.add_parser("anonymize", help="k-anonymize a delimited dataset")
    anon.add_argument("dataset")
    anon.add_argument("-k", type=int, default=2)
    anon.add_argument("--hierarchies", help="JSON file of per-column levels")
    anon.set_defaults(fn=_cmd_anonymize)

    dpq = sub.add_parser("dp-query", help="differentially private statistic")
    dpq.add_argument("dataset")
    dpq.add_argument("query", choices=[q.value for q in DpQuery])
    dpq.add_argument("--epsilon", type=float, required=True)
    dpq.add_argument("--sensitivity", type=float)
    dpq.add_argument("--column")
    dpq.add_argument("--seed", type=int, default=0)
    dpq.set_defaults(fn=_cmd_dp_query)

    serve = sub.add_parser("serve", help="run a scenario then serve the HTTP API")
    serve.add_argument("scenario")
    serve.add_argument("--ledger")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8400)
    serve.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FederationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
