"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every subcommand that
draws randomness accepts ``--seed`` for bit-reproducible output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .attacks import count_attack, frequency_attack, full_dataset_prior, observations_from_transcript
from .combiners import CapabilityError, IndexingRecipe, cost_table, describe
from .crypto import AuthenticationError, generate_key, load_key, save_key, seeded_rng
from .datagen import census_schema, gen_queries, gen_records, load_tables, TableError
from .engine import ProtectedDatabase, StaleIndexError
from .harness import (
    CSV_COLUMNS,
    CommandMetrics,
    DetSystem,
    PlaintextSystem,
    QueryCommand,
    RunMetrics,
    ScriptError,
    SseSystem,
    WorkloadScript,
    emit_report,
    run_workload,
)
from .legacy import DetIndex
from .model import CombinerParams, Schema, SchemaError, canonical_values, read_records, write_records
from .query import QuerySyntaxError, parse
from .sse import DuplicateRecordError, IndexFormatError, ServerTranscript

RUNTIME_ERRORS = (
    OSError,
    SchemaError,
    IndexFormatError,
    AuthenticationError,
    CapabilityError,
    QuerySyntaxError,
    ScriptError,
    TableError,
    DuplicateRecordError,
    StaleIndexError,
    KeyError,
    ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _rng(args):
    return seeded_rng(args.seed) if args.seed is not None else os.urandom


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _schema(args) -> Schema:
    return Schema.load(args.schema) if args.schema else census_schema()


def _open_db(args) -> ProtectedDatabase:
    _require(args, "key", "index", "store")
    transcript = ServerTranscript.load(args.transcript) if args.transcript and Path(args.transcript).exists() else None
    return ProtectedDatabase.open(_schema(args), load_key(args.key), args.index, args.store, rng=_rng(args), transcript=transcript)


def _save_transcript(args, db: ProtectedDatabase) -> None:
    if args.transcript:
        db.transcript.save(args.transcript)


# --- subcommands --------------------------------------------------------------


def cmd_keygen(args) -> int:
    _require(args, "key")
    save_key(args.key, generate_key(_rng(args)))
    return 0


def cmd_ingest(args) -> int:
    _require(args, "key", "index", "store", "data")
    schema = _schema(args)
    db = ProtectedDatabase.build(schema, read_records(args.data), load_key(args.key), _rng(args))
    db.save(args.index, args.store)
    _save_transcript(args, db)
    print(f"ingested {len(db)} records, {db.index.n} postings")
    return 0


def cmd_query(args) -> int:
    db = _open_db(args)
    query = parse(args.query)
    if args.explain:
        compiled = db.compile(query)
        print(json.dumps({"plan": describe(compiled.plan), "rows": list(compiled.rows), "exact": compiled.exact,
                          "leakage": [str(e) for e in compiled.declared_leakage]}, indent=2))
        return 0
    result = db.query(query)
    _save_transcript(args, db)
    for record in result.records:
        print(json.dumps(record.to_json(), sort_keys=True))
    print(f"{len(result.ids)} records", file=sys.stderr)
    return 0


def cmd_insert(args) -> int:
    db = _open_db(args)
    _require(args, "data")
    records = read_records(args.data)
    for record in records:
        db.insert(record)
    db.save(args.index, args.store)
    _save_transcript(args, db)
    print(f"inserted {len(records)} records")
    return 0


def cmd_refresh(args) -> int:
    db = _open_db(args)
    db.refresh()
    db.save(args.index, args.store)
    _save_transcript(args, db)
    print(f"refreshed {len(db)} records")
    return 0


def cmd_gen_data(args) -> int:
    _require(args, "out")
    tables = load_tables(args.tables)
    write_records(args.out, gen_records(args.count, tables, seed=args.seed or 0))
    if args.schema_out:
        census_schema(tables).dump(args.schema_out)
    return 0


def cmd_gen_queries(args) -> int:
    _require(args, "data", "out")
    tables = load_tables(args.tables)
    queries = gen_queries(read_records(args.data), args.count, seed=args.seed or 0, tables=tables)
    script = WorkloadScript([QueryCommand(q.query) for q in queries], mode=args.mode)
    Path(args.out).write_text(script.dump(), encoding="utf-8")
    return 0


def cmd_attack(args) -> int:
    _require(args, "data")
    schema = _schema(args)
    records = read_records(args.data)
    if args.kind == "count":
        _require(args, "transcript")
        report = count_attack(full_dataset_prior(records, IndexingRecipe(schema)), observations_from_transcript(ServerTranscript.load(args.transcript)))
    else:
        _require(args, "det_index")
        index = DetIndex.from_bytes(Path(args.det_index).read_bytes())
        prior: dict[str, dict[str, float]] = {}
        for r in records:
            for spec in schema.fields:
                if "eq" in spec.capabilities:
                    for v in canonical_values(spec, r.fields[spec.name]):
                        col = prior.setdefault(spec.name, {})
                        col[v.hex()] = col.get(v.hex(), 0) + 1
        report = frequency_attack(index, prior)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(f"{args.kind} attack: {len(report.identified())}/{len(report.hypotheses)} targets identified uniquely")
    return 0


def cmd_bench(args) -> int:
    _require(args, "data", "queries")
    schema = _schema(args)
    records = read_records(args.data)
    script = WorkloadScript.load(args.queries)
    if args.mode:
        script.mode = args.mode
    profile = None
    if args.system == "sse":
        master = load_key(args.key) if args.key else generate_key(_rng(args))
        db = ProtectedDatabase.build(schema, records, master, _rng(args))
        sut = SseSystem(db)
        profile = db.profile
    elif args.system == "det":
        master = load_key(args.key) if args.key else generate_key(_rng(args))
        sut = DetSystem(schema, master, records)
        profile = sut.profile
        if args.det_index_out:
            sut.index.save(args.det_index_out)
    else:
        sut = PlaintextSystem(schema, records)
    metrics = run_workload(script, sut, schema, records)
    text, table = emit_report(metrics, profile)
    if args.system == "sse" and args.transcript:
        db.transcript.save(args.transcript)
    if args.metrics_out:
        Path(args.metrics_out).write_text(table, encoding="utf-8")
    print(text, end="")
    return 0


def _read_metrics(path: str) -> RunMetrics:
    metrics = RunMetrics()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: not a metrics CSV")
        for row in reader:
            opt = lambda k, t: t(row[k]) if row[k] else None  # noqa: E731
            metrics.commands.append(
                CommandMetrics(int(row["command"]), row["kind"], float(row["latency_us"]), int(row["transcript_bytes"]),
                               opt("precision", float), opt("recall", float), opt("expected", int), opt("returned", int), row["error"])
            )
    metrics.wall_seconds = sum(c.latency_us for c in metrics.commands) / 1e6
    return metrics


def cmd_report(args) -> int:
    if args.combiner_params is None and args.metrics is None:
        raise UsageError("report needs --metrics and/or --combiner-params")
    if args.metrics:
        text, _ = emit_report(_read_metrics(args.metrics))
        print(text, end="")
    if args.combiner_params:
        params = CombinerParams.parse(args.combiner_params)
        print(f"{'row':>3}  {'combiner':<26} {'calls/query':>14} {'keywords/record':>16}")
        for row, name, calls, storage in cost_table(params):
            print(f"{row:>3}  {name:<26} {str(calls):>14} {storage:>16}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--index", metavar="PATH")
    common.add_argument("--store", metavar="PATH")
    common.add_argument("--key", metavar="PATH")
    common.add_argument("--schema", metavar="PATH", help="JSON schema (census schema by default)")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--transcript", metavar="PATH", help="server transcript log (JSON lines)")

    parser = _Parser(prog="vaultquery", description="Protected database search with leakage accounting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("keygen", parents=[common], help="write a 32-byte master key").set_defaults(func=cmd_keygen)

    p = sub.add_parser("ingest", parents=[common], help="build index and store from records")
    p.add_argument("--data", metavar="JSONL")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", parents=[common], help="run one s-expression query")
    p.add_argument("query")
    p.add_argument("--explain", action="store_true", help="print the compiled plan instead of running it")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("insert", parents=[common], help="insert records into the side index")
    p.add_argument("--data", metavar="JSONL")
    p.set_defaults(func=cmd_insert)

    sub.add_parser("refresh", parents=[common], help="re-encrypt under fresh sub-keys").set_defaults(func=cmd_refresh)

    p = sub.add_parser("gen-data", parents=[common], help="generate census-style records")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--out", metavar="JSONL")
    p.add_argument("--tables", metavar="DIR", help="frequency CSV directory")
    p.add_argument("--schema-out", metavar="PATH")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-queries", parents=[common], help="generate a conjunctive query workload")
    p.add_argument("--data", metavar="JSONL")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", metavar="SCRIPT")
    p.add_argument("--tables", metavar="DIR")
    p.add_argument("--mode", choices=("latency", "throughput"), default="latency")
    p.set_defaults(func=cmd_gen_queries)

    p = sub.add_parser("attack", parents=[common], help="run a leakage attack on server artifacts")
    p.add_argument("kind", choices=("count", "frequency"))
    p.add_argument("--data", metavar="JSONL", help="attacker prior: the full dataset")
    p.add_argument("--det-index", metavar="PATH")
    p.add_argument("--out", metavar="JSON")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", parents=[common], help="replay a workload and score it")
    p.add_argument("--data", metavar="JSONL")
    p.add_argument("--queries", metavar="SCRIPT")
    p.add_argument("--mode", choices=("latency", "throughput"))
    p.add_argument("--system", choices=("sse", "det", "plain"), default="sse")
    p.add_argument("--metrics-out", metavar="CSV")
    p.add_argument("--det-index-out", metavar="PATH")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", parents=[common], help="summarize metrics or combiner costs")
    p.add_argument("--metrics", metavar="CSV")
    p.add_argument("--combiner-params", metavar="k,β,ℓ,m,κ,α")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"vaultquery: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
