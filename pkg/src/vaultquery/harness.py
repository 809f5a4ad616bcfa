"""Plaintext oracle, workload runner and reports.

A workload script has one command per line::

    # comment
    mode latency            # or: throughput, fixed-delay 5
    query (eq last_name smith)
    insert {"id": 7, "fields": {...}, "payload": ""}
    refresh

Every query answer is scored against :func:`oracle_eval` over the plaintext
records the runner tracks alongside the system under test.
"""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence, Union

import numpy as np

from .engine import ProtectedDatabase
from .legacy import det_build, det_insert, det_query, det_token
from .model import FieldType, LeakageProfile, Record, Schema, SchemaError, canonical_values, canonicalize_keyword
from .query import And, Eq, Or, Query, QuerySyntaxError, evaluate, parse, to_sexpr


def oracle_eval(query: Query, records: Iterable[Record], schema: Schema) -> set[int]:
    """Ids of the records satisfying ``query``, by linear scan."""
    return {r.id for r in records if evaluate(query, r, schema)}


# --- scripts -----------------------------------------------------------------


@dataclass(frozen=True)
class QueryCommand:
    query: Query


@dataclass(frozen=True)
class InsertCommand:
    record: Record


@dataclass(frozen=True)
class RefreshCommand:
    pass


Command = Union[QueryCommand, InsertCommand, RefreshCommand]
MODES = ("latency", "throughput", "fixed-delay")


class ScriptError(ValueError):
    pass


@dataclass
class WorkloadScript:
    commands: list[Command] = field(default_factory=list)
    mode: str = "latency"
    delay_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ScriptError(f"unknown mode {self.mode!r}")
        if self.delay_ms < 0:
            raise ScriptError("delay must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "WorkloadScript":
        script = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            verb, _, rest = line.partition(" ")
            rest = rest.strip()
            try:
                if verb == "query":
                    script.commands.append(QueryCommand(parse(rest)))
                elif verb == "insert":
                    script.commands.append(InsertCommand(Record.from_json(json.loads(rest))))
                elif verb == "refresh" and not rest:
                    script.commands.append(RefreshCommand())
                elif verb == "mode":
                    name, _, delay = rest.partition(" ")
                    script.mode = name
                    script.delay_ms = float(delay) if delay else 0.0
                    script.__post_init__()
                else:
                    raise ScriptError(f"unknown command {verb!r}")
            except (QuerySyntaxError, SchemaError, json.JSONDecodeError, ValueError) as exc:
                raise ScriptError(f"line {lineno}: {exc}") from exc
        return script

    @classmethod
    def load(cls, path: str | Path) -> "WorkloadScript":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def dump(self) -> str:
        mode = self.mode + (f" {self.delay_ms:g}" if self.mode == "fixed-delay" else "")
        lines = [f"mode {mode}"]
        for c in self.commands:
            if isinstance(c, QueryCommand):
                lines.append("query " + to_sexpr(c.query))
            elif isinstance(c, InsertCommand):
                lines.append("insert " + json.dumps(c.record.to_json(), sort_keys=True))
            else:
                lines.append("refresh")
        return "\n".join(lines) + "\n"


# --- systems under test ---------------------------------------------------------


class SystemUnderTest(Protocol):
    def query(self, query: Query) -> set[int]: ...

    def insert(self, record: Record) -> None: ...

    def refresh(self) -> None: ...

    def transcript_bytes(self) -> int: ...


class SseSystem:
    """The encrypted engine; queries fetch their records, as a client would."""

    def __init__(self, db: ProtectedDatabase, fetch: bool = True) -> None:
        self.db = db
        self.fetch = fetch

    def query(self, query: Query) -> set[int]:
        return self.db.query(query, fetch=self.fetch).ids

    def insert(self, record: Record) -> None:
        self.db.insert(record)

    def refresh(self) -> None:
        self.db.refresh()

    def transcript_bytes(self) -> int:
        return self.db.transcript.total_bytes()

    @property
    def profile(self) -> LeakageProfile:
        return self.db.profile


class PlaintextSystem:
    """Unprotected baseline: hash indexes on equality fields, scans otherwise."""

    def __init__(self, schema: Schema, records: Iterable[Record] = ()) -> None:
        self.schema = schema
        self.records: dict[int, Record] = {}
        self._eq: dict[tuple[str, object], set[int]] = {}
        self._lock = threading.Lock()
        for r in records:
            self.insert(r)

    def _key(self, name: str, value: object) -> tuple[str, bytes]:
        return (name, canonical_values(self.schema[name], value)[0])

    def query(self, query: Query) -> set[int]:
        if isinstance(query, Eq) and self.schema[query.field].type is not FieldType.TAGS:
            return set(self._eq.get(self._key(query.field, query.value), ()))
        if isinstance(query, And) and all(isinstance(c, Eq) for c in query.children):
            return set.intersection(*(self.query(c) for c in query.children))
        return oracle_eval(query, list(self.records.values()), self.schema)

    def insert(self, record: Record) -> None:
        self.schema.validate_record(record)
        with self._lock:
            self.records[record.id] = record
            for spec in self.schema.fields:
                if spec.type is not FieldType.TAGS:
                    self._eq.setdefault(self._key(spec.name, record.fields[spec.name]), set()).add(record.id)

    def refresh(self) -> None:
        pass

    def transcript_bytes(self) -> int:
        return 0


class DetSystem:
    """Deterministic-encryption baseline: equality, and client-side AND/OR of equalities."""

    def __init__(self, schema: Schema, master: bytes, records: Iterable[Record] = ()) -> None:
        self.schema = schema
        self.master = master
        self.index, self.profile = det_build(records, master, schema)
        self._bytes = 0

    def query(self, query: Query) -> set[int]:
        if isinstance(query, Eq):
            token = det_token(self.master, canonicalize_keyword(self.schema, query.field, query.value))
            ids = set(det_query(self.index, token, query.field))
            self._bytes += len(token) + 8 * len(ids)
            return ids
        if isinstance(query, And):
            return set.intersection(*(self.query(c) for c in query.children))
        if isinstance(query, Or):
            return set.union(*(self.query(c) for c in query.children))
        raise NotImplementedError("the DET baseline answers equality, AND and OR only")

    def insert(self, record: Record) -> None:
        det_insert(self.index, record, self.master, self.schema)

    def refresh(self) -> None:
        pass

    def transcript_bytes(self) -> int:
        return self._bytes


# --- running ------------------------------------------------------------------


@dataclass(frozen=True)
class CommandMetrics:
    index: int
    kind: str
    latency_us: float
    transcript_bytes: int
    precision: float | None = None
    recall: float | None = None
    expected: int | None = None
    returned: int | None = None
    error: str = ""


@dataclass
class RunMetrics:
    commands: list[CommandMetrics] = field(default_factory=list)
    wall_seconds: float = 0.0
    mode: str = "latency"

    @property
    def queries(self) -> list[CommandMetrics]:
        return [c for c in self.commands if c.kind == "query"]

    @property
    def precision(self) -> float:
        qs = self.queries
        return min((q.precision for q in qs), default=1.0)

    @property
    def recall(self) -> float:
        qs = self.queries
        return min((q.recall for q in qs), default=1.0)

    @property
    def errors(self) -> list[CommandMetrics]:
        return [c for c in self.commands if c.error]

    @property
    def throughput(self) -> float:
        """Commands per second over the whole run."""
        return len(self.commands) / self.wall_seconds if self.wall_seconds > 0 else 0.0

    @property
    def transcript_bytes(self) -> int:
        return sum(c.transcript_bytes for c in self.commands)

    def percentiles(self, kind: str | None = "query", points: Sequence[float] = (50, 95, 99)) -> dict[float, float]:
        lat = [c.latency_us for c in self.commands if kind is None or c.kind == kind]
        if not lat:
            return {p: 0.0 for p in points}
        values = np.percentile(np.asarray(lat), list(points))
        return {p: float(v) for p, v in zip(points, values)}


def _score(expected: set[int], got: set[int]) -> tuple[float, float]:
    hit = len(expected & got)
    precision = hit / len(got) if got else 1.0
    recall = hit / len(expected) if expected else 1.0
    return precision, recall


class _Runner:
    def __init__(self, sut: SystemUnderTest, schema: Schema, records: Iterable[Record], reference: SystemUnderTest | None) -> None:
        self.sut = sut
        self.schema = schema
        self.records = {r.id: r for r in records}
        self.reference = reference

    def expected(self, query: Query, snapshot: list[Record]) -> set[int]:
        if self.reference is not None:
            return self.reference.query(query)
        return oracle_eval(query, snapshot, self.schema)

    def run_one(self, i: int, command: Command, snapshot: list[Record]) -> CommandMetrics:
        before = self.sut.transcript_bytes()
        start = time.perf_counter()
        error, got = "", set()
        try:
            if isinstance(command, QueryCommand):
                got = self.sut.query(command.query)
            elif isinstance(command, InsertCommand):
                self.sut.insert(command.record)
            else:
                self.sut.refresh()
        except Exception as exc:  # scored as a failure, not a harness crash
            error = f"{type(exc).__name__}: {exc}"
        elapsed = (time.perf_counter() - start) * 1e6
        spent = self.sut.transcript_bytes() - before
        if isinstance(command, QueryCommand):
            expected = self.expected(command.query, snapshot)
            precision, recall = _score(expected, got) if not error else (0.0, 0.0)
            return CommandMetrics(i, "query", elapsed, spent, precision, recall, len(expected), len(got), error)
        if isinstance(command, InsertCommand) and not error:
            self.records[command.record.id] = command.record
            if self.reference is not None:
                self.reference.insert(command.record)
        kind = "insert" if isinstance(command, InsertCommand) else "refresh"
        return CommandMetrics(i, kind, elapsed, spent, error=error)


def run_workload(
    script: WorkloadScript,
    sut: SystemUnderTest,
    schema: Schema,
    records: Iterable[Record] = (),
    workers: int = 2,
    reference: SystemUnderTest | None = None,
) -> RunMetrics:
    """Replay ``script`` against ``sut`` and score every query.

    Args:
        script: Commands and the submission mode.
        sut: The system under test, already holding ``records``.
        schema: Schema the oracle evaluates against.
        records: Plaintext records the system was initialized with.
        workers: Concurrent query submitters in throughput mode.
        reference: Trusted system answering for the oracle instead of a
            linear scan of ``records`` (it must already hold ``records``
            and receives the script's inserts).

    In latency mode each command finishes before the next starts. In
    fixed-delay mode commands start ``delay_ms`` apart (or as soon as the
    previous one finishes, if later). In throughput mode consecutive queries
    are submitted to a worker pool as fast as it accepts them; updates wait
    for in-flight queries, so every query sees a well-defined state.
    Per-command transcript bytes are only exact in the serialized modes.
    """
    runner = _Runner(sut, schema, records, reference)
    metrics = RunMetrics(mode=script.mode)
    start = time.perf_counter()
    if script.mode == "throughput":
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending = []
            snapshot = list(runner.records.values())
            for i, command in enumerate(script.commands):
                if isinstance(command, QueryCommand):
                    pending.append(pool.submit(runner.run_one, i, command, snapshot))
                    continue
                metrics.commands.extend(f.result() for f in pending)
                pending = []
                metrics.commands.append(runner.run_one(i, command, snapshot))
                snapshot = list(runner.records.values())
            metrics.commands.extend(f.result() for f in pending)
    else:
        snapshot = list(runner.records.values())
        next_start = time.perf_counter()
        for i, command in enumerate(script.commands):
            if script.mode == "fixed-delay":
                wait = next_start - time.perf_counter()
                if wait > 0:
                    time.sleep(wait)
                next_start = time.perf_counter() + script.delay_ms / 1000
            metrics.commands.append(runner.run_one(i, command, snapshot))
            if not isinstance(command, QueryCommand):
                snapshot = list(runner.records.values())
    metrics.wall_seconds = time.perf_counter() - start
    return metrics


def two_stream_race(
    db: ProtectedDatabase, query: Query, inserts: Sequence[Record], rounds: int = 50
) -> tuple[bool, list[set[int]]]:
    """Race a query stream against an insert stream.

    Every answer must equal the result before the inserts plus some prefix
    of them; anything else means a query saw a partially applied insert.

    Returns:
        ``(ok, answers)``.
    """
    base = db.query(query, fetch=False).ids
    schema = db.schema
    valid = [set(base)]
    for r in inserts:
        nxt = set(valid[-1])
        if evaluate(query, r, schema):
            nxt.add(r.id)
        valid.append(nxt)
    answers: list[set[int]] = []
    done = threading.Event()

    def writer() -> None:
        for r in inserts:
            db.insert(r)
        done.set()

    def reader() -> None:
        for _ in range(rounds):
            answers.append(db.query(query, fetch=False).ids)
        while not done.is_set():
            answers.append(db.query(query, fetch=False).ids)
        answers.append(db.query(query, fetch=False).ids)

    threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ok = all(a in valid for a in answers) and answers[-1] == valid[-1]
    return ok, answers


# --- reports ------------------------------------------------------------------

CSV_COLUMNS = ("command", "kind", "latency_us", "precision", "recall", "expected", "returned", "transcript_bytes", "error")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def emit_report(metrics: RunMetrics, profile: LeakageProfile | None = None) -> tuple[str, str]:
    """Human-readable summary and a CSV with one row per command."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in metrics.commands:
        writer.writerow(
            [c.index, c.kind, _fmt(c.latency_us), _fmt(c.precision), _fmt(c.recall), _fmt(c.expected), _fmt(c.returned), c.transcript_bytes, c.error]
        )
    lines = [
        f"mode: {metrics.mode}",
        f"commands: {len(metrics.commands)} ({len(metrics.queries)} queries, {len(metrics.errors)} errors)",
        f"precision (min over queries): {metrics.precision:.4f}",
        f"recall (min over queries): {metrics.recall:.4f}",
        f"throughput: {metrics.throughput:.1f} commands/s",
        f"transcript bytes: {metrics.transcript_bytes}",
        "",
        "query latency percentiles (us)",
    ]
    for p, v in sorted(metrics.percentiles().items()):
        lines.append(f"  p{p:g}: {v:.1f}")
    if profile is not None:
        lines += ["", "leakage profile (operation/object/level/observer: occurrences)"]
        for (op, obj, level, role), n in sorted(profile.summary().items(), key=lambda kv: (kv[0][0].value, kv[0][1].value, kv[0][2], kv[0][3].value)):
            lines.append(f"  {op.value}/{obj.value}/{level.name.title()}/{role.value}: {n}")
    return "\n".join(lines) + "\n", buf.getvalue()
