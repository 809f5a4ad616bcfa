"""Leakage-abuse attacks run against server-side artifacts only.

The attacks consume what a server can see (a :class:`ServerTranscript` or a
:class:`DetIndex`) plus the attacker's prior knowledge:

* ``count_attack``: query recovery from result sizes and pairwise overlaps,
* ``frequency_attack``: value recovery from deterministic-encryption
  histograms,
* ``plan_injection`` / ``injection_attack``: query recovery by planting
  records whose match pattern spells the queried keyword's index in binary.

``attack_applicability`` compares a leakage profile with each attack's
minimum leakage requirement.
"""

from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .legacy import DetIndex
from .model import LeakageProfile, LeakObject, Level, Operation, Role
from .sse import ServerTranscript


ABSENT = "<absent>"


class InconsistentPrior(ValueError):
    """Observations cannot come from the dataset the attacker assumed."""


class PriorLevel(enum.IntEnum):
    """Attacker prior knowledge, most informative first."""

    FULL_DATASET = 0
    SUBSET_DATASET = 1
    DATASET_DISTRIBUTION = 2
    QUERY_DISTRIBUTION = 3
    KEYWORD_UNIVERSE = 4


@dataclass(frozen=True)
class PriorKnowledge:
    level: PriorLevel
    payload: object = None
    fraction: float | None = None


@dataclass
class AttackReport:
    """Hypothesis sets per target plus summary rates.

    Attributes:
        hypotheses: Candidate answers per observed query (or ciphertext).
        recovery_rate: Fraction of targets identified uniquely and correctly,
            or uniquely when no ground truth was supplied.
        queries_consumed: Observations the attack used.
    """

    hypotheses: dict[str, list[str]] = field(default_factory=dict)
    recovery_rate: float = 0.0
    queries_consumed: int = 0

    def identified(self) -> dict[str, str]:
        return {k: v[0] for k, v in self.hypotheses.items() if len(v) == 1}

    def score(self, truth: Mapping[str, str]) -> float:
        if not self.hypotheses:
            return 0.0
        hits = sum(1 for k, v in self.hypotheses.items() if len(v) == 1 and truth.get(k) == v[0])
        return hits / len(self.hypotheses)

    def to_json(self) -> str:
        return json.dumps(
            {
                "recovery_rate": self.recovery_rate,
                "queries_consumed": self.queries_consumed,
                "hypotheses": {k: sorted(v) for k, v in sorted(self.hypotheses.items())},
            },
            indent=2,
        )


def _finish(report: AttackReport, truth: Mapping[str, str] | None) -> AttackReport:
    if truth is not None:
        report.recovery_rate = report.score(truth)
    elif report.hypotheses:
        report.recovery_rate = len(report.identified()) / len(report.hypotheses)
    return report


# --- count attack ---------------------------------------------------------------


def count_attack(
    dataset: Mapping[str, Iterable[Hashable]],
    observations: Sequence[tuple[str, Iterable[Hashable]]],
    truth: Mapping[str, str] | None = None,
) -> AttackReport:
    """Identify queries from result counts and overlaps with a known dataset.

    Args:
        dataset: Full-dataset prior, keyword label -> ids of matching records.
        observations: ``(query_id, result)`` pairs; results hold the opaque
            identifiers the server saw. Repeated query ids are merged.
        truth: Optional ``query_id -> keyword`` for scoring.

    A query's candidates start as the keywords with its result count. Then,
    until nothing changes, every unresolved query drops candidates whose
    overlap with some identified keyword differs from the observed overlap
    with that keyword's query, and identified keywords leave other queries'
    candidate sets (distinct tokens are distinct keywords). A query with an
    empty result names a keyword with no postings: one the prior lists with
    an empty id set, or one outside the prior (:data:`ABSENT`).

    Raises:
        InconsistentPrior: Some query has no candidate left.
    """
    postings = {w: frozenset(ids) for w, ids in dataset.items()}
    results: dict[str, frozenset] = {}
    for qid, ids in observations:
        ids = frozenset(ids)
        if qid in results and results[qid] != ids:
            raise InconsistentPrior(f"query {qid} returned different results")
        results[qid] = ids
    by_count: dict[int, set[str]] = defaultdict(set)
    for w, ids in postings.items():
        by_count[len(ids)].add(w)
    absent = {q for q, r in results.items() if not r}
    candidates = {q: set(by_count.get(len(r), ())) for q, r in results.items() if r}
    overlap_cache: dict[tuple[str, str], int] = {}

    def overlap(a: str, b: str) -> int:
        key = (a, b) if a <= b else (b, a)
        if key not in overlap_cache:
            overlap_cache[key] = len(postings[a] & postings[b])
        return overlap_cache[key]

    changed = True
    while changed:
        changed = False
        for q, cands in candidates.items():
            if not cands:
                raise InconsistentPrior(f"no keyword explains query {q}")
        anchors = {q: next(iter(c)) for q, c in candidates.items() if len(c) == 1}
        taken = defaultdict(list)
        for q, w in anchors.items():
            taken[w].append(q)
        for w, qs in taken.items():
            if len(qs) > 1:
                raise InconsistentPrior(f"distinct queries {sorted(qs)} resolve to the same keyword")
        for q, cands in candidates.items():
            if len(cands) == 1:
                continue
            keep = set()
            for w in cands:
                if w in taken:
                    continue
                if all(overlap(w, aw) == len(results[q] & results[aq]) for aq, aw in anchors.items()):
                    keep.add(w)
            if keep != cands:
                candidates[q] = keep
                changed = True
    for q, cands in candidates.items():
        if not cands:
            raise InconsistentPrior(f"no keyword explains query {q}")
    hypotheses = {q: sorted(c) for q, c in candidates.items()}
    unmatched = sorted(by_count.get(0, ())) + [ABSENT]
    hypotheses.update({q: list(unmatched) for q in absent})
    report = AttackReport(hypotheses, queries_consumed=len(observations))
    return _finish(report, truth)


def full_dataset_prior(records: Iterable, recipe) -> dict[str, set[int]]:
    """Keyword label -> ids of matching records, for every indexed keyword.

    Labels are ``field=hexvalue``. Padding keywords are unique per record and
    never queried, so they are left out.
    """
    out: dict[str, set[int]] = {}
    for r in records:
        for kw in recipe.keywords(r):
            if not kw.field.endswith("#pad"):
                out.setdefault(keyword_label(kw), set()).add(r.id)
    return out


def keyword_label(keyword) -> str:
    return f"{keyword.field}={keyword.value.hex()}"


def observations_from_transcript(transcript: ServerTranscript) -> list[tuple[str, frozenset[bytes]]]:
    """Single-token query sessions as ``(token hex, fetched aliases)``."""
    out = []
    for entries in transcript.sessions().values():
        tokens = [e.data for e in entries if e.kind == "token"]
        if len(tokens) != 1:
            continue
        fetched = frozenset(e.data for e in entries if e.kind == "fetch")
        out.append((tokens[0].hex(), fetched))
    return out


# --- frequency analysis ---------------------------------------------------------


def rank_match(observed: Mapping[str, float], prior: Mapping[str, float]) -> dict[str, list[str]]:
    """Match observed frequencies to prior ones by rank, honouring ties.

    Observed items sharing a frequency occupy a block of ranks; each may be
    any prior value whose rank falls in that block, or whose frequency ties
    with one that does.
    """
    obs = sorted(observed.items(), key=lambda kv: (-kv[1], kv[0]))
    pri = sorted(prior.items(), key=lambda kv: (-kv[1], kv[0]))
    prior_by_freq: dict[float, list[str]] = defaultdict(list)
    for v, f in pri:
        prior_by_freq[f].append(v)
    out: dict[str, list[str]] = {}
    i = 0
    while i < len(obs):
        j = i
        while j < len(obs) and obs[j][1] == obs[i][1]:
            j += 1
        block = set()
        for v, f in pri[i : min(j, len(pri))]:
            block.update(prior_by_freq[f])
        for key, _ in obs[i:j]:
            out[key] = sorted(block)
        i = j
    return out


def frequency_attack(
    index: DetIndex,
    prior: Mapping[str, Mapping[str, float]],
    truth: Mapping[str, str] | None = None,
) -> AttackReport:
    """Recover plaintext values of deterministic-encryption columns.

    Args:
        index: The at-rest DET index (its per-column ciphertext histograms).
        prior: Column -> value -> frequency (counts or probabilities).
        truth: Optional ``ciphertext hex -> value`` for scoring.
    """
    hypotheses: dict[str, list[str]] = {}
    for column, dist in prior.items():
        if column not in index.columns:
            continue
        observed = {ct.hex(): count for ct, count in index.histogram(column).items()}
        hypotheses.update(rank_match(observed, dist))
    return _finish(AttackReport(hypotheses), truth)


# --- data injection ------------------------------------------------------------


def injection_size(universe_size: int) -> int:
    if universe_size < 2:
        raise ValueError("injection needs a universe of at least two keywords")
    return math.ceil(math.log2(universe_size))


def plan_injection(universe: Sequence[str], max_keywords: int | None = None) -> list[tuple[int, list[str]]]:
    """Keyword groups to inject, as ``(bit, keywords)`` pairs.

    Group ``j`` holds every keyword whose index has bit ``j`` set. With
    ``max_keywords`` a group is split over several records that share the
    bit, so records stay within a per-record keyword limit.
    """
    bits = injection_size(len(universe))
    if max_keywords is not None and max_keywords < 1:
        raise ValueError("max_keywords must be positive")
    out = []
    for j in range(bits):
        group = [w for i, w in enumerate(universe) if (i >> j) & 1]
        if max_keywords is None:
            out.append((j, group))
        else:
            for k in range(0, len(group), max_keywords):
                out.append((j, group[k : k + max_keywords]))
    return out


def decode(pattern: int | Sequence[bool], universe: Sequence[str]) -> str:
    """Keyword whose index is the observed match pattern read as binary."""
    if not isinstance(pattern, int):
        pattern = sum(1 << j for j, hit in enumerate(pattern) if hit)
    if not 0 <= pattern < len(universe):
        raise ValueError(f"match pattern {pattern} outside the universe")
    return universe[pattern]


def injected_aliases(transcript: ServerTranscript, sessions: Sequence[int], plan: Sequence[tuple[int, list[str]]]) -> dict[bytes, int]:
    """Map aliases of the attacker's injected records to their bit.

    ``sessions`` lists the update sessions of the injected records in plan
    order; the attacker knows them because it issued the inserts.
    """
    by_session = transcript.sessions()
    out = {}
    for session, (bit, _) in zip(sessions, plan, strict=True):
        entries = [e for e in by_session.get(session, []) if e.kind == "update-record"]
        if len(entries) != 1:
            raise ValueError(f"session {session} is not a single record insert")
        out[entries[0].data[:32]] = bit
    return out


def injection_attack(
    transcript: ServerTranscript,
    alias_bits: Mapping[bytes, int],
    universe: Sequence[str],
    truth: Mapping[str, str] | None = None,
) -> AttackReport:
    """Decode every single-token query session that follows the injection."""
    hypotheses = {}
    for qid, fetched in observations_from_transcript(transcript):
        pattern = 0
        for alias in fetched:
            if alias in alias_bits:
                pattern |= 1 << alias_bits[alias]
        if pattern < len(universe):
            hypotheses[qid] = [decode(pattern, universe)]
        else:
            hypotheses[qid] = []
    return _finish(AttackReport(hypotheses, queries_consumed=len(hypotheses)), truth)


# --- applicability -------------------------------------------------------------


@dataclass(frozen=True)
class AttackSpec:
    """Minimum leakage an attack needs (None means no requirement)."""

    name: str
    init: Level | None
    query: Level | None
    injection: bool
    prior: PriorLevel
    implemented: bool = False


ATTACKS: dict[str, AttackSpec] = {
    a.name: a
    for a in (
        AttackSpec("communication_volume", None, None, False, PriorLevel.QUERY_DISTRIBUTION),
        AttackSpec("binary_search", None, Level.IDENTIFIER, True, PriorLevel.KEYWORD_UNIVERSE, implemented=True),
        AttackSpec("access_pattern", None, Level.IDENTIFIER, False, PriorLevel.QUERY_DISTRIBUTION),
        AttackSpec("partially_known_documents", None, Level.IDENTIFIER, False, PriorLevel.SUBSET_DATASET),
        AttackSpec("hierarchical_search", None, Level.IDENTIFIER, True, PriorLevel.SUBSET_DATASET),
        AttackSpec("count", None, Level.IDENTIFIER, False, PriorLevel.FULL_DATASET, implemented=True),
        AttackSpec("graph_matching", None, Level.IDENTIFIER, False, PriorLevel.DATASET_DISTRIBUTION),
        AttackSpec("frequency_analysis", Level.EQUALITY, None, False, PriorLevel.DATASET_DISTRIBUTION, implemented=True),
        AttackSpec("active", Level.EQUALITY, None, True, PriorLevel.DATASET_DISTRIBUTION),
        AttackSpec("known_document", Level.EQUALITY, None, False, PriorLevel.SUBSET_DATASET),
        AttackSpec("non_crossing", Level.ORDER, None, False, PriorLevel.DATASET_DISTRIBUTION),
    )
}


def attack_applicability(profile: LeakageProfile, attack: str | AttackSpec) -> bool:
    """True when the server-side leakage meets the attack's requirements.

    The Init requirement is checked against at-rest leakage on data items;
    the Query requirement against any query leakage. Injection and prior
    knowledge are threat-model assumptions, not leakage, so they do not
    enter the check.
    """
    spec = ATTACKS[attack] if isinstance(attack, str) else attack
    checks = []
    if spec.init is not None:
        checks.append((profile.max_level(Operation.INIT, Role.SERVER, LeakObject.DATA_ITEMS), spec.init))
    if spec.query is not None:
        checks.append((profile.max_level(Operation.QUERY, Role.SERVER), spec.query))
    return all(have is not None and have >= need for have, need in checks)
