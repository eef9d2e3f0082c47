"""Offline security audit over exported access logs.

Three pure, deterministic passes: sessionize per-subject activity into
business transactions, mine roles by greedy agglomerative clustering on
Jaccard similarity of exercised permissions, then flag anomalies: permitted
actions outside the subject's mined role, and subjects whose denials in a
sliding window look like probing. Resource class granularity is the
service id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .clock import MINUTE_MS
from .monitor import AccessEvent, Alert, AlertKind, Severity
from .policy import Outcome

DEFAULT_SESSION_GAP_MS = 10 * MINUTE_MS
DEFAULT_SIMILARITY = 0.6
DEFAULT_PROBE_THRESHOLD = 5
DEFAULT_PROBE_WINDOW_MS = 10 * MINUTE_MS

PermissionPair = tuple[str, str]  # (action, resource class)


def subject_of(event: AccessEvent) -> str:
    return event.request.subject.get("id", "?")


def permission_of(event: AccessEvent) -> PermissionPair:
    return (event.request.action, event.request.resource.get("service_id", "?"))


@dataclass(frozen=True)
class BusinessTransaction:
    subject_id: str
    events: tuple[AccessEvent, ...]
    start: int
    end: int


def aggregate(events: list[AccessEvent],
              gap_ms: int = DEFAULT_SESSION_GAP_MS) -> list[BusinessTransaction]:
    """Split each subject's chronological events wherever the inter-event
    gap exceeds ``gap_ms``."""
    by_subject: dict[str, list[AccessEvent]] = {}
    for event in sorted(events, key=lambda e: (e.timestamp, e.event_id)):
        by_subject.setdefault(subject_of(event), []).append(event)
    transactions = []
    for subject_id in sorted(by_subject):
        run: list[AccessEvent] = []
        for event in by_subject[subject_id]:
            if run and event.timestamp - run[-1].timestamp > gap_ms:
                transactions.append(BusinessTransaction(
                    subject_id, tuple(run), run[0].timestamp, run[-1].timestamp))
                run = []
            run.append(event)
        if run:
            transactions.append(BusinessTransaction(
                subject_id, tuple(run), run[0].timestamp, run[-1].timestamp))
    return transactions


@dataclass(frozen=True)
class MinedRole:
    role_id: str
    members: frozenset[str]
    signature: frozenset[PermissionPair]


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def observed_permissions(events: list[AccessEvent]) -> dict[str, frozenset[PermissionPair]]:
    sets: dict[str, set[PermissionPair]] = {}
    for event in events:
        if event.decision.outcome is Outcome.PERMIT:
            sets.setdefault(subject_of(event), set()).add(permission_of(event))
        else:
            sets.setdefault(subject_of(event), set())
    return {s: frozenset(p) for s, p in sets.items()}


def mine_roles(events: list[AccessEvent],
               similarity: float = DEFAULT_SIMILARITY) -> list[MinedRole]:
    """Greedy agglomeration: repeatedly merge the most similar cluster pair
    while the best similarity stays at or above the threshold and every
    member keeps Jaccard >= threshold to the merged signature. Ties break on
    the lexicographically smallest member ids, so the outcome is a pure
    function of the log."""
    permissions = observed_permissions(events)
    clusters: list[tuple[tuple[str, ...], frozenset[PermissionPair]]] = [
        ((subject,), permissions[subject]) for subject in sorted(permissions)]

    def merged_ok(members: tuple[str, ...], signature: frozenset) -> bool:
        return all(jaccard(permissions[m], signature) >= similarity for m in members)

    while len(clusters) > 1:
        best: Optional[tuple[float, tuple, int, int]] = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                sim = jaccard(clusters[i][1], clusters[j][1])
                if sim < similarity:
                    continue
                members = tuple(sorted(clusters[i][0] + clusters[j][0]))
                signature = clusters[i][1] & clusters[j][1]
                if not merged_ok(members, signature):
                    continue
                candidate = (-sim, members, i, j)
                if best is None or candidate < best:
                    best = candidate
        if best is None:
            break
        _, members, i, j = best
        signature = clusters[i][1] & clusters[j][1]
        clusters = [c for idx, c in enumerate(clusters) if idx not in (i, j)]
        clusters.append((members, signature))
        clusters.sort(key=lambda c: c[0])
    clusters.sort(key=lambda c: c[0])
    return [MinedRole(f"role-{idx}", frozenset(members), signature)
            for idx, (members, signature) in enumerate(clusters)]


def role_of(roles: list[MinedRole], subject_id: str) -> Optional[MinedRole]:
    for role in roles:
        if subject_id in role.members:
            return role
    return None


def detect_anomalies(events: list[AccessEvent], roles: list[MinedRole],
                     probe_threshold: int = DEFAULT_PROBE_THRESHOLD,
                     probe_window_ms: int = DEFAULT_PROBE_WINDOW_MS) -> list[Alert]:
    """Out-of-role permits plus probing (denial bursts), as audit alerts."""
    findings: list[Alert] = []
    for event in sorted(events, key=lambda e: (e.timestamp, e.event_id)):
        if event.decision.outcome is not Outcome.PERMIT:
            continue
        subject_id = subject_of(event)
        role = role_of(roles, subject_id)
        pair = permission_of(event)
        if role is None or pair not in role.signature:
            findings.append(Alert(
                AlertKind.AUDIT_FINDING, Severity.WARN, subject=subject_id,
                message=f"out-of-role activity {pair[0]} on {pair[1]}",
                evidence=(event.event_id,), timestamp=event.timestamp))

    denials: dict[str, list[AccessEvent]] = {}
    for event in sorted(events, key=lambda e: (e.timestamp, e.event_id)):
        if event.decision.outcome is Outcome.PERMIT:
            continue
        denials.setdefault(subject_of(event), []).append(event)
    for subject_id in sorted(denials):
        subject_denials = denials[subject_id]
        for i, anchor in enumerate(subject_denials):
            burst = [e for e in subject_denials[i:]
                     if e.timestamp - anchor.timestamp <= probe_window_ms]
            if len(burst) > probe_threshold:
                findings.append(Alert(
                    AlertKind.AUDIT_FINDING, Severity.WARN, subject=subject_id,
                    message=(f"probing: {len(burst)} denials within "
                             f"{probe_window_ms} ms"),
                    evidence=tuple(e.event_id for e in burst),
                    timestamp=burst[-1].timestamp))
                break
    return findings


def excess_grants(catalog_pairs: set[PermissionPair], events: list[AccessEvent],
                  roles: list[MinedRole]) -> list[Alert]:
    """Grants present in the service catalog that no mined role ever
    exercised: candidates for tightening."""
    exercised: set[PermissionPair] = set()
    for role in roles:
        exercised |= role.signature
    for event in events:
        if event.decision.outcome is Outcome.PERMIT:
            exercised.add(permission_of(event))
    timestamp = max((e.timestamp for e in events), default=0)
    return [Alert(AlertKind.AUDIT_FINDING, Severity.INFO, subject=resource,
                  message=f"candidate excess grant: {action} on {resource} never exercised",
                  timestamp=timestamp)
            for action, resource in sorted(catalog_pairs - exercised)]
