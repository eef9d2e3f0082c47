"""Runtime monitoring: persist every enforcement event, re-validate stored
decisions against the policies that produced them, collect SLA evidence and
evaluate windowed SLA compliance, raising alerts on mismatches and breaches.

Revalidation re-runs the pure decision function on the exact policy version
recorded in the event (located by digest in the policy history), so any
tampering with a stored outcome surfaces as a mismatch.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from . import canonical
from .errors import UnknownPolicyVersion
from .policy import (AccessRequest, Decision, PolicyRepository, pdp_decide,
                     policy_set_digest)
from .registry import GovernanceRecord, Ledger, RecordKind


class AlertKind(Enum):
    POLICY_MISMATCH = "POLICY_MISMATCH"
    SLA_VIOLATION = "SLA_VIOLATION"
    AUDIT_FINDING = "AUDIT_FINDING"
    OPERATIONS = "OPERATIONS"


class Severity(Enum):
    INFO = "INFO"
    WARN = "WARN"
    CRITICAL = "CRITICAL"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    severity: Severity
    subject: str
    message: str
    evidence: tuple[str, ...] = ()
    timestamp: int = 0
    id: int = 0

    def fingerprint(self) -> tuple:
        return (self.kind, self.severity, self.subject, self.message, self.evidence)

    def to_doc(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "severity": self.severity.value,
                "subject": self.subject, "message": self.message,
                "evidence": list(self.evidence), "timestamp": self.timestamp}


class AlertFeed:
    """Ordered, deduplicated alert stream with cursor-based resumption."""

    def __init__(self):
        self._alerts: list[Alert] = []
        self._seen: set[tuple] = set()
        self._lock = threading.Lock()

    def raise_alert(self, alert: Alert) -> Optional[Alert]:
        with self._lock:
            if alert.fingerprint() in self._seen:
                return None
            numbered = Alert(alert.kind, alert.severity, alert.subject, alert.message,
                             alert.evidence, alert.timestamp, id=len(self._alerts) + 1)
            self._alerts.append(numbered)
            self._seen.add(alert.fingerprint())
            return numbered

    def since(self, cursor: int = 0) -> list[Alert]:
        from .errors import InvalidCursor

        with self._lock:
            if cursor < 0 or cursor > len(self._alerts):
                raise InvalidCursor(str(cursor))
            return self._alerts[cursor:]

    def all(self) -> list[Alert]:
        return self.since(0)


@dataclass(frozen=True)
class AccessEvent:
    request: AccessRequest
    decision: Decision
    enforcing_component: str
    timestamp: int
    event_id: str = ""

    def to_doc(self) -> dict:
        return {"request": self.request.to_doc(), "decision": self.decision.to_doc(),
                "enforcing_component": self.enforcing_component,
                "timestamp": self.timestamp, "event_id": self.event_id}

    @classmethod
    def from_doc(cls, doc: dict) -> "AccessEvent":
        return cls(AccessRequest.from_doc(doc["request"]),
                   Decision.from_doc(doc["decision"]),
                   doc["enforcing_component"], int(doc["timestamp"]),
                   doc.get("event_id", ""))


@dataclass(frozen=True)
class SlaPolicy:
    service_id: str
    metric: str
    comparator: str  # "lte" | "gte"
    threshold: float
    window_ms: int
    grace_ms: int

    def __post_init__(self):
        if self.window_ms <= 0 or self.grace_ms <= 0:
            raise ValueError("window and grace must be positive")
        if self.comparator not in ("lte", "gte"):
            raise ValueError(f"comparator {self.comparator!r}")

    def breached_by(self, aggregate: float) -> bool:
        # boundary equality counts as compliant: breach must be strict
        if self.comparator == "lte":
            return aggregate > self.threshold
        return aggregate < self.threshold

    def to_doc(self) -> dict:
        return {"service_id": self.service_id, "metric": self.metric,
                "comparator": self.comparator, "threshold": self.threshold,
                "window_ms": self.window_ms, "grace_ms": self.grace_ms}

    @classmethod
    def from_doc(cls, doc: dict) -> "SlaPolicy":
        return cls(doc["service_id"], doc["metric"], doc["comparator"],
                   float(doc["threshold"]), int(doc["window_ms"]), int(doc["grace_ms"]))


@dataclass(frozen=True)
class SlaStatus:
    compliant: bool
    since: Optional[int] = None  # start of the uninterrupted breaching run
    aggregate: Optional[float] = None
    no_evidence: bool = False


class RuntimeMonitor:
    def __init__(self, ledger: Ledger, frm_token: object, clock,
                 repository: PolicyRepository,
                 alert_sink: Callable[[Alert], object]):
        self._ledger = ledger
        self._token = frm_token
        self._clock = clock
        self._repository = repository
        self._alert = alert_sink
        self._event_counter = 0
        self._lock = threading.Lock()

    # -- access events ------------------------------------------------------------

    def record_event(self, request: AccessRequest, decision: Decision,
                     enforcing_component: str = "DS") -> int:
        with self._lock:
            self._event_counter += 1
            event = AccessEvent(request, decision, enforcing_component,
                                self._clock.now(),
                                event_id=f"evt-{self._event_counter:06d}")
            record = GovernanceRecord(
                kind=RecordKind.ACCESS_LOG, key=event.event_id,
                payload=canonical.canonical_bytes(event.to_doc()),
                author="FRM", seq=0)
            return self._ledger.append(self._token, [record],
                                       timestamp=self._clock.now())

    def export_logs(self, start: Optional[int] = None,
                    end: Optional[int] = None) -> list[AccessEvent]:
        events = []
        for block in self._ledger.blocks():
            for record in block.records:
                if record.kind is not RecordKind.ACCESS_LOG or record.tombstone:
                    continue
                event = AccessEvent.from_doc(
                    canonical.canonical_loads(record.payload.decode("utf-8")))
                if start is not None and event.timestamp < start:
                    continue
                if end is not None and event.timestamp >= end:
                    continue
                events.append(event)
        return sorted(events, key=lambda e: (e.timestamp, e.event_id))

    # -- decision revalidation -------------------------------------------------------

    def _policies_at_digest(self, service_id: str, digest: bytes):
        for policies in self._repository.policy_history(service_id):
            if policy_set_digest(policies) == digest:
                return policies
        raise UnknownPolicyVersion(digest.hex())

    def revalidate(self, event: AccessEvent) -> bool:
        """True when the stored decision matches a fresh evaluation."""
        service_id = event.request.resource.get("service_id", "")
        policies = self._policies_at_digest(service_id,
                                            event.decision.policy_version_digest)
        fresh = pdp_decide(event.request, policies)
        if fresh.outcome is event.decision.outcome:
            return True
        self._alert(Alert(
            AlertKind.POLICY_MISMATCH, Severity.CRITICAL,
            subject=event.request.subject.get("id", "?"),
            message=(f"stored {event.decision.outcome.value} but evaluation "
                     f"yields {fresh.outcome.value} for {service_id}"),
            evidence=(event.event_id,), timestamp=self._clock.now()))
        return False

    def revalidate_all(self) -> int:
        """Re-check the whole log; returns the number of mismatches found."""
        return sum(0 if self.revalidate(e) else 1 for e in self.export_logs())

    # -- SLA evidence -----------------------------------------------------------------

    def sla_ingest(self, service_id: str, metric: str, value: float,
                   timestamp: Optional[int] = None) -> int:
        with self._lock:
            key = f"{service_id}/{metric}"
            payload = canonical.canonical_bytes({
                "service_id": service_id, "metric": metric, "value": value,
                "timestamp": self._clock.now() if timestamp is None else timestamp})
            seq = self._ledger.next_seq(self._token, RecordKind.SLA_EVIDENCE, key)
            record = GovernanceRecord(kind=RecordKind.SLA_EVIDENCE, key=key,
                                      payload=payload, author="FRM", seq=seq)
            return self._ledger.append(self._token, [record],
                                       timestamp=self._clock.now())

    def evidence(self, service_id: str, metric: str) -> list[tuple[int, float]]:
        key = f"{service_id}/{metric}"
        samples = []
        for record in self._ledger.get_history(self._token, RecordKind.SLA_EVIDENCE, key):
            if record.tombstone:
                continue
            doc = canonical.canonical_loads(record.payload.decode("utf-8"))
            samples.append((int(doc["timestamp"]), float(doc["value"])))
        return sorted(samples)

    def sla_check(self, policy: SlaPolicy, now: Optional[int] = None) -> SlaStatus:
        now = self._clock.now() if now is None else now
        samples = self.evidence(policy.service_id, policy.metric)

        def window_mean(at: int) -> Optional[float]:
            inside = [v for t, v in samples if at - policy.window_ms <= t <= at]
            return sum(inside) / len(inside) if inside else None

        current = window_mean(now)
        if current is None:
            self._alert(Alert(AlertKind.SLA_VIOLATION, Severity.INFO,
                              subject=policy.service_id,
                              message=f"no {policy.metric} evidence in window",
                              timestamp=now))
            return SlaStatus(True, aggregate=None, no_evidence=True)
        if not policy.breached_by(current):
            return SlaStatus(True, aggregate=current)

        # walk evaluation points backwards to find the uninterrupted breach run
        since = now
        points = [t for t, _ in samples if t <= now]
        for point in reversed(points):
            mean = window_mean(point)
            if mean is None or not policy.breached_by(mean):
                break
            since = point
        self._alert(Alert(AlertKind.SLA_VIOLATION, Severity.WARN,
                          subject=policy.service_id,
                          message=(f"{policy.metric} mean {current:.3f} breaches "
                                   f"{policy.comparator} {policy.threshold}"),
                          evidence=(f"{policy.service_id}/{policy.metric}",),
                          timestamp=now))
        return SlaStatus(False, since=since, aggregate=current)
