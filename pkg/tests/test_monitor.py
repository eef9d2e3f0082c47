from dataclasses import replace

import pytest

from fedkernel.clock import MINUTE_MS, SimClock
from fedkernel.errors import InvalidCursor, UnknownPolicyVersion
from fedkernel.monitor import (Alert, AlertFeed, AlertKind,
                               RuntimeMonitor, Severity, SlaPolicy)
from fedkernel.policy import (AccessRequest, Effect, Outcome, Policy,
                              PolicyRepository, Predicate,
                              encode_policy_record, pdp_decide)
from fedkernel.registry import GovernanceRecord, Ledger, RecordKind

from conftest import ROLE_TOKENS, stub_validator


def build_monitor(clock=None):
    clock = clock or SimClock(0)
    ledger = Ledger(token_validator=stub_validator)
    ledger.genesis(b"c")
    feed = AlertFeed()
    repository = PolicyRepository(ledger, ROLE_TOKENS["DS"])
    monitor = RuntimeMonitor(ledger, ROLE_TOKENS["FRM"], clock, repository,
                             feed.raise_alert)
    return monitor, ledger, feed, clock


def store_policies(ledger, service_id, policies, seq=0):
    record = GovernanceRecord(RecordKind.ACCESS_POLICY, service_id,
                              encode_policy_record(policies), "FAM", seq)
    ledger.append(ROLE_TOKENS["FAM"], [record])


def make_event(ledger, monitor, service_id="svc", home="a", outcome_ok=True):
    policies = [Policy("p", (Predicate("subject.home_cloud", "equals", "a"),),
                       Effect.PERMIT)]
    request = AccessRequest({"id": "u", "home_cloud": home}, "read",
                            {"service_id": service_id}, {"phase": "USAGE"})
    decision = pdp_decide(request, policies)
    monitor.record_event(request, decision)
    return request, decision, policies


# --- event recording -----------------------------------------------------------

def test_record_event_appends_one_record_each():
    monitor, ledger, _, _ = build_monitor()
    store_policies(ledger, "svc", [Policy("p", (), Effect.PERMIT)])
    before = ledger.record_count()
    request = AccessRequest({"id": "u", "home_cloud": "a"}, "read",
                            {"service_id": "svc"}, {"phase": "USAGE"})
    permitted = pdp_decide(request, [Policy("p", (), Effect.PERMIT)])
    denied = pdp_decide(request, [Policy("d", (), Effect.DENY)])
    monitor.record_event(request, permitted)
    monitor.record_event(request, denied)   # denials are evidence too
    assert ledger.record_count() == before + 2
    assert len(monitor.export_logs()) == 2


def test_export_logs_range():
    monitor, ledger, _, clock = build_monitor()
    for i in range(3):
        clock.advance(1000)
        make_event(ledger, monitor)
    events = monitor.export_logs()
    assert [e.timestamp for e in events] == [1000, 2000, 3000]
    assert len(monitor.export_logs(start=1500)) == 2
    assert monitor.export_logs(start=10_000) == []


# --- revalidation ----------------------------------------------------------------

def test_revalidate_honest_event_ok():
    monitor, ledger, feed, _ = build_monitor()
    policies = [Policy("p", (Predicate("subject.home_cloud", "equals", "a"),),
                       Effect.PERMIT)]
    store_policies(ledger, "svc", policies)
    make_event(ledger, monitor)
    assert monitor.revalidate_all() == 0
    assert feed.all() == []


def test_revalidate_detects_forged_outcome():
    monitor, ledger, feed, clock = build_monitor()
    policies = [Policy("p", (Predicate("subject.home_cloud", "equals", "a"),),
                       Effect.PERMIT)]
    store_policies(ledger, "svc", policies)
    # a denied request whose stored decision is forged to PERMIT
    request = AccessRequest({"id": "u", "home_cloud": "elsewhere"}, "read",
                            {"service_id": "svc"}, {"phase": "USAGE"})
    honest = pdp_decide(request, policies)
    assert honest.outcome is Outcome.NOT_APPLICABLE
    forged = replace(honest, outcome=Outcome.PERMIT)
    monitor.record_event(request, forged)
    assert monitor.revalidate_all() == 1
    alerts = feed.all()
    assert [a.kind for a in alerts] == [AlertKind.POLICY_MISMATCH]
    assert alerts[0].severity is Severity.CRITICAL


def test_revalidate_unknown_policy_version():
    monitor, ledger, _, _ = build_monitor()
    store_policies(ledger, "svc", [Policy("p", (), Effect.PERMIT)])
    request = AccessRequest({"id": "u", "home_cloud": "a"}, "read",
                            {"service_id": "svc"}, {"phase": "USAGE"})
    decision = replace(pdp_decide(request, []), policy_version_digest=b"\x01" * 32)
    monitor.record_event(request, decision)
    with pytest.raises(UnknownPolicyVersion):
        monitor.revalidate(monitor.export_logs()[0])


def test_revalidate_follows_policy_amendments():
    """An event decided under version 0 revalidates against version 0 even
    after the policies were amended."""
    monitor, ledger, feed, _ = build_monitor()
    version0 = [Policy("p", (Predicate("subject.home_cloud", "equals", "a"),),
                       Effect.PERMIT)]
    store_policies(ledger, "svc", version0, seq=0)
    request = AccessRequest({"id": "u", "home_cloud": "a"}, "read",
                            {"service_id": "svc"}, {"phase": "USAGE"})
    monitor.record_event(request, pdp_decide(request, version0))
    version1 = [Policy("p", (Predicate("subject.home_cloud", "equals", "b"),),
                       Effect.PERMIT, (), version=1)]
    store_policies(ledger, "svc", version1, seq=1)
    assert monitor.revalidate_all() == 0


# --- SLA evidence and checks ---------------------------------------------------------

LATENCY = SlaPolicy("svc", "latency_ms", "lte", 100.0,
                    window_ms=MINUTE_MS, grace_ms=MINUTE_MS)


def test_compliant_when_samples_low():
    monitor, _, _, clock = build_monitor()
    for _ in range(5):
        clock.advance(5_000)
        monitor.sla_ingest("svc", "latency_ms", 50.0)
    status = monitor.sla_check(LATENCY)
    assert status.compliant and status.aggregate == 50.0


def test_violating_when_samples_high():
    monitor, _, feed, clock = build_monitor()
    for _ in range(5):
        clock.advance(5_000)
        monitor.sla_ingest("svc", "latency_ms", 200.0)
    status = monitor.sla_check(LATENCY)
    assert not status.compliant
    assert status.since == 5_000  # breaching from the very first sample
    assert any(a.kind is AlertKind.SLA_VIOLATION for a in feed.all())


def test_boundary_mean_is_compliant():
    monitor, _, _, clock = build_monitor()
    clock.advance(1_000)
    monitor.sla_ingest("svc", "latency_ms", 100.0)
    assert monitor.sla_check(LATENCY).compliant  # strict breach only


def test_no_evidence_is_compliant_with_info_alert():
    monitor, _, feed, _ = build_monitor()
    status = monitor.sla_check(LATENCY)
    assert status.compliant and status.no_evidence
    assert [a.severity for a in feed.all()] == [Severity.INFO]


def test_out_of_order_timestamps_sorted():
    monitor, _, _, clock = build_monitor()
    clock.advance(30_000)
    monitor.sla_ingest("svc", "latency_ms", 200.0, timestamp=20_000)
    monitor.sla_ingest("svc", "latency_ms", 200.0, timestamp=10_000)
    assert [t for t, _ in monitor.evidence("svc", "latency_ms")] == \
        [10_000, 20_000]
    assert not monitor.sla_check(LATENCY).compliant


def test_gte_comparator():
    policy = SlaPolicy("svc", "availability", "gte", 0.99,
                       window_ms=MINUTE_MS, grace_ms=MINUTE_MS)
    monitor, _, _, clock = build_monitor()
    clock.advance(1_000)
    monitor.sla_ingest("svc", "availability", 0.95)
    assert not monitor.sla_check(policy).compliant


# --- alert feed ----------------------------------------------------------------------

def test_alert_feed_orders_and_dedupes():
    feed = AlertFeed()
    alert = Alert(AlertKind.SLA_VIOLATION, Severity.WARN, "svc", "breach")
    assert feed.raise_alert(alert).id == 1
    assert feed.raise_alert(alert) is None  # duplicate dropped
    other = Alert(AlertKind.POLICY_MISMATCH, Severity.CRITICAL, "svc", "forged")
    assert feed.raise_alert(other).id == 2
    assert [a.id for a in feed.all()] == [1, 2]


def test_alert_feed_cursor():
    feed = AlertFeed()
    for i in range(3):
        feed.raise_alert(Alert(AlertKind.SLA_VIOLATION, Severity.WARN,
                               f"s{i}", f"m{i}"))
    assert [a.id for a in feed.since(0)] == [1, 2, 3]
    assert [a.id for a in feed.since(2)] == [3]
    assert feed.since(3) == []
    with pytest.raises(InvalidCursor):
        feed.since(4)
    with pytest.raises(InvalidCursor):
        feed.since(-1)
