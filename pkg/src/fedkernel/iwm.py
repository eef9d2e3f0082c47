"""Workload brokerage: match published offers against a request, keep only
the ones the consumer is authorized to see, rank by the chosen objective and
execute the resulting deployment plan against the clouds.

Authorization filtering runs before optimization, so denied providers never
influence the ranking. Execution applies plan actions in order with
compensating rollback; offer capacity is maintained as new snapshots of the
service record, written by the orchestrator's updater since only the
administration role may append service records.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from . import canonical
from .errors import (AdapterFailure, CapacityExhausted, NoCandidates,
                     UnknownService)
from .policy import (AccessRequest, Decision, Outcome, PHASE_REQUEST, Policy,
                     pdp_decide)
from .registry import Ledger, RecordKind
from .simcloud import SimCloudHub


@dataclass(frozen=True)
class ServiceOffer:
    service_id: str
    provider_cloud: str
    tenant: str
    capacity: int
    unit_cost: float
    availability: float
    characteristics: dict[str, str] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "service_id": self.service_id,
            "provider_cloud": self.provider_cloud,
            "tenant": self.tenant,
            "capacity": self.capacity,
            "unit_cost": self.unit_cost,
            "availability": self.availability,
            "characteristics": dict(self.characteristics),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ServiceOffer":
        return cls(doc["service_id"], doc["provider_cloud"], doc["tenant"],
                   int(doc["capacity"]), float(doc["unit_cost"]),
                   float(doc["availability"]), dict(doc["characteristics"]))

    def encode(self) -> bytes:
        return canonical.canonical_bytes(self.to_doc())


class Objective(Enum):
    MIN_COST = "MIN_COST"
    MAX_AVAILABILITY = "MAX_AVAILABILITY"
    WEIGHTED = "WEIGHTED"


@dataclass(frozen=True)
class WorkloadRequest:
    consumer: str
    required_characteristics: dict[str, str]
    demand: int
    objective: Objective = Objective.MIN_COST
    w_cost: float = 1.0
    w_avail: float = 1.0

    def __post_init__(self):
        if self.demand <= 0:
            raise ValueError("demand must be positive")
        if self.objective is Objective.WEIGHTED:
            if self.w_cost < 0 or self.w_avail < 0 or (self.w_cost == 0 and self.w_avail == 0):
                raise ValueError("weights must be non-negative and not both zero")


@dataclass(frozen=True)
class AdapterAction:
    kind: str  # "provision_vm" | "open_access"
    cloud: str
    units: int = 0
    tenant: str = ""
    consumer: str = ""


@dataclass(frozen=True)
class DeploymentPlan:
    offer: ServiceOffer
    demand: int
    actions: tuple[AdapterAction, ...]


@dataclass(frozen=True)
class ExecutionReceipt:
    offer: ServiceOffer
    demand: int
    resource_ids: tuple[str, ...]


class WorkloadManager:
    def __init__(self, ledger: Ledger, iwm_token: object, hub: SimCloudHub,
                 service_updater: Optional[Callable[[ServiceOffer], None]] = None):
        self._ledger = ledger
        self._token = iwm_token
        self._hub = hub
        self._service_updater = service_updater
        self._capacity_lock = threading.Lock()

    # -- catalog --------------------------------------------------------------

    def catalog(self) -> list[ServiceOffer]:
        latest = self._ledger.latest_by_kind(self._token, RecordKind.SERVICE)
        offers = [ServiceOffer.from_doc(canonical.canonical_loads(
            record.payload.decode("utf-8"))) for record in latest.values()]
        return sorted(offers, key=lambda o: o.service_id)

    def offer(self, service_id: str) -> ServiceOffer:
        record = self._ledger.get_latest(self._token, RecordKind.SERVICE, service_id)
        if record is None:
            raise UnknownService(service_id)
        return ServiceOffer.from_doc(canonical.canonical_loads(
            record.payload.decode("utf-8")))

    def match_offers(self, request: WorkloadRequest) -> list[ServiceOffer]:
        matches = []
        for offer in self.catalog():
            wanted = request.required_characteristics.items()
            if all(offer.characteristics.get(k) == v for k, v in wanted) \
                    and offer.capacity >= request.demand:
                matches.append(offer)
        return matches

    # -- authorization filter ------------------------------------------------------

    def filter_authorized(self, subject: dict[str, str],
                          candidates: list[ServiceOffer],
                          policies_for: Callable[[str], list[Policy]],
                          environment: Optional[dict[str, str]] = None,
                          decision_sink: Optional[Callable[[AccessRequest, Decision], None]] = None,
                          ) -> list[ServiceOffer]:
        """Keep candidates whose request-phase decision is PERMIT, preserving order."""
        kept = []
        for offer in candidates:
            request = build_access_request(subject, offer, PHASE_REQUEST,
                                           environment or {})
            try:
                decision = pdp_decide(request, policies_for(offer.service_id))
            except Exception:
                continue  # malformed policy set excludes the candidate
            if decision_sink is not None:
                decision_sink(request, decision)
            if decision.outcome is Outcome.PERMIT:
                kept.append(offer)
        return kept

    # -- optimization -----------------------------------------------------------------

    @staticmethod
    def optimise(candidates: list[ServiceOffer],
                 objective: Objective, w_cost: float = 1.0,
                 w_avail: float = 1.0) -> list[ServiceOffer]:
        if not candidates:
            raise NoCandidates("nothing to rank")
        tie = lambda o: (o.provider_cloud, o.service_id)
        if objective is Objective.MIN_COST:
            return sorted(candidates, key=lambda o: (o.unit_cost, *tie(o)))
        if objective is Objective.MAX_AVAILABILITY:
            return sorted(candidates, key=lambda o: (-o.availability, *tie(o)))
        max_cost = max(o.unit_cost for o in candidates)

        def score(o: ServiceOffer) -> float:
            norm = o.unit_cost / max_cost if max_cost > 0 else 0.0
            return w_cost * norm - w_avail * o.availability

        return sorted(candidates, key=lambda o: (score(o), *tie(o)))

    def rank(self, request: WorkloadRequest, subject: dict[str, str],
             policies_for: Callable[[str], list[Policy]],
             environment: Optional[dict[str, str]] = None) -> list[ServiceOffer]:
        candidates = self.match_offers(request)
        permitted = self.filter_authorized(subject, candidates, policies_for,
                                           environment)
        if not permitted:
            raise NoCandidates("no authorized offer matches the request")
        return self.optimise(permitted, request.objective, request.w_cost,
                             request.w_avail)

    # -- execution ------------------------------------------------------------------------

    def build_plan(self, offer: ServiceOffer, demand: int, consumer: str) -> DeploymentPlan:
        actions = (
            AdapterAction("provision_vm", offer.provider_cloud, units=demand),
            AdapterAction("open_access", offer.provider_cloud, tenant=offer.tenant,
                          consumer=consumer),
        )
        return DeploymentPlan(offer, demand, actions)

    def execute(self, plan: DeploymentPlan) -> ExecutionReceipt:
        """Apply every action or none; decrement offer capacity on success."""
        with self._capacity_lock:
            current = self.offer(plan.offer.service_id)
            if current.capacity < plan.demand:
                raise CapacityExhausted(
                    f"{current.service_id}: capacity {current.capacity} "
                    f"< demand {plan.demand}")
            done: list[tuple[AdapterAction, str]] = []
            try:
                resource_ids = []
                for action in plan.actions:
                    rid = self._apply(action)
                    done.append((action, rid))
                    resource_ids.append(rid)
            except Exception as exc:
                for action, rid in reversed(done):
                    self._compensate(action, rid)
                raise AdapterFailure(str(exc)) from exc
            updated = replace(current, capacity=current.capacity - plan.demand)
            if self._service_updater is not None:
                self._service_updater(updated)
            return ExecutionReceipt(updated, plan.demand, tuple(resource_ids))

    def release(self, service_id: str, receipt: ExecutionReceipt) -> None:
        """Return a receipt's capacity and tear down its resources."""
        with self._capacity_lock:
            cloud = self._hub.cloud(receipt.offer.provider_cloud)
            for rid in receipt.resource_ids:
                if rid.startswith("vm-") and rid in cloud.vms:
                    cloud.destroy_vm(rid)
                elif rid.startswith("access:"):
                    cloud.exchange("close_access", grant=rid)
            current = self.offer(service_id)
            updated = replace(current, capacity=current.capacity + receipt.demand)
            if self._service_updater is not None:
                self._service_updater(updated)

    def _apply(self, action: AdapterAction) -> str:
        cloud = self._hub.cloud(action.cloud)
        if action.kind == "provision_vm":
            return cloud.create_vm(action.units)
        if action.kind == "open_access":
            grant = f"access:{action.tenant}:{action.consumer}"
            cloud.exchange("open_access", tenant=action.tenant,
                           consumer=action.consumer)
            return grant
        raise ValueError(f"unknown action kind {action.kind}")

    def _compensate(self, action: AdapterAction, resource_id: str) -> None:
        cloud = self._hub.cloud(action.cloud)
        if action.kind == "provision_vm":
            cloud.destroy_vm(resource_id)
        elif action.kind == "open_access":
            cloud.exchange("close_access", grant=resource_id)


def build_access_request(subject: dict[str, str], offer: ServiceOffer, phase: str,
                         environment: dict[str, str],
                         action: str = "use") -> AccessRequest:
    env = dict(environment)
    env["phase"] = phase
    return AccessRequest(
        subject=dict(subject), action=action,
        resource={"service_id": offer.service_id,
                  "provider_cloud": offer.provider_cloud,
                  "tenant": offer.tenant},
        environment=env)
