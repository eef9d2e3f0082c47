"""Federation administration core: owns the membership and tenant model,
executes the five operating phases against the simulated clouds, aggregates
alerts and drives the timed forced-leave rule.

Phases 1-3 are transactional: side effects on member clouds are compensated
on failure and the governance ledger is written only at the commit point of
a phase, so an aborted phase leaves neither records nor resources behind.
Post-commit notifications are best-effort; their failure raises an alert
instead of un-enrolling a member.
"""

from __future__ import annotations

import hashlib
import random
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from . import canonical
from .anonymization import (Anonymizer, ColumnRole, Dataset,
                            GeneralizationHierarchy, k_anonymize)
from .clock import SimClock
from .errors import (AuthFailed, ConfigurationFailed, DeallocationFailed,
                     FederationClosed, InvalidChoice, InvariantViolation,
                     MissingPrerequisite, NoGrant, PolicyInvalid,
                     SectionUnavailable, TooFewFounders, Unauthorized,
                     UnknownService)
from .identity import AuthToken, IdentityManager, Principal, PrincipalKind
from .iwm import (ExecutionReceipt, ServiceOffer, WorkloadManager,
                  WorkloadRequest, build_access_request)
from .masking import MaskingEngine, MaskingPolicy
from .monitor import (Alert, AlertFeed, AlertKind, RuntimeMonitor, Severity,
                      SlaPolicy)
from .policy import (AdminPolicy, EnforcementGateway, InformationPoint,
                     Outcome, PHASE_USAGE, Policy, PolicyRepository,
                     encode_policy_record, pap_check_amendment,
                     validate_policy_syntax)
from .registry import (ComponentRole, GovernanceRecord, Ledger, RecordKind,
                       tombstone_of)
from .simcloud import CAPABILITIES, SimCloud, SimCloudHub
from .smc import AggregateOp, SmcDeployment, smc_aggregate

CORE_SERVICE = "CORE"
NETWORK_SERVICE = "NETWORK"
ACCESS_SERVICE = "ACCESS"

ACCESS_CONTAINER = "access-svc"
CORE_CONTAINERS = ("core-svc", "network-svc", "access-svc")

CONTRACT_KEY = "contract"


@dataclass(frozen=True)
class Sfac:
    """The founding agreement: the mandatory governance data plus the
    parameters the platform enforces mechanically."""

    federation_id: str
    founders: tuple[str, ...]
    assets: dict[str, int]                 # infrastructure units pledged per member
    declared_services: tuple[str, ...] = ()
    sla_appointments: dict[str, list[dict]] = field(default_factory=dict)
    grace_ms: int = 5 * 60_000
    open: bool = True

    def to_doc(self) -> dict:
        return {
            "federation_id": self.federation_id,
            "founders": list(self.founders),
            "assets": dict(self.assets),
            "declared_services": list(self.declared_services),
            "sla_appointments": {k: list(v) for k, v in self.sla_appointments.items()},
            "grace_ms": self.grace_ms,
            "open": self.open,
        }

    def encode(self) -> bytes:
        return canonical.canonical_bytes(self.to_doc())


@dataclass(frozen=True)
class Section:
    section_id: str
    cloud_id: str
    units: int
    network: str

    def to_doc(self) -> dict:
        return {"section_id": self.section_id, "cloud_id": self.cloud_id,
                "units": self.units, "network": self.network}


class TenantKind(Enum):
    INFRASTRUCTURE = "INFRASTRUCTURE"
    OP_STANDARD = "OP_STANDARD"
    OP_SEGREGATED = "OP_SEGREGATED"


@dataclass
class Tenant:
    tenant_id: str
    kind: TenantKind
    sections: tuple[Section, ...]
    owner: Optional[str] = None
    services: frozenset[str] = frozenset()
    hosts_smc: bool = False

    def clouds(self) -> set[str]:
        return {s.cloud_id for s in self.sections}

    def validate(self, active_members: set[str]) -> None:
        if self.kind is TenantKind.INFRASTRUCTURE:
            if self.owner is not None:
                raise InvariantViolation("infrastructure tenant has no single owner")
            if len(self.sections) < len(active_members):
                raise InvariantViolation(
                    f"infrastructure tenant needs at least {len(active_members)} "
                    f"sections, has {len(self.sections)}")
            missing = active_members - self.clouds()
            if missing:
                raise InvariantViolation(
                    f"members without an infrastructure section: {sorted(missing)}")
            if not {CORE_SERVICE, NETWORK_SERVICE, ACCESS_SERVICE} <= self.services:
                raise InvariantViolation("infrastructure tenant must carry core, "
                                         "network and access services")
            return
        if self.owner is None:
            raise InvariantViolation(f"{self.kind.value} tenant needs a single owner")
        if not self.sections:
            raise InvariantViolation("operational tenant needs at least one section")
        if self.kind is TenantKind.OP_SEGREGATED:
            if len(self.sections) != 1:
                raise InvariantViolation("segregated tenant is exactly one section")
            if self.sections[0].cloud_id != self.owner:
                raise InvariantViolation("segregated tenant section must belong "
                                         "to its owner")
        if self.hosts_smc:
            if self.kind is not TenantKind.OP_STANDARD:
                raise InvariantViolation("multi-party computation needs a standard "
                                         "operational tenant")
            if len(self.clouds()) < 3:
                raise InvariantViolation(
                    f"multi-party tenant spans {len(self.clouds())} clouds; "
                    "resources must belong to more than two members")

    def to_doc(self) -> dict:
        return {
            "tenant_id": self.tenant_id,
            "kind": self.kind.value,
            "owner": self.owner,
            "sections": [s.to_doc() for s in self.sections],
            "services": sorted(self.services),
            "hosts_smc": self.hosts_smc,
        }


class MemberStatus(Enum):
    ACTIVE = "ACTIVE"
    LEAVING = "LEAVING"
    LEFT = "LEFT"


@dataclass
class MemberCloud:
    cloud_id: str
    capabilities: frozenset[str]
    status: MemberStatus = MemberStatus.ACTIVE

    def check_prerequisites(self) -> None:
        for capability in CAPABILITIES:
            if capability not in self.capabilities:
                raise MissingPrerequisite(self.cloud_id, capability)


@dataclass(frozen=True)
class Grant:
    consumer_id: str
    consumer_cloud: str
    service_id: str
    receipt: ExecutionReceipt


ProviderFn = Callable[[str, object], object]


class Federation:
    """One federation instance; phases execute one at a time."""

    def __init__(self, hub: SimCloudHub, sfac: Sfac, clock: SimClock,
                 rng: random.Random, ledger_path: Optional[Path] = None):
        self.hub = hub
        self.sfac = sfac
        self.clock = clock
        self.rng = rng
        self._phase_lock = threading.RLock()

        self.identity = IdentityManager(rng.randbytes(32), clock)
        self.ledger = Ledger(token_validator=self.identity.validate_component_token,
                             path=ledger_path)
        self.tokens = {role: self.identity.issue_component_token(role)
                       for role in ComponentRole}

        self.members: dict[str, MemberCloud] = {}
        self.tenants: dict[str, Tenant] = {}
        self._assigned_sections: set[str] = set()
        self._section_counter: dict[str, int] = {}
        self._tenant_counter = 0

        self.alert_feed = AlertFeed()
        self.repository = PolicyRepository(self.ledger, self.tokens[ComponentRole.DS])
        self.information = InformationPoint(clock, self._environment_fact)
        self.monitor = RuntimeMonitor(self.ledger, self.tokens[ComponentRole.FRM],
                                      clock, self.repository,
                                      self.alert_feed.raise_alert)
        self.iwm = WorkloadManager(self.ledger, self.tokens[ComponentRole.IWM],
                                   hub, self._write_offer_snapshot)
        self.masking = MaskingEngine(rng=rng, ledger=self.ledger,
                                     dm_token=self.tokens[ComponentRole.DM],
                                     clock=clock)
        self.masking.add_key("fed-default", rng.randbytes(32))
        self.anonymizer = Anonymizer(self.ledger, self.tokens[ComponentRole.ANM],
                                     clock, rng)
        self.peg = EnforcementGateway(
            self.identity, self.repository, self.information,
            event_sink=self.monitor.record_event,
            provider_invoker=self._invoke_provider,
            obligation_applier=self._apply_obligation)

        self.providers: dict[str, ProviderFn] = {}
        self.sla_policies: dict[str, list[SlaPolicy]] = {}
        self.grants: dict[tuple[str, str], Grant] = {}
        self._pending_offers: dict[str, tuple[WorkloadRequest, list[ServiceOffer]]] = {}
        self._breach_notified: dict[str, int] = {}

    # ------------------------------------------------------------------ setup

    @classmethod
    def create(cls, hub: SimCloudHub, founders: list[str], sfac: Sfac,
               clock: Optional[SimClock] = None, seed: int = 0,
               ledger_path: Optional[Path] = None) -> "Federation":
        """Phase-0 bootstrap: prerequisite checks, identity federation, the
        genesis contract and the infrastructure tenant."""
        if len(founders) < 2:
            raise TooFewFounders(f"{len(founders)} founders; at least 2 required")
        clock = clock or SimClock()
        rng = random.Random(seed)
        clouds = [hub.cloud(c) for c in founders]
        for cloud in clouds:
            MemberCloud(cloud.cloud_id,
                        frozenset(cloud.capabilities)).check_prerequisites()

        fed = cls(hub, sfac, clock, rng, ledger_path)
        for cloud in clouds:
            fed.identity.federate_idp(cloud.cloud_id, cloud.idp_descriptor())

        sections = []
        for cloud in clouds:
            fed._bootstrap_cloud(cloud, CORE_CONTAINERS)
            sections.append(fed._carve_section(cloud.cloud_id))
        infra = Tenant("tenant-infra", TenantKind.INFRASTRUCTURE, tuple(sections),
                       services=frozenset({CORE_SERVICE, NETWORK_SERVICE,
                                           ACCESS_SERVICE}))
        infra.validate(set(founders))

        fed.ledger.genesis(sfac.encode(), timestamp=clock.now())
        for cloud in clouds:
            fed.members[cloud.cloud_id] = MemberCloud(
                cloud.cloud_id, frozenset(cloud.capabilities))
        fed.tenants[infra.tenant_id] = infra
        fed._assigned_sections |= {s.section_id for s in sections}

        records = [fed._membership_record(c.cloud_id) for c in clouds]
        records.append(fed._tenant_record(infra))
        fed._append_as_fam(records)
        fed._register_sla_appointments()
        return fed

    def _register_sla_appointments(self) -> None:
        for cloud_id, docs in self.sfac.sla_appointments.items():
            for doc in docs:
                policy = SlaPolicy.from_doc(doc)
                self.sla_policies.setdefault(policy.service_id, []).append(policy)

    def _bootstrap_cloud(self, cloud: SimCloud, containers: tuple[str, ...]) -> None:
        cloud.open_setup_channel()
        try:
            for name in containers:
                cloud.deploy_container(name)
        finally:
            if cloud.channel_open:
                cloud.close_setup_channel()

    # ------------------------------------------------------------- primitives

    def _fam_token(self):
        return self.tokens[ComponentRole.FAM]

    def _append_as_fam(self, records: list[GovernanceRecord]) -> int:
        return self.ledger.append(self._fam_token(), records,
                                  timestamp=self.clock.now())

    def _next_seq(self, kind: RecordKind, key: str) -> int:
        return self.ledger.next_seq(self._fam_token(), kind, key)

    def _membership_record(self, cloud_id: str,
                           status: MemberStatus = MemberStatus.ACTIVE) -> GovernanceRecord:
        blocks = self.ledger.blocks()
        contract = blocks[0].records[0] if blocks else None
        payload = canonical.canonical_bytes({
            "cloud_id": cloud_id,
            "status": status.value,
            "contract_key": CONTRACT_KEY,
            "contract_digest": hashlib.sha256(
                contract.payload if contract else b"").hexdigest(),
        })
        return GovernanceRecord(RecordKind.MEMBERSHIP, cloud_id, payload, "FAM",
                                self._next_seq(RecordKind.MEMBERSHIP, cloud_id))

    def _tenant_record(self, tenant: Tenant) -> GovernanceRecord:
        return GovernanceRecord(
            RecordKind.TENANT_CONFIG, tenant.tenant_id,
            canonical.canonical_bytes(tenant.to_doc()), "FAM",
            self._next_seq(RecordKind.TENANT_CONFIG, tenant.tenant_id))

    def _carve_section(self, cloud_id: str, units: Optional[int] = None) -> Section:
        count = self._section_counter.get(cloud_id, 0) + 1
        self._section_counter[cloud_id] = count
        return Section(f"sec-{cloud_id}-{count}", cloud_id,
                       units if units is not None else self.sfac.assets.get(cloud_id, 4),
                       network=f"net-{cloud_id}")

    def _environment_fact(self, name: str) -> Optional[str]:
        if name == "member_count":
            return str(sum(1 for m in self.members.values()
                           if m.status is MemberStatus.ACTIVE))
        if name == "federation_id":
            return self.sfac.federation_id
        return None

    def _write_offer_snapshot(self, offer: ServiceOffer) -> None:
        record = GovernanceRecord(
            RecordKind.SERVICE, offer.service_id, offer.encode(), "FAM",
            self._next_seq(RecordKind.SERVICE, offer.service_id))
        self._append_as_fam([record])

    def active_members(self) -> set[str]:
        return {c for c, m in self.members.items() if m.status is MemberStatus.ACTIVE}

    def check_tenant_invariants(self) -> None:
        for tenant in self.tenants.values():
            tenant.validate(self.active_members())

    # -------------------------------------------------------- phase 1: joining

    def join_member(self, cloud_id: str, credentials: dict) -> dict:
        """Figure-6 flow: authenticate, check prerequisites, configure the
        infrastructure tenant, then commit membership evidence and notify.
        Any pre-commit failure rolls everything back."""
        with self._phase_lock:
            if not self.sfac.open:
                raise FederationClosed(self.sfac.federation_id)
            if cloud_id in self.members and \
                    self.members[cloud_id].status is MemberStatus.ACTIVE:
                raise InvariantViolation(f"{cloud_id} is already a member")
            if not credentials.get("sfac_signed", False):
                raise AuthFailed("the federation contract was not countersigned")
            cloud = self.hub.cloud(cloud_id)

            undo: list[Callable[[], None]] = []
            try:
                if not self.identity.is_federated(cloud_id):
                    self.identity.federate_idp(cloud_id, cloud.idp_descriptor())
                    undo.append(lambda: self.identity.defederate_idp(cloud_id))
                try:
                    token = self.identity.authenticate(
                        cloud_id, credentials["user"], credentials["credential"])
                    self.identity.validate(token)
                except Exception as exc:
                    raise AuthFailed(str(exc)) from exc

                member = MemberCloud(cloud_id, frozenset(cloud.capabilities))
                member.check_prerequisites()

                infra = self.tenants["tenant-infra"]
                section = self._carve_section(cloud_id)
                grown = replace(infra, sections=infra.sections + (section,))
                self.configure_sections(cloud_id, grown)
                grown.validate(self.active_members() | {cloud_id})

                self.tenants["tenant-infra"] = grown
                self._assigned_sections.add(section.section_id)
                self.members[cloud_id] = member
                undo.append(lambda: self._forget_member(cloud_id, infra,
                                                        section.section_id))

                self._append_as_fam([self._membership_record(cloud_id),
                                     self._tenant_record(grown)])
            except Exception:
                for action in reversed(undo):
                    action()
                raise
            self._notify(cloud_id, "enrolment")
            return {"cloud_id": cloud_id, "status": MemberStatus.ACTIVE.value,
                    "sections": len(self.tenants["tenant-infra"].sections)}

    def _forget_member(self, cloud_id: str, previous_infra: Tenant,
                       section_id: str) -> None:
        self.members.pop(cloud_id, None)
        self.tenants["tenant-infra"] = previous_infra
        self._assigned_sections.discard(section_id)

    def _notify(self, cloud_id: str, what: str) -> None:
        """Post-commit notification through the adapter; failures alert
        instead of unwinding the committed phase."""
        try:
            self.hub.cloud(cloud_id).exchange("notify", about=what)
        except Exception as exc:
            self.alert_feed.raise_alert(Alert(
                AlertKind.OPERATIONS, Severity.WARN, subject=cloud_id,
                message=f"notification of {what} failed: {exc}",
                timestamp=self.clock.now()))

    def configure_sections(self, cloud_id: str, tenant: Tenant) -> None:
        """The ten-step configurator exchange (6.1 .. 6.10). A failure at any
        step tears the setup channel down and aborts; the exchange is
        idempotent per (cloud, tenant)."""
        cloud = self.hub.cloud(cloud_id)
        step = "6.1"
        try:
            cloud.open_setup_channel()
            step = "6.2"
            cloud.exchange("connect_section", tenant=tenant.tenant_id)
            step = "6.3"
            cloud.exchange("section_connected", tenant=tenant.tenant_id)
            step = "6.4"
            cloud.exchange("collect_section_info")
            step = "6.5"
            cloud.exchange("plan_services", services=ACCESS_CONTAINER)
            step = "6.6"
            cloud.exchange("send_actions")
            step = "6.7"
            cloud.deploy_container(ACCESS_CONTAINER)
            step = "6.8"
            cloud.exchange("config_ack")
            step = "6.9"
            cloud.close_setup_channel()
            step = "6.10"
            cloud.exchange("configuration_done")
        except Exception as exc:
            if cloud.channel_open:
                try:
                    cloud.close_setup_channel()  # teardown of the setup channel
                except Exception:
                    pass
            raise ConfigurationFailed(f"step {step} on {cloud_id}: {exc}") from exc

    # ----------------------------------------------------- phase 2: publishing

    def publish_service(self, auth: AuthToken, offer: ServiceOffer,
                        access_policies: list[Policy],
                        sla_policies: Optional[list[SlaPolicy]] = None,
                        admin_policy: Optional[AdminPolicy] = None,
                        provider: Optional[ProviderFn] = None,
                        provider_data: Optional[dict] = None) -> dict:
        with self._phase_lock:
            principal = self._authenticated_admin(auth)
            if principal.home_cloud != offer.provider_cloud:
                raise AuthFailed(
                    f"{principal.id} cannot publish for {offer.provider_cloud}")
            member = self.members.get(offer.provider_cloud)
            if member is None or member.status is not MemberStatus.ACTIVE:
                raise InvariantViolation(f"{offer.provider_cloud} is not an "
                                         "active member")

            problems = validate_policy_syntax([p.to_doc() for p in access_policies])
            problems += self._validate_sla_docs(sla_policies or [])
            if problems:
                raise PolicyInvalid(problems)

            staged_tenant: Optional[Tenant] = None
            records: list[GovernanceRecord] = []
            if offer.tenant in self.tenants:
                tenant = self.tenants[offer.tenant]
                if tenant.kind is TenantKind.INFRASTRUCTURE:
                    raise InvariantViolation(
                        "services are published on operational tenants")
                if tenant.owner != offer.provider_cloud:
                    raise InvariantViolation(
                        f"tenant {tenant.tenant_id} is owned by {tenant.owner}, "
                        f"not {offer.provider_cloud}")
            else:
                section = self._carve_section(offer.provider_cloud)
                tenant = Tenant(offer.tenant, TenantKind.OP_SEGREGATED, (section,),
                                owner=offer.provider_cloud,
                                services=frozenset({ACCESS_SERVICE}))
                tenant.validate(self.active_members())
                self.configure_sections(offer.provider_cloud, tenant)
                staged_tenant = tenant

            if offer.characteristics.get("impl", "").startswith("smc"):
                checked = replace(tenant, hosts_smc=True)
                checked.validate(self.active_members())
                tenant = checked
                if staged_tenant is not None:
                    staged_tenant = checked

            if staged_tenant is not None:
                records.append(GovernanceRecord(
                    RecordKind.TENANT_CONFIG, tenant.tenant_id,
                    canonical.canonical_bytes(tenant.to_doc()), "FAM",
                    self._next_seq(RecordKind.TENANT_CONFIG, tenant.tenant_id)))
            records.append(GovernanceRecord(
                RecordKind.SERVICE, offer.service_id, offer.encode(), "FAM",
                self._next_seq(RecordKind.SERVICE, offer.service_id)))
            records.append(GovernanceRecord(
                RecordKind.ACCESS_POLICY, offer.service_id,
                encode_policy_record(access_policies, admin_policy), "FAM",
                self._next_seq(RecordKind.ACCESS_POLICY, offer.service_id)))
            records.append(GovernanceRecord(
                RecordKind.SLA_POLICY, offer.service_id,
                canonical.canonical_bytes(
                    [p.to_doc() for p in (sla_policies or [])]), "FAM",
                self._next_seq(RecordKind.SLA_POLICY, offer.service_id)))

            self._append_as_fam(records)
            if staged_tenant is not None:
                self.tenants[tenant.tenant_id] = tenant
                self._assigned_sections |= {s.section_id for s in tenant.sections}
            else:
                self.tenants[tenant.tenant_id] = tenant
            self.sla_policies[offer.service_id] = list(sla_policies or [])
            self.providers[offer.service_id] = provider or self._default_provider(
                offer, provider_data)
            self._notify(offer.provider_cloud, f"service {offer.service_id} published")
            return {"service_id": offer.service_id, "tenant": tenant.tenant_id}

    @staticmethod
    def _validate_sla_docs(policies: list[SlaPolicy]) -> list[str]:
        problems = []
        for i, policy in enumerate(policies):
            if policy.threshold < 0:
                problems.append(f"sla[{i}]: negative threshold")
        return problems

    def _authenticated_admin(self, auth: AuthToken) -> Principal:
        try:
            principal = self.identity.validate(auth)
        except Exception as exc:
            raise AuthFailed(str(exc)) from exc
        if not isinstance(principal, Principal):
            raise AuthFailed("a component token cannot administer the federation")
        if principal.kind not in (PrincipalKind.MEMBER_CLOUD_ADMIN,
                                  PrincipalKind.TENANT_ADMIN):
            raise AuthFailed(f"{principal.id} is not an administrator")
        return principal

    def _default_provider(self, offer: ServiceOffer,
                          provider_data: Optional[dict]) -> ProviderFn:
        impl = offer.characteristics.get("impl", "echo")
        if impl == "echo":
            def echo(action: str, payload: object) -> object:
                return canonical.canonical_loads(canonical.canonical_dumps(payload))
            return echo
        if impl == "dataset":
            data = provider_data or {"columns": [], "rows": []}

            def dataset_provider(action: str, payload: object) -> object:
                return canonical.canonical_loads(canonical.canonical_dumps(data))
            return dataset_provider
        if impl in ("smc_sum", "smc_mean"):
            tenant_id = offer.tenant
            op = AggregateOp.SUM if impl == "smc_sum" else AggregateOp.MEAN

            def smc_provider(action: str, payload: object) -> object:
                tenant = self.tenants[tenant_id]
                clouds = sorted(tenant.clouds())[:3]
                deployment = SmcDeployment(
                    tenant_id, tuple((i, c) for i, c in enumerate(clouds)))
                inputs = [int(v) for v in payload.get("inputs", [])]
                result = smc_aggregate(inputs, op, deployment, self.rng)
                if op is AggregateOp.MEAN:
                    frac = result.mean
                    return {"mean": [frac.numerator, frac.denominator],
                            "count": result.count}
                return {"sum": result.total, "count": result.count}
            return smc_provider
        raise PolicyInvalid([f"unknown service implementation {impl!r}"])

    # -------------------------------------------------------- phase 3: leaving

    def leave_member(self, cloud_id: str, forced: bool = False,
                     auth: Optional[AuthToken] = None) -> dict:
        """Release acquired services, deallocate owned tenants, tombstone the
        member's governance records, notify. Forced leaving skips
        authentication and starts directly at the deallocation step."""
        with self._phase_lock:
            member = self.members.get(cloud_id)
            if member is None or member.status is not MemberStatus.ACTIVE:
                raise InvariantViolation(f"{cloud_id} is not an active member")
            if not forced:
                principal = self._authenticated_admin(auth)
                if principal.home_cloud != cloud_id:
                    raise AuthFailed(f"{principal.id} cannot resign {cloud_id}")

            acquired = [g for g in self.grants.values()
                        if g.consumer_cloud == cloud_id]
            owned_tenants = [t for t in self.tenants.values()
                             if t.owner == cloud_id]
            owned_tenant_ids = {t.tenant_id for t in owned_tenants}
            hosted = [g for g in self.grants.values()
                      if g.receipt.offer.tenant in owned_tenant_ids]

            # adapter interactions first; nothing destructive has happened yet
            self._deallocate_with_retry(cloud_id, owned_tenants)
            self.hub.cloud(cloud_id).exchange("clean_platform_data")

            records: list[GovernanceRecord] = []
            fam = self._fam_token()
            returned: dict[str, int] = {}
            for grant in acquired:
                if grant.receipt.offer.provider_cloud != cloud_id:
                    returned[grant.service_id] = (returned.get(grant.service_id, 0)
                                                  + grant.receipt.demand)
            for service_id, demand in sorted(returned.items()):
                latest = self.ledger.get_latest(fam, RecordKind.SERVICE, service_id)
                if latest is None:
                    continue
                offer = ServiceOffer.from_doc(
                    canonical.canonical_loads(latest.payload.decode("utf-8")))
                if offer.provider_cloud == cloud_id:
                    continue
                updated = replace(offer, capacity=offer.capacity + demand)
                records.append(GovernanceRecord(
                    RecordKind.SERVICE, service_id, updated.encode(), "FAM",
                    self._next_seq(RecordKind.SERVICE, service_id)))

            for kind in (RecordKind.SERVICE, RecordKind.ACCESS_POLICY,
                         RecordKind.SLA_POLICY):
                for key, record in sorted(
                        self.ledger.latest_by_kind(fam, kind).items()):
                    if self._record_belongs_to(kind, record, cloud_id,
                                               owned_tenant_ids):
                        records.append(tombstone_of(record, "FAM"))
            for tenant in owned_tenants:
                latest = self.ledger.get_latest(fam, RecordKind.TENANT_CONFIG,
                                                tenant.tenant_id)
                if latest is not None:
                    records.append(tombstone_of(latest, "FAM"))

            infra = self.tenants["tenant-infra"]
            shrunk = replace(infra, sections=tuple(
                s for s in infra.sections if s.cloud_id != cloud_id))
            shrunk.validate(self.active_members() - {cloud_id})
            records.append(self._tenant_record(shrunk))

            membership = self.ledger.get_latest(fam, RecordKind.MEMBERSHIP, cloud_id)
            records.append(tombstone_of(membership, "FAM"))

            self._append_as_fam(records)

            # post-commit teardown of live resources and state
            for grant in acquired + [g for g in hosted if g not in acquired]:
                self._teardown_grant(grant)
            for tenant in owned_tenants:
                for section in tenant.sections:
                    self._assigned_sections.discard(section.section_id)
                self.tenants.pop(tenant.tenant_id, None)
            for record in records:
                if record.tombstone and record.kind is RecordKind.SERVICE:
                    self.providers.pop(record.key, None)
                    self.sla_policies.pop(record.key, None)
            for section in infra.sections:
                if section.cloud_id == cloud_id:
                    self._assigned_sections.discard(section.section_id)
            self.tenants["tenant-infra"] = shrunk
            member.status = MemberStatus.LEFT
            self.identity.defederate_idp(cloud_id)
            self._breach_notified.pop(cloud_id, None)
            self._notify(cloud_id, "leaving")
            return {"cloud_id": cloud_id, "status": member.status.value,
                    "forced": forced}

    def _record_belongs_to(self, kind: RecordKind, record: GovernanceRecord,
                           cloud_id: str, owned_tenants: set[str]) -> bool:
        if kind is RecordKind.SERVICE:
            offer = ServiceOffer.from_doc(
                canonical.canonical_loads(record.payload.decode("utf-8")))
            return offer.provider_cloud == cloud_id
        # policies are keyed by service id; tie them to the provider's services
        fam = self._fam_token()
        service = self.ledger.get_latest(fam, RecordKind.SERVICE, record.key)
        if service is None:
            return False
        offer = ServiceOffer.from_doc(
            canonical.canonical_loads(service.payload.decode("utf-8")))
        return offer.provider_cloud == cloud_id

    def _deallocate_with_retry(self, cloud_id: str, tenants: list[Tenant]) -> None:
        cloud = self.hub.cloud(cloud_id)
        for tenant in tenants:
            for attempt in (1, 2):
                try:
                    cloud.exchange("deallocate_tenant", tenant=tenant.tenant_id)
                    break
                except Exception as exc:
                    if attempt == 2:
                        self.alert_feed.raise_alert(Alert(
                            AlertKind.OPERATIONS, Severity.CRITICAL,
                            subject=cloud_id,
                            message=f"deallocation of {tenant.tenant_id} failed "
                                    f"twice: {exc}",
                            timestamp=self.clock.now()))
                        raise DeallocationFailed(str(exc)) from exc

    def _teardown_grant(self, grant: Grant) -> None:
        cloud = self.hub.cloud(grant.receipt.offer.provider_cloud)
        for rid in grant.receipt.resource_ids:
            try:
                if rid.startswith("vm-") and rid in cloud.vms:
                    cloud.destroy_vm(rid)
                elif rid.startswith("access:"):
                    cloud.exchange("close_access", grant=rid)
            except Exception as exc:
                self.alert_feed.raise_alert(Alert(
                    AlertKind.OPERATIONS, Severity.WARN,
                    subject=grant.receipt.offer.provider_cloud,
                    message=f"teardown of {rid} failed: {exc}",
                    timestamp=self.clock.now()))
        self.grants.pop((grant.consumer_id, grant.service_id), None)

    # -------------------------------------------------------- phase 4: request

    def request_service(self, auth: AuthToken,
                        request: WorkloadRequest) -> list[ServiceOffer]:
        principal = self._consumer(auth)
        offers = self.iwm.rank(request, principal.subject_attributes(),
                               self.repository.prp_fetch,
                               self.information.standard_environment())
        self._pending_offers[principal.id] = (request, offers)
        return offers

    def select_offer(self, auth: AuthToken, service_id: str) -> Grant:
        principal = self._consumer(auth)
        pending = self._pending_offers.get(principal.id)
        if pending is None:
            raise InvalidChoice("no open service request for this consumer")
        request, offers = pending
        chosen = next((o for o in offers if o.service_id == service_id), None)
        if chosen is None:
            raise InvalidChoice(f"{service_id} was not among the offered services")
        plan = self.iwm.build_plan(chosen, request.demand, principal.id)
        receipt = self.iwm.execute(plan)
        grant = Grant(principal.id, principal.home_cloud, service_id, receipt)
        self.grants[(principal.id, service_id)] = grant
        del self._pending_offers[principal.id]
        return grant

    def _consumer(self, auth: AuthToken) -> Principal:
        try:
            principal = self.identity.validate(auth)
        except Exception as exc:
            raise AuthFailed(str(exc)) from exc
        if not isinstance(principal, Principal):
            raise AuthFailed("component tokens cannot consume services")
        return principal

    # ---------------------------------------------------------- phase 5: usage

    def use_service(self, auth: AuthToken, service_id: str, action: str,
                    payload: object) -> object:
        principal = self._consumer(auth)
        grant = self.grants.get((principal.id, service_id))
        if grant is None:
            raise NoGrant(f"{principal.id} holds no grant for {service_id}")
        offer = grant.receipt.offer
        request = build_access_request(principal.subject_attributes(), offer,
                                       PHASE_USAGE,
                                       self.information.standard_environment(),
                                       action=action)
        outcome = self.peg.peg_enforce(auth, request, payload)
        if outcome.decision.outcome is not Outcome.PERMIT:
            raise Unauthorized(
                f"usage {outcome.decision.outcome.value} for {service_id}")
        return outcome.result

    def _invoke_provider(self, service_id: str, action: str,
                         payload: object) -> object:
        provider = self.providers.get(service_id)
        if provider is None:
            raise UnknownService(service_id)
        offer = self.iwm.offer(service_id)
        self.hub.cloud(offer.provider_cloud).bus_call(
            source_tenant="tenant-infra", target_tenant=offer.tenant,
            endpoint=ACCESS_CONTAINER)
        return provider(action, payload)

    def _apply_obligation(self, invocation, result: object) -> object:
        if invocation.dts == "DM":
            policy = MaskingPolicy.from_doc(
                {"rules": invocation.params.get("rules", []),
                 "strict": invocation.params.get("strict", True)})
            return self.masking.mask(result, policy)
        if invocation.dts == "ANM":
            return self._anonymize_result(result, invocation.params)
        raise PolicyInvalid([f"unknown dts {invocation.dts!r}"])

    def _anonymize_result(self, result: object, params: dict) -> object:
        dataset = Dataset.from_doc(result)
        # hierarchy documents arrive through JSON, where keys are text; align
        # the quasi-identifier values with that before generalizing
        qi_positions = [dataset.column_index(n) for n in dataset.qi_columns()]
        dataset = Dataset(
            [replace(c, type="text") if c.role is ColumnRole.QUASI_IDENTIFIER
             else c for c in dataset.columns],
            [tuple(str(v) if i in qi_positions else v for i, v in enumerate(row))
             for row in dataset.rows])
        k = int(params.get("k", 2))
        hierarchies = {}
        for name in dataset.qi_columns():
            levels = params.get("hierarchies", {}).get(name)
            if levels:
                hierarchies[name] = GeneralizationHierarchy(name, levels)
            else:
                hierarchies[name] = GeneralizationHierarchy.suppression(
                    name, dataset.values(name))
        return k_anonymize(dataset, k, hierarchies).dataset.to_doc()

    # -------------------------------------------------------------- tenants

    def create_tenant(self, owner_cloud: str, kind: TenantKind,
                      sections: list[Section],
                      tenant_id: Optional[str] = None,
                      hosts_smc: bool = False) -> Tenant:
        with self._phase_lock:
            member = self.members.get(owner_cloud)
            if member is None or member.status is not MemberStatus.ACTIVE:
                raise InvariantViolation(f"{owner_cloud} is not an active member")
            for section in sections:
                if section.section_id in self._assigned_sections:
                    raise SectionUnavailable(section.section_id)
            self._tenant_counter += 1
            tenant = Tenant(tenant_id or f"tenant-{self._tenant_counter}",
                            kind, tuple(sections), owner=owner_cloud,
                            services=frozenset({ACCESS_SERVICE}),
                            hosts_smc=hosts_smc)
            tenant.validate(self.active_members())
            for cloud_id in sorted(tenant.clouds()):
                self.configure_sections(cloud_id, tenant)
            self._append_as_fam([self._tenant_record(tenant)])
            self.tenants[tenant.tenant_id] = tenant
            self._assigned_sections |= {s.section_id for s in sections}
            return tenant

    def sections_for(self, cloud_ids: list[str],
                     units: Optional[int] = None) -> list[Section]:
        return [self._carve_section(cloud_id, units) for cloud_id in cloud_ids]

    # ------------------------------------------------------- policy amendment

    def amend_policies(self, auth: AuthToken, service_id: str,
                       new_policies: list[Policy]) -> dict:
        with self._phase_lock:
            principal = self._authenticated_admin(auth)
            fam = self._fam_token()
            service = self.ledger.get_latest(fam, RecordKind.SERVICE, service_id)
            if service is None:
                raise UnknownService(service_id)
            offer = ServiceOffer.from_doc(
                canonical.canonical_loads(service.payload.decode("utf-8")))
            old = self.repository.prp_fetch(service_id)
            admin = self.repository.fetch_admin(service_id)
            check = pap_check_amendment(principal, service_id, old, new_policies,
                                        admin, offer.provider_cloud)
            if not check.allowed:
                raise Unauthorized(f"amendment denied: {check.reason}")
            problems = validate_policy_syntax([p.to_doc() for p in new_policies])
            if problems:
                raise PolicyInvalid(problems)
            record = GovernanceRecord(
                RecordKind.ACCESS_POLICY, service_id,
                encode_policy_record(new_policies, admin), "FAM",
                self._next_seq(RecordKind.ACCESS_POLICY, service_id))
            self._append_as_fam([record])
            return {"service_id": service_id, "policies": len(new_policies)}

    # ------------------------------------------------------- timed alert rule

    def forced_leave_scan(self, now: Optional[int] = None) -> list[dict]:
        """Notify on a detected breach; force the member out once the breach
        has persisted beyond the contract's grace period."""
        now = self.clock.now() if now is None else now
        actions: list[dict] = []
        for service_id, policies in sorted(self.sla_policies.items()):
            fam = self._fam_token()
            service = self.ledger.get_latest(fam, RecordKind.SERVICE, service_id)
            if service is None:
                continue
            offer = ServiceOffer.from_doc(
                canonical.canonical_loads(service.payload.decode("utf-8")))
            member = self.members.get(offer.provider_cloud)
            if member is None or member.status is not MemberStatus.ACTIVE:
                continue
            violating = any(not self.monitor.sla_check(p, now).compliant
                            for p in policies)
            cloud_id = offer.provider_cloud
            if not violating:
                if cloud_id in self._breach_notified:
                    del self._breach_notified[cloud_id]
                    actions.append({"action": "cleared", "member": cloud_id})
                continue
            notified = self._breach_notified.get(cloud_id)
            if notified is None:
                self._breach_notified[cloud_id] = now
                self.alert_feed.raise_alert(Alert(
                    AlertKind.SLA_VIOLATION, Severity.WARN, subject=cloud_id,
                    message=f"breach detected on {service_id}; countermeasures "
                            f"requested within {self.sfac.grace_ms} ms",
                    timestamp=now))
                actions.append({"action": "notified", "member": cloud_id,
                                "service": service_id})
            elif now - notified >= self.sfac.grace_ms:
                try:
                    self.leave_member(cloud_id, forced=True)
                    self.alert_feed.raise_alert(Alert(
                        AlertKind.SLA_VIOLATION, Severity.CRITICAL,
                        subject=cloud_id,
                        message=f"forced leaving after {now - notified} ms of "
                                f"unresolved breach on {service_id}",
                        timestamp=now))
                    actions.append({"action": "forced_leave", "member": cloud_id})
                except DeallocationFailed as exc:
                    actions.append({"action": "forced_leave_failed",
                                    "member": cloud_id, "error": str(exc)})
            else:
                actions.append({"action": "waiting", "member": cloud_id,
                                "since": notified})
        return actions

    # ------------------------------------------------------------ termination

    def terminate(self) -> None:
        """Wind the federation down: every member leaves, then the contract
        itself is tombstoned."""
        with self._phase_lock:
            for cloud_id in sorted(self.active_members()):
                self.leave_member(cloud_id, forced=True)
            contract = self.ledger.get_latest(self._fam_token(),
                                              RecordKind.CONTRACT, CONTRACT_KEY)
            if contract is not None:
                self._append_as_fam([tombstone_of(contract, "FAM")])

    # ------------------------------------------------------------------ views

    def alert_feed_since(self, cursor: int = 0) -> list[Alert]:
        return self.alert_feed.since(cursor)

    def member_view(self) -> list[dict]:
        return [{"cloud_id": m.cloud_id, "status": m.status.value,
                 "capabilities": sorted(m.capabilities)}
                for m in sorted(self.members.values(), key=lambda m: m.cloud_id)]

    def tenant_view(self) -> list[dict]:
        return [t.to_doc() for _, t in sorted(self.tenants.items())]

    def service_view(self) -> list[dict]:
        return [o.to_doc() for o in self.iwm.catalog()]

    def sla_report(self, now: Optional[int] = None) -> list[dict]:
        now = self.clock.now() if now is None else now
        report = []
        known_keys = set()
        for service_id, policies in sorted(self.sla_policies.items()):
            for policy in policies:
                known_keys.add(f"{service_id}/{policy.metric}")
                status = self.monitor.sla_check(policy, now)
                report.append({
                    "service_id": service_id, "metric": policy.metric,
                    "comparator": policy.comparator, "threshold": policy.threshold,
                    "compliant": status.compliant, "aggregate": status.aggregate,
                    "since": status.since, "orphan": False,
                    "no_evidence": status.no_evidence,
                })
        fam = self._fam_token()
        for key in sorted(self.ledger.latest_by_kind(fam, RecordKind.SLA_EVIDENCE)):
            if key not in known_keys:
                service_id, _, metric = key.partition("/")
                report.append({"service_id": service_id, "metric": metric,
                               "comparator": None, "threshold": None,
                               "compliant": None, "aggregate": None,
                               "since": None, "orphan": True,
                               "no_evidence": False})
        return report
