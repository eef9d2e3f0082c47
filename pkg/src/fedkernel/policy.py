"""Distributed attribute-based access control.

Five cooperating roles: the decision point (pure deny-overrides evaluation),
the enforcement gateway (token check, attribute resolution, decision,
obligation application, event emission), the repository point (policies from
the ledger), the information point (environment attributes) and the
administration point (who may amend which policy fields).

The policy language is deliberately small: a policy is a conjunction of
attribute predicates plus an effect and optional data-transformation
obligations attached to permits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import canonical
from .errors import (AuthFailed, MalformedPolicy, ObligationFailed,
                     UnknownAttribute, UnknownService)
from .identity import AuthToken, IdentityManager, Principal, PrincipalKind
from .registry import Ledger, RecordKind

NAMESPACES = ("subject", "action", "resource", "environment")
OPERATORS = ("equals", "not-equals", "in-set", "lte", "gte")

PHASE_REQUEST = "REQUEST"
PHASE_USAGE = "USAGE"


class Effect(Enum):
    PERMIT = "PERMIT"
    DENY = "DENY"


class Outcome(Enum):
    PERMIT = "PERMIT"
    DENY = "DENY"
    NOT_APPLICABLE = "NOT_APPLICABLE"


@dataclass(frozen=True)
class AccessRequest:
    subject: dict[str, str]
    action: str
    resource: dict[str, str]
    environment: dict[str, str] = field(default_factory=dict)

    def attribute(self, path: str) -> Optional[str]:
        namespace, _, name = path.partition(".")
        if namespace == "action":
            return self.action if not name else None
        if namespace == "subject":
            return self.subject.get(name)
        if namespace == "resource":
            return self.resource.get(name)
        if namespace == "environment":
            return self.environment.get(name)
        return None

    def to_doc(self) -> dict:
        return {"subject": dict(self.subject), "action": self.action,
                "resource": dict(self.resource), "environment": dict(self.environment)}

    @classmethod
    def from_doc(cls, doc: dict) -> "AccessRequest":
        return cls(subject=dict(doc["subject"]), action=doc["action"],
                   resource=dict(doc["resource"]), environment=dict(doc["environment"]))


@dataclass(frozen=True)
class Predicate:
    path: str
    operator: str
    literal: object  # str for scalar operators, list[str] for in-set

    def matches(self, request: AccessRequest) -> bool:
        value = request.attribute(self.path)
        if value is None:
            return False
        if self.operator == "equals":
            return value == self.literal
        if self.operator == "not-equals":
            return value != self.literal
        if self.operator == "in-set":
            return value in self.literal
        try:
            have, want = float(value), float(self.literal)
        except (TypeError, ValueError):
            return False
        return have <= want if self.operator == "lte" else have >= want

    def to_doc(self) -> dict:
        return {"path": self.path, "operator": self.operator, "literal": self.literal}

    @classmethod
    def from_doc(cls, doc: dict) -> "Predicate":
        literal = doc["literal"]
        return cls(doc["path"], doc["operator"],
                   list(literal) if isinstance(literal, list) else literal)


@dataclass(frozen=True)
class DtsInvocation:
    """A data-transformation obligation: which service, with what parameters."""

    dts: str  # "DM" | "ANM"
    operation: str
    params: dict

    def to_doc(self) -> dict:
        return {"dts": self.dts, "operation": self.operation, "params": self.params}

    @classmethod
    def from_doc(cls, doc: dict) -> "DtsInvocation":
        return cls(doc["dts"], doc["operation"], dict(doc["params"]))


@dataclass(frozen=True)
class Policy:
    id: str
    target: tuple[Predicate, ...]
    effect: Effect
    obligations: tuple[DtsInvocation, ...] = ()
    version: int = 0

    def applicable(self, request: AccessRequest) -> bool:
        return all(p.matches(request) for p in self.target)

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "target": [p.to_doc() for p in self.target],
            "effect": self.effect.value,
            "obligations": [o.to_doc() for o in self.obligations],
            "version": self.version,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Policy":
        return cls(
            id=doc["id"],
            target=tuple(Predicate.from_doc(p) for p in doc["target"]),
            effect=Effect(doc["effect"]),
            obligations=tuple(DtsInvocation.from_doc(o) for o in doc.get("obligations", [])),
            version=int(doc.get("version", 0)),
        )


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    matched_policy_ids: tuple[str, ...]
    obligations: tuple[DtsInvocation, ...]
    policy_version_digest: bytes

    def to_doc(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "matched_policy_ids": list(self.matched_policy_ids),
            "obligations": [o.to_doc() for o in self.obligations],
            "policy_version_digest": self.policy_version_digest.hex(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Decision":
        return cls(
            outcome=Outcome(doc["outcome"]),
            matched_policy_ids=tuple(doc["matched_policy_ids"]),
            obligations=tuple(DtsInvocation.from_doc(o) for o in doc["obligations"]),
            policy_version_digest=bytes.fromhex(doc["policy_version_digest"]),
        )


def policy_set_digest(policies: list[Policy]) -> bytes:
    return canonical.digest([p.to_doc() for p in policies])


# --- syntax validation -----------------------------------------------------------

def validate_policy_syntax(document: object) -> list[str]:
    """Sanity-check a policy document (a policy dict or list of them).

    Returns the list of problems; empty means the document is well formed.
    SMC obligations are rejected here: that service backs providers and is
    never applied to a result.
    """
    problems: list[str] = []
    policies = document if isinstance(document, list) else [document]
    for i, doc in enumerate(policies):
        where = f"policy[{i}]"
        if not isinstance(doc, dict):
            problems.append(f"{where}: not a document")
            continue
        pid = doc.get("id")
        if not pid or not isinstance(pid, str):
            problems.append(f"{where}: missing id")
        effect = doc.get("effect")
        if effect not in (Effect.PERMIT.value, Effect.DENY.value):
            problems.append(f"{where}: unknown effect {effect!r}")
        for j, pred in enumerate(doc.get("target", [])):
            pwhere = f"{where}.target[{j}]"
            if not isinstance(pred, dict):
                problems.append(f"{pwhere}: not a predicate")
                continue
            op = pred.get("operator")
            if op not in OPERATORS:
                problems.append(f"{pwhere}: unknown operator {op!r}")
            path = pred.get("path", "")
            namespace = path.split(".", 1)[0] if path else ""
            if namespace not in NAMESPACES:
                problems.append(f"{pwhere}: unknown namespace {namespace!r}")
            elif namespace != "action" and "." not in path:
                problems.append(f"{pwhere}: {namespace!r} predicate needs an attribute name")
            if op == "in-set" and not isinstance(pred.get("literal"), list):
                problems.append(f"{pwhere}: in-set literal must be a list")
        for j, obl in enumerate(doc.get("obligations", [])):
            owhere = f"{where}.obligations[{j}]"
            if not isinstance(obl, dict):
                problems.append(f"{owhere}: not an obligation")
                continue
            dts = obl.get("dts")
            if dts == "SMC":
                problems.append(f"{owhere}: SMC backs providers and cannot "
                                "transform a result")
            elif dts not in ("DM", "ANM"):
                problems.append(f"{owhere}: unknown dts {dts!r}")
        if doc.get("effect") == Effect.DENY.value and doc.get("obligations"):
            problems.append(f"{where}: obligations are only meaningful on PERMIT")
    return problems


def decode_policies(payload: bytes) -> list[Policy]:
    doc = canonical.canonical_loads(payload.decode("utf-8"))
    return [Policy.from_doc(p) for p in doc.get("policies", [])]


def encode_policy_record(policies: list[Policy],
                         admin: Optional["AdminPolicy"] = None) -> bytes:
    doc = {"policies": [p.to_doc() for p in policies],
           "admin": admin.to_doc() if admin else None}
    return canonical.canonical_bytes(doc)


# --- decision point ------------------------------------------------------------------

def pdp_decide(request: AccessRequest, policies: list[Policy]) -> Decision:
    """Deny-overrides combining over the applicable policies.

    Pure in (request, policies); the digest of the evaluated set travels in
    the decision so the monitor can later re-run the exact evaluation.
    """
    problems = validate_policy_syntax([p.to_doc() for p in policies])
    if problems:
        raise MalformedPolicy("; ".join(problems))
    digest = policy_set_digest(policies)
    denies = [p for p in policies if p.effect is Effect.DENY and p.applicable(request)]
    if denies:
        return Decision(Outcome.DENY, tuple(p.id for p in denies), (), digest)
    permits = [p for p in policies if p.effect is Effect.PERMIT and p.applicable(request)]
    if permits:
        obligations: list[DtsInvocation] = []
        for p in permits:
            for obl in p.obligations:
                if obl not in obligations:
                    obligations.append(obl)
        return Decision(Outcome.PERMIT, tuple(p.id for p in permits),
                        tuple(obligations), digest)
    return Decision(Outcome.NOT_APPLICABLE, (), (), digest)


# --- repository point ----------------------------------------------------------------

class PolicyRepository:
    """Fetches the policies currently in force from the governance ledger."""

    def __init__(self, ledger: Ledger, ds_token: object):
        self._ledger = ledger
        self._token = ds_token

    def prp_fetch(self, service_id: str) -> list[Policy]:
        record = self._ledger.get_latest(self._token, RecordKind.ACCESS_POLICY, service_id)
        if record is None:
            return []
        return decode_policies(record.payload)

    def fetch_admin(self, service_id: str) -> Optional["AdminPolicy"]:
        record = self._ledger.get_latest(self._token, RecordKind.ACCESS_POLICY, service_id)
        if record is None:
            return None
        doc = canonical.canonical_loads(record.payload.decode("utf-8"))
        admin = doc.get("admin")
        return AdminPolicy.from_doc(admin) if admin else None

    def policy_history(self, service_id: str) -> list[list[Policy]]:
        return [decode_policies(r.payload) if not r.tombstone else []
                for r in self._ledger.get_history(self._token, RecordKind.ACCESS_POLICY,
                                                  service_id)]


# --- information point ------------------------------------------------------------------

class InformationPoint:
    """Resolves environment attributes: clock time plus federation facts."""

    def __init__(self, clock, facts: Optional[Callable[[str], Optional[str]]] = None):
        self._clock = clock
        self._facts = facts

    def pip_resolve(self, attribute_path: str, context: Optional[dict] = None) -> str:
        namespace, _, name = attribute_path.partition(".")
        if namespace != "environment":
            raise UnknownAttribute(
                f"{attribute_path}: the information point serves environment only")
        if name == "time":
            return str(self._clock.now())
        if self._facts is not None:
            value = self._facts(name)
            if value is not None:
                return value
        if context and name in context:
            return str(context[name])
        raise UnknownAttribute(attribute_path)

    def standard_environment(self) -> dict[str, str]:
        env = {"time": str(self._clock.now())}
        if self._facts is not None:
            for name in ("member_count",):
                value = self._facts(name)
                if value is not None:
                    env[name] = value
        return env


# --- administration point ----------------------------------------------------------------

@dataclass(frozen=True)
class AdminPolicy:
    service_id: str
    allowed_editors: frozenset[str]  # principal ids or PrincipalKind names
    editable_fields: frozenset[str]  # subset of {"target","effect","obligations","policies"}

    def to_doc(self) -> dict:
        return {"service_id": self.service_id,
                "allowed_editors": sorted(self.allowed_editors),
                "editable_fields": sorted(self.editable_fields)}

    @classmethod
    def from_doc(cls, doc: dict) -> "AdminPolicy":
        return cls(doc["service_id"], frozenset(doc["allowed_editors"]),
                   frozenset(doc["editable_fields"]))


@dataclass(frozen=True)
class AmendmentCheck:
    allowed: bool
    reason: str = ""


def changed_policy_fields(old: list[Policy], new: list[Policy]) -> set[str]:
    """Field-level diff between policy sets; adds/removes count as changing
    the 'policies' set itself."""
    changed: set[str] = set()
    old_by_id = {p.id: p for p in old}
    new_by_id = {p.id: p for p in new}
    if set(old_by_id) != set(new_by_id):
        changed.add("policies")
    for pid in set(old_by_id) & set(new_by_id):
        a, b = old_by_id[pid], new_by_id[pid]
        if a.target != b.target:
            changed.add("target")
        if a.effect != b.effect:
            changed.add("effect")
        if a.obligations != b.obligations:
            changed.add("obligations")
    return changed


def pap_check_amendment(editor: Principal, service_id: str,
                        old: list[Policy], new: list[Policy],
                        admin: Optional[AdminPolicy],
                        owner_cloud: Optional[str]) -> AmendmentCheck:
    """Decide whether ``editor`` may turn ``old`` into ``new``.

    The owning cloud's administrator always may; anyone else needs a grant
    from the admin policy covering every changed field.
    """
    if owner_cloud is None:
        raise UnknownService(service_id)
    if (editor.kind is PrincipalKind.MEMBER_CLOUD_ADMIN
            and editor.home_cloud == owner_cloud):
        return AmendmentCheck(True)
    if admin is None:
        return AmendmentCheck(
            False, f"no admin policy: only the administrator of {owner_cloud} may edit")
    if editor.id not in admin.allowed_editors and \
            editor.kind.value not in admin.allowed_editors:
        return AmendmentCheck(False, f"{editor.id} is not an allowed editor")
    changed = changed_policy_fields(old, new)
    outside = changed - admin.editable_fields
    if outside:
        return AmendmentCheck(
            False, f"fields not editable by grant: {', '.join(sorted(outside))}")
    return AmendmentCheck(True)


# --- enforcement gateway ------------------------------------------------------------------

@dataclass(frozen=True)
class EnforcementOutcome:
    decision: Decision
    result: Optional[object] = None


# Applies one DTS obligation to a provider result; raising aborts delivery.
ObligationApplier = Callable[[DtsInvocation, object], object]
# Invoked on PERMIT during the usage phase: (service_id, action, payload) -> result.
ProviderInvoker = Callable[[str, str, object], object]
# Receives exactly one access event per enforcement, denials included.
EventSink = Callable[[AccessRequest, Decision], None]


class EnforcementGateway:
    """Intercepts every access, decides it, logs it, applies obligations."""

    def __init__(self, identity: IdentityManager, repository: PolicyRepository,
                 information: InformationPoint, event_sink: EventSink,
                 provider_invoker: Optional[ProviderInvoker] = None,
                 obligation_applier: Optional[ObligationApplier] = None):
        self._identity = identity
        self._repository = repository
        self._information = information
        self._event_sink = event_sink
        self._provider_invoker = provider_invoker
        self._obligation_applier = obligation_applier

    def peg_enforce(self, auth: AuthToken, request: AccessRequest,
                    payload: object = None) -> EnforcementOutcome:
        try:
            principal = self._identity.validate(auth)
        except Exception as exc:
            raise AuthFailed(str(exc)) from exc
        if not isinstance(principal, Principal):
            raise AuthFailed("component tokens cannot drive service access")

        service_id = request.resource.get("service_id", "")
        policies = self._repository.prp_fetch(service_id)
        environment = dict(self._information.standard_environment())
        environment.update(request.environment)
        resolved = AccessRequest(subject=request.subject, action=request.action,
                                 resource=request.resource, environment=environment)
        decision = pdp_decide(resolved, policies)
        self._event_sink(resolved, decision)

        phase = resolved.environment.get("phase")
        if decision.outcome is not Outcome.PERMIT:
            return EnforcementOutcome(decision)
        if phase != PHASE_USAGE or self._provider_invoker is None:
            return EnforcementOutcome(decision)

        result = self._provider_invoker(service_id, resolved.action, payload)
        for obligation in decision.obligations:
            if self._obligation_applier is None:
                raise ObligationFailed("no obligation applier wired")
            try:
                result = self._obligation_applier(obligation, result)
            except Exception as exc:
                raise ObligationFailed(
                    f"{obligation.dts}:{obligation.operation}: {exc}") from exc
        return EnforcementOutcome(decision, result)
