"""Line-oriented scenario scripts driving a federation end to end.

One command per line, shell-style tokens, ``#`` comments. A command that
raises records its error; the very next line must then be ``expect error
<Name>`` or the run fails, so scripts cannot silently skip over failures.
Replays are deterministic: the same script and seed produce the same event
log and the same ledger bytes.

Command summary (full grammar in the repository docs):

    seed N | clock-start MS
    cloud ID pool=N [caps=A,B,C]
    user CLOUD UID PW [kind=KIND]
    create-federation FID founders=A,B [grace=MS] [open=BOOL] [assets=A:4,B:6]
    join CLOUD as=UID:PW [signed=BOOL]
    publish SERVICE cloud=C as=UID:PW [tenant=T] capacity=N cost=F avail=F
            [char.K=V ...] [impl=echo|dataset|smc_sum|smc_mean]
            [permit=PRED[+PRED]] [deny=PRED[+PRED]] [obligate=DM:OP:SELECTOR]
            [editors=ID,...] [fields=F,...] [sla=METRIC:CMP:THRESHOLD:WINDOW]
    amend SERVICE as=UID:PW@CLOUD [permit=...] [deny=...]
    leave CLOUD as=UID:PW
    request UID@CLOUD:PW demand=N [objective=OBJ] [need.K=V ...]
    select UID@CLOUD:PW SERVICE
    use UID@CLOUD:PW SERVICE ACTION JSON_PAYLOAD   (payload = raw line tail)
    advance-clock MS | inject-fault CLOUD OP ORDINAL [MSG]
    ingest SERVICE METRIC VALUE | scan | audit | revalidate | terminate
    expect ok | error NAME | members N | status CLOUD S | services N
           | offers N | alerts KIND OP N | ledger-valid | tenant-invariants
           | result-field KEY VALUE
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import audit as audit_mod
from . import canonical
from .clock import SimClock
from .errors import AssertionFailed, FederationError, ParseError
from .identity import Principal, PrincipalKind
from .iwm import Objective, ServiceOffer, WorkloadRequest
from .monitor import AlertKind, SlaPolicy
from .orchestrator import Federation, Sfac
from .policy import AdminPolicy, DtsInvocation, Effect, Policy, Predicate
from .simcloud import CAPABILITIES, SimCloudHub


@dataclass
class ScenarioContext:
    hub: SimCloudHub = field(default_factory=SimCloudHub)
    clock: SimClock = field(default_factory=SimClock)
    seed: int = 0
    federation: Optional[Federation] = None
    ledger_path: Optional[Path] = None
    event_log: list[str] = field(default_factory=list)
    last_error: Optional[BaseException] = None
    error_checked: bool = True
    last_result: object = None
    last_offers: list[ServiceOffer] = field(default_factory=list)

    def fed(self) -> Federation:
        if self.federation is None:
            raise ParseError("no federation created yet")
        return self.federation


def _kv(tokens: list[str]) -> tuple[list[str], dict[str, str]]:
    """Split tokens into positionals and key=value options (repeats kept)."""
    positional: list[str] = []
    options: dict[str, list[str]] = {}
    for token in tokens:
        if "=" in token and not token.startswith("{"):
            key, _, value = token.partition("=")
            options.setdefault(key, []).append(value)
        else:
            positional.append(token)
    return positional, {k: v if len(v) > 1 else v[0] for k, v in options.items()}


def _as_list(value) -> list[str]:
    return value if isinstance(value, list) else [value]


def _parse_predicates(clause: str) -> tuple[Predicate, ...]:
    predicates = []
    for part in clause.split("+"):
        pieces = part.split(":")
        if len(pieces) < 3:
            raise ParseError(f"predicate {part!r} needs path:operator:literal")
        path, operator, literal = pieces[0], pieces[1], ":".join(pieces[2:])
        value: object = literal.split("|") if operator == "in-set" else literal
        predicates.append(Predicate(path, operator, value))
    return tuple(predicates)


def _parse_obligation(clause: str) -> DtsInvocation:
    pieces = clause.split(":")
    if pieces[0] == "DM":
        if len(pieces) != 3:
            raise ParseError(f"obligation {clause!r} needs DM:OP:SELECTOR")
        params = {"rules": [{"selector": pieces[2], "op": pieces[1], "params": {}}]}
        if pieces[1] in ("ENCRYPT", "FPE"):
            params["rules"][0]["params"]["key_id"] = "fed-default"
        return DtsInvocation("DM", "mask", params)
    if pieces[0] == "ANM":
        if len(pieces) != 3 or pieces[1] != "k":
            raise ParseError(f"obligation {clause!r} needs ANM:k:N")
        return DtsInvocation("ANM", "anonymize", {"k": int(pieces[2])})
    return DtsInvocation(pieces[0], pieces[1] if len(pieces) > 1 else "",
                         {"raw": clause})


def _parse_policies(options: dict, service_id: str) -> list[Policy]:
    policies = []
    counter = 0
    obligations = tuple(_parse_obligation(c)
                        for c in _as_list(options.get("obligate", []) or []))
    for effect, key in ((Effect.PERMIT, "permit"), (Effect.DENY, "deny")):
        for clause in _as_list(options.get(key, []) or []):
            counter += 1
            policies.append(Policy(
                id=f"{service_id}-p{counter}",
                target=_parse_predicates(clause),
                effect=effect,
                obligations=obligations if effect is Effect.PERMIT else ()))
    return policies


def _parse_sla(clauses: list[str], service_id: str, grace_ms: int) -> list[SlaPolicy]:
    policies = []
    for clause in clauses:
        metric, comparator, threshold, window = clause.split(":")
        policies.append(SlaPolicy(service_id, metric, comparator,
                                  float(threshold), int(window), grace_ms))
    return policies


def _auth(ctx: ScenarioContext, spec: str):
    """``uid@cloud:pw`` -> auth token."""
    name, _, credential = spec.partition(":")
    user, _, cloud = name.partition("@")
    if not cloud or not credential:
        raise ParseError(f"credential spec {spec!r} needs uid@cloud:pw")
    return ctx.fed().identity.authenticate(cloud, user, credential)


class ScenarioRunner:
    def __init__(self, ledger_path: Optional[Path] = None):
        self.ledger_path = ledger_path

    # -- command implementations --------------------------------------------

    def _cmd_seed(self, ctx, args):
        ctx.seed = int(args[0])

    def _cmd_clock_start(self, ctx, args):
        ctx.clock = SimClock(int(args[0]))

    def _cmd_cloud(self, ctx, args):
        positional, options = _kv(args)
        caps = tuple(options.get("caps", ",".join(CAPABILITIES)).split(","))
        caps = tuple(c for c in caps if c)
        ctx.hub.add_cloud(positional[0], int(options["pool"]), capabilities=caps)

    def _cmd_user(self, ctx, args):
        positional, options = _kv(args)
        cloud_id, uid, pw = positional[0], positional[1], positional[2]
        kind = PrincipalKind(options.get("kind", "SERVICE_USER"))
        principal = Principal(uid, kind, cloud_id)
        ctx.hub.cloud(cloud_id).add_user(uid, pw, principal)

    def _cmd_create_federation(self, ctx, args):
        positional, options = _kv(args)
        founders = options["founders"].split(",")
        assets = {}
        for clause in _as_list(options.get("assets", []) or []):
            for pair in clause.split(","):
                cloud, _, units = pair.partition(":")
                assets[cloud] = int(units)
        sfac = Sfac(
            federation_id=positional[0],
            founders=tuple(founders),
            assets=assets or {c: 4 for c in founders},
            grace_ms=int(options.get("grace", 300_000)),
            open=options.get("open", "true").lower() != "false")
        ctx.federation = Federation.create(
            ctx.hub, founders, sfac, clock=ctx.clock, seed=ctx.seed,
            ledger_path=self.ledger_path)

    def _cmd_join(self, ctx, args):
        positional, options = _kv(args)
        user, _, pw = options["as"].partition(":")
        credentials = {"user": user, "credential": pw,
                       "sfac_signed": options.get("signed", "true").lower() != "false"}
        ctx.last_result = ctx.fed().join_member(positional[0], credentials)

    def _cmd_publish(self, ctx, args):
        positional, options = _kv(args)
        service_id = positional[0]
        cloud = options["cloud"]
        user, _, pw = options["as"].partition(":")
        auth = ctx.fed().identity.authenticate(cloud, user, pw)
        characteristics = {k[len("char."):]: v for k, v in options.items()
                           if k.startswith("char.") and isinstance(v, str)}
        if "impl" in options:
            characteristics["impl"] = options["impl"]
        offer = ServiceOffer(
            service_id=service_id, provider_cloud=cloud,
            tenant=options.get("tenant", f"tenant-{service_id}"),
            capacity=int(options.get("capacity", 4)),
            unit_cost=float(options.get("cost", 1.0)),
            availability=float(options.get("avail", 0.99)),
            characteristics=characteristics)
        policies = _parse_policies(options, service_id)
        sla = _parse_sla(_as_list(options.get("sla", []) or []), service_id,
                         ctx.fed().sfac.grace_ms)
        admin = None
        if "editors" in options:
            admin = AdminPolicy(service_id,
                                frozenset(options["editors"].split(",")),
                                frozenset(options.get("fields", "").split(","))
                                - {""})
        provider_data = None
        if "data" in options:
            provider_data = canonical.canonical_loads(options["data"])
        ctx.last_result = ctx.fed().publish_service(
            auth, offer, policies, sla, admin, provider_data=provider_data)

    def _cmd_amend(self, ctx, args):
        positional, options = _kv(args)
        service_id = positional[0]
        spec = options["as"]  # uid:pw@cloud
        name, _, cloud = spec.partition("@")
        user, _, pw = name.partition(":")
        auth = ctx.fed().identity.authenticate(cloud, user, pw)
        policies = _parse_policies(options, service_id)
        ctx.last_result = ctx.fed().amend_policies(auth, service_id, policies)

    def _cmd_leave(self, ctx, args):
        positional, options = _kv(args)
        user, _, pw = options["as"].partition(":")
        auth = ctx.fed().identity.authenticate(positional[0], user, pw)
        ctx.last_result = ctx.fed().leave_member(positional[0], auth=auth)

    def _cmd_request(self, ctx, args):
        positional, options = _kv(args)
        auth = _auth(ctx, positional[0])
        need = {k[len("need."):]: v for k, v in options.items()
                if k.startswith("need.") and isinstance(v, str)}
        request = WorkloadRequest(
            consumer=positional[0].split(":")[0],
            required_characteristics=need,
            demand=int(options.get("demand", 1)),
            objective=Objective(options.get("objective", "MIN_COST")),
            w_cost=float(options.get("wcost", 1.0)),
            w_avail=float(options.get("wavail", 1.0)))
        ctx.last_offers = ctx.fed().request_service(auth, request)
        ctx.last_result = [o.service_id for o in ctx.last_offers]

    def _cmd_select(self, ctx, args):
        auth = _auth(ctx, args[0])
        grant = ctx.fed().select_offer(auth, args[1])
        ctx.last_result = {"service_id": grant.service_id,
                           "resources": list(grant.receipt.resource_ids)}

    def _cmd_use(self, ctx, args):
        auth = _auth(ctx, args[0])
        payload = canonical.canonical_loads(args[3]) if len(args) > 3 else {}
        ctx.last_result = ctx.fed().use_service(auth, args[1], args[2], payload)

    def _cmd_advance_clock(self, ctx, args):
        ctx.clock.advance(int(args[0]))

    def _cmd_inject_fault(self, ctx, args):
        message = args[3] if len(args) > 3 else "injected fault"
        ctx.hub.cloud(args[0]).inject_fault(args[1], int(args[2]), message)

    def _cmd_ingest(self, ctx, args):
        ctx.fed().monitor.sla_ingest(args[0], args[1], float(args[2]))

    def _cmd_scan(self, ctx, args):
        ctx.last_result = ctx.fed().forced_leave_scan()

    def _cmd_audit(self, ctx, args):
        _, options = _kv(args)
        fed = ctx.fed()
        events = fed.monitor.export_logs()
        roles = audit_mod.mine_roles(
            events, float(options.get("theta", audit_mod.DEFAULT_SIMILARITY)))
        findings = audit_mod.detect_anomalies(events, roles)
        for finding in findings:
            fed.alert_feed.raise_alert(finding)
        ctx.last_result = {"roles": len(roles), "findings": len(findings)}

    def _cmd_revalidate(self, ctx, args):
        ctx.last_result = {"mismatches": ctx.fed().monitor.revalidate_all()}

    def _cmd_terminate(self, ctx, args):
        ctx.fed().terminate()

    # -- assertions --------------------------------------------------------------

    def _cmd_expect(self, ctx, args, line_no):
        what = args[0]
        rest = args[1:]
        if what == "error":
            if ctx.last_error is None:
                raise AssertionFailed(line_no, f"expected error {rest[0]}, all ok")
            actual = type(ctx.last_error).__name__
            ctx.error_checked = True
            if actual != rest[0]:
                raise AssertionFailed(line_no,
                                      f"expected error {rest[0]}, got {actual}")
            ctx.last_error = None
            return
        if ctx.last_error is not None:
            raise AssertionFailed(
                line_no, f"previous command failed with "
                         f"{type(ctx.last_error).__name__}: {ctx.last_error}")
        fed = ctx.fed()
        if what == "ok":
            return
        if what == "members":
            have = sum(1 for m in fed.members.values()
                       if m.status.value == "ACTIVE")
            if have != int(rest[0]):
                raise AssertionFailed(line_no, f"{have} active members, "
                                               f"expected {rest[0]}")
        elif what == "status":
            member = fed.members.get(rest[0])
            have = member.status.value if member else "ABSENT"
            if have != rest[1]:
                raise AssertionFailed(line_no, f"{rest[0]} is {have}, "
                                               f"expected {rest[1]}")
        elif what == "services":
            have = len(fed.iwm.catalog())
            if have != int(rest[0]):
                raise AssertionFailed(line_no,
                                      f"{have} services, expected {rest[0]}")
        elif what == "offers":
            have = len(ctx.last_offers)
            if have != int(rest[0]):
                raise AssertionFailed(line_no, f"{have} offers, expected {rest[0]}")
        elif what == "alerts":
            kind = AlertKind(rest[0])
            op, value = rest[1], int(rest[2])
            have = sum(1 for a in fed.alert_feed.all() if a.kind is kind)
            ok = have >= value if op == ">=" else have == value
            if not ok:
                raise AssertionFailed(line_no,
                                      f"{have} {kind.value} alerts, wanted "
                                      f"{op} {value}")
        elif what == "ledger-valid":
            status = fed.ledger.verify_chain()
            if not status:
                raise AssertionFailed(line_no,
                                      f"chain violated at {status.first_bad_index}")
        elif what == "tenant-invariants":
            fed.check_tenant_invariants()
        elif what == "result-field":
            key, expected = rest[0], rest[1]
            value = ctx.last_result
            for part in key.split("."):
                value = value[int(part)] if isinstance(value, list) else value[part]
            if str(value) != expected:
                raise AssertionFailed(line_no,
                                      f"result {key} is {value!r}, "
                                      f"expected {expected!r}")
        else:
            raise ParseError(f"unknown assertion {what!r}")

    # -- driver ----------------------------------------------------------------------

    COMMANDS = {
        "seed": _cmd_seed, "clock-start": _cmd_clock_start, "cloud": _cmd_cloud,
        "user": _cmd_user, "create-federation": _cmd_create_federation,
        "join": _cmd_join, "publish": _cmd_publish, "amend": _cmd_amend,
        "leave": _cmd_leave, "request": _cmd_request, "select": _cmd_select,
        "use": _cmd_use, "advance-clock": _cmd_advance_clock,
        "inject-fault": _cmd_inject_fault, "ingest": _cmd_ingest,
        "scan": _cmd_scan, "audit": _cmd_audit, "revalidate": _cmd_revalidate,
        "terminate": _cmd_terminate,
    }

    def run_text(self, text: str) -> tuple[int, ScenarioContext]:
        ctx = ScenarioContext()
        ctx.event_log.append("scenario start")
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                if line.split(None, 1)[0] == "use":
                    # the payload is the raw tail of the line: JSON untouched
                    tokens = line.split(None, 4)
                else:
                    tokens = shlex.split(line)
            except ValueError as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            command, args = tokens[0], tokens[1:]
            try:
                if command == "expect":
                    self._cmd_expect(ctx, args, line_no)
                    ctx.event_log.append(f"{line_no}: {line} -> ok")
                    continue
                if ctx.last_error is not None:
                    raise AssertionFailed(
                        line_no, "unchecked error from previous command: "
                                 f"{type(ctx.last_error).__name__}")
                handler = self.COMMANDS.get(command)
                if handler is None:
                    raise ParseError(f"line {line_no}: unknown command {command!r}")
                handler(self, ctx, args)
                ctx.event_log.append(f"{line_no}: {line} -> ok")
            except (AssertionFailed, ParseError):
                raise
            except FederationError as exc:
                ctx.last_error = exc
                ctx.event_log.append(
                    f"{line_no}: {line} -> ERR:{type(exc).__name__}")
            except (KeyError, ValueError, IndexError) as exc:
                raise ParseError(f"line {line_no}: {exc!r}") from exc
        if ctx.last_error is not None:
            raise AssertionFailed(0, "scenario ended with unchecked error: "
                                     f"{type(ctx.last_error).__name__}")
        ctx.event_log.append("scenario end")
        return 0, ctx

    def run_file(self, path: Path | str) -> tuple[int, ScenarioContext]:
        return self.run_text(Path(path).read_text(encoding="utf-8"))


def run_scenario(path: Path | str,
                 ledger_path: Optional[Path] = None) -> tuple[int, ScenarioContext]:
    """Execute a scenario file; (exit code, context). Assertion failures and
    parse errors raise."""
    return ScenarioRunner(ledger_path=ledger_path).run_file(path)
