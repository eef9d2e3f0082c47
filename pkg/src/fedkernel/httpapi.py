"""HTTP facade over a federation: pure translation between requests and
orchestrator calls, no business logic of its own. The dashboard consumes
exactly these endpoints. Bodies are the same canonical JSON family the
ledger uses; the alert feed long-polls with a cursor.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

from fastapi import FastAPI, HTTPException, Query, Request

from . import canonical
from .errors import (AssertionFailed, AuthFailed, BadCredential, Expired,
                     FederationError, InvalidChoice, InvalidCursor,
                     InvalidToken, NoCandidates, NoGrant, ParseError,
                     PolicyInvalid, SectionUnavailable, Unauthorized,
                     UnknownCloud, UnknownService)
from .iwm import Objective, WorkloadRequest
from .orchestrator import Federation
from .policy import Policy
from .registry import verify_blocks

_STATUS = {
    AuthFailed: 401, InvalidToken: 401, Expired: 401, BadCredential: 401,
    Unauthorized: 403, PolicyInvalid: 422, ParseError: 400,
    UnknownService: 404, UnknownCloud: 404, NoGrant: 403, NoCandidates: 404,
    InvalidChoice: 400, InvalidCursor: 400, SectionUnavailable: 409,
    AssertionFailed: 400,
}


def _http_error(exc: FederationError) -> HTTPException:
    status = 409
    for klass, code in _STATUS.items():
        if isinstance(exc, klass):
            status = code
            break
    return HTTPException(status_code=status,
                         detail={"error": type(exc).__name__, "message": str(exc)})


def build_app(federation: Federation) -> FastAPI:
    app = FastAPI(title="federation-service")
    fed = federation
    lock = threading.Lock()  # funnels mutations into one phase at a time

    def guarded(fn, *args, **kwargs):
        try:
            with lock:
                return fn(*args, **kwargs)
        except FederationError as exc:
            raise _http_error(exc) from exc

    def authenticate(body: dict):
        auth = body.get("auth", {})
        try:
            return fed.identity.authenticate(auth.get("cloud", ""),
                                             auth.get("user", ""),
                                             auth.get("credential", ""))
        except FederationError as exc:
            raise _http_error(AuthFailed(str(exc))) from exc

    @app.get("/federation")
    def federation_state():
        return {
            "federation_id": fed.sfac.federation_id,
            "open": fed.sfac.open,
            "grace_ms": fed.sfac.grace_ms,
            "members": fed.member_view(),
            "tenants": fed.tenant_view(),
            "services": fed.service_view(),
            "ledger_tip": fed.ledger.tip_digest(),
            "clock": fed.clock.now(),
        }

    @app.get("/members")
    def members():
        return fed.member_view()

    @app.get("/tenants")
    def tenants():
        return fed.tenant_view()

    @app.get("/services")
    def services():
        return fed.service_view()

    @app.post("/members/join")
    async def join(request: Request):
        body = await request.json()
        return guarded(fed.join_member, body["cloud_id"], body["credentials"])

    @app.post("/members/{cloud_id}/leave")
    async def leave(cloud_id: str, request: Request):
        body = await request.json()
        auth = authenticate(body)
        return guarded(fed.leave_member, cloud_id, False, auth)

    @app.post("/services/{service_id}/policies")
    async def amend(service_id: str, request: Request):
        body = await request.json()
        auth = authenticate(body)
        policies = [Policy.from_doc(p) for p in body.get("policies", [])]
        return guarded(fed.amend_policies, auth, service_id, policies)

    @app.post("/requests")
    async def request_service(request: Request):
        body = await request.json()
        auth = authenticate(body)
        wreq = WorkloadRequest(
            consumer=body.get("consumer", body["auth"]["user"]),
            required_characteristics=body.get("characteristics", {}),
            demand=int(body.get("demand", 1)),
            objective=Objective(body.get("objective", "MIN_COST")),
            w_cost=float(body.get("w_cost", 1.0)),
            w_avail=float(body.get("w_avail", 1.0)))
        offers = guarded(fed.request_service, auth, wreq)
        return {"offers": [o.to_doc() for o in offers]}

    @app.post("/requests/select")
    async def select(request: Request):
        body = await request.json()
        auth = authenticate(body)
        grant = guarded(fed.select_offer, auth, body["service_id"])
        return {"service_id": grant.service_id,
                "resources": list(grant.receipt.resource_ids)}

    @app.post("/services/{service_id}/use")
    async def use(service_id: str, request: Request):
        body = await request.json()
        auth = authenticate(body)
        result = guarded(fed.use_service, auth, service_id,
                         body.get("action", "read"), body.get("payload", {}))
        return {"result": result}

    @app.get("/alerts")
    def alerts(cursor: int = Query(0), wait_ms: int = Query(0)):
        deadline = time.monotonic() + wait_ms / 1000.0
        while True:
            try:
                found = fed.alert_feed.since(cursor)
            except FederationError as exc:
                raise _http_error(exc) from exc
            if found or time.monotonic() >= deadline:
                return {"alerts": [a.to_doc() for a in found],
                        "cursor": found[-1].id if found else cursor}
            time.sleep(0.01)

    @app.get("/sla/report")
    def sla_report():
        return {"report": fed.sla_report()}

    @app.get("/ledger/blocks")
    def ledger_blocks(start: int = Query(0), count: Optional[int] = Query(None)):
        blocks = fed.ledger.blocks()[start:]
        if count is not None:
            blocks = blocks[:count]
        return {"blocks": [b.to_doc() for b in blocks]}

    @app.get("/ledger/verify")
    def ledger_verify():
        status = verify_blocks(fed.ledger.blocks())
        return {"valid": status.valid, "first_bad_index": status.first_bad_index}

    @app.post("/clock/advance")
    async def advance(request: Request):
        body = await request.json()
        fed.clock.advance(int(body.get("delta_ms", 0)))
        return {"clock": fed.clock.now()}

    @app.post("/scan")
    def scan():
        return {"actions": guarded(fed.forced_leave_scan)}

    dashboard = _dashboard_dir()
    if dashboard is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=dashboard, html=True),
                  name="dashboard")

    return app


def _dashboard_dir() -> Optional[str]:
    """The built admin front end, when present next to this package."""
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent.parent / "frontend"
    if (root / "index.html").exists() and (root / "dist").exists():
        return str(root)
    return None
