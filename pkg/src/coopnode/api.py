"""HTTP/JSON surface of the cooperative node.

Every request authenticates to a principal via its enrollment bearer
credential, then passes the role perimeter in ACCESS_TABLE before any
handler runs. Operators reach only the handshake and introspection
endpoints: every data-bearing endpoint denies them at the perimeter.
"""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import engine as engine_mod
from .assertions import verify_assertion
from .authz import Principal
from .errors import (
    AccessDenied,
    ConsentRequired,
    CoopError,
    InvalidToken,
    NotVetted,
    Unauthenticated,
    UnknownEntity,
)
from .node import CoopNode
from .pds import FieldSpec
from .registry import manifest_from_dict

# endpoint-name -> allowed roles; "public" endpoints skip authentication.
# This table is the documented perimeter contract the matrix test pins.
ACCESS_TABLE: dict[str, tuple[str, ...] | str] = {
    "healthz": "public",
    "wellknown_keys": "public",
    "published_assertion": "public",
    "meta": "public",
    "enroll": ("steward",),
    "create_store": ("member",),
    "ingest_records": ("member",),
    "remove_records": ("member",),
    "store_status": ("member",),
    "register_algorithm": ("steward",),
    "list_algorithms": ("member", "querier", "steward"),
    "algo_description": ("member", "querier", "steward"),
    "begin_session": ("querier",),
    "advance_session": ("querier", "operator"),
    "abort_session": ("querier", "operator"),
    "introspect": ("querier", "operator", "steward"),
    "execute": ("querier", "steward"),
    "grant_consent": ("member",),
    "withdraw_consent": ("member",),
    "pending_consent": ("member",),
    "deny_consent": ("member",),
    "list_grants": ("member",),
    "issue_assertion": ("member",),
    "get_assertion": ("member",),
    "record_receipt": ("querier",),
    "verify_assertion": ("member", "querier", "steward"),
    "audit_demonstrate": ("member", "steward"),
    "audit_mine": ("member",),
    "audit_all": ("steward",),
}


def _http_status(exc: CoopError) -> int:
    if isinstance(exc, Unauthenticated):
        return 401
    if isinstance(exc, AccessDenied):
        return 403
    if isinstance(exc, UnknownEntity):
        return 404
    if isinstance(exc, ConsentRequired):
        return 409
    if isinstance(exc, (InvalidToken, NotVetted)):
        return 403
    return 400


def create_app(node: CoopNode, console_dir: str | None = None) -> FastAPI:
    app = FastAPI(title=f"coopnode:{node.config.name}")

    def guard(name: str):
        allowed = ACCESS_TABLE[name]

        def dep(request: Request) -> Principal | None:
            if allowed == "public":
                return None
            header = request.headers.get("authorization", "")
            if not header.lower().startswith("bearer "):
                raise HTTPException(401, "bearer credential required")
            try:
                principal = node.authenticate(header[7:].strip())
            except Unauthenticated:
                raise HTTPException(401, "unknown credential") from None
            if principal.role not in allowed:
                raise HTTPException(403, f"role {principal.role!r} denied on {name}")
            return principal

        return Depends(dep)

    @app.exception_handler(CoopError)
    async def coop_error_handler(_request, exc: CoopError):
        return JSONResponse(status_code=_http_status(exc), content=exc.to_dict())

    # ------------------------------------------------------------ public

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "cooperative": node.config.name}

    @app.get("/.well-known/coop-keys")
    def wellknown_keys():
        return node.keyring.published_keys()

    @app.get("/meta")
    def meta():
        return {
            "cooperative": node.config.name,
            "label": node.config.tenant_label or node.config.name,
            "k_threshold": node.config.k_threshold,
        }

    @app.get("/members/{member_id}/assertions/{slug}")
    def published_assertion(member_id: str, slug: str):
        assertion = node.assertions.published(member_id, slug)
        if assertion is None:
            raise HTTPException(404, "no published assertion at this endpoint")
        return assertion.export()

    # ------------------------------------------------------------ enrollment

    @app.post("/enroll")
    def enroll(body: dict, principal: Principal = guard("enroll")):
        p = node.enroll(
            role=body["role"],
            legal_name=body["legal_name"],
            credentials=body.get("credentials"),
            year_of_birth=body.get("year_of_birth"),
            verify_key_b64=body.get("verify_key_b64"),
            principal_id=body.get("principal_id"),
        )
        return {**p.to_dict(), "credential": p.credential}

    # ------------------------------------------------------------ stores

    @app.post("/stores")
    def create_store(body: dict, principal: Principal = guard("create_store")):
        schema = [FieldSpec.from_dict(f) for f in body["schema"]]
        meta = node.stores.create_store(
            principal.principal_id,
            schema,
            body.get("hosting", "cooperative-hosted"),
            caller=principal.principal_id,
        )
        return meta.to_dict()

    @app.post("/stores/{store_id}/records")
    def ingest_records(store_id: str, body: dict,
                       principal: Principal = guard("ingest_records")):
        ids = node.stores.ingest_records(store_id, body["records"], principal.principal_id)
        return {"record_ids": ids}

    @app.post("/stores/{store_id}/remove")
    def remove_records(store_id: str, body: dict,
                       principal: Principal = guard("remove_records")):
        n = node.stores.remove_records(
            store_id, body.get("selector", "all"), principal.principal_id
        )
        return {"removed": n}

    @app.post("/stores/{store_id}/status")
    def store_status(store_id: str, body: dict,
                     principal: Principal = guard("store_status")):
        meta = node.stores.set_store_status(store_id, body["status"], principal.principal_id)
        return meta.to_dict()

    # ------------------------------------------------------------ algorithms

    @app.post("/algorithms")
    def register_algorithm(body: dict, principal: Principal = guard("register_algorithm")):
        manifest = manifest_from_dict(body)
        vetted = node.registry.vet_manifest(manifest, principal.principal_id)
        if vetted.vetting.state == "vetted":
            node.registry.register(vetted, principal.principal_id)
        return {
            "registered": vetted.vetting.state == "vetted",
            "vetting": vetted.vetting.to_dict(),
            "algo_id": vetted.algo_id,
            "version": vetted.version,
        }

    @app.get("/algorithms")
    def list_algorithms(principal: Principal = guard("list_algorithms")):
        return node.registry.list_algorithms(principal.role)

    @app.get("/algorithms/{algo_id}/{version}/description")
    def algo_description(algo_id: str, version: int,
                         principal: Principal = guard("algo_description")):
        return node.registry.description(algo_id, version)

    # ------------------------------------------------------------ authz

    @app.post("/authz/session")
    def begin_session(body: dict, principal: Principal = guard("begin_session")):
        session, clauses = node.authz.begin_session(
            principal.principal_id,
            body.get("operator"),
            {
                "algo_id": body["algo_id"],
                "version": body["version"],
                "scope": body["scope"],
                "purpose": body["purpose"],
            },
        )
        return {"session": session.to_dict(), "clauses": [c.to_dict() for c in clauses]}

    @app.post("/authz/session/{session_id}/advance")
    def advance_session(session_id: str, principal: Principal = guard("advance_session")):
        out = node.authz.advance(session_id, principal.principal_id)
        if out.get("state") == "bound":
            out = dict(out)
            out["token"] = out["tokens"][principal.principal_id]
            # each party sees its own token only
            out.pop("tokens")
        return out

    @app.post("/authz/session/{session_id}/abort")
    def abort_session(session_id: str, principal: Principal = guard("abort_session")):
        return node.authz.abort(session_id, principal.principal_id).to_dict()

    @app.post("/authz/introspect")
    def introspect(body: dict, principal: Principal = guard("introspect")):
        return node.authz.introspect(body.get("token", ""))

    # ------------------------------------------------------------ execution

    @app.post("/execute")
    def execute(body: dict, principal: Principal = guard("execute")):
        result = node.engine.execute(
            (body["algo_id"], int(body["version"])),
            engine_mod.parse_scope(body["scope"]),
            principal.principal_id,
            body["purpose"],
            body["token"],
        )
        return result.to_dict()

    # ------------------------------------------------------------ consent

    @app.post("/consent/grant")
    def grant_consent(body: dict, principal: Principal = guard("grant_consent")):
        grant = node.authz.grant_consent(
            principal.principal_id,
            (body["algo_id"], int(body["version"])),
            body["purpose"],
            body.get("audience", "any"),
            float(body["valid_until"]),
            body["description_digest"],
        )
        return grant.to_dict()

    @app.post("/consent/{grant_id}/withdraw")
    def withdraw_consent(grant_id: str, principal: Principal = guard("withdraw_consent")):
        return node.authz.withdraw_consent(principal.principal_id, grant_id).to_dict()

    @app.get("/consent/pending")
    def pending_consent(principal: Principal = guard("pending_consent")):
        return node.authz.list_pending(principal.principal_id)

    @app.post("/consent/{handle}/deny")
    def deny_consent(handle: str, principal: Principal = guard("deny_consent")):
        return node.authz.deny_request(principal.principal_id, handle)

    @app.get("/consent/grants")
    def list_grants(principal: Principal = guard("list_grants")):
        return [g.to_dict() for g in node.authz.grants_of(principal.principal_id)]

    # ------------------------------------------------------------ assertions

    @app.post("/assertions/issue")
    def issue_assertion(body: dict, principal: Principal = guard("issue_assertion")):
        if "static_attribute" in body:
            assertion = node.assertions.issue_static_attribute_assertion(
                principal.principal_id,
                principal.principal_id,
                body["static_attribute"],
                publish=bool(body.get("publish", False)),
                over=body.get("over"),
            )
        else:
            assertion = node.assertions.issue_assertion(
                principal.principal_id,
                principal.principal_id,
                (body["algo_id"], int(body["version"])),
                body["purpose"],
                body.get("audience", "any"),
                float(body["validity"]),
                reveal_subject=bool(body.get("reveal_subject", False)),
            )
        return assertion.export()

    @app.get("/assertions/{assertion_id}")
    def get_assertion(assertion_id: str, principal: Principal = guard("get_assertion")):
        if node.assertions.owner_of(assertion_id) != principal.principal_id:
            raise HTTPException(403, "not the assertion holder")
        return node.assertions.get(assertion_id).export()

    @app.post("/assertions/{assertion_id}/receipt")
    def record_receipt(assertion_id: str, body: dict,
                       principal: Principal = guard("record_receipt")):
        receipt = node.assertions.record_receipt(assertion_id, principal, body)
        return receipt.to_dict()

    @app.post("/assertions/verify")
    def verify(body: dict, principal: Principal = guard("verify_assertion")):
        return verify_assertion(
            body["document"],
            body["purpose"],
            node.clock.now(),
            node.keyring.published_keys(),
        )

    # ------------------------------------------------------------ audit

    @app.get("/audit/demonstrate")
    def audit_demonstrate(execution: str,
                          principal: Principal = guard("audit_demonstrate")):
        bundle = node.audit.demonstrate_consent(execution)
        if principal.role == "member":
            touching = {bundle["basis"]["actor"], bundle["execution"]["actor"]}
            touching |= set(bundle["basis"]["refs"].values()) | set(
                str(v) for v in bundle["execution"]["refs"].values()
            )
            if principal.principal_id not in touching:
                raise HTTPException(403, "members may demonstrate only their own events")
        return bundle

    @app.get("/audit/mine")
    def audit_mine(principal: Principal = guard("audit_mine")):
        me = principal.principal_id
        out = []
        for ev in node.audit.events():
            if ev.actor == me or me in [str(v) for v in ev.refs.values()]:
                out.append(ev.to_dict())
        return out

    @app.get("/audit/events")
    def audit_all(principal: Principal = guard("audit_all")):
        return [ev.to_dict() for ev in node.audit.events()]

    # ------------------------------------------------------------ console

    if console_dir and os.path.isdir(console_dir):
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
