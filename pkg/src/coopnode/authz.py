"""Consent and authorization: progressive binding, opaque tokens, grants.

Queriers and the service operators hosting their clients are distinct legal
entities; both walk the multi-round handshake in lock-step, accepting each
stage's obligation clauses, and each receives its own opaque access token
only once the session is fully bound. Member consent is informed (the lay
description's digest must be echoed back), withdrawable at any time, and
never deleted — withdrawal is a state transition, kept for demonstrability.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .canonical import sha256_hex
from .clock import Clock
from .errors import (
    DigestMismatch,
    DistinctPrincipalsRequired,
    NotOwner,
    NotVetted,
    OutOfOrderAdvance,
    SessionClosed,
    Unauthenticated,
    UnknownEntity,
)

DEFAULT_CLAUSE_TEXTS = (
    "Stage 1 service terms: the caller agrees to interact with the cooperative "
    "node solely through its published interfaces and to identify itself truthfully.",
    "Stage 2 data usage terms: the caller agrees that results are used only for "
    "the declared purpose and are not re-sold, re-identified or redistributed.",
    "Stage 3 purpose-specific terms: the caller accepts the purpose-bound "
    "obligations attached to the requested algorithm and scope.",
)


@dataclass(frozen=True)
class ObligationClause:
    clause_id: str
    text: str
    digest: str
    stage: int

    def to_dict(self) -> dict:
        return {
            "clause_id": self.clause_id,
            "text": self.text,
            "digest": self.digest,
            "stage": self.stage,
        }


def default_clauses(texts=DEFAULT_CLAUSE_TEXTS) -> list[ObligationClause]:
    return [
        ObligationClause(f"C{i + 1}", text, sha256_hex(text), i + 1)
        for i, text in enumerate(texts)
    ]


@dataclass
class Principal:
    principal_id: str
    role: str  # member | querier | operator | steward | cooperative-self
    legal_name: str
    credential: str
    verify_key_b64: Optional[str] = None  # SPs enroll a receipt-signing key
    year_of_birth: Optional[int] = None  # members only

    def to_dict(self) -> dict:
        return {
            "principal_id": self.principal_id,
            "role": self.role,
            "legal_name": self.legal_name,
        }


@dataclass
class AccessToken:
    token_id: str
    session_id: Optional[str]
    holder: str
    grants: dict  # algo_id, version, scope, purpose
    issued_at: float
    expires_at: float
    state: str = "active"  # active | revoked | expired


@dataclass
class BindingSession:
    session_id: str
    querier: str
    operator: Optional[str]
    requested: dict
    stage: int = 0  # completed stages
    accepted_clauses: list = field(default_factory=list)
    stage_accepts: set = field(default_factory=set)
    state: str = "in-progress"
    created_at: float = 0.0
    last_activity: float = 0.0
    resource_operator: Optional[str] = None  # reserved, unused

    @property
    def parties(self) -> set[str]:
        return {self.querier} | ({self.operator} if self.operator else set())

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "querier": self.querier,
            "operator": self.operator,
            "requested": self.requested,
            "stage": self.stage,
            "state": self.state,
            "accepted_clauses": list(self.accepted_clauses),
        }


@dataclass
class ConsentGrant:
    grant_id: str
    subject: str
    algo: tuple[str, int]
    purpose: str
    audience: str  # querier principal id or "any"
    granted_at: float
    valid_until: float
    state: str = "active"
    withdrawal_at: Optional[float] = None
    audit_seq: Optional[int] = None

    def active_at(self, at: float, purpose: str, algo: tuple, audience: str) -> bool:
        if self.algo != (algo[0], int(algo[1])) or self.purpose != purpose:
            return False
        if self.audience not in ("any", audience):
            return False
        if not (self.granted_at <= at < self.valid_until):
            return False
        return self.withdrawal_at is None or at < self.withdrawal_at

    def to_dict(self) -> dict:
        return {
            "grant_id": self.grant_id,
            "subject": self.subject,
            "algo_id": self.algo[0],
            "version": self.algo[1],
            "purpose": self.purpose,
            "audience": self.audience,
            "granted_at": self.granted_at,
            "valid_until": self.valid_until,
            "state": self.state,
            "withdrawal_at": self.withdrawal_at,
        }


class AuthzService:
    def __init__(
        self,
        audit,
        registry,
        clock: Optional[Clock] = None,
        clauses: Optional[list[ObligationClause]] = None,
        token_lifetime: float = 600.0,
        session_idle_expiry: float = 3600.0,
        rng_hex: Optional[Callable[[int], str]] = None,
        get_principal: Optional[Callable[[str], Optional[Principal]]] = None,
    ) -> None:
        self._audit = audit
        self._registry = registry
        self._clock = clock or Clock()
        self.clauses = clauses or default_clauses()
        self.n_stages = max(c.stage for c in self.clauses)
        self.token_lifetime = token_lifetime
        self.session_idle_expiry = session_idle_expiry
        self._rng_hex = rng_hex or (lambda n: os.urandom(n).hex())
        self._get_principal = get_principal or (lambda p: None)
        self._sessions: dict[str, BindingSession] = {}
        self._tokens: dict[str, AccessToken] = {}
        self._grants: dict[str, ConsentGrant] = {}
        self._pending: dict[str, dict] = {}
        self._lock = threading.RLock()

    # ------------------------------------------------------------ handshake

    def stage_clauses(self, stage: int) -> list[ObligationClause]:
        return [c for c in self.clauses if c.stage == stage]

    def _require_principal(self, principal_id: Optional[str], *roles: str) -> Principal:
        p = self._get_principal(principal_id) if principal_id else None
        if p is None:
            raise Unauthenticated(f"unknown principal {principal_id!r}")
        if roles and p.role not in roles:
            raise Unauthenticated(f"{principal_id!r} has role {p.role!r}, need {roles}")
        return p

    def begin_session(
        self, querier: str, operator: Optional[str], requested: dict
    ) -> tuple[BindingSession, list[ObligationClause]]:
        self._require_principal(querier)
        if operator is not None:
            self._require_principal(operator)
            if operator == querier:
                raise DistinctPrincipalsRequired(
                    "operator must be a separate legal entity from the querier"
                )
        with self._lock:
            session = BindingSession(
                session_id="sess-" + self._rng_hex(8),
                querier=querier,
                operator=operator,
                requested=dict(requested),
                created_at=self._clock.now(),
                last_activity=self._clock.now(),
            )
            self._sessions[session.session_id] = session
        self._audit.append(
            "session-stage",
            querier,
            {"session_id": session.session_id, "op": "begin", "stage": 1},
        )
        return session, self.stage_clauses(1)

    def _session(self, session_id: str) -> BindingSession:
        s = self._sessions.get(session_id)
        if s is None:
            raise UnknownEntity(f"unknown session {session_id!r}")
        return s

    def advance(self, session_id: str, principal: str) -> dict:
        """Record acceptance of the current stage's clauses by one party.

        Proceeding *is* accepting. The stage increments only when both the
        querier and the operator have accepted it; at the final stage the
        session binds and each party is minted its own token.
        """
        with self._lock:
            s = self._session(session_id)
            now = self._clock.now()
            if s.state == "in-progress" and now - s.last_activity > self.session_idle_expiry:
                s.state = "expired"
            if s.state != "in-progress":
                raise SessionClosed(f"session is {s.state}")
            if principal not in s.parties:
                raise Unauthenticated(f"{principal!r} is not a party to this session")
            if principal in s.stage_accepts:
                raise OutOfOrderAdvance("principal already accepted the current stage")
            current = s.stage + 1
            for clause in self.stage_clauses(current):
                s.accepted_clauses.append(
                    {
                        "clause_id": clause.clause_id,
                        "digest": clause.digest,
                        "stage": clause.stage,
                        "accepted_at": now,
                        "by": principal,
                    }
                )
            s.stage_accepts.add(principal)
            s.last_activity = now
            self._audit.append(
                "session-stage",
                principal,
                {"session_id": session_id, "op": "accept", "stage": current},
            )
            if s.stage_accepts != s.parties:
                return {"state": s.state, "stage": s.stage, "clauses": []}
            s.stage += 1
            s.stage_accepts = set()
            if s.stage < self.n_stages:
                return {
                    "state": s.state,
                    "stage": s.stage,
                    "clauses": [c.to_dict() for c in self.stage_clauses(s.stage + 1)],
                }
            s.state = "bound"
            tokens = {}
            for party in sorted(s.parties):
                tokens[party] = self._mint(s.session_id, party, s.requested).token_id
            return {"state": "bound", "stage": s.stage, "tokens": tokens}

    def abort(self, session_id: str, principal: str) -> BindingSession:
        with self._lock:
            s = self._session(session_id)
            if principal not in s.parties:
                raise Unauthenticated(f"{principal!r} is not a party to this session")
            if s.state == "in-progress":
                s.state = "aborted"
                self._audit.append(
                    "session-stage", principal, {"session_id": session_id, "op": "abort"}
                )
            return s

    def get_session(self, session_id: str) -> BindingSession:
        return self._session(session_id)

    def session_token(self, session_id: str, principal: str) -> Optional[AccessToken]:
        for t in self._tokens.values():
            if t.session_id == session_id and t.holder == principal:
                return t
        return None

    # ------------------------------------------------------------ tokens

    def _mint(self, session_id: Optional[str], holder: str, requested: dict,
              lifetime: Optional[float] = None) -> AccessToken:
        now = self._clock.now()
        token = AccessToken(
            token_id=self._rng_hex(32),  # 256 bits of entropy, opaque
            session_id=session_id,
            holder=holder,
            grants={
                "algo_id": requested["algo_id"],
                "version": int(requested["version"]),
                "scope": requested["scope"],
                "purpose": requested["purpose"],
            },
            issued_at=now,
            expires_at=now + (lifetime if lifetime is not None else self.token_lifetime),
        )
        self._tokens[token.token_id] = token
        self._audit.append(
            "token",
            holder,
            {"token_id": token.token_id, "session_id": session_id, "holder": holder},
        )
        return token

    def mint_internal_token(
        self, algo: tuple[str, int], scope: str, purpose: str,
        holder: str = "cooperative-self", lifetime: float = 120.0,
    ) -> AccessToken:
        """Short-lived engine-internal token for member-directed executions."""
        with self._lock:
            return self._mint(
                None,
                holder,
                {"algo_id": algo[0], "version": algo[1], "scope": scope, "purpose": purpose},
                lifetime=lifetime,
            )

    def introspect(self, token_id: str) -> dict:
        """Opaque-token introspection; inactive responses carry no details."""
        token = self._tokens.get(token_id)
        if token is None:
            return {"active": False}
        now = self._clock.now()
        if token.state == "active" and now >= token.expires_at:
            token.state = "expired"
        if token.state != "active":
            return {"active": False}
        if token.session_id is not None:
            session = self._sessions.get(token.session_id)
            if session is None or session.state != "bound":
                return {"active": False}
        return {
            "active": True,
            "holder": token.holder,
            "grants": dict(token.grants),
            "expires_at": token.expires_at,
        }

    def revoke_token(self, token_id: str) -> None:
        token = self._tokens.get(token_id)
        if token is not None:
            token.state = "revoked"

    def tokens_for_session(self, session_id: str) -> list[AccessToken]:
        return [t for t in self._tokens.values() if t.session_id == session_id]

    # ------------------------------------------------------------ consent

    def grant_consent(
        self,
        subject: str,
        algo: tuple[str, int],
        purpose: str,
        audience: str,
        valid_until: float,
        description_digest: str,
    ) -> ConsentGrant:
        manifest = self._registry.get(*algo)
        if manifest.vetting.state != "vetted":
            raise NotVetted("consent can only cover vetted algorithms")
        if description_digest != manifest.description_digest():
            raise DigestMismatch(
                "caller did not present the lay description shown to the member"
            )
        with self._lock:
            grant = ConsentGrant(
                grant_id="grant-" + self._rng_hex(8),
                subject=subject,
                algo=(algo[0], int(algo[1])),
                purpose=purpose,
                audience=audience,
                granted_at=self._clock.now(),
                valid_until=valid_until,
            )
            grant.audit_seq = self._audit.append(
                "consent",
                subject,
                {
                    "op": "grant",
                    "grant_id": grant.grant_id,
                    "subject": subject,
                    "algo_id": algo[0],
                    "version": int(algo[1]),
                    "purpose": purpose,
                    "audience": audience,
                },
            )
            self._grants[grant.grant_id] = grant
            for handle, req in self._pending.items():
                if (
                    req["state"] == "pending"
                    and req["subject"] == subject
                    and req["algo_id"] == algo[0]
                    and req["version"] == int(algo[1])
                    and req["purpose"] == purpose
                ):
                    req["state"] = "approved"
            return grant

    def withdraw_consent(self, subject: str, grant_id: str) -> ConsentGrant:
        with self._lock:
            grant = self._grants.get(grant_id)
            if grant is None:
                raise UnknownEntity(f"unknown grant {grant_id!r}")
            if grant.subject != subject:
                raise NotOwner("only the grant's subject may withdraw it")
            if grant.state == "withdrawn":
                return grant  # idempotent
            grant.state = "withdrawn"
            grant.withdrawal_at = self._clock.now()
            self._audit.append(
                "consent",
                subject,
                {"op": "withdraw", "grant_id": grant_id, "subject": subject},
            )
            return grant

    def check_consent(
        self, subject: str, algo: tuple[str, int], purpose: str, audience: str, at: float
    ) -> Optional[ConsentGrant]:
        """Pure, history-stable lookup: was a matching grant active at `at`?"""
        for grant in self._grants.values():
            if grant.subject == subject and grant.active_at(at, purpose, algo, audience):
                return grant
        return None

    def grants_of(self, subject: str) -> list[ConsentGrant]:
        return sorted(
            (g for g in self._grants.values() if g.subject == subject),
            key=lambda g: g.granted_at,
        )

    # ------------------------------------------------------------ pending requests

    def create_pending_request(
        self, subject: str, algo: tuple[str, int], purpose: str, audience: str, scope: str
    ) -> str:
        with self._lock:
            handle = "creq-" + self._rng_hex(8)
            self._pending[handle] = {
                "handle": handle,
                "subject": subject,
                "algo_id": algo[0],
                "version": int(algo[1]),
                "purpose": purpose,
                "audience": audience,
                "scope": scope,
                "created_at": self._clock.now(),
                "expires_at": self._clock.now() + 86400.0,
                "state": "pending",
            }
            return handle

    def list_pending(self, subject: str) -> list[dict]:
        out = []
        now = self._clock.now()
        for req in self._pending.values():
            if req["subject"] != subject or req["state"] != "pending":
                continue
            if now >= req["expires_at"]:
                continue
            entry = dict(req)
            desc = self._registry.description(req["algo_id"], req["version"])
            entry.update(
                title=desc["title"],
                lay_description=desc["lay_description"],
                description_digest=desc["description_digest"],
            )
            out.append(entry)
        return sorted(out, key=lambda r: r["created_at"])

    def deny_request(self, subject: str, handle: str) -> dict:
        with self._lock:
            req = self._pending.get(handle)
            if req is None or req["subject"] != subject:
                raise UnknownEntity(f"unknown pending request {handle!r}")
            req["state"] = "denied"
            self._audit.append(
                "consent", subject, {"op": "deny", "handle": handle, "subject": subject}
            )
            return req
