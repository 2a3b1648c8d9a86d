"""Member-initiated signed assertions and service-provider receipts.

The cooperative acts as an assertion provider: at the member's express
directive it runs a subject-mode algorithm over the member's own stores and
signs the declared outputs into a short-lived, purpose-bound, portable
document. Verification is offline-capable: canonical payload bytes, an
Ed25519 signature, and the published verification keys are all it takes.

Two validity classes: transactional assertions expire within 24 hours;
static-attribute assertions (age checks, year of birth) may live for a year
and can be published at a well-known member endpoint.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import canonical_json, rfc3339, sha256_hex
from .clock import Clock
from .errors import (
    BadSignature,
    MemberDirectiveRequired,
    NotVetted,
    TermsMismatch,
    UnknownEntity,
    ValidityExceeded,
)

TRANSACTIONAL_MAX = 24 * 3600.0
STATIC_MAX = 365 * 24 * 3600.0

DEFAULT_TERMS = (
    "The information in this assertion may be used solely for the stated "
    "purpose and must not be propagated to third parties.",
)
DEFAULT_COPYRIGHT = "(c) issuing cooperative; redistribution discouraged."


class CooperativeKeyPair:
    """Signing key held privately; verification keys published and kept
    through rotation so old assertions stay verifiable."""

    def __init__(self, seed: Optional[bytes] = None) -> None:
        if seed is not None:
            self._private = Ed25519PrivateKey.from_private_bytes(seed)
        else:
            self._private = Ed25519PrivateKey.generate()
        pub = self.verify_key_bytes()
        self.key_id = sha256_hex(pub)[:16]

    def verify_key_bytes(self) -> bytes:
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            PublicFormat,
        )

        return self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, data: bytes) -> bytes:
        return self._private.sign(data)


class KeyRing:
    def __init__(self, seed: Optional[bytes] = None) -> None:
        self._current = CooperativeKeyPair(seed)
        self._published: dict[str, str] = {}
        self._publish(self._current)

    def _publish(self, pair: CooperativeKeyPair) -> None:
        self._published[pair.key_id] = base64.b64encode(pair.verify_key_bytes()).decode()

    @property
    def current(self) -> CooperativeKeyPair:
        return self._current

    def rotate(self, seed: Optional[bytes] = None) -> CooperativeKeyPair:
        self._current = CooperativeKeyPair(seed)
        self._publish(self._current)
        return self._current

    def published_keys(self) -> dict[str, str]:
        """key_id -> base64 verification key, as served at /.well-known/coop-keys."""
        return dict(self._published)


def sign_payload(payload: dict, pair: CooperativeKeyPair) -> dict:
    sig = pair.sign(canonical_json(payload))
    return {"key_id": pair.key_id, "value": base64.b64encode(sig).decode("ascii")}


def verify_payload_signature(payload_bytes: bytes, signature: dict, keys: dict) -> bool:
    key_b64 = keys.get(signature.get("key_id", ""))
    if key_b64 is None:
        return False
    try:
        pub = Ed25519PublicKey.from_public_bytes(base64.b64decode(key_b64))
        pub.verify(base64.b64decode(signature["value"]), payload_bytes)
        return True
    except (InvalidSignature, ValueError, KeyError):
        return False


@dataclass
class Assertion:
    payload: dict
    signature: dict

    @property
    def assertion_id(self) -> str:
        return self.payload["assertion_id"]

    def export(self) -> dict:
        return {"payload": self.payload, "signature": self.signature}

    def export_bytes(self) -> bytes:
        return canonical_json(self.export())


def verify_assertion(document, expected_purpose: str, at: float, keys: dict) -> dict:
    """Offline verification: parse, signature, expiry, purpose — in order.

    ``document`` may be bytes or the already-parsed export dict. Validity is
    strict at the boundary: an assertion is invalid at exactly expires_at.
    """
    try:
        if isinstance(document, (bytes, str)):
            document = json.loads(document)
        payload = document["payload"]
        signature = document["signature"]
        expires_at = payload["expires_at"]
        purpose = payload["purpose"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return {"valid": False, "reason": "parse"}
    if not verify_payload_signature(canonical_json(payload), signature, keys):
        return {"valid": False, "reason": "signature"}
    try:
        expiry = _parse_ts(expires_at)
    except ValueError:
        return {"valid": False, "reason": "parse"}
    if at >= expiry:
        return {"valid": False, "reason": "expired"}
    if purpose != expected_purpose:
        return {"valid": False, "reason": "purpose-mismatch"}
    return {"valid": True, "reason": None}


def _parse_ts(text: str) -> float:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    return dt.replace(tzinfo=timezone.utc).timestamp()


@dataclass
class DigitalReceipt:
    receipt_id: str
    assertion_id: str
    service_provider: str
    accepted_terms: tuple[str, ...]
    signed_at: float
    signature: dict

    def to_dict(self) -> dict:
        return {
            "receipt_id": self.receipt_id,
            "assertion_id": self.assertion_id,
            "service_provider": self.service_provider,
            "accepted_terms": list(self.accepted_terms),
            "signed_at": self.signed_at,
            "signature": self.signature,
        }


def receipt_payload(assertion_id: str, service_provider: str, accepted_terms, signed_at: float) -> dict:
    return {
        "assertion_id": assertion_id,
        "service_provider": service_provider,
        "accepted_terms": list(accepted_terms),
        "signed_at": rfc3339(signed_at),
    }


class AssertionService:
    def __init__(
        self,
        engine,
        registry,
        authz,
        audit,
        keyring: KeyRing,
        clock: Optional[Clock] = None,
        issuer: str = "coop",
        pairwise_secret: Optional[bytes] = None,
        transactional_max: float = TRANSACTIONAL_MAX,
        static_max: float = STATIC_MAX,
        terms: tuple[str, ...] = DEFAULT_TERMS,
        copyright_notice: str = DEFAULT_COPYRIGHT,
        rng_hex: Optional[Callable[[int], str]] = None,
        get_principal: Optional[Callable[[str], object]] = None,
    ) -> None:
        self._engine = engine
        self._registry = registry
        self._authz = authz
        self._audit = audit
        self._keyring = keyring
        self._clock = clock or Clock()
        self.issuer = issuer
        self._pairwise_secret = pairwise_secret or os.urandom(32)
        self.transactional_max = transactional_max
        self.static_max = static_max
        self.terms_digests = tuple(sha256_hex(t) for t in terms)
        self.terms_texts = tuple(terms)
        self.copyright_notice = copyright_notice
        self._rng_hex = rng_hex or (lambda n: os.urandom(n).hex())
        self._get_principal = get_principal or (lambda p: None)
        self._assertions: dict[str, Assertion] = {}
        self._owners: dict[str, str] = {}
        self._receipts: dict[str, DigitalReceipt] = {}
        self._published: dict[tuple[str, str], str] = {}  # (member, slug) -> assertion_id
        self._lock = threading.Lock()

    # ------------------------------------------------------------ issuance

    def _pseudonym(self, member: str, audience: str) -> str:
        return "pair-" + sha256_hex(
            self._pairwise_secret + member.encode() + b"|" + audience.encode()
        )[:32]

    def _build(
        self,
        subject_field: str,
        algo_ref: Optional[tuple[str, int]],
        result,
        validity: float,
        purpose: str,
    ) -> Assertion:
        now = self._clock.now()
        payload = {
            "assertion_id": "asrt-" + self._rng_hex(8),
            "issuer": self.issuer,
            "subject": subject_field,
            "algo": (
                {"algo_id": algo_ref[0], "version": algo_ref[1]} if algo_ref else None
            ),
            "result": result,
            "issued_at": rfc3339(now),
            "expires_at": rfc3339(now + validity),
            "purpose": purpose,
            "terms_of_use": list(self.terms_digests),
            "copyright_notice": self.copyright_notice,
        }
        return Assertion(payload, sign_payload(payload, self._keyring.current))

    def issue_assertion(
        self,
        caller: str,
        subject: str,
        algo: tuple[str, int],
        purpose: str,
        audience: str,
        validity: float,
        reveal_subject: bool = False,
    ) -> Assertion:
        """Member-driven issuance; the call itself is the express directive."""
        if caller != subject:
            raise MemberDirectiveRequired(
                "assertions are issued only at the subject's own directive"
            )
        manifest = self._registry.get(*algo)
        if manifest.vetting.state != "vetted" or manifest.output_mode != "subject":
            raise NotVetted("issuance requires a vetted subject-mode algorithm")
        if validity > self.transactional_max:
            raise ValidityExceeded(
                f"validity {validity}s exceeds transactional class maximum"
            )
        directive_seq = self._audit.append(
            "consent",
            subject,
            {
                "op": "issuance-directive",
                "subject": subject,
                "algo_id": algo[0],
                "version": int(algo[1]),
                "purpose": purpose,
                "audience": audience,
            },
        )
        scope = ("single-subject", subject)
        from .engine import scope_string

        token = self._authz.mint_internal_token(algo, scope_string(scope), purpose)
        result = self._engine.execute(
            algo, scope, "cooperative-self", purpose, token.token_id,
            directive_seq=directive_seq,
        )
        if not result.cells:
            raise UnknownEntity(
                "member has no active stores carrying the required fields"
            )
        subject_field = subject if reveal_subject else self._pseudonym(subject, audience)
        assertion = self._build(
            subject_field, (algo[0], int(algo[1])), result.cells, validity, purpose
        )
        with self._lock:
            self._assertions[assertion.assertion_id] = assertion
            self._owners[assertion.assertion_id] = subject
        self._audit.append(
            "assertion",
            subject,
            {
                "assertion_id": assertion.assertion_id,
                "directive_seq": directive_seq,
                "execution_ref": result.request_id,
            },
        )
        return assertion

    def issue_static_attribute_assertion(
        self, caller: str, subject: str, attribute: str, publish: bool = False,
        over: Optional[int] = None,
    ) -> Assertion:
        """Static attributes from the enrollment record: year_of_birth or age_over(n).

        age_over carries only the boolean, never the birth year."""
        if caller != subject:
            raise MemberDirectiveRequired(
                "static assertions are issued only at the subject's own directive"
            )
        principal = self._get_principal(subject)
        yob = getattr(principal, "year_of_birth", None)
        if yob is None:
            raise UnknownEntity("member enrollment record has no year of birth")
        now = self._clock.now()
        if attribute == "year_of_birth":
            result = {"year_of_birth": yob}
            slug = "year-of-birth"
            purpose = "attribute-disclosure"
        elif attribute == "age_over":
            if over is None:
                raise ValueError("age_over needs a threshold")
            current_year = datetime.fromtimestamp(now, tz=timezone.utc).year
            result = {"age_over": over, "value": (current_year - yob) >= over}
            slug = f"age-over-{over}"
            purpose = "age-verification"
        else:
            raise ValueError(f"unknown static attribute {attribute!r}")
        directive_seq = self._audit.append(
            "consent",
            subject,
            {"op": "issuance-directive", "subject": subject, "attribute": attribute},
        )
        assertion = self._build(subject, None, result, self.static_max, purpose)
        with self._lock:
            self._assertions[assertion.assertion_id] = assertion
            self._owners[assertion.assertion_id] = subject
            if publish:
                self._published[(subject, slug)] = assertion.assertion_id
        self._audit.append(
            "assertion",
            subject,
            {"assertion_id": assertion.assertion_id, "directive_seq": directive_seq,
             "published": bool(publish)},
        )
        return assertion

    def reissue_cycle(
        self, caller: str, subject: str, algo: tuple[str, int], purpose: str,
        audience: str, validity: float, n: int,
    ) -> list[Assertion]:
        """Repeat execute-and-issue as many times as the SP needs."""
        return [
            self.issue_assertion(caller, subject, algo, purpose, audience, validity)
            for _ in range(n)
        ]

    # ------------------------------------------------------------ retrieval

    def get(self, assertion_id: str) -> Assertion:
        a = self._assertions.get(assertion_id)
        if a is None:
            raise UnknownEntity(f"unknown assertion {assertion_id!r}")
        return a

    def owner_of(self, assertion_id: str) -> Optional[str]:
        return self._owners.get(assertion_id)

    def list_for(self, member: str) -> list[Assertion]:
        return [self._assertions[a] for a, m in self._owners.items() if m == member]

    def published(self, member: str, slug: str) -> Optional[Assertion]:
        aid = self._published.get((member, slug))
        return self._assertions.get(aid) if aid else None

    # ------------------------------------------------------------ receipts

    def record_receipt(self, assertion_id: str, sp_principal, receipt_doc: dict) -> DigitalReceipt:
        assertion = self.get(assertion_id)
        payload = receipt_doc.get("payload", {})
        signature = receipt_doc.get("signature", {})
        accepted = tuple(payload.get("accepted_terms", ()))
        if accepted != tuple(assertion.payload["terms_of_use"]):
            raise TermsMismatch("receipt must accept the assertion's terms exactly")
        key_b64 = getattr(sp_principal, "verify_key_b64", None)
        if not key_b64:
            raise BadSignature("service provider has no enrolled verification key")
        keys = {signature.get("key_id", ""): key_b64}
        if not verify_payload_signature(canonical_json(payload), signature, keys):
            raise BadSignature("receipt signature does not verify")
        receipt = DigitalReceipt(
            receipt_id="rcpt-" + self._rng_hex(8),
            assertion_id=assertion_id,
            service_provider=sp_principal.principal_id,
            accepted_terms=accepted,
            signed_at=self._clock.now(),
            signature=signature,
        )
        with self._lock:
            self._receipts[receipt.receipt_id] = receipt
        self._audit.append(
            "receipt",
            sp_principal.principal_id,
            {"receipt_id": receipt.receipt_id, "assertion_id": assertion_id},
        )
        return receipt

    def receipts_for(self, assertion_id: str) -> list[DigitalReceipt]:
        return [r for r in self._receipts.values() if r.assertion_id == assertion_id]
