"""Error taxonomy for the cooperative node.

Every fault surfaced to callers carries a stable machine-readable code so
the HTTP layer and the scenario runner can match on it.
"""

from __future__ import annotations


class CoopError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details) -> None:
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": self.message, **self.details}


class UnknownEntity(CoopError):
    code = "unknown-entity"


class UnknownMember(CoopError):
    code = "unknown-member"


class EmptySchema(CoopError):
    code = "empty-schema"


class DuplicateFieldName(CoopError):
    code = "duplicate-field-name"


class NotOwner(CoopError):
    code = "not-owner"


class StoreSuspended(CoopError):
    code = "store-suspended"


class SchemaViolation(CoopError):
    code = "schema-violation"

    def __init__(self, field: str, message: str = "") -> None:
        super().__init__(message or f"schema violation on field {field!r}", field=field)
        self.field = field


class UndeclaredField(CoopError):
    """Hard fault: a compiled program touched a field outside its manifest."""

    code = "undeclared-field"


class InvalidToken(CoopError):
    code = "invalid-token"


class NotVetted(CoopError):
    code = "not-vetted"


class DuplicateAlgorithm(CoopError):
    code = "duplicate-algorithm"


class ParseFault(CoopError):
    code = "parse-error"


class DistinctPrincipalsRequired(CoopError):
    code = "distinct-principals-required"


class Unauthenticated(CoopError):
    code = "unauthenticated"


class AccessDenied(CoopError):
    code = "access-denied"


class OutOfOrderAdvance(CoopError):
    code = "out-of-order-advance"


class SessionClosed(CoopError):
    code = "session-closed"


class DigestMismatch(CoopError):
    code = "description-not-presented"


class ConsentRequired(CoopError):
    code = "consent-required"

    def __init__(self, handle: str) -> None:
        super().__init__("subject consent required", handle=handle)
        self.handle = handle


class MemberDirectiveRequired(CoopError):
    code = "member-directive-required"


class ValidityExceeded(CoopError):
    code = "validity-exceeded"


class TermsMismatch(CoopError):
    code = "terms-mismatch"


class BadSignature(CoopError):
    code = "bad-signature"


class DuplicateCredential(CoopError):
    code = "duplicate-credentials"


class ConfigError(CoopError):
    code = "config-error"
