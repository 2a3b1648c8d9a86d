"""One deployable cooperative node: configuration, enrollment, module wiring.

Also the simulated CUSO topology: an OperatorHost persists ciphertext for
several cooperatives at once, carries a per-tenant UI label, and holds no
key material — so the storage bytes it can see decrypt to nothing.
"""

from __future__ import annotations

import os
import random
import re
import secrets
import threading
from dataclasses import dataclass, field
from typing import Optional

from .assertions import STATIC_MAX, TRANSACTIONAL_MAX, AssertionService, KeyRing
from .audit import AuditLog
from .authz import AuthzService, Principal, default_clauses
from .clock import Clock
from .engine import OpalEngine, SafeAnswerPolicy
from .errors import AccessDenied, ConfigError, DuplicateCredential, Unauthenticated
from .pds import StoreManager
from .registry import AlgorithmRegistry

ROLES = ("member", "querier", "operator", "steward", "cooperative-self")


@dataclass
class NodeConfig:
    name: str = "coop"
    k_threshold: int = 5
    token_lifetime: float = 600.0
    session_idle_expiry: float = 3600.0
    transactional_max: float = TRANSACTIONAL_MAX
    static_max: float = STATIC_MAX
    handshake_stages: int = 3
    listen_address: str = "127.0.0.1:8400"
    persistence_dir: str = "./coopnode-data"
    operator_mode: bool = False
    tenant_label: str = ""
    storage_dir: Optional[str] = None  # override for operator-hosted storage

    def validate(self) -> None:
        if self.k_threshold < 2:
            raise ConfigError("k_threshold must be >= 2")
        for attr in ("token_lifetime", "session_idle_expiry", "transactional_max", "static_max"):
            if getattr(self, attr) <= 0:
                raise ConfigError(f"{attr} must be positive")
        if self.handshake_stages < 1:
            raise ConfigError("handshake_stages must be >= 1")

    @classmethod
    def from_file(cls, path: str) -> "NodeConfig":
        """Flat ``key = value`` config file; '#' starts a comment."""
        kwargs = {}
        numeric = {
            "k_threshold": int,
            "token_lifetime": float,
            "session_idle_expiry": float,
            "transactional_max": float,
            "static_max": float,
            "handshake_stages": int,
        }
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"bad config line: {raw.strip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                key = key.replace("-", "_")
                if key in numeric:
                    kwargs[key] = numeric[key](value)
                elif key == "operator_mode":
                    kwargs[key] = value.lower() in ("1", "true", "yes")
                elif key in cls.__dataclass_fields__:
                    kwargs[key] = value
                else:
                    raise ConfigError(f"unknown config key {key!r}")
        config = cls(**kwargs)
        config.validate()
        return config


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "p"


class CoopNode:
    """In-process cooperative node; the HTTP layer in api.py wraps this."""

    def __init__(
        self,
        config: NodeConfig,
        clock: Optional[Clock] = None,
        seed: Optional[int] = None,
    ) -> None:
        config.validate()
        self.config = config
        self.clock = clock or Clock()
        if seed is not None:
            rng = random.Random(seed)
            self._rng_bytes = rng.randbytes
        else:
            self._rng_bytes = secrets.token_bytes
        self._rng_hex = lambda n: self._rng_bytes(n).hex()

        base = config.persistence_dir
        storage = config.storage_dir or os.path.join(base, "storage")
        secrets_dir = os.path.join(base, "secrets")
        os.makedirs(base, exist_ok=True)

        self.audit = AuditLog(os.path.join(base, "audit", "audit.jsonl"), self.clock)
        self.principals: dict[str, Principal] = {}
        self._credentials: dict[str, str] = {}
        self._lock = threading.Lock()

        self.stores = StoreManager(
            storage,
            secrets_dir,
            self.audit,
            self.clock,
            is_member=lambda m: m in self.principals
            and self.principals[m].role == "member",
            rng_hex=self._rng_hex,
            rng_bytes=self._rng_bytes,
        )
        self.registry = AlgorithmRegistry(self.audit, self.clock)
        stage_texts = default_clauses()[: config.handshake_stages]
        if config.handshake_stages > len(stage_texts):
            from .authz import ObligationClause
            from .canonical import sha256_hex

            for i in range(len(stage_texts), config.handshake_stages):
                text = f"Stage {i + 1} additional obligations."
                stage_texts.append(ObligationClause(f"C{i + 1}", text, sha256_hex(text), i + 1))
        self.authz = AuthzService(
            self.audit,
            self.registry,
            self.clock,
            clauses=stage_texts,
            token_lifetime=config.token_lifetime,
            session_idle_expiry=config.session_idle_expiry,
            rng_hex=self._rng_hex,
            get_principal=self.principals.get,
        )
        self.stores.set_introspector(self.authz.introspect)
        self.engine = OpalEngine(
            self.stores,
            self.registry,
            self.authz,
            self.audit,
            self.clock,
            policy=SafeAnswerPolicy(k_threshold=config.k_threshold),
            results_dir=os.path.join(base, "results"),
            rng_hex=self._rng_hex,
        )
        self.keyring = KeyRing(self._rng_bytes(32))
        self.assertions = AssertionService(
            self.engine,
            self.registry,
            self.authz,
            self.audit,
            self.keyring,
            self.clock,
            issuer=config.name,
            pairwise_secret=self._rng_bytes(32),
            transactional_max=config.transactional_max,
            static_max=config.static_max,
            rng_hex=self._rng_hex,
            get_principal=self.principals.get,
        )
        # out-of-band bootstrap: the initial steward credential
        steward = self.enroll("steward", "bootstrap-steward", _bootstrap=True)
        self.bootstrap_credential = steward.credential

    # ------------------------------------------------------------ principals

    def enroll(
        self,
        role: str,
        legal_name: str,
        credentials: Optional[str] = None,
        year_of_birth: Optional[int] = None,
        verify_key_b64: Optional[str] = None,
        principal_id: Optional[str] = None,
        _bootstrap: bool = False,
    ) -> Principal:
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}")
        with self._lock:
            credential = credentials or self._rng_hex(16)
            if credential in self._credentials:
                raise DuplicateCredential("credentials already enrolled")
            pid = principal_id or _slug(legal_name)
            while pid in self.principals:
                pid = f"{pid}-{self._rng_hex(2)}"
            principal = Principal(
                principal_id=pid,
                role=role,
                legal_name=legal_name,
                credential=credential,
                verify_key_b64=verify_key_b64,
                year_of_birth=year_of_birth,
            )
            self.principals[pid] = principal
            self._credentials[credential] = pid
        self.audit.append(
            "enrollment", pid, {"role": role, "principal_id": pid}
        )
        return principal

    def authenticate(self, credential: Optional[str]) -> Principal:
        pid = self._credentials.get(credential or "")
        if pid is None:
            raise Unauthenticated("unknown credential")
        return self.principals[pid]

    def get_principal(self, principal_id: str) -> Optional[Principal]:
        return self.principals.get(principal_id)

    def members(self) -> list[Principal]:
        return [p for p in self.principals.values() if p.role == "member"]


class OperatorHost:
    """One operator process persisting ciphertext for several cooperatives.

    Tenants keep their own secrets and keys; the host sees storage bytes only
    and may not read across tenants. The per-tenant label is the cosmetic
    differentiation surface.
    """

    def __init__(self, operator_dir: str, operator_name: str = "cuso") -> None:
        self.operator_dir = operator_dir
        self.operator_name = operator_name
        self.tenants: dict[str, CoopNode] = {}
        os.makedirs(operator_dir, exist_ok=True)

    def add_tenant(self, config: NodeConfig, clock=None, seed=None) -> CoopNode:
        tenant = config.name
        if tenant in self.tenants:
            raise ConfigError(f"tenant {tenant!r} already hosted")
        config.storage_dir = os.path.join(self.operator_dir, tenant, "storage")
        node = CoopNode(config, clock=clock, seed=seed)
        self.tenants[tenant] = node
        return node

    def tenant_label(self, tenant: str) -> str:
        node = self.tenants.get(tenant)
        if node is None:
            raise AccessDenied(f"unknown tenant {tenant!r}")
        return node.config.tenant_label or tenant

    def list_tenant_storage(self, tenant: str, credential: str) -> list[str]:
        """Storage listing, gated to the requesting tenant's own steward."""
        node = self.tenants.get(tenant)
        if node is None:
            raise AccessDenied(f"unknown tenant {tenant!r}")
        principal = node.authenticate(credential)
        if principal.role != "steward":
            raise AccessDenied("storage listing is steward-only")
        path = os.path.join(self.operator_dir, tenant, "storage")
        if not os.path.isdir(path):
            return []
        return sorted(os.listdir(path))

    def persisted_bytes(self) -> bytes:
        """Everything the operator can see on disk, for opacity scans."""
        chunks = []
        for root, _dirs, files in os.walk(self.operator_dir):
            for fname in sorted(files):
                with open(os.path.join(root, fname), "rb") as fh:
                    chunks.append(fh.read())
        return b"".join(chunks)
