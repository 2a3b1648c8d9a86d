"""Member-controlled personal data stores.

The only component allowed to touch raw record values. Records are encrypted
at rest with one AES-GCM data key per store; the key lives in the
cooperative's key scope (secrets dir), never in the hosted storage bytes, so
an operator holding the storage files can read nothing.

Algorithms come to the data: local_evaluate runs a compiled program against a
consistent snapshot of one store's records and returns only mergeable partial
aggregates plus a contributing-record count.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .canonical import canonical_json, parse_rfc3339
from .clock import Clock
from .errors import (
    DuplicateFieldName,
    EmptySchema,
    InvalidToken,
    NotOwner,
    SchemaViolation,
    StoreSuspended,
    UndeclaredField,
    UnknownEntity,
    UnknownMember,
)

FIELD_KINDS = ("number", "text", "timestamp", "geo")
HOSTING_COOP = "cooperative-hosted"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    unit: Optional[str] = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not self.name:
            raise ValueError("empty field name")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.unit:
            d["unit"] = self.unit
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        return cls(d["name"], d["kind"], d.get("unit"))


def check_value(kind: str, value):
    """Type-check and normalize one field value; returns the stored form."""
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected number")
        return float(value)
    if kind == "text":
        if not isinstance(value, str):
            raise TypeError("expected text")
        return value
    if kind == "timestamp":
        if isinstance(value, str):
            return parse_rfc3339(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected timestamp")
        return float(value)
    if kind == "geo":
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
        ):
            raise TypeError("expected [lat, lon]")
        return [float(value[0]), float(value[1])]
    raise ValueError(kind)


@dataclass
class PersonalDataStore:
    store_id: str
    owner: str
    hosting: str
    status: str  # active | suspended
    schema: tuple[FieldSpec, ...]
    created_at: float

    def to_dict(self) -> dict:
        return {
            "store_id": self.store_id,
            "owner": self.owner,
            "hosting": self.hosting,
            "status": self.status,
            "schema": [f.to_dict() for f in self.schema],
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class LocalResult:
    """Mergeable partial aggregates from one store; never raw values."""

    store_id: str
    owner: str
    program_digest: str
    groups: dict  # group key -> {agg partials, "_records": contributing count}


class _StoreState:
    def __init__(self, meta: PersonalDataStore, key: bytes) -> None:
        self.meta = meta
        self.key = key
        self.records: dict[str, dict] = {}
        self.order: list[str] = []
        self.lock = threading.RLock()


class StoreManager:
    """Owns all stores of one cooperative, plus their data keys.

    ``storage_dir`` holds only ciphertext and schema headers and is the part
    an outsourced operator may host; ``secrets_dir`` holds the data keys and
    never leaves the cooperative.
    """

    def __init__(
        self,
        storage_dir: str,
        secrets_dir: str,
        audit,
        clock: Optional[Clock] = None,
        is_member: Callable[[str], bool] = lambda m: True,
        rng_hex: Optional[Callable[[int], str]] = None,
        rng_bytes: Optional[Callable[[int], bytes]] = None,
    ) -> None:
        self._storage_dir = storage_dir
        self._secrets_dir = secrets_dir
        self._audit = audit
        self._clock = clock or Clock()
        self._is_member = is_member
        self._rng_hex = rng_hex or (lambda n: os.urandom(n).hex())
        self._rng_bytes = rng_bytes or os.urandom
        self._introspect: Optional[Callable[[str], dict]] = None
        self._stores: dict[str, _StoreState] = {}
        self._reg_lock = threading.Lock()
        os.makedirs(storage_dir, exist_ok=True)
        os.makedirs(secrets_dir, exist_ok=True)

    def set_introspector(self, fn: Callable[[str], dict]) -> None:
        self._introspect = fn

    # ------------------------------------------------------------ helpers

    def _state(self, store_id: str) -> _StoreState:
        st = self._stores.get(store_id)
        if st is None:
            raise UnknownEntity(f"unknown store {store_id!r}")
        return st

    def _store_path(self, store_id: str) -> str:
        return os.path.join(self._storage_dir, f"{store_id}.pds")

    def _key_path(self) -> str:
        return os.path.join(self._secrets_dir, "store-keys.json")

    def _persist_key(self, store_id: str, key: bytes) -> None:
        path = self._key_path()
        keys = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                keys = json.load(fh)
        keys[store_id] = base64.b64encode(key).decode("ascii")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(keys, fh)

    def _encrypt(self, key: bytes, values: dict) -> tuple[str, str]:
        nonce = self._rng_bytes(12)
        ct = AESGCM(key).encrypt(nonce, canonical_json(values), None)
        return base64.b64encode(nonce).decode("ascii"), base64.b64encode(ct).decode("ascii")

    @staticmethod
    def _decrypt(key: bytes, nonce_b64: str, ct_b64: str) -> dict:
        nonce = base64.b64decode(nonce_b64)
        ct = base64.b64decode(ct_b64)
        return json.loads(AESGCM(key).decrypt(nonce, ct, None).decode("utf-8"))

    def _append_line(self, store_id: str, obj: dict) -> None:
        with open(self._store_path(store_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    # ------------------------------------------------------------ lifecycle

    def create_store(
        self,
        owner: str,
        schema: Iterable[FieldSpec],
        hosting: str = HOSTING_COOP,
        caller: Optional[str] = None,
    ) -> PersonalDataStore:
        if not self._is_member(owner):
            raise UnknownMember(f"{owner!r} is not an enrolled member")
        if caller is not None and caller != owner:
            raise NotOwner("stores are created by their owner")
        schema = tuple(schema)
        if not schema:
            raise EmptySchema("store schema must not be empty")
        names = [f.name for f in schema]
        if len(set(names)) != len(names):
            raise DuplicateFieldName("field names must be unique")
        store_id = "pds-" + self._rng_hex(8)
        meta = PersonalDataStore(
            store_id=store_id,
            owner=owner,
            hosting=hosting,
            status="active",
            schema=schema,
            created_at=self._clock.now(),
        )
        key = self._rng_bytes(32)
        with self._reg_lock:
            self._stores[store_id] = _StoreState(meta, key)
        self._persist_key(store_id, key)
        self._append_line(store_id, {"header": meta.to_dict()})
        self._audit.append("store-op", owner, {"op": "create", "store_id": store_id})
        return meta

    def get_store(self, store_id: str) -> PersonalDataStore:
        return self._state(store_id).meta

    def stores_of(self, member: str) -> list[PersonalDataStore]:
        return [s.meta for s in self._stores.values() if s.meta.owner == member]

    def all_stores(self) -> list[PersonalDataStore]:
        return [s.meta for s in self._stores.values()]

    def set_store_status(self, store_id: str, status: str, caller: str) -> PersonalDataStore:
        if status not in ("active", "suspended"):
            raise ValueError(f"bad status {status!r}")
        st = self._state(store_id)
        with st.lock:
            if caller != st.meta.owner:
                raise NotOwner("only the owner may change store status")
            st.meta.status = status
            self._append_line(store_id, {"status": status})
        self._audit.append(
            "store-op", caller, {"op": "status", "store_id": store_id, "status": status}
        )
        return st.meta

    # ------------------------------------------------------------ records

    def _typecheck(self, schema: tuple[FieldSpec, ...], values: dict) -> dict:
        by_name = {f.name: f for f in schema}
        out = {}
        for name, raw in values.items():
            spec = by_name.get(name)
            if spec is None:
                raise SchemaViolation(name, f"field {name!r} not in store schema")
            try:
                out[name] = check_value(spec.kind, raw)
            except TypeError as exc:
                raise SchemaViolation(name, f"field {name!r}: {exc}") from None
        return out

    def ingest_records(self, store_id: str, records: list[dict], caller: str) -> list[str]:
        st = self._state(store_id)
        with st.lock:
            if caller != st.meta.owner:
                raise NotOwner("only the owner may ingest records")
            if st.meta.status != "active":
                raise StoreSuspended(f"store {store_id} is suspended")
            checked = [self._typecheck(st.meta.schema, r) for r in records]
            ids = []
            now = self._clock.now()
            for values in checked:
                rid = "rec-" + self._rng_hex(8)
                nonce, ct = self._encrypt(st.key, values)
                self._append_line(
                    store_id,
                    {"record_id": rid, "ingested_at": now, "nonce": nonce, "ct": ct},
                )
                st.records[rid] = values
                st.order.append(rid)
                ids.append(rid)
        self._audit.append(
            "store-op", caller, {"op": "ingest", "store_id": store_id, "count": len(ids)}
        )
        return ids

    def remove_records(self, store_id: str, selector, caller: str) -> int:
        st = self._state(store_id)
        with st.lock:
            if caller != st.meta.owner:
                raise NotOwner("only the owner may remove records")
            if selector == "all":
                victims = list(st.order)
            else:
                victims = [r for r in selector if r in st.records]
            for rid in victims:
                st.records.pop(rid, None)
            st.order = [r for r in st.order if r in st.records]
            if victims:
                self._append_line(store_id, {"remove": victims})
        self._audit.append(
            "store-op", caller, {"op": "remove", "store_id": store_id, "count": len(victims)}
        )
        return len(victims)

    def record_count(self, store_id: str) -> int:
        return len(self._state(store_id).records)

    def read_records(self, store_id: str, caller: str) -> list[dict]:
        """Raw values, owner only. The single deliberate plaintext exit."""
        st = self._state(store_id)
        with st.lock:
            if caller != st.meta.owner:
                raise NotOwner("raw records are readable by the owner only")
            return [dict(st.records[r]) for r in st.order]

    # ------------------------------------------------------------ execution

    def local_evaluate(self, store_id: str, compiled, token_id: str) -> LocalResult:
        """Run a compiled program against this store's current snapshot.

        The token must introspect as active for the compiled algorithm; the
        program may touch only fields inside its manifest's declared set.
        """
        if self._introspect is None:
            raise InvalidToken("no introspection endpoint wired")
        info = self._introspect(token_id)
        if not info.get("active"):
            raise InvalidToken("execution token inactive")
        grants = info.get("grants") or {}
        if (grants.get("algo_id"), grants.get("version")) != (
            compiled.algo_id,
            compiled.version,
        ):
            raise InvalidToken("token not valid for this algorithm")
        undeclared = compiled.referenced - compiled.allowed
        if undeclared:
            raise UndeclaredField(
                f"program touches undeclared fields: {sorted(undeclared)}"
            )
        st = self._state(store_id)
        with st.lock:
            if st.meta.status != "active":
                raise StoreSuspended(f"store {store_id} is suspended")
            snapshot = [st.records[r] for r in st.order]
        groups = compiled.evaluate(snapshot)
        return LocalResult(
            store_id=store_id,
            owner=st.meta.owner,
            program_digest=compiled.digest,
            groups=groups,
        )

    # ------------------------------------------------------------ backup

    def export_store(self, store_id: str, caller: str) -> bytes:
        """Encrypted archive: length-prefixed schema header + ciphertext records."""
        st = self._state(store_id)
        with st.lock:
            if caller != st.meta.owner:
                raise NotOwner("only the owner may export a store")
            chunks = [canonical_json(st.meta.to_dict())]
            now = self._clock.now()
            for rid in st.order:
                nonce, ct = self._encrypt(st.key, st.records[rid])
                chunks.append(
                    canonical_json(
                        {"record_id": rid, "ingested_at": now, "nonce": nonce, "ct": ct}
                    )
                )
        out = b""
        for chunk in chunks:
            out += struct.pack(">I", len(chunk)) + chunk
        return out

    def import_store(self, archive: bytes, caller: str) -> PersonalDataStore:
        chunks = []
        i = 0
        while i < len(archive):
            (n,) = struct.unpack(">I", archive[i : i + 4])
            chunks.append(json.loads(archive[i + 4 : i + 4 + n]))
            i += 4 + n
        header = chunks[0]
        if caller != header["owner"]:
            raise NotOwner("only the owner may import their store")
        old_id = header["store_id"]
        old_state = self._stores.get(old_id)
        if old_state is None:
            raise UnknownEntity("importing into a cooperative without the store key")
        meta = self.create_store(
            header["owner"],
            [FieldSpec.from_dict(f) for f in header["schema"]],
            header["hosting"],
            caller=caller,
        )
        st = self._state(meta.store_id)
        with st.lock:
            for rec in chunks[1:]:
                values = self._decrypt(old_state.key, rec["nonce"], rec["ct"])
                rid = rec["record_id"]
                nonce, ct = self._encrypt(st.key, values)
                self._append_line(
                    meta.store_id,
                    {
                        "record_id": rid,
                        "ingested_at": rec["ingested_at"],
                        "nonce": nonce,
                        "ct": ct,
                    },
                )
                st.records[rid] = values
                st.order.append(rid)
        return meta

    def load_persisted(self) -> int:
        """Rebuild in-memory state from storage + secrets dirs (restart path)."""
        path = self._key_path()
        if not os.path.exists(path):
            return 0
        with open(path, encoding="utf-8") as fh:
            keys = {k: base64.b64decode(v) for k, v in json.load(fh).items()}
        loaded = 0
        for fname in sorted(os.listdir(self._storage_dir)):
            if not fname.endswith(".pds"):
                continue
            store_id = fname[:-4]
            key = keys.get(store_id)
            if key is None:
                continue
            with open(os.path.join(self._storage_dir, fname), encoding="utf-8") as fh:
                lines = [json.loads(line) for line in fh if line.strip()]
            header = lines[0]["header"]
            meta = PersonalDataStore(
                store_id=header["store_id"],
                owner=header["owner"],
                hosting=header["hosting"],
                status=header["status"],
                schema=tuple(FieldSpec.from_dict(f) for f in header["schema"]),
                created_at=header["created_at"],
            )
            st = _StoreState(meta, key)
            for entry in lines[1:]:
                if "record_id" in entry:
                    st.records[entry["record_id"]] = self._decrypt(
                        key, entry["nonce"], entry["ct"]
                    )
                    st.order.append(entry["record_id"])
                elif "remove" in entry:
                    for rid in entry["remove"]:
                        st.records.pop(rid, None)
                    st.order = [r for r in st.order if r in st.records]
                elif "status" in entry:
                    meta.status = entry["status"]
            self._stores[store_id] = st
            loaded += 1
        return loaded
