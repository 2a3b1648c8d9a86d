"""Append-only hash-chained audit log.

Every consent, binding, execution and issuance leaves exactly one event here,
so that valid consent at processing time can be demonstrated after the fact.
Events are chained with SHA-256 over their canonical bytes; tampering with any
persisted event breaks verification at that sequence number.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .canonical import canonical_json, sha256_hex
from .clock import Clock
from .errors import UnknownEntity

GENESIS_HASH = "0" * 64

EVENT_TYPES = {
    "enrollment",
    "store-op",
    "vetting",
    "session-stage",
    "token",
    "consent",
    "execution",
    "assertion",
    "receipt",
}


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    event_type: str
    actor: str
    refs: dict
    at: float
    prev_hash: str
    this_hash: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "event_type": self.event_type,
            "actor": self.actor,
            "refs": self.refs,
            "at": self.at,
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }


def _event_hash(body: dict, prev_hash: str) -> str:
    return sha256_hex(canonical_json(body) + prev_hash.encode("ascii"))


class AuditLog:
    """Single-appender chained log; readers are freely concurrent."""

    def __init__(self, path: Optional[str] = None, clock: Optional[Clock] = None) -> None:
        self._path = path
        self._clock = clock or Clock()
        self._events: list[AuditEvent] = []
        self._lock = threading.Lock()
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def append(self, event_type: str, actor: str, refs: dict) -> int:
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown audit event type {event_type!r}")
        with self._lock:
            seq = len(self._events)
            prev = self._events[-1].this_hash if self._events else GENESIS_HASH
            body = {
                "seq": seq,
                "event_type": event_type,
                "actor": actor,
                "refs": refs,
                "at": self._clock.now(),
                "prev_hash": prev,
            }
            event = AuditEvent(this_hash=_event_hash(body, prev), **body)
            self._events.append(event)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(canonical_json(event.to_dict()).decode("utf-8") + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            return seq

    def __len__(self) -> int:
        return len(self._events)

    def events(self) -> list[AuditEvent]:
        return list(self._events)

    def get(self, seq: int) -> AuditEvent:
        try:
            return self._events[seq]
        except IndexError:
            raise UnknownEntity(f"no audit event with seq {seq}") from None

    def find(self, event_type: Optional[str] = None, **ref_filters) -> list[AuditEvent]:
        out = []
        for ev in self._events:
            if event_type and ev.event_type != event_type:
                continue
            if all(ev.refs.get(k) == v for k, v in ref_filters.items()):
                out.append(ev)
        return out

    def demonstrate_consent(self, execution_ref: str) -> dict:
        """Proof bundle linking an execution to its consent or directive event.

        Aggregate executions cite the access token and binding session instead
        of a subject consent. The bundle verifies offline with verify_chain.
        """
        matches = self.find("execution", request_id=execution_ref)
        if not matches:
            matches = [e for e in self.find("execution") if execution_ref in e.refs.values()]
        if not matches:
            raise UnknownEntity(f"no execution event for {execution_ref!r}")
        exec_ev = matches[0]
        basis_ev = None
        basis_seq = exec_ev.refs.get("consent_seq")
        if basis_seq is None:
            basis_seq = exec_ev.refs.get("directive_seq")
        if basis_seq is not None:
            basis_ev = self.get(int(basis_seq))
        else:
            # aggregate path: cite token issuance for the executing token
            token_ref = exec_ev.refs.get("token_id")
            token_events = self.find("token", token_id=token_ref)
            if token_events:
                basis_ev = token_events[0]
        if basis_ev is None:
            raise UnknownEntity("execution has no consent, directive or token basis")
        lo, hi = basis_ev.seq, exec_ev.seq
        segment = [e.to_dict() for e in self._events[lo : hi + 1]]
        anchor = self._events[lo].prev_hash
        return {
            "execution": exec_ev.to_dict(),
            "basis": basis_ev.to_dict(),
            "chain": segment,
            "anchor": anchor,
        }


def verify_chain(events: Iterable[dict], anchor: str) -> tuple[bool, Optional[int]]:
    """Check a contiguous slice against its anchor hash.

    Returns (True, None) on success or (False, seq) at the first break.
    An empty slice with a matching anchor is trivially valid.
    """
    prev = anchor
    for ev in events:
        body = {k: ev[k] for k in ("seq", "event_type", "actor", "refs", "at", "prev_hash")}
        if ev["prev_hash"] != prev or ev["this_hash"] != _event_hash(body, ev["prev_hash"]):
            return False, ev["seq"]
        prev = ev["this_hash"]
    return True, None


def verify_bundle(bundle: dict) -> bool:
    ok, _ = verify_chain(bundle["chain"], bundle["anchor"])
    if not ok:
        return False
    seqs = [e["seq"] for e in bundle["chain"]]
    return bundle["basis"]["seq"] == seqs[0] and bundle["execution"]["seq"] == seqs[-1]
