"""Aggregate execution engine.

Ships compiled programs to each in-scope store, merges the mergeable
partials exactly (Σsum/Σcount for means, pointwise for the rest), then
applies the safe-answer policy: any cell backed by fewer than k distinct
members is replaced by a bare suppression marker that reveals neither the
values nor the sub-k count.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from . import dsl
from .canonical import canonical_json, sha256_hex
from .clock import Clock
from .errors import ConsentRequired, CoopError, InvalidToken, NotVetted
from .registry import AlgorithmManifest

SUPPRESSED = "suppressed"


class ProgramMismatch(CoopError):
    code = "program-digest-mismatch"


class OutputModeMismatch(CoopError):
    code = "output-mode-mismatch"


class _SkipRecord(Exception):
    pass


@dataclass
class SafeAnswerPolicy:
    k_threshold: int = 5
    suppression_marker: str = SUPPRESSED
    noise_hook: Optional[Callable[[dict], dict]] = None  # identity when None

    def __post_init__(self):
        if self.k_threshold < 2:
            raise ValueError("k_threshold must be >= 2")


# ------------------------------------------------------------ group keys

def bucket_key(value, width: float) -> float:
    # Exact rational division before flooring: the bucket index must not
    # depend on float rounding of value / width.
    return math.floor(Fraction(value) / Fraction(width)) * width


def geosector_key(lat: float, lon: float, size: float) -> str:
    return f"g{math.floor(Fraction(lat) / Fraction(size))},{math.floor(Fraction(lon) / Fraction(size))}"


def _key_repr(key) -> str:
    return json.dumps(key, sort_keys=True)


# ------------------------------------------------------------ compiled form

@dataclass(frozen=True)
class CompiledProgram:
    """Executable form of a vetted manifest; field access fixed to requires."""

    algo_id: str
    version: int
    output_mode: str
    digest: str
    program: dsl.Program
    allowed: frozenset[str]
    referenced: frozenset[str]

    # Field expressions are evaluated in exact rational arithmetic so that
    # partial-sum merging is truly associative: any partition of the records
    # across stores yields bit-identical released sums and means.
    def _eval_fexpr(self, e, rec: dict) -> Fraction:
        if isinstance(e, dsl.Num):
            return Fraction(e.value)
        if isinstance(e, dsl.Field):
            if e.name not in rec:
                raise _SkipRecord()
            v = rec[e.name]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise _SkipRecord()
            return Fraction(v)
        lv = self._eval_fexpr(e.left, rec)
        rv = self._eval_fexpr(e.right, rec)
        if e.op == "+":
            return lv + rv
        if e.op == "-":
            return lv - rv
        if e.op == "*":
            return lv * rv
        if rv == 0:
            raise _SkipRecord()
        return lv / rv

    def _eval_pred(self, p, rec: dict) -> bool:
        if isinstance(p, dsl.BoolOp):
            if p.op == "and":
                return self._eval_pred(p.left, rec) and self._eval_pred(p.right, rec)
            return self._eval_pred(p.left, rec) or self._eval_pred(p.right, rec)
        lv = self._eval_fexpr(p.left, rec)
        rv = self._eval_fexpr(p.right, rec)
        return {
            "<": lv < rv,
            "<=": lv <= rv,
            ">": lv > rv,
            ">=": lv >= rv,
            "==": lv == rv,
            "!=": lv != rv,
        }[p.op]

    def _group_key(self, key: dsl.GroupKey, rec: dict):
        if key.field.name not in rec:
            raise _SkipRecord()
        v = rec[key.field.name]
        if key.kind == "field":
            if not isinstance(v, str):
                raise _SkipRecord()
            return v
        if key.kind == "bucket":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise _SkipRecord()
            return bucket_key(float(v), key.param)
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise _SkipRecord()
        return geosector_key(float(v[0]), float(v[1]), key.param)

    def evaluate(self, records: list[dict]) -> dict:
        """Partial aggregates per group key; key None for ungrouped programs."""
        body = self.program.body
        grouped = isinstance(body, dsl.GroupBy)
        agg = body.agg if grouped else body
        groups: dict = {}
        for rec in records:
            try:
                if self.program.where is not None and not self._eval_pred(
                    self.program.where, rec
                ):
                    continue
                key = self._group_key(body.key, rec) if grouped else None
                if isinstance(agg, dsl.Projection) or isinstance(body, dsl.Projection):
                    value = self._eval_fexpr(body.expr, rec)
                    part = groups.setdefault(key, {"project": [], "_records": 0})
                    part["project"].append(value)
                    part["_records"] += 1
                    continue
                value = None
                if agg.fn != "count":
                    value = self._eval_fexpr(agg.arg, rec)
            except _SkipRecord:
                continue
            part = groups.setdefault(key, self._empty_partial(agg))
            part["_records"] += 1
            if agg.fn == "count":
                part["count"] += 1
            elif agg.fn == "sum":
                part["sum"] += value
            elif agg.fn == "mean":
                part["sum"] += value
                part["count"] += 1
            elif agg.fn == "min":
                part["min"] = value if part["min"] is None else min(part["min"], value)
            elif agg.fn == "max":
                part["max"] = value if part["max"] is None else max(part["max"], value)
            elif agg.fn == "histogram":
                if agg.lo <= value < agg.hi:
                    b = bucket_key(value - Fraction(agg.lo), agg.width) + agg.lo
                    bkey = json.dumps(b)
                    part["histogram"][bkey] = part["histogram"].get(bkey, 0) + 1
        return groups

    @staticmethod
    def _empty_partial(agg: dsl.Agg) -> dict:
        base = {"_records": 0}
        if agg.fn == "count":
            base["count"] = 0
        elif agg.fn == "sum":
            base["sum"] = Fraction(0)
        elif agg.fn == "mean":
            base["sum"] = Fraction(0)
            base["count"] = 0
        elif agg.fn == "min":
            base["min"] = None
        elif agg.fn == "max":
            base["max"] = None
        elif agg.fn == "histogram":
            base["histogram"] = {}
        return base


def compile_manifest(manifest: AlgorithmManifest) -> CompiledProgram:
    if manifest.vetting.state != "vetted":
        raise NotVetted(f"{manifest.algo_id} v{manifest.version} is not vetted")
    program = dsl.parse(manifest.source)
    return CompiledProgram(
        algo_id=manifest.algo_id,
        version=manifest.version,
        output_mode=manifest.output_mode,
        digest=sha256_hex(manifest.source),
        program=program,
        allowed=frozenset(f.name for f in manifest.requires),
        referenced=frozenset(dsl.referenced_fields(program)),
    )


# ------------------------------------------------------------ merging

def merge_partials(partials: list, compiled: CompiledProgram) -> dict:
    """Pointwise merge; equals single-pass evaluation over the record union."""
    merged: dict = {}
    for local in partials:
        if local.program_digest != compiled.digest:
            raise ProgramMismatch("partials come from different programs")
        for key, part in local.groups.items():
            tgt = merged.get(key)
            if tgt is None:
                merged[key] = {
                    k: (dict(v) if isinstance(v, dict) else (list(v) if isinstance(v, list) else v))
                    for k, v in part.items()
                }
                continue
            tgt["_records"] += part["_records"]
            if "count" in part:
                tgt["count"] += part["count"]
            if "sum" in part:
                tgt["sum"] += part["sum"]
            if "min" in part:
                vals = [v for v in (tgt["min"], part["min"]) if v is not None]
                tgt["min"] = min(vals) if vals else None
            if "max" in part:
                vals = [v for v in (tgt["max"], part["max"]) if v is not None]
                tgt["max"] = max(vals) if vals else None
            if "histogram" in part:
                for b, n in part["histogram"].items():
                    tgt["histogram"][b] = tgt["histogram"].get(b, 0) + n
            if "project" in part:
                tgt["project"].extend(part["project"])
    return merged


def finalize_partial(part: dict) -> dict:
    """Turn a merged partial into the released aggregate values."""
    out = {}
    if "count" in part and "sum" in part:
        out["mean"] = float(part["sum"] / part["count"]) if part["count"] else None
    elif "count" in part:
        out["count"] = part["count"]
    elif "sum" in part:
        out["sum"] = float(part["sum"])
    if "min" in part:
        out["min"] = None if part["min"] is None else float(part["min"])
    if "max" in part:
        out["max"] = None if part["max"] is None else float(part["max"])
    if "histogram" in part:
        out["histogram"] = [
            [json.loads(b), n] for b, n in sorted(part["histogram"].items(), key=lambda kv: json.loads(kv[0]))
        ]
    if "project" in part:
        out["values"] = [float(v) for v in sorted(part["project"])]
    return out


def apply_safe_answer(merged: dict, member_counts: dict, policy: SafeAnswerPolicy) -> list[dict]:
    """k-suppression over *distinct members*; suppressed cells carry nothing."""
    cells = []
    for key in sorted(merged.keys(), key=_key_repr):
        part = merged[key]
        if part["_records"] == 0:
            continue
        count = member_counts.get(key, 0)
        if count < policy.k_threshold:
            cells.append({"key": key, policy.suppression_marker: True})
            continue
        values = finalize_partial(part)
        if policy.noise_hook is not None:
            values = policy.noise_hook(values)
        cells.append({"key": key, "values": values, "members": count})
    return cells


# ------------------------------------------------------------ requests

def scope_string(scope) -> str:
    kind = scope[0]
    if kind == "all-members":
        return "all-members"
    if kind == "member-set":
        return "member-set:" + ",".join(sorted(scope[1]))
    if kind == "single-subject":
        return "single-subject:" + scope[1]
    raise ValueError(f"bad scope {scope!r}")


def parse_scope(text: str):
    if text == "all-members" or text == "all":
        return ("all-members",)
    if text.startswith("member-set:"):
        return ("member-set", sorted(text.split(":", 1)[1].split(",")))
    if text.startswith("single-subject:") or text.startswith("subject:"):
        return ("single-subject", text.split(":", 1)[1])
    raise ValueError(f"bad scope {text!r}")


@dataclass(frozen=True)
class QueryResult:
    request_id: str
    cells: list
    executed_at: float
    audit_ref: int

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "cells": self.cells,
            "executed_at": self.executed_at,
            "audit_ref": self.audit_ref,
        }


class OpalEngine:
    def __init__(
        self,
        stores,
        registry,
        authz,
        audit,
        clock: Optional[Clock] = None,
        policy: Optional[SafeAnswerPolicy] = None,
        results_dir: Optional[str] = None,
        rng_hex: Optional[Callable[[int], str]] = None,
    ) -> None:
        self._stores = stores
        self._registry = registry
        self._authz = authz
        self._audit = audit
        self._clock = clock or Clock()
        self.policy = policy or SafeAnswerPolicy()
        self._results_dir = results_dir
        self._rng_hex = rng_hex or (lambda n: os.urandom(n).hex())
        self._lock = threading.Lock()
        if results_dir:
            os.makedirs(results_dir, exist_ok=True)

    def compile(self, manifest: AlgorithmManifest) -> CompiledProgram:
        return compile_manifest(manifest)

    def _scope_members(self, scope) -> list[str]:
        kind = scope[0]
        if kind == "all-members":
            return sorted({s.owner for s in self._stores.all_stores()})
        if kind == "member-set":
            return sorted(set(scope[1]))
        return [scope[1]]

    def execute(
        self,
        algo: tuple[str, int],
        scope,
        requester: str,
        purpose: str,
        token_id: str,
        directive_seq: Optional[int] = None,
        policy: Optional[SafeAnswerPolicy] = None,
    ) -> QueryResult:
        policy = policy or self.policy
        info = self._authz.introspect(token_id)
        if not info.get("active"):
            raise InvalidToken("execution token is not active")
        grants = info["grants"]
        if info["holder"] != requester:
            raise InvalidToken("token holder does not match requester")
        if (grants["algo_id"], grants["version"]) != (algo[0], int(algo[1])):
            raise InvalidToken("token not issued for this algorithm")
        if grants["scope"] != scope_string(scope):
            raise InvalidToken("token not issued for this scope")
        if grants["purpose"] != purpose:
            raise InvalidToken("token not issued for this purpose")

        manifest = self._registry.get(*algo)
        if manifest.vetting.state != "vetted":
            raise NotVetted("unvetted algorithms never execute")
        single_subject = scope[0] == "single-subject"
        if not single_subject and manifest.output_mode != "aggregate":
            raise OutputModeMismatch("subject-mode output requires single-subject scope")

        consent_seq = None
        if single_subject and directive_seq is None:
            subject = scope[1]
            grant = self._authz.check_consent(
                subject, algo, purpose, requester, at=self._clock.now()
            )
            if grant is None:
                handle = self._authz.create_pending_request(
                    subject, algo, purpose, requester, scope_string(scope)
                )
                raise ConsentRequired(handle)
            consent_seq = grant.audit_seq

        compiled = self.compile(manifest)
        members = self._scope_members(scope)
        partials = []
        for member in members:
            for store in self._stores.stores_of(member):
                if store.status != "active":
                    continue
                if not compiled.referenced <= {f.name for f in store.schema}:
                    continue
                partials.append(self._stores.local_evaluate(store.store_id, compiled, token_id))

        merged = merge_partials(partials, compiled)
        member_counts: dict = {}
        for local in partials:
            for key, part in local.groups.items():
                if part["_records"] > 0:
                    member_counts.setdefault(key, set()).add(local.owner)
        member_counts = {k: len(v) for k, v in member_counts.items()}

        if single_subject and manifest.output_mode == "subject":
            cells = []
            for key in sorted(merged.keys(), key=_key_repr):
                part = merged[key]
                if part["_records"] == 0:
                    continue
                cells.append(
                    {"key": key, "values": finalize_partial(part), "members": member_counts[key]}
                )
        else:
            cells = apply_safe_answer(merged, member_counts, policy)

        request_id = "req-" + self._rng_hex(8)
        refs = {
            "request_id": request_id,
            "algo_id": algo[0],
            "version": int(algo[1]),
            "scope": scope_string(scope),
            "purpose": purpose,
            "token_id": token_id,
        }
        if consent_seq is not None:
            refs["consent_seq"] = consent_seq
        if directive_seq is not None:
            refs["directive_seq"] = directive_seq
        audit_ref = self._audit.append("execution", requester, refs)
        result = QueryResult(
            request_id=request_id,
            cells=cells,
            executed_at=self._clock.now(),
            audit_ref=audit_ref,
        )
        if self._results_dir:
            path = os.path.join(self._results_dir, f"{request_id}.json")
            with open(path, "wb") as fh:
                fh.write(canonical_json(result.to_dict()))
        return result
