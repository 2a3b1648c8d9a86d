"""Algorithm registry: parsing, static vetting, versioning, visibility.

Vetting is the gate that turns "safe algorithm" into a machine-checked
property. The mechanizable rules:

  R1  aggregate-mode programs must have an aggregate top-level form and may
      not project raw field values into the output
  R2  every field the program touches must be declared in ``requires``
      (data minimisation: the engine may only see declared fields)
  R3  every division needs a structurally nonzero or filter-guarded divisor
  R4  group-by keys must be bucketable: a text field, bucket() over a
      number field, or geosector() over a geo field
  R5  subject-mode programs must carry at least one purpose tag

Bias/discrimination review is not mechanizable here; manifests carry a
manual-review note field for it instead.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from . import dsl
from .canonical import sha256_hex
from .clock import Clock
from .errors import DuplicateAlgorithm, NotVetted, UnknownEntity
from .pds import FieldSpec

OUTPUT_MODES = ("aggregate", "subject")
VISIBILITIES = ("public", "cooperative-private")

MANIFEST_FIELDS = {
    "algo_id", "version", "title", "lay_description", "output_mode",
    "requires", "purpose_tags", "source", "visibility", "vetting",
    "manual_review_notes",
}


@dataclass(frozen=True)
class Finding:
    rule: str
    location: str  # "line:col"
    message: str

    def to_dict(self) -> dict:
        return {"rule": self.rule, "location": self.location, "message": self.message}


@dataclass(frozen=True)
class VettingStatus:
    state: str  # draft | vetted | rejected
    checked_at: Optional[float] = None
    findings: tuple[Finding, ...] = ()

    def to_dict(self) -> dict:
        return {
            "state": self.state,
            "checked_at": self.checked_at,
            "findings": [f.to_dict() for f in self.findings],
        }


@dataclass(frozen=True)
class AlgorithmManifest:
    algo_id: str
    version: int
    title: str
    lay_description: str
    output_mode: str
    requires: tuple[FieldSpec, ...]
    purpose_tags: tuple[str, ...]
    source: str
    visibility: str = "public"
    vetting: VettingStatus = field(default_factory=lambda: VettingStatus("draft"))
    manual_review_notes: str = ""

    def __post_init__(self):
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"bad output_mode {self.output_mode!r}")
        if self.visibility not in VISIBILITIES:
            raise ValueError(f"bad visibility {self.visibility!r}")
        if self.version < 1:
            raise ValueError("version must be >= 1")

    @property
    def ref(self) -> tuple[str, int]:
        return (self.algo_id, self.version)

    def description_digest(self) -> str:
        return sha256_hex(self.lay_description)

    def to_dict(self, include_source: bool = True) -> dict:
        d = {
            "algo_id": self.algo_id,
            "version": self.version,
            "title": self.title,
            "lay_description": self.lay_description,
            "output_mode": self.output_mode,
            "requires": [f.to_dict() for f in self.requires],
            "purpose_tags": list(self.purpose_tags),
            "visibility": self.visibility,
            "vetting": self.vetting.to_dict(),
            "manual_review_notes": self.manual_review_notes,
        }
        if include_source:
            d["source"] = self.source
        return d


def manifest_from_dict(d: dict) -> AlgorithmManifest:
    unknown = set(d) - MANIFEST_FIELDS
    if unknown:
        raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
    vetting = d.get("vetting")
    if isinstance(vetting, dict):
        vetting = VettingStatus(
            vetting.get("state", "draft"),
            vetting.get("checked_at"),
            tuple(Finding(**f) for f in vetting.get("findings", [])),
        )
    return AlgorithmManifest(
        algo_id=d["algo_id"],
        version=int(d["version"]),
        title=d.get("title", d["algo_id"]),
        lay_description=d.get("lay_description", ""),
        output_mode=d["output_mode"],
        requires=tuple(FieldSpec.from_dict(f) for f in d["requires"]),
        purpose_tags=tuple(d.get("purpose_tags", ())),
        source=d["source"],
        visibility=d.get("visibility", "public"),
        vetting=vetting or VettingStatus("draft"),
        manual_review_notes=d.get("manual_review_notes", ""),
    )


# ---------------------------------------------------------------- vetting

def _loc(span: Optional[dsl.Span]) -> str:
    return f"{span.line}:{span.col}" if span else "1:1"


def _guarded_nonzero_fields(where: Optional[dsl.Pred]) -> set[str]:
    """Field names the filter guarantees nonzero, from top-level conjuncts."""
    guarded: set[str] = set()

    def consider(fld: dsl.Field, op: str, num: float) -> None:
        if (
            (op == ">" and num >= 0)
            or (op == ">=" and num > 0)
            or (op == "<" and num <= 0)
            or (op == "<=" and num < 0)
            or (op == "!=" and num == 0)
        ):
            guarded.add(fld.name)

    def walk(p: dsl.Pred) -> None:
        if isinstance(p, dsl.BoolOp):
            if p.op == "and":
                walk(p.left)
                walk(p.right)
            # or-branches guarantee nothing
            return
        if isinstance(p.left, dsl.Field) and isinstance(p.right, dsl.Num):
            consider(p.left, p.op, p.right.value)
        elif isinstance(p.right, dsl.Field) and isinstance(p.left, dsl.Num):
            flipped = {">": "<", "<": ">", ">=": "<=", "<=": ">=", "!=": "!=", "==": "=="}
            consider(p.right, flipped[p.op], p.left.value)

    if where is not None:
        walk(where)
    return guarded


def _divisions(p: dsl.Program) -> list[dsl.BinOp]:
    out: list[dsl.BinOp] = []

    def walk_fexpr(e) -> None:
        if isinstance(e, dsl.BinOp):
            if e.op == "/":
                out.append(e)
            walk_fexpr(e.left)
            walk_fexpr(e.right)

    def walk_pred(pr) -> None:
        if isinstance(pr, dsl.Cmp):
            walk_fexpr(pr.left)
            walk_fexpr(pr.right)
        else:
            walk_pred(pr.left)
            walk_pred(pr.right)

    body = p.body
    if isinstance(body, dsl.GroupBy):
        if body.agg.arg is not None:
            walk_fexpr(body.agg.arg)
    elif isinstance(body, dsl.Agg):
        if body.arg is not None:
            walk_fexpr(body.arg)
    else:
        walk_fexpr(body.expr)
    if p.where is not None:
        walk_pred(p.where)
    return out


def vet(manifest: AlgorithmManifest, clock: Optional[Clock] = None) -> VettingStatus:
    """Run all static rules; vetted iff zero findings. Pure in the manifest."""
    clock = clock or Clock()
    findings: list[Finding] = []
    try:
        program = dsl.parse(manifest.source)
    except dsl.ParseError as exc:
        status = VettingStatus(
            "rejected",
            clock.now(),
            (Finding("parse", f"{exc.line}:{exc.col}", str(exc)),),
        )
        return status

    declared = {f.name: f for f in manifest.requires}

    # R1: aggregate mode must not project raw values
    if manifest.output_mode == "aggregate":
        if program.mode != "aggregate":
            findings.append(
                Finding("R1", _loc(program.span), "manifest is aggregate but program is subject-mode")
            )
        if isinstance(program.body, dsl.Projection):
            findings.append(
                Finding(
                    "R1",
                    _loc(program.body.span),
                    "aggregate-mode program projects raw field values",
                )
            )

    # R2: referenced fields must be declared
    for name in sorted(dsl.referenced_fields(program)):
        if name not in declared:
            findings.append(
                Finding("R2", "1:1", f"field {name!r} referenced but not declared in requires")
            )

    # R3: divisions need structurally nonzero or guarded divisors
    guarded = _guarded_nonzero_fields(program.where)
    for div in _divisions(program):
        d = div.right
        if isinstance(d, dsl.Num) and d.value != 0:
            continue
        if isinstance(d, dsl.Field) and d.name in guarded:
            continue
        findings.append(
            Finding(
                "R3",
                _loc(d.span if hasattr(d, "span") else div.span),
                "division by a divisor that is neither a nonzero constant nor filter-guarded",
            )
        )

    # R4: group-by keys must be bucketable kinds
    if isinstance(program.body, dsl.GroupBy):
        key = program.body.key
        spec = declared.get(key.field.name)
        expected = {"field": "text", "bucket": "number", "geosector": "geo"}[key.kind]
        if spec is not None and spec.kind != expected:
            findings.append(
                Finding(
                    "R4",
                    _loc(key.span),
                    f"group key {key.field.name!r} must be kind {expected!r} for {key.kind} keys, "
                    f"got {spec.kind!r}",
                )
            )
        if key.kind in ("bucket", "geosector") and (key.param is None or key.param <= 0):
            findings.append(Finding("R4", _loc(key.span), "bucket width must be positive"))

    # R5: subject-mode programs must declare a purpose
    if manifest.output_mode == "subject" and not manifest.purpose_tags:
        findings.append(
            Finding("R5", _loc(program.span), "subject-mode manifest has no purpose tags")
        )

    # structural sanity for histograms, reported under R4 (bucketing rules)
    body_agg = program.body.agg if isinstance(program.body, dsl.GroupBy) else program.body
    if isinstance(body_agg, dsl.Agg) and body_agg.fn == "histogram":
        if body_agg.hi <= body_agg.lo or body_agg.width <= 0:
            findings.append(
                Finding("R4", _loc(body_agg.span), "histogram needs lo < hi and width > 0")
            )

    state = "vetted" if not findings else "rejected"
    return VettingStatus(state, clock.now(), tuple(findings))


# ---------------------------------------------------------------- registry

class AlgorithmRegistry:
    """Immutable versioned manifests; registration requires a vetted status."""

    def __init__(self, audit, clock: Optional[Clock] = None) -> None:
        self._audit = audit
        self._clock = clock or Clock()
        self._manifests: dict[tuple[str, int], AlgorithmManifest] = {}
        self._lock = threading.Lock()

    def vet_manifest(self, manifest: AlgorithmManifest, actor: str = "steward") -> AlgorithmManifest:
        status = vet(manifest, self._clock)
        vetted = replace(manifest, vetting=status)
        self._audit.append(
            "vetting",
            actor,
            {
                "algo_id": manifest.algo_id,
                "version": manifest.version,
                "state": status.state,
                "findings": len(status.findings),
            },
        )
        return vetted

    def register(self, manifest: AlgorithmManifest, actor: str = "steward") -> tuple[str, int]:
        if manifest.vetting.state != "vetted":
            raise NotVetted(f"{manifest.algo_id} v{manifest.version} is not vetted")
        if not manifest.lay_description.strip():
            raise NotVetted("registration requires a lay description")
        with self._lock:
            if manifest.ref in self._manifests:
                raise DuplicateAlgorithm(f"{manifest.algo_id} v{manifest.version} already registered")
            self._manifests[manifest.ref] = manifest
        self._audit.append(
            "vetting",
            actor,
            {"op": "register", "algo_id": manifest.algo_id, "version": manifest.version},
        )
        return manifest.ref

    def get(self, algo_id: str, version: int) -> AlgorithmManifest:
        m = self._manifests.get((algo_id, int(version)))
        if m is None:
            raise UnknownEntity(f"unknown algorithm {algo_id} v{version}")
        return m

    def list_algorithms(self, viewer_role: str) -> list[dict]:
        """Metadata only; source never leaves for non-members."""
        out = []
        member_like = viewer_role in ("member", "steward", "cooperative-self")
        for m in sorted(self._manifests.values(), key=lambda m: m.ref):
            if m.vetting.state != "vetted":
                continue
            if m.visibility == "cooperative-private" and not member_like:
                continue
            out.append(m.to_dict(include_source=member_like))
        return out

    def description(self, algo_id: str, version: int) -> dict:
        m = self.get(algo_id, version)
        return {
            "algo_id": m.algo_id,
            "version": m.version,
            "title": m.title,
            "lay_description": m.lay_description,
            "purpose_tags": list(m.purpose_tags),
            "description_digest": m.description_digest(),
        }
