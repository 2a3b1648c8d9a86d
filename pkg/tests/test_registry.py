"""Manifest handling and the static vetting rules R1-R5."""

import pytest

from coopnode.audit import AuditLog
from coopnode.errors import DuplicateAlgorithm, NotVetted
from coopnode.pds import FieldSpec
from coopnode.registry import (
    AlgorithmRegistry,
    manifest_from_dict,
    vet,
)

from conftest import build_manifest

NUMBERS = (FieldSpec("fare", "number"), FieldSpec("distance_km", "number"))
FULL = NUMBERS + (FieldSpec("pickup", "geo"), FieldSpec("sector", "text"))


def findings_for(source, mode="aggregate", requires=FULL, purposes=("research",)):
    manifest = build_manifest("probe", source, mode=mode, requires=requires)
    if purposes != ("research",):
        manifest = manifest.__class__(**{**manifest.__dict__, "purpose_tags": purposes})
    status = vet(manifest)
    return status.state, [f.rule for f in status.findings]


# ---------------------------------------------------------------- R1

@pytest.mark.parametrize(
    "source",
    [
        "aggregate fare",
        "aggregate fare / distance_km where distance_km > 0",
        "subject count()",  # mode mismatch against an aggregate manifest
    ],
)
def test_r1_rejects_projections_and_mode_mismatch(source):
    state, rules = findings_for(source)
    assert state == "rejected"
    assert "R1" in rules


@pytest.mark.parametrize(
    "source",
    [
        "aggregate count()",
        "aggregate groupby(sector, sum(fare))",
        "aggregate mean(fare + distance_km)",
    ],
)
def test_r1_accepts_aggregate_combinators(source):
    assert findings_for(source)[0] == "vetted"


def test_r1_allows_projection_in_subject_mode():
    state, _ = findings_for("subject fare", mode="subject")
    assert state == "vetted"


# ---------------------------------------------------------------- R2

@pytest.mark.parametrize(
    "source",
    [
        "aggregate sum(tips)",
        "aggregate count() where tips > 0",
        "aggregate groupby(city, count())",
    ],
)
def test_r2_rejects_undeclared_fields(source):
    state, rules = findings_for(source)
    assert state == "rejected"
    assert "R2" in rules


def test_r2_accepts_fully_declared_programs():
    source = "aggregate groupby(sector, sum(fare)) where distance_km >= 1"
    assert findings_for(source)[0] == "vetted"


# ---------------------------------------------------------------- R3

@pytest.mark.parametrize(
    "source",
    [
        "aggregate mean(fare / distance_km)",  # unguarded field divisor
        "aggregate sum(fare / 0)",  # structural zero
        "aggregate sum(fare / distance_km) where distance_km > 0 or fare > 1",
        "aggregate sum(fare / distance_km) where distance_km >= 0",  # zero allowed
    ],
)
def test_r3_rejects_unguarded_divisions(source):
    state, rules = findings_for(source)
    assert state == "rejected"
    assert "R3" in rules


@pytest.mark.parametrize(
    "source",
    [
        "aggregate sum(fare / 4)",  # nonzero constant
        "aggregate sum(fare / distance_km) where distance_km > 0",
        "aggregate sum(fare / distance_km) where distance_km >= 1 and fare > 0",
        "aggregate sum(fare / distance_km) where distance_km != 0",
        "aggregate count() where fare / distance_km > 2 and distance_km > 0",
    ],
)
def test_r3_accepts_guarded_divisions(source):
    assert findings_for(source)[0] == "vetted"


# ---------------------------------------------------------------- R4

@pytest.mark.parametrize(
    "source",
    [
        "aggregate groupby(fare, count())",  # plain key must be text
        "aggregate groupby(bucket(sector, 5), count())",  # bucket needs number
        "aggregate groupby(geosector(fare, 10), count())",  # geosector needs geo
        "aggregate groupby(bucket(fare, 0), count())",  # width must be positive
        "aggregate histogram(fare, 100, 0, 5)",  # lo must be below hi
        "aggregate histogram(fare, 0, 100, 0)",  # width must be positive
    ],
)
def test_r4_rejects_unbucketable_keys(source):
    state, rules = findings_for(source)
    assert state == "rejected"
    assert "R4" in rules


@pytest.mark.parametrize(
    "source",
    [
        "aggregate groupby(sector, count())",
        "aggregate groupby(bucket(fare, 10), count())",
        "aggregate groupby(geosector(pickup, 10), count())",
        "aggregate histogram(fare, 0, 100, 5)",
    ],
)
def test_r4_accepts_bucketable_keys(source):
    assert findings_for(source)[0] == "vetted"


# ---------------------------------------------------------------- R5

@pytest.mark.parametrize(
    "source",
    ["subject count()", "subject groupby(sector, sum(fare))", "subject fare"],
)
def test_r5_rejects_subject_mode_without_purpose(source):
    state, rules = findings_for(source, mode="subject", purposes=())
    assert state == "rejected"
    assert rules == ["R5"]


def test_r5_accepts_subject_mode_with_purpose():
    assert findings_for("subject count()", mode="subject")[0] == "vetted"


def test_parse_failures_reject_with_position():
    status = vet(build_manifest("bad", "aggregate sum("))
    assert status.state == "rejected"
    assert status.findings[0].rule == "parse"
    assert status.findings[0].location == "1:15"


def test_findings_carry_locations():
    status = vet(build_manifest("probe", "aggregate mean(fare / distance_km)"))
    locations = [f.location for f in status.findings]
    assert all(":" in loc for loc in locations)


# ---------------------------------------------------------------- registry

def test_register_requires_vetted_state(node):
    manifest = build_manifest("raw", "aggregate count()")
    with pytest.raises(NotVetted):
        node.registry.register(manifest)  # still draft


def test_register_requires_lay_description(node):
    manifest = build_manifest("bare", "aggregate count()")
    manifest = manifest.__class__(**{**manifest.__dict__, "lay_description": "  "})
    vetted = node.registry.vet_manifest(manifest)
    with pytest.raises(NotVetted):
        node.registry.register(vetted)


def test_duplicate_registration_rejected(node):
    vetted = node.registry.vet_manifest(build_manifest("twice", "aggregate count()"))
    node.registry.register(vetted)
    with pytest.raises(DuplicateAlgorithm):
        node.registry.register(vetted)


def test_versions_are_independent(node):
    for version in (1, 2):
        vetted = node.registry.vet_manifest(
            build_manifest("multi", "aggregate count()", version=version)
        )
        node.registry.register(vetted)
    assert node.registry.get("multi", 1).version == 1
    assert node.registry.get("multi", 2).version == 2


def test_visibility_hides_private_algorithms_and_source(node):
    node.registry.register(
        node.registry.vet_manifest(build_manifest("open", "aggregate count()"))
    )
    node.registry.register(
        node.registry.vet_manifest(
            build_manifest("internal", "aggregate count()", visibility="cooperative-private")
        )
    )
    member_view = node.registry.list_algorithms("member")
    querier_view = node.registry.list_algorithms("querier")
    assert {m["algo_id"] for m in member_view} == {"open", "internal"}
    assert {m["algo_id"] for m in querier_view} == {"open"}
    assert all("source" in m for m in member_view)
    assert all("source" not in m for m in querier_view)


def test_description_exposes_lay_text_and_digest(node):
    vetted = node.registry.vet_manifest(build_manifest("desc", "aggregate count()"))
    node.registry.register(vetted)
    desc = node.registry.description("desc", 1)
    assert desc["lay_description"] == vetted.lay_description
    assert desc["description_digest"] == vetted.description_digest()


def test_manifest_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown manifest fields"):
        manifest_from_dict(
            {
                "algo_id": "x",
                "version": 1,
                "output_mode": "aggregate",
                "requires": [],
                "source": "aggregate count()",
                "shadow": True,
            }
        )


def test_manifest_from_dict_round_trip():
    manifest = build_manifest("rt", "aggregate groupby(sector, count())")
    rebuilt = manifest_from_dict(manifest.to_dict())
    assert rebuilt.ref == manifest.ref
    assert rebuilt.requires == manifest.requires
    assert rebuilt.source == manifest.source


def test_vetting_emits_audit_events():
    audit = AuditLog()
    registry = AlgorithmRegistry(audit)
    registry.vet_manifest(build_manifest("logged", "aggregate count()"))
    assert audit.find("vetting")
