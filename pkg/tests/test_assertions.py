"""Signed assertions: issuance, verification order, receipts, key rotation."""

import base64
import json
import random

import pytest

from conftest import make_node, register_program
from coopnode.assertions import (
    CooperativeKeyPair,
    KeyRing,
    receipt_payload,
    sign_payload,
    verify_assertion,
    verify_payload_signature,
)
from coopnode.canonical import canonical_json, parse_rfc3339
from coopnode.errors import (
    BadSignature,
    MemberDirectiveRequired,
    NotVetted,
    TermsMismatch,
    ValidityExceeded,
)
from coopnode.fixtures import PRESETS, gen_record


@pytest.fixture
def wired(tmp_path):
    node = make_node(tmp_path / "n", seed=9)
    node.enroll("member", "pat", principal_id="pat", year_of_birth=1988)
    sp_pair = CooperativeKeyPair(random.Random(40).randbytes(32))
    node.enroll(
        "querier", "bank", principal_id="bank",
        verify_key_b64=base64.b64encode(sp_pair.verify_key_bytes()).decode(),
    )
    meta = node.stores.create_store("pat", PRESETS["income"], caller="pat")
    rng = random.Random(8)
    node.stores.ingest_records(
        meta.store_id, [gen_record(rng, "income") for _ in range(10)], "pat"
    )
    register_program(
        node, "income-summary", "subject groupby(bucket(year, 1), sum(income))",
        mode="subject", purpose="loan", preset="income",
    )
    node.sp_pair = sp_pair
    return node


def issue(node, validity=3600.0):
    return node.assertions.issue_assertion(
        "pat", "pat", ("income-summary", 1), "loan", "bank", validity
    )


# ---------------------------------------------------------------- issuance

def test_issuance_needs_the_subjects_own_directive(wired):
    with pytest.raises(MemberDirectiveRequired):
        wired.assertions.issue_assertion(
            "bank", "pat", ("income-summary", 1), "loan", "bank", 3600
        )


def test_issuance_requires_subject_mode_algorithm(wired):
    register_program(wired, "agg", "aggregate count()", preset="income")
    with pytest.raises(NotVetted):
        wired.assertions.issue_assertion("pat", "pat", ("agg", 1), "loan", "bank", 3600)


def test_transactional_validity_is_capped_at_24h(wired):
    with pytest.raises(ValidityExceeded):
        issue(wired, validity=24 * 3600.0 + 1)
    issue(wired, validity=24 * 3600.0)


def test_payload_shape_and_pseudonymous_subject(wired):
    a = issue(wired)
    p = a.payload
    assert p["issuer"] == wired.config.name
    assert p["algo"] == {"algo_id": "income-summary", "version": 1}
    assert p["purpose"] == "loan"
    assert p["subject"].startswith("pair-")
    assert "pat" not in p["subject"]
    assert parse_rfc3339(p["expires_at"]) - parse_rfc3339(p["issued_at"]) == 3600.0
    assert p["terms_of_use"] and p["copyright_notice"]
    assert all("values" in cell for cell in p["result"])


def test_pseudonyms_are_stable_per_audience_and_unlinkable_across(wired):
    a = issue(wired)
    b = issue(wired)
    other = wired.assertions.issue_assertion(
        "pat", "pat", ("income-summary", 1), "loan", "acme", 3600
    )
    assert a.payload["subject"] == b.payload["subject"]
    assert a.payload["subject"] != other.payload["subject"]


def test_reissue_cycle_reruns_the_algorithm(wired):
    pair = wired.assertions.reissue_cycle(
        "pat", "pat", ("income-summary", 1), "loan", "bank", 3600, 2
    )
    assert len({a.assertion_id for a in pair}) == 2
    assert pair[0].payload["result"] == pair[1].payload["result"]
    directives = [
        e for e in wired.audit.find("consent") if e.refs.get("op") == "issuance-directive"
    ]
    assert len(directives) == 2  # one express directive per issuance


def test_each_issuance_is_backed_by_a_fresh_execution(wired):
    a, b = (issue(wired) for _ in range(2))
    refs = {
        wired.audit.find("assertion", assertion_id=x.assertion_id)[0].refs["execution_ref"]
        for x in (a, b)
    }
    assert len(refs) == 2


# ---------------------------------------------------------------- statics

def test_static_year_of_birth_assertion(wired):
    a = wired.assertions.issue_static_attribute_assertion("pat", "pat", "year_of_birth")
    assert a.payload["result"] == {"year_of_birth": 1988}
    assert a.payload["subject"] == "pat"
    lifetime = parse_rfc3339(a.payload["expires_at"]) - parse_rfc3339(a.payload["issued_at"])
    assert lifetime == 365 * 24 * 3600.0


def test_age_over_reveals_only_the_boolean(wired):
    a = wired.assertions.issue_static_attribute_assertion("pat", "pat", "age_over", over=18)
    assert a.payload["result"] == {"age_over": 18, "value": True}
    assert "1988" not in canonical_json(a.payload["result"]).decode()


def test_published_static_assertion_is_retrievable_by_slug(wired):
    a = wired.assertions.issue_static_attribute_assertion(
        "pat", "pat", "age_over", over=21, publish=True
    )
    assert wired.assertions.published("pat", "age-over-21").assertion_id == a.assertion_id
    assert wired.assertions.published("pat", "age-over-99") is None


# ---------------------------------------------------------------- verification

def test_offline_verification_with_published_keys_only(wired):
    a = issue(wired)
    keys = json.loads(json.dumps(wired.keyring.published_keys()))  # a copy, not the node
    outcome = verify_assertion(a.export_bytes(), "loan", wired.clock.now(), keys)
    assert outcome == {"valid": True, "reason": None}


def test_verification_order_parse_signature_expiry_purpose(wired):
    a = issue(wired)
    keys = wired.keyring.published_keys()
    now = wired.clock.now()
    assert verify_assertion(b"{not json", "loan", now, keys)["reason"] == "parse"
    doc = a.export()
    tampered = {"payload": {**doc["payload"], "purpose": "other"}, "signature": doc["signature"]}
    # a tampered payload fails on signature even though purpose also differs
    assert verify_assertion(canonical_json(tampered), "loan", now, keys)["reason"] == "signature"
    late = parse_rfc3339(a.payload["expires_at"]) + 1
    assert verify_assertion(a.export_bytes(), "wrong", late, keys)["reason"] == "expired"
    assert verify_assertion(a.export_bytes(), "wrong", now, keys)["reason"] == "purpose-mismatch"


def test_expiry_boundary_is_strict(wired):
    a = issue(wired)
    keys = wired.keyring.published_keys()
    boundary = parse_rfc3339(a.payload["expires_at"])
    assert not verify_assertion(a.export_bytes(), "loan", boundary, keys)["valid"]
    assert verify_assertion(a.export_bytes(), "loan", boundary - 1, keys)["valid"]


def test_rotation_keeps_old_assertions_verifiable(wired):
    old = issue(wired)
    wired.keyring.rotate(random.Random(41).randbytes(32))
    new = issue(wired)
    keys = wired.keyring.published_keys()
    assert old.signature["key_id"] != new.signature["key_id"]
    for a in (old, new):
        assert verify_assertion(a.export_bytes(), "loan", wired.clock.now(), keys)["valid"]


def test_signature_fails_against_unknown_key_ring():
    ring = KeyRing(b"a" * 32)
    payload = {"hello": "world"}
    sig = sign_payload(payload, ring.current)
    assert verify_payload_signature(canonical_json(payload), sig, {})  is False
    assert verify_payload_signature(canonical_json(payload), sig, ring.published_keys())


# ---------------------------------------------------------------- receipts

def receipt_doc(wired, assertion, terms=None):
    payload = receipt_payload(
        assertion.assertion_id,
        "bank",
        terms if terms is not None else assertion.payload["terms_of_use"],
        wired.clock.now(),
    )
    return {"payload": payload, "signature": sign_payload(payload, wired.sp_pair)}


def test_receipt_records_signed_acceptance(wired):
    a = issue(wired)
    receipt = wired.assertions.record_receipt(
        a.assertion_id, wired.get_principal("bank"), receipt_doc(wired, a)
    )
    assert receipt.service_provider == "bank"
    assert wired.assertions.receipts_for(a.assertion_id) == [receipt]
    assert wired.audit.find("receipt", receipt_id=receipt.receipt_id)


def test_receipt_must_accept_terms_exactly(wired):
    a = issue(wired)
    with pytest.raises(TermsMismatch):
        wired.assertions.record_receipt(
            a.assertion_id, wired.get_principal("bank"), receipt_doc(wired, a, terms=[])
        )


def test_receipt_signature_must_verify_against_enrolled_key(wired):
    a = issue(wired)
    doc = receipt_doc(wired, a)
    doc["payload"]["signed_at"] = "1999-01-01T00:00:00Z"  # invalidates the signature
    with pytest.raises(BadSignature):
        wired.assertions.record_receipt(a.assertion_id, wired.get_principal("bank"), doc)
