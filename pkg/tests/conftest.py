"""Shared builders for the test suite.

Most tests want the same thing: a fully wired node under a manual clock and
a seeded RNG, some enrolled principals, a registered algorithm and a bound
access token. The helpers here build those without going through HTTP.
"""

from __future__ import annotations

import pytest

from coopnode.clock import ManualClock
from coopnode.engine import parse_scope, scope_string
from coopnode.fixtures import PRESETS
from coopnode.node import CoopNode, NodeConfig
from coopnode.pds import FieldSpec
from coopnode.registry import AlgorithmManifest

EPOCH = 1_700_000_000.0


def make_node(base_dir, seed=0, clock=None, **overrides) -> CoopNode:
    cfg = NodeConfig(persistence_dir=str(base_dir), **overrides)
    return CoopNode(cfg, clock=clock or ManualClock(EPOCH), seed=seed)


def load_members(node: CoopNode, fixture: dict, preset: str = "rideshare") -> list[str]:
    """Enroll every fixture member and ingest their records; returns ids."""
    ids = []
    for m in fixture["members"]:
        mid = m["member_id"]
        node.enroll("member", mid, principal_id=mid, year_of_birth=1985)
        for st in m["stores"]:
            meta = node.stores.create_store(mid, PRESETS[preset], caller=mid)
            node.stores.ingest_records(meta.store_id, st["records"], mid)
        ids.append(mid)
    return ids


def build_manifest(
    algo_id: str,
    source: str,
    mode: str = "aggregate",
    purpose: str = "research",
    preset: str = "rideshare",
    version: int = 1,
    visibility: str = "public",
    requires=None,
) -> AlgorithmManifest:
    if requires is None:
        requires = tuple(FieldSpec(f.name, f.kind) for f in PRESETS[preset])
    return AlgorithmManifest(
        algo_id=algo_id,
        version=version,
        title=algo_id.replace("-", " "),
        lay_description=f"Computes {mode} results from your records for {purpose}.",
        output_mode=mode,
        requires=tuple(requires),
        purpose_tags=(purpose,),
        source=source,
        visibility=visibility,
    )


def register_program(node: CoopNode, algo_id: str, source: str, **kw) -> AlgorithmManifest:
    vetted = node.registry.vet_manifest(build_manifest(algo_id, source, **kw))
    assert vetted.vetting.state == "vetted", vetted.vetting.findings
    node.registry.register(vetted)
    return vetted


def bound_token(node: CoopNode, querier: str, operator, algo, scope: str, purpose: str):
    """Walk the whole handshake; returns (querier token id, session id)."""
    requested = {
        "algo_id": algo[0],
        "version": algo[1],
        "scope": scope_string(parse_scope(scope)),
        "purpose": purpose,
    }
    session, _clauses = node.authz.begin_session(querier, operator, requested)
    out = None
    for _stage in range(node.authz.n_stages):
        out = node.authz.advance(session.session_id, querier)
        if operator:
            out = node.authz.advance(session.session_id, operator)
    return out["tokens"][querier], session.session_id


@pytest.fixture
def node(tmp_path) -> CoopNode:
    return make_node(tmp_path / "node")


# ---------------------------------------------------------------- reporting

_ACCEPTANCE_DESCRIPTIONS = {}


def register_criterion(item_name: str, line: str) -> None:
    _ACCEPTANCE_DESCRIPTIONS[item_name] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per acceptance criterion, printed unconditionally."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, ()):
            name = getattr(rep, "location", ("", "", ""))[2]
            if "test_acceptance" in getattr(rep, "nodeid", "") and rep.when == "call":
                rows.append((name, outcome.upper()))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, verdict in sorted(rows):
        desc = _ACCEPTANCE_DESCRIPTIONS.get(name, name)
        terminalreporter.write_line(f"{verdict}: {desc}")
