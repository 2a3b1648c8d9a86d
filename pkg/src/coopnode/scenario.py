"""Scripted scenario runner for the in-process cooperative node.

Scenario files are plain text, one action per line with positional
arguments (shlex quoting for program sources); ``expect`` lines attach
matchers to earlier step results. Runs are fully deterministic under a
fixed seed: a manual clock ticks one second per step and all entropy comes
from the seeded generator, so reports are byte-identical across runs.
"""

from __future__ import annotations

import base64
import json
import random
import shlex
import tempfile
from dataclasses import dataclass, field
from typing import Optional

from .assertions import CooperativeKeyPair, receipt_payload, sign_payload, verify_assertion
from .audit import verify_bundle
from .canonical import canonical_json
from .clock import ManualClock
from .engine import parse_scope
from .errors import CoopError
from .fixtures import PRESETS, gen_record
from .node import CoopNode, NodeConfig
from .pds import FieldSpec
from .registry import AlgorithmManifest

SCENARIO_EPOCH = 1_700_000_000.0


@dataclass
class Scenario:
    name: str
    seed: int
    config: dict
    steps: list[tuple[int, str, list[str]]]  # (step index, action, args)
    expectations: list[tuple[int, str, str, str]]  # (step, path, op, value)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    seed = 0
    config: dict = {}
    steps = []
    expectations = []
    index = 0
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = shlex.split(line)
        action, args = parts[0], parts[1:]
        if action == "seed":
            seed = int(args[0])
        elif action == "config":
            config[args[0]] = args[1]
        elif action == "expect":
            expectations.append((int(args[0]), args[1], args[2], " ".join(args[3:])))
        else:
            steps.append((index, action, args))
            index += 1
    return Scenario(name, seed, config, steps, expectations)


def _resolve(result, path: str):
    cur = result
    for seg in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(seg)]
        elif isinstance(cur, dict):
            cur = cur[seg]
        else:
            raise KeyError(path)
    return cur


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _match(actual, op: str, expected_text: str) -> bool:
    expected = _coerce(expected_text)
    if op == "==":
        return actual == expected
    if op == "!=":
        return actual != expected
    if op == "<=":
        return actual <= expected
    if op == ">=":
        return actual >= expected
    if op == "<":
        return actual < expected
    if op == ">":
        return actual > expected
    if op == "contains":
        return expected in actual
    raise ValueError(f"unknown matcher op {op!r}")


class ScenarioRunner:
    def __init__(self, scenario: Scenario, data_dir: Optional[str] = None) -> None:
        self.scenario = scenario
        self.rng = random.Random(scenario.seed)
        self.clock = ManualClock(SCENARIO_EPOCH)
        cfg = NodeConfig(
            name=scenario.config.get("name", scenario.name),
            k_threshold=int(scenario.config.get("k_threshold", 5)),
            persistence_dir=data_dir or tempfile.mkdtemp(prefix="coopnode-scn-"),
        )
        self.node = CoopNode(cfg, clock=self.clock, seed=scenario.seed)
        self.tokens: dict[str, str] = {}  # principal -> latest access token
        self.sp_keys: dict[str, CooperativeKeyPair] = {}
        self.stores: dict[str, list[str]] = {}  # member -> store ids
        self.presets: dict[str, str] = {}  # store id -> preset name
        self.sectors: dict[str, int] = {}  # member -> sector index
        self.results: list = []
        self.lines: list[str] = []

    # ------------------------------------------------------------ actions

    def _enroll(self, args):
        role, name = args[0], args[1]
        yob = int(args[2]) if len(args) > 2 else None
        kwargs = {}
        if role == "querier":
            pair = CooperativeKeyPair(self.rng.randbytes(32))
            self.sp_keys[name] = pair
            kwargs["verify_key_b64"] = base64.b64encode(pair.verify_key_bytes()).decode()
        p = self.node.enroll(role, name, year_of_birth=yob, principal_id=name, **kwargs)
        return {"principal_id": p.principal_id, "role": p.role}

    def _create_store(self, member: str, preset: str):
        meta = self.node.stores.create_store(member, PRESETS[preset], caller=member)
        self.stores.setdefault(member, []).append(meta.store_id)
        self.presets[meta.store_id] = preset
        return {"store_id": meta.store_id}

    def _gen_records(self, member: str, count: int):
        store_id = self.stores[member][-1]
        preset = self.presets[store_id]
        sector = self.sectors.get(member, 0)
        records = [gen_record(self.rng, preset, sector) for _ in range(count)]
        ids = self.node.stores.ingest_records(store_id, records, member)
        return {"ingested": len(ids)}

    def _gen_cohort(self, prefix: str, count: int, sector: int, records: int):
        created = []
        preset = "rideshare"
        for i in range(count):
            name = f"{prefix}-{i + 1}"
            self.node.enroll("member", name, principal_id=name)
            self.sectors[name] = sector
            self._create_store(name, preset)
            self._gen_records(name, records)
            created.append(name)
        return {"members": created, "sector": sector}

    def _ingest(self, member: str, pairs: list[str]):
        store_id = self.stores[member][-1]
        record = {}
        for pair in pairs:
            key, value = pair.split("=", 1)
            record[key] = _coerce(value)
        ids = self.node.stores.ingest_records(store_id, [record], member)
        return {"ingested": len(ids)}

    def _register_algorithm(self, args):
        algo_id, version, mode, purpose, requires_text = args[:5]
        source = args[5]
        visibility = args[6] if len(args) > 6 else "public"
        requires = tuple(
            FieldSpec(part.split(":")[0], part.split(":")[1])
            for part in requires_text.split(",")
        )
        manifest = AlgorithmManifest(
            algo_id=algo_id,
            version=int(version),
            title=algo_id.replace("-", " "),
            lay_description=(
                f"This computation ({algo_id}) runs over your data and returns "
                f"{mode} results only, for the purpose: {purpose}."
            ),
            output_mode=mode,
            requires=requires,
            purpose_tags=(purpose,),
            source=source,
            visibility=visibility,
        )
        vetted = self.node.registry.vet_manifest(manifest)
        registered = False
        if vetted.vetting.state == "vetted":
            self.node.registry.register(vetted)
            registered = True
        return {
            "algo_id": algo_id,
            "version": int(version),
            "state": vetted.vetting.state,
            "registered": registered,
            "findings": [f.to_dict() for f in vetted.vetting.findings],
        }

    def _handshake(self, querier, operator, algo_id, version, scope, purpose):
        operator = None if operator == "-" else operator
        from .engine import scope_string

        requested = {
            "algo_id": algo_id,
            "version": int(version),
            "scope": scope_string(parse_scope(scope)),
            "purpose": purpose,
        }
        session, _clauses = self.node.authz.begin_session(querier, operator, requested)
        out = None
        for _stage in range(self.node.authz.n_stages):
            out = self.node.authz.advance(session.session_id, querier)
            if operator:
                out = self.node.authz.advance(session.session_id, operator)
        tokens = out.get("tokens", {})
        self.tokens.update(tokens)
        return {"session_id": session.session_id, "state": out["state"],
                "parties": sorted(tokens)}

    def _execute(self, querier, algo_id, version, scope, purpose):
        token = self.tokens.get(querier, "")
        result = self.node.engine.execute(
            (algo_id, int(version)), parse_scope(scope), querier, purpose, token
        )
        released = [c for c in result.cells if "values" in c]
        suppressed = [c for c in result.cells if c.get("suppressed")]
        return {
            "request_id": result.request_id,
            "cells": result.cells,
            "released_count": len(released),
            "suppressed_count": len(suppressed),
        }

    def _grant(self, member, algo_id, version, purpose, audience, days):
        manifest = self.node.registry.get(algo_id, int(version))
        grant = self.node.authz.grant_consent(
            member,
            (algo_id, int(version)),
            purpose,
            audience,
            self.clock.now() + float(days) * 86400.0,
            manifest.description_digest(),
        )
        return grant.to_dict()

    def _withdraw(self, member, index):
        grant = self.node.authz.grants_of(member)[int(index)]
        return self.node.authz.withdraw_consent(member, grant.grant_id).to_dict()

    def _issue(self, member, algo_id, version, purpose, audience, hours, n):
        assertions = self.node.assertions.reissue_cycle(
            member, member, (algo_id, int(version)), purpose, audience,
            float(hours) * 3600.0, int(n),
        )
        payload_results = [canonical_json(a.payload["result"]).decode() for a in assertions]
        exec_refs = []
        for a in assertions:
            events = self.node.audit.find("assertion", assertion_id=a.assertion_id)
            exec_refs.append(events[0].refs.get("execution_ref"))
        return {
            "count": len(assertions),
            "ids": [a.assertion_id for a in assertions],
            "documents": [a.export() for a in assertions],
            "results_identical": len(set(payload_results)) <= 1,
            "distinct_ids": len({a.assertion_id for a in assertions}) == len(assertions),
            "execution_refs": exec_refs,
        }

    def _verify(self, step_idx, purpose):
        docs = self.results[int(step_idx)]["documents"]
        keys = self.node.keyring.published_keys()
        return [
            verify_assertion(canonical_json(doc), purpose, self.clock.now(), keys)
            for doc in docs
        ]

    def _receipt(self, sp, step_idx, which="0"):
        assertion_id = self.results[int(step_idx)]["ids"][int(which)]
        assertion = self.node.assertions.get(assertion_id)
        pair = self.sp_keys[sp]
        payload = receipt_payload(
            assertion_id, sp, assertion.payload["terms_of_use"], self.clock.now()
        )
        doc = {"payload": payload, "signature": sign_payload(payload, pair)}
        receipt = self.node.assertions.record_receipt(
            assertion_id, self.node.get_principal(sp), doc
        )
        return {"receipt_id": receipt.receipt_id, "assertion_id": assertion_id,
                "recorded": True}

    def _demonstrate(self, step_idx, which="0"):
        prior = self.results[int(step_idx)]
        if "request_id" in prior:
            ref = prior["request_id"]
        else:
            ref = prior["execution_refs"][int(which)]
        bundle = self.node.audit.demonstrate_consent(ref)
        return {"chain_ok": verify_bundle(bundle), "events": len(bundle["chain"])}

    # ------------------------------------------------------------ run

    def run_step(self, action: str, args: list[str]):
        if action == "enroll":
            return self._enroll(args)
        if action == "create-store":
            return self._create_store(args[0], args[1])
        if action == "set-sector":
            self.sectors[args[0]] = int(args[1])
            return {"member": args[0], "sector": int(args[1])}
        if action == "gen-records":
            return self._gen_records(args[0], int(args[1]))
        if action == "gen-cohort":
            return self._gen_cohort(args[0], int(args[1]), int(args[2]), int(args[3]))
        if action == "ingest":
            return self._ingest(args[0], args[1:])
        if action == "register-algorithm":
            return self._register_algorithm(args)
        if action == "handshake":
            return self._handshake(*args)
        if action == "execute":
            return self._execute(*args)
        if action == "grant":
            return self._grant(*args)
        if action == "withdraw":
            return self._withdraw(*args)
        if action == "issue-assertion":
            return self._issue(*args)
        if action == "verify":
            return self._verify(*args)
        if action == "receipt":
            return self._receipt(*args)
        if action == "demonstrate":
            return self._demonstrate(*args)
        raise ValueError(f"unknown scenario action {action!r}")

    def run(self) -> tuple[str, bool]:
        self.lines.append(f"scenario {self.scenario.name} (seed {self.scenario.seed})")
        for index, action, args in self.scenario.steps:
            self.clock.advance(1.0)
            try:
                result = self.run_step(action, args)
                status = "ok"
            except CoopError as exc:
                result = exc.to_dict()
                status = f"error {exc.code}"
            self.results.append(result)
            self.lines.append(f"step {index} {action} {' '.join(args)}: {status}")
        all_pass = True
        for step, path, op, value in self.scenario.expectations:
            try:
                actual = _resolve(self.results[step], path)
                ok = _match(actual, op, value)
            except (KeyError, IndexError, TypeError):
                actual = "<missing>"
                ok = False
            all_pass &= ok
            verdict = "PASS" if ok else "FAIL"
            self.lines.append(
                f"expect {step} {path} {op} {value}: {verdict} "
                f"(actual {json.dumps(actual, sort_keys=True)})"
            )
        for index, action, _args in self.scenario.steps:
            if action in ("execute", "verify"):
                self.lines.append(
                    f"result {index}: {canonical_json(self.results[index]).decode()}"
                )
        self.lines.append("RESULT: " + ("PASS" if all_pass else "FAIL"))
        return "\n".join(self.lines) + "\n", all_pass


def run_scenario_file(path: str, data_dir: Optional[str] = None) -> tuple[str, bool]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return ScenarioRunner(parse_scenario(text, name), data_dir).run()
