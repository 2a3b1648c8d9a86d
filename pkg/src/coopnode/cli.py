"""Command-line driver: serve a node, run scenarios, generate fixtures,
evaluate the plaintext oracle, verify exported assertions."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .canonical import canonical_json
from .fixtures import gen_fixture, write_fixture
from .oracle import oracle_eval
from .scenario import run_scenario_file


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app
    from .node import CoopNode, NodeConfig

    config_path = args.config or os.environ.get("COOPNODE_CONFIG")
    config = NodeConfig.from_file(config_path) if config_path else NodeConfig()
    node = CoopNode(config)
    print(f"bootstrap steward credential: {node.bootstrap_credential}")
    host, _, port = config.listen_address.partition(":")
    app = create_app(node, console_dir=args.console_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8400))
    return 0


def _cmd_scenario_run(args) -> int:
    paths = args.files
    ok = True
    if args.parallel and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=len(paths)) as pool:
            outputs = list(pool.map(run_scenario_file, paths))
    else:
        outputs = [run_scenario_file(p) for p in paths]
    for report, passed in outputs:
        sys.stdout.write(report)
        ok &= passed
    return 0 if ok else 1


def _cmd_fixture_gen(args) -> int:
    fixture = gen_fixture(args.seed, args.members, args.records, args.preset)
    write_fixture(fixture, args.out)
    print(f"wrote {args.out}: {args.members} members, preset {args.preset}")
    return 0


def _cmd_oracle(args) -> int:
    with open(args.fixture, encoding="utf-8") as fh:
        fixture = json.load(fh)
    if os.path.exists(args.program):
        with open(args.program, encoding="utf-8") as fh:
            source = fh.read().strip()
    else:
        source = args.program
    cells = oracle_eval(fixture, source, args.k)
    print(canonical_json(cells).decode())
    return 0


def _cmd_verify_assertion(args) -> int:
    from .assertions import verify_assertion

    with open(args.file, "rb") as fh:
        document = fh.read()
    if args.keys:
        with open(args.keys, encoding="utf-8") as fh:
            keys = json.load(fh)
    else:
        import urllib.request

        with urllib.request.urlopen(args.node + "/.well-known/coop-keys") as resp:
            keys = json.load(resp)
    import time

    outcome = verify_assertion(document, args.purpose, time.time(), keys)
    print(json.dumps(outcome))
    return 0 if outcome["valid"] else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coopnode")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP node")
    p.add_argument("--config", help="flat key=value config file (or COOPNODE_CONFIG)")
    p.add_argument("--console-dir", help="static console bundle to mount at /console")
    p.set_defaults(fn=_cmd_serve)

    p_scn = sub.add_parser("scenario", help="scenario tools")
    scn_sub = p_scn.add_subparsers(dest="scenario_command", required=True)
    p = scn_sub.add_parser("run", help="run scenario files")
    p.add_argument("files", nargs="+")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(fn=_cmd_scenario_run)

    p_fix = sub.add_parser("fixture", help="fixture tools")
    fix_sub = p_fix.add_subparsers(dest="fixture_command", required=True)
    p = fix_sub.add_parser("gen", help="generate a plaintext fixture")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--records", type=int, default=10)
    p.add_argument("--preset", default="rideshare")
    p.add_argument("--out", default="fixture.json")
    p.set_defaults(fn=_cmd_fixture_gen)

    p = sub.add_parser("oracle", help="brute-force plaintext evaluation")
    p.add_argument("--fixture", required=True)
    p.add_argument("--program", required=True, help="program text or file")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("verify-assertion", help="offline assertion verification")
    p.add_argument("--file", required=True)
    p.add_argument("--purpose", required=True)
    p.add_argument("--keys", help="published keys JSON file")
    p.add_argument("--node", default="http://127.0.0.1:8400", help="fetch keys from node")
    p.set_defaults(fn=_cmd_verify_assertion)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
