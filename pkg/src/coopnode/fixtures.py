"""Seeded synthetic cooperatives for scenarios, oracle checks and the CLI.

Generated numeric values are quarter-unit rationals (exact in binary
floating point), so sums computed in any order agree bit-for-bit between the
node pipeline and the plaintext oracle.

The fixture document is plaintext and lives outside the node; the node only
ever sees it through the ingest path.
"""

from __future__ import annotations

import json
import random

from .pds import FieldSpec

PRESETS: dict[str, list[FieldSpec]] = {
    "rideshare": [
        FieldSpec("fare", "number", "usd"),
        FieldSpec("distance_km", "number", "km"),
        FieldSpec("pickup", "geo"),
        FieldSpec("sector", "text"),
    ],
    "income": [
        FieldSpec("income", "number", "usd"),
        FieldSpec("expenditure", "number", "usd"),
        FieldSpec("year", "number"),
    ],
}

SECTOR_NAMES = ("quadrant-alpha", "quadrant-beta", "quadrant-gamma", "quadrant-delta")


def _q(rng: random.Random, lo: float, hi: float) -> float:
    """Quarter-unit random value in [lo, hi): exact float arithmetic."""
    return rng.randrange(int(lo * 4), int(hi * 4)) / 4.0


def gen_record(rng: random.Random, preset: str, sector_index: int = 0) -> dict:
    if preset == "rideshare":
        return {
            "fare": _q(rng, 5, 60),
            "distance_km": _q(rng, 1, 25),
            "pickup": [
                sector_index * 10 + _q(rng, 1, 9),
                sector_index * 10 + _q(rng, 1, 9),
            ],
            "sector": SECTOR_NAMES[sector_index % len(SECTOR_NAMES)],
        }
    if preset == "income":
        return {
            "income": _q(rng, 20000, 90000),
            "expenditure": _q(rng, 10000, 60000),
            "year": float(rng.randrange(2019, 2026)),
        }
    raise ValueError(f"unknown preset {preset!r}")


def gen_fixture(
    seed: int, members: int, records_per_member: int, preset: str = "rideshare"
) -> dict:
    rng = random.Random(seed)
    schema = PRESETS[preset]
    out = {"preset": preset, "schema": [f.to_dict() for f in schema], "members": []}
    for i in range(members):
        sector = i % len(SECTOR_NAMES)
        n = records_per_member if records_per_member >= 0 else rng.randrange(0, 21)
        records = [gen_record(rng, preset, sector) for _ in range(n)]
        out["members"].append(
            {"member_id": f"m{i:03d}", "stores": [{"records": records}]}
        )
    return out


def write_fixture(fixture: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fixture, fh, indent=1, sort_keys=True)


def load_fixture(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ------------------------------------------------------------ programs

def gen_program(rng: random.Random, preset: str = "rideshare") -> str:
    """A random vetted-by-construction aggregate program over a preset schema."""
    if preset == "rideshare":
        numeric = ["fare", "distance_km"]
        keys = [
            "sector",
            "bucket(fare, 10)",
            "bucket(distance_km, 5)",
            "geosector(pickup, 10)",
        ]
    else:
        numeric = ["income", "expenditure"]
        keys = ["bucket(year, 1)", "bucket(income, 10000)"]

    def fexpr() -> str:
        roll = rng.random()
        a, b = rng.choice(numeric), rng.choice(numeric)
        if roll < 0.4:
            return rng.choice(numeric)
        if roll < 0.6:
            return f"{a} + {b}"
        if roll < 0.75:
            return f"{a} * {_lit()}"
        # guarded division: the filter below always guards the divisor
        return f"{a} / {guard_field}"

    def _lit() -> str:
        return str(rng.randrange(1, 5))

    guard_field = rng.choice(numeric)
    fn = rng.choice(["count", "sum", "mean", "min", "max", "histogram"])
    if fn == "count":
        agg = "count()"
    elif fn == "histogram":
        agg = f"histogram({rng.choice(numeric)}, 0, 100, {rng.choice([5, 10, 25])})"
    else:
        agg = f"{fn}({fexpr()})"
    if rng.random() < 0.5:
        body = f"groupby({rng.choice(keys)}, {agg})"
    else:
        body = agg
    clauses = [f"{guard_field} > 0"]
    if rng.random() < 0.5:
        clauses.append(f"{rng.choice(numeric)} >= {rng.randrange(0, 20)}")
    return f"aggregate {body} where {' and '.join(clauses)}"
