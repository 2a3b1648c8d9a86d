"""Independent brute-force evaluator used as ground truth in tests.

Deliberately shares no evaluation code with the engine: it walks the parsed
program directly over the plaintext fixture in a single pass and applies
distinct-member k-suppression itself. If this module and the engine agree
cell-for-cell on random inputs, the pipeline (encryption, per-store
dispatch, partial merging, suppression) preserved the semantics.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction

from . import dsl


class _Skip(Exception):
    pass


def _value(rec: dict, name: str) -> Fraction:
    if name not in rec:
        raise _Skip()
    v = rec[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _Skip()
    return Fraction(v)


# All arithmetic is exact rational arithmetic, matching the contract that
# released sums and means must not depend on evaluation order.
def _fexpr(e, rec: dict) -> Fraction:
    if isinstance(e, dsl.Num):
        return Fraction(e.value)
    if isinstance(e, dsl.Field):
        return _value(rec, e.name)
    lv, rv = _fexpr(e.left, rec), _fexpr(e.right, rec)
    if e.op == "+":
        return lv + rv
    if e.op == "-":
        return lv - rv
    if e.op == "*":
        return lv * rv
    if rv == 0:
        raise _Skip()
    return lv / rv


def _pred(p, rec: dict) -> bool:
    if isinstance(p, dsl.BoolOp):
        l = _pred(p.left, rec)
        return (l and _pred(p.right, rec)) if p.op == "and" else (l or _pred(p.right, rec))
    lv, rv = _fexpr(p.left, rec), _fexpr(p.right, rec)
    return {
        "<": lv < rv, "<=": lv <= rv, ">": lv > rv,
        ">=": lv >= rv, "==": lv == rv, "!=": lv != rv,
    }[p.op]


def _key(k: dsl.GroupKey, rec: dict):
    if k.field.name not in rec:
        raise _Skip()
    v = rec[k.field.name]
    if k.kind == "field":
        if not isinstance(v, str):
            raise _Skip()
        return v
    if k.kind == "bucket":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _Skip()
        return math.floor(Fraction(v) / Fraction(k.param)) * k.param
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise _Skip()
    p = Fraction(k.param)
    return f"g{math.floor(Fraction(v[0]) / p)},{math.floor(Fraction(v[1]) / p)}"


def oracle_eval(fixture: dict, source: str, k: int) -> list[dict]:
    """Expected released/suppressed cells for an aggregate program."""
    program = dsl.parse(source)
    grouped = isinstance(program.body, dsl.GroupBy)
    agg = program.body.agg if grouped else program.body
    if isinstance(agg, dsl.Projection):
        raise ValueError("oracle handles aggregate combinators only")

    rows: dict = {}  # key -> list of (member, value-or-None)
    for member in fixture["members"]:
        mid = member["member_id"]
        for store in member["stores"]:
            for rec in store["records"]:
                try:
                    if program.where is not None and not _pred(program.where, rec):
                        continue
                    key = _key(program.body.key, rec) if grouped else None
                    value = None if agg.fn == "count" else _fexpr(agg.arg, rec)
                except _Skip:
                    continue
                rows.setdefault(key, []).append((mid, value))

    cells = []
    for key in sorted(rows.keys(), key=lambda x: json.dumps(x, sort_keys=True)):
        entries = rows[key]
        members = {m for m, _ in entries}
        if len(members) < k:
            cells.append({"key": key, "suppressed": True})
            continue
        values = [v for _, v in entries]
        out: dict = {}
        if agg.fn == "count":
            out["count"] = len(entries)
        elif agg.fn == "sum":
            out["sum"] = float(sum(values))
        elif agg.fn == "mean":
            out["mean"] = float(sum(values) / len(values))
        elif agg.fn == "min":
            out["min"] = float(min(values))
        elif agg.fn == "max":
            out["max"] = float(max(values))
        elif agg.fn == "histogram":
            buckets: dict[float, int] = {}
            for v in values:
                if agg.lo <= v < agg.hi:
                    b = math.floor((v - Fraction(agg.lo)) / Fraction(agg.width)) * agg.width + agg.lo
                    buckets[b] = buckets.get(b, 0) + 1
            out["histogram"] = [[b, n] for b, n in sorted(buckets.items())]
        cells.append({"key": key, "values": out, "members": len(members)})
    return cells
