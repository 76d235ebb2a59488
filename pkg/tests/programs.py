"""Random engine programs over integer datasets and a plain-list interpreter for them."""

from __future__ import annotations

import operator
import random
from collections import defaultdict
from functools import reduce

from mdpflow.engine import Engine, ExecConfig

MAPS = [
    ("x*3+1", lambda x: x * 3 + 1),
    ("x%7", lambda x: x % 7),
    ("-x", lambda x: -x),
    ("x//2", lambda x: x // 2),
]
FILTERS = [
    ("even", lambda x: x % 2 == 0),
    ("pos", lambda x: x > 0),
    ("not1mod3", lambda x: x % 3 != 1),
]
FLATS = [
    ("dup", lambda x: [x, x + 1]),
    ("drop4", lambda x: [] if x % 4 == 0 else [x]),
    ("range", lambda x: list(range(abs(x) % 3))),
]
REDUCERS = [("sum", operator.add, 0), ("max", max, None), ("min", min, None)]


def random_program(rng: random.Random, max_steps: int = 6) -> dict:
    steps = []
    for _ in range(rng.randint(1, max_steps)):
        kind = rng.choice(["map", "filter", "flat_map", "zip", "join", "subtract", "repartition"])
        if kind == "map":
            steps.append(("map", rng.randrange(len(MAPS))))
        elif kind == "filter":
            steps.append(("filter", rng.randrange(len(FILTERS))))
        elif kind == "flat_map":
            steps.append(("flat_map", rng.randrange(len(FLATS))))
        elif kind in ("join", "subtract"):
            other = [rng.randint(-20, 20) for _ in range(rng.randint(0, 12))]
            steps.append((kind, rng.randint(2, 6), other))
        elif kind == "repartition":
            steps.append(("repartition", rng.randint(1, 5)))
        else:
            steps.append(("zip",))
    terminal = rng.choice(["collect", "count", "reduce"])
    data = [rng.randint(-50, 50) for _ in range(rng.randint(0, 40))]
    return {"data": data, "steps": steps, "terminal": terminal, "reducer": rng.randrange(len(REDUCERS))}


def _join_rows(left, right):
    by_key = defaultdict(list)
    for k, w in right:
        by_key[k].append(w)
    rows = [((k, pos), v * 100 + w) for pos, (k, v) in enumerate(left) for w in by_key[k]]
    rows.sort(key=lambda r: r[0])
    return [v for _, v in rows]


def _subtract_rows(left, right):
    drop = {k for k, _ in right}
    rows = [((k, pos), v) for pos, (k, v) in enumerate(left) if k not in drop]
    rows.sort(key=lambda r: r[0])
    return [v for _, v in rows]


def run_oracle(prog: dict):
    xs = list(prog["data"])
    for step in prog["steps"]:
        op = step[0]
        if op == "map":
            xs = [MAPS[step[1]][1](x) for x in xs]
        elif op == "filter":
            xs = [x for x in xs if FILTERS[step[1]][1](x)]
        elif op == "flat_map":
            xs = [y for x in xs for y in FLATS[step[1]][1](x)]
        elif op == "zip":
            xs = [x + i for i, x in enumerate(xs)]
        elif op == "join":
            m = step[1]
            xs = _join_rows([(x % m, x) for x in xs], [(y % m, y) for y in step[2]])
        elif op == "subtract":
            m = step[1]
            xs = _subtract_rows([(x % m, x) for x in xs], [(y % m, y) for y in step[2]])
    return _terminal(prog, xs, reduce)


def _terminal(prog, xs, fold):
    if prog["terminal"] == "collect":
        return list(xs)
    if prog["terminal"] == "count":
        return len(xs)
    _, op, ident = REDUCERS[prog["reducer"]]
    if ident is None:
        return fold(op, xs) if xs else "empty"
    return fold(op, xs, ident)


def run_engine(prog: dict, partitions: int, workers: int = 1):
    with Engine(ExecConfig(num_workers=workers, num_partitions=partitions)) as eng:
        ds = eng.parallelize(prog["data"])
        for step in prog["steps"]:
            op = step[0]
            if op == "map":
                ds = ds.map(MAPS[step[1]][1])
            elif op == "filter":
                ds = ds.filter(FILTERS[step[1]][1])
            elif op == "flat_map":
                ds = ds.flat_map(FLATS[step[1]][1])
            elif op == "zip":
                ds = ds.zip_with_index().map(lambda t: t[0] + t[1])
            elif op == "join":
                m = step[1]
                other = eng.parallelize(step[2]).map(lambda y, m=m: (y % m, y))
                ds = ds.map(lambda x, m=m: (x % m, x)).join(other).map(lambda kv: kv[1][0] * 100 + kv[1][1])
            elif op == "subtract":
                m = step[1]
                other = eng.parallelize(step[2]).map(lambda y, m=m: (y % m, y))
                ds = ds.map(lambda x, m=m: (x % m, x)).subtract_by_key(other).map(lambda kv: kv[1])
            elif op == "repartition":
                ds = ds.repartition(step[1])
        if prog["terminal"] == "collect":
            return list(ds.collect())
        if prog["terminal"] == "count":
            return ds.count()
        _, op, ident = REDUCERS[prog["reducer"]]
        if ident is None:
            from mdpflow.errors import EmptyDataset

            try:
                return ds.reduce(op)
            except EmptyDataset:
                return "empty"
        return ds.reduce(op, ident)
