import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdpflow.engine import Engine, ExecConfig
from mdpflow.errors import BadParam, EmptyDataset, MemoryExceeded, UserFnError
from mdpflow.imgops import Histogram
from mdpflow.sizing import size_of

from programs import random_program, run_engine, run_oracle


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3, 8]))
def test_random_programs_match_list_oracle(seed, parts):
    prog = random_program(random.Random(seed))
    assert run_engine(prog, parts) == run_oracle(prog)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(-1000, 1000), max_size=60), st.integers(1, 8), st.integers(1, 4))
def test_collect_preserves_order_any_layout(xs, parts, workers):
    with Engine(ExecConfig(num_workers=workers, num_partitions=parts)) as eng:
        assert list(eng.parallelize(xs).map(lambda x: x + 1).collect()) == [x + 1 for x in xs]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=1, max_size=50), st.integers(1, 8))
def test_reduce_partition_invariant(xs, parts):
    eng = Engine(ExecConfig(num_partitions=parts))
    ds = eng.parallelize(xs)
    assert ds.reduce(lambda a, b: a + b) == sum(xs)
    assert ds.reduce(max) == max(xs)
    assert eng.driver_resident == 0


def test_round_robin_layout():
    eng = Engine(ExecConfig(num_partitions=2))
    assert eng.parallelize(["a", "b", "c", "d"]).partitions == [["a", "c"], ["b", "d"]]


def test_stage_log_counts_ops_not_parallelize():
    lines = []
    eng = Engine(ExecConfig(num_partitions=3), log=lines.append)
    n = eng.parallelize(range(10)).map(lambda x: x * 2).filter(lambda x: x > 4).count()
    assert n == 7
    assert eng.stats.stage_count == 3
    assert lines[0] == "stage=1 op=map in=10 out=10 shuffle=0"
    assert lines[1] == "stage=2 op=filter in=10 out=7 shuffle=0"
    assert lines[2] == "stage=3 op=count in=7 out=1 shuffle=0"


def test_lazy_until_action_and_cache_runs_once():
    eng = Engine()
    calls = []
    ds = eng.parallelize(range(5)).map(lambda x: calls.append(x) or x)
    assert calls == []
    cached = ds.cache()
    cached.count()
    cached.collect()
    assert sorted(calls) == list(range(5))


def test_collect_charges_driver_until_release():
    eng = Engine()
    got = eng.parallelize([1, 2, 3]).collect()
    assert got.nbytes == 3 * size_of(1)
    assert eng.driver_resident == got.nbytes
    eng.driver_release(got.nbytes)
    assert eng.driver_resident == 0
    assert eng.stats.driver_highwater == got.nbytes


def test_memory_cap_raises_without_applying_charge():
    hist = Histogram(np.ones(256))
    eng = Engine(ExecConfig(driver_mem_cap=3 * hist.size_bytes()))
    with pytest.raises(MemoryExceeded) as info:
        eng.parallelize([hist] * 4).collect()
    assert info.value.requested == 4 * hist.size_bytes()
    assert eng.driver_resident == 0
    assert eng.stats.driver_highwater == 0


def test_broadcast_charged_once_per_stage_per_worker():
    hist = Histogram(np.zeros(256))
    eng = Engine(ExecConfig(num_workers=8, num_partitions=8))
    b = eng.broadcast(hist)
    eng.parallelize(range(16)).map(lambda x: b.value.total + x).collect()
    assert eng.stats.broadcast_bytes == 8 * hist.size_bytes()
    eng.parallelize(range(16)).map(lambda x: b.value.total).count()
    assert eng.stats.broadcast_bytes == 16 * hist.size_bytes()
    _ = b.value  # driver read is free
    assert eng.stats.broadcast_bytes == 16 * hist.size_bytes()


def test_zero_size_broadcast_costs_nothing():
    eng = Engine(ExecConfig(num_workers=4, num_partitions=4))
    b = eng.broadcast(None)
    eng.parallelize(range(4)).map(lambda x: b.value).collect()
    assert eng.stats.broadcast_bytes == 0


def test_user_error_reports_lowest_global_index():
    eng = Engine(ExecConfig(num_workers=3, num_partitions=3))
    ds = eng.parallelize(range(12)).map(lambda x: 1 // (x % 5 - 3) if x > 2 else x)
    with pytest.raises(UserFnError) as info:
        ds.collect()
    assert info.value.index == 3
    assert isinstance(info.value.cause, ZeroDivisionError)


def test_empty_reduce_without_identity():
    with pytest.raises(EmptyDataset):
        Engine().parallelize([]).reduce(lambda a, b: a + b)
    assert Engine().parallelize([]).reduce(lambda a, b: a + b, 0) == 0


def test_join_and_subtract_shuffle_bytes():
    eng = Engine(ExecConfig(num_partitions=2))
    left = eng.parallelize([(1, "a"), (2, "b"), (1, "c")])
    right = eng.parallelize([(1, "x")])
    assert list(left.join(right).collect()) == [(1, ("a", "x")), (1, ("c", "x"))]
    assert list(left.subtract_by_key(right).collect()) == [(2, "b")]
    assert eng.stats.shuffle_bytes > 0


def test_max_by_with_tie_breaker_is_layout_free():
    xs = [(3, "b"), (5, "z"), (5, "a"), (1, "q")]
    for p in (1, 2, 3):
        got = Engine(ExecConfig(num_partitions=p)).parallelize(xs).max_by(lambda t: (t[0], [-ord(c) for c in t[1]]))
        assert got == (5, "a")


def test_config_validation():
    with pytest.raises(BadParam):
        ExecConfig(num_workers=0)
    with pytest.raises(BadParam):
        Engine().parallelize([1]).repartition(0)


def test_repartition_keeps_order():
    eng = Engine(ExecConfig(num_partitions=3))
    ds = eng.parallelize(range(10)).repartition(4)
    assert ds.num_partitions == 4
    assert list(ds.collect()) == list(range(10))
