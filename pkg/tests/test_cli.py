import json

import pytest

from mdpflow.cli import BENCH_FIELDS, main
from mdpflow.config import parse_spec
from mdpflow.dataflow import Layout, Retention
from mdpflow.errors import SpecError
from mdpflow.pipelines import TaskId


def test_parse_full_spec():
    spec = parse_spec(
        """
task = "fcount"
layout = "split"
partitions = 4
driver_mem_cap = 1000
split_size = 2
retention = "drop-raw-after-S2"
[params.s4]
corr_floor = 0.8
[storage]
backend = "kv"
shard_count = 2
"""
    )
    assert spec.task is TaskId.FCOUNT and spec.layout is Layout.SPLIT
    assert (spec.partitions, spec.driver_mem_cap, spec.split_size) == (4, 1000, 2)
    assert spec.retention is Retention.DROP_RAW
    assert spec.params == {"s4": {"corr_floor": 0.8}}
    assert spec.storage.aux == "kv" and spec.storage.shard_count == 2


@pytest.mark.parametrize(
    "text,key",
    [
        ('task = "fcount"\nLayout = "minimal"\n', "Layout"),
        ('task = "fcount"\n[params.s5]\nx = 1\n', "params.s5"),
        ('task = "fcount"\n[params.s1]\nsigmaa = 1\n', "params.s1.sigmaa"),
        ('task = "fcount"\n[storage]\nbackends = "kv"\n', "storage.backends"),
        ('task = "obe"\nlayout = "split"\n', "layout"),
        ('task = "fcount"\npartitions = 0\n', "partitions"),
        ('layout = "minimal"\n', "task"),
    ],
)
def test_spec_errors_name_the_key(text, key):
    with pytest.raises(SpecError) as info:
        parse_spec(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_gen_files_and_determinism(tmp_path, capsys):
    assert main(["gen", "--task", "fcount", "--n", "50", "--blobs", "7", "--seed", "1", "--width", "96", "--height", "96", "--out", str(tmp_path / "a")]) == 0
    assert len(list((tmp_path / "a" / "images").glob("*.ppm"))) == 50
    assert len((tmp_path / "a" / "manifest.jsonl").read_text().splitlines()) == 50
    main(["gen", "--task", "fcount", "--n", "50", "--blobs", "7", "--seed", "1", "--width", "96", "--height", "96", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert main(["gen", "--task", "fcount", "--n", "0", "--out", str(tmp_path / "e")]) == 0
    assert main(["gen", "--task", "fcount", "--n", "2", "--blobs", "99", "--out", str(tmp_path / "x")]) == 2


def test_run_fcount_split(tmp_path, capsys):
    main(["gen", "--task", "fcount", "--n", "6", "--blobs", "7", "--seed", "2", "--out", str(tmp_path / "d")])
    spec = tmp_path / "s.toml"
    spec.write_text('task = "fcount"\nlayout = "split"\npartitions = 2\nsplit_size = 2\n')
    capsys.readouterr()
    assert main(["--workers", "2", "run", str(spec), str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "driver_highwater=" in out and "flowed=" in out
    rows = (tmp_path / "o" / "fcount.results.tsv").read_text().splitlines()
    assert [r.split("\t")[1] for r in rows] == ["7"] * 6
    assert (tmp_path / "o" / "store" / "flat" / "manifest.jsonl").exists()


def test_run_imreg_identity(tmp_path):
    main(["gen", "--task", "imreg", "--n", "2", "--identical", "--out", str(tmp_path / "d")])
    spec = tmp_path / "s.toml"
    spec.write_text('task = "imreg"\n')
    assert main(["run", str(spec), str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 0
    for line in (tmp_path / "o" / "imreg.results.tsv").read_text().splitlines():
        matrix, flag = json.loads(line.split("\t")[1])
        assert flag == "ok"
        assert all(abs(matrix[i][j] - (i == j)) < 1e-6 for i in range(3) for j in range(3))


def test_run_exit_codes(tmp_path, capsys):
    main(["gen", "--task", "fcount", "--n", "10", "--out", str(tmp_path / "d")])
    bad = tmp_path / "bad.toml"
    bad.write_text('task = "fcount"\nlayot = "minimal"\n')
    assert main(["run", str(bad), str(tmp_path / "d")]) == 4
    assert "layot" in capsys.readouterr().err
    cap = tmp_path / "cap.toml"
    cap.write_text('task = "fcount"\ndriver_mem_cap = 5000\n')
    assert main(["run", str(cap), str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 3
    assert "S3" in capsys.readouterr().err


def test_bench_rows_and_cap_pattern(tmp_path, capsys):
    args = ["bench", "--gen", "--tasks", "fcount,imatch", "--sizes", "10", "--width", "96", "--height", "96",
            "--cap-fraction", "0.5", "--out", str(tmp_path / "b")]
    assert main(args) == 0
    rows = [json.loads(x) for x in (tmp_path / "b" / "bench.jsonl").read_text().splitlines()]
    assert len(rows) == 3 + 2
    assert all(list(r) == list(BENCH_FIELDS) for r in rows)
    fc = {r["layout"]: r for r in rows if r["task"] == "fcount"}
    assert fc["minimal"]["outcome"] == "MemoryExceeded" and fc["minimal"]["failing_stage"] == "S3"
    assert fc["split"]["outcome"] == "ok" and fc["split"]["outputs_equal"] is True
    assert [r["N_S"] for r in rows if r["layout"] == "minimal"] == [3, 1]
    table = (tmp_path / "b" / "bench.txt").read_text()
    assert table.splitlines()[0].split("\t") == list(BENCH_FIELDS)


def test_bench_needs_data_or_gen(tmp_path):
    assert main(["bench", "--tasks", "fcount", "--sizes", "3", "--out", str(tmp_path)]) == 2


def test_iobench_table(tmp_path, capsys):
    assert main(["iobench", "--sizes", "4", "--out", str(tmp_path / "io")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split("\t")[0] for l in lines[1:]] == ["KV-KV", "Sharded-Sharded", "Sharded-Flat"]
    assert all(l.endswith("exact") for l in lines[1:])
    main(["gen", "--task", "fcount", "--n", "0", "--out", str(tmp_path / "empty")])
    capsys.readouterr()
    assert main(["iobench", "--dataset", str(tmp_path / "empty"), "--out", str(tmp_path / "io2")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1
