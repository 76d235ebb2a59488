"""``mdpflow`` command line: gen, run, bench, iobench.

Exit codes:
    0  success
    1  other framework error (storage, plan)
    2  bad parameter or usage error
    3  driver or worker memory exceeded (message names the stage)
    4  invalid pipeline spec file (message names the key)
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen
from .config import PipelineSpec, load_spec
from .dataflow import Layout
from .engine import Engine, ExecConfig
from .errors import BadParam, MdpError, MemoryExceeded, SpecError
from .imgops import Histogram, Image, encode_ppm
from .pipelines import N_S, TaskId, layouts_for, results_equal, run_oracle, run_task
from .pipelines import cluster, fcount, imatch, imreg, mosaic, obe
from .pipelines.common import make_plan
from .storage import Encoding, RecordEnvelope, Stores, format_value, route, run_io_bench

HIST_BYTES = Histogram(np.zeros(256)).size_bytes()

EXIT_OK, EXIT_ERROR, EXIT_BADPARAM, EXIT_MEMORY, EXIT_SPEC = 0, 1, 2, 3, 4

STAGE_BUILDERS = {
    TaskId.IMATCH: imatch.stages,
    TaskId.CLUSTER: cluster.stages,
    TaskId.FCOUNT: fcount.stages,
    TaskId.OBE: obe.stages,
    TaskId.IMREG: imreg.stages,
    TaskId.MOSAIC: mosaic.stages,
}

BENCH_FIELDS = (
    "task", "n", "layout", "outcome", "failing_stage", "N_S", "groups",
    "driver_highwater", "flowed_bytes", "shuffle_bytes", "broadcast_bytes",
    "stage_count", "outputs_equal", "wall_ms",
)


def _csv(kind):
    def parse(text: str):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _blobs(text: str):
    if "-" in text:
        lo, hi = text.split("-", 1)
        return (int(lo), int(hi))
    return int(text)


def generate(task: TaskId, n: int, seed: int, width: int | None = None, height: int | None = None, **kw) -> datagen.Dataset:
    """Task-appropriate synthetic dataset with desk-scale defaults."""
    size = {}
    if width is not None:
        size["w"] = width
    if height is not None:
        size["h"] = height
    if task is TaskId.FCOUNT:
        return datagen.gen_flower_field(n, blobs_per_img=kw.get("blobs", 7), seed=seed, **size)
    if task is TaskId.IMATCH:
        return datagen.gen_match_set(n, seed=seed, **size)
    if task is TaskId.IMREG:
        if kw.get("identical"):
            return datagen.gen_identical_pairs(n, seed=seed, **size)
        return datagen.gen_warped_pairs(
            n,
            max_translation=kw.get("max_translation", 20.0),
            max_rotation_deg=kw.get("max_rotation", 10.0),
            noise_sigma=kw.get("noise", 0.0),
            outlier_rate=kw.get("outlier_rate", 0.0),
            seed=seed,
            **size,
        )
    if task is TaskId.CLUSTER:
        return datagen.gen_cluster_images(n, kw.get("k", 2), kw.get("separation", 0.5), seed=seed, **size)
    if task is TaskId.MOSAIC:
        tile = {"tile_w": size["w"]} if "w" in size else {}
        if "h" in size:
            tile["tile_h"] = size["h"]
        return datagen.gen_mosaic_tiles(n, step=kw.get("step", 48), seed=seed, **tile)
    return datagen.gen_object_scenes(n, seed=seed, **size)


def exec_config(args, spec: PipelineSpec | None = None, cap: int | None = None) -> ExecConfig:
    workers = args.workers or (spec.workers if spec and spec.workers else 1)
    parts = args.partitions or (spec.partitions if spec else 0) or workers
    if cap is None:
        cap = args.driver_cap_bytes if args.driver_cap_bytes is not None else (spec.driver_mem_cap if spec else 0)
    return ExecConfig(num_workers=workers, num_partitions=parts, driver_mem_cap=cap, seed=args.seed)


def plan_groups(task: TaskId, layout: Layout) -> int:
    return make_plan(STAGE_BUILDERS[task](), Layout.MINIMAL if layout is Layout.SPLIT else layout).n_s


def _manifest_value(v) -> str:
    if isinstance(v, Image):
        return f"image {v.width}x{v.height}x{v.channels}"
    return format_value(v)


# -- gen -----------------------------------------------------------------------


def cmd_gen(args) -> int:
    task = TaskId(args.task)
    kw = {"blobs": args.blobs, "k": args.k, "separation": args.separation, "noise": args.noise,
          "outlier_rate": args.outlier_rate, "max_translation": args.max_translation,
          "max_rotation": args.max_rotation, "identical": args.identical, "step": args.step}
    width, height = args.width, args.height
    if args.full_scale:
        width, height = datagen.FULL_SCALE
    ds = generate(task, args.n, args.seed, width, height, **kw)
    out = Path(args.out or f"data/{task.value}-{args.n}")
    manifest = datagen.write_dataset(ds, out)
    print(f"wrote {len(ds)} items to {out} manifest={manifest} sha256={datagen.manifest_digest(manifest)}")
    return EXIT_OK


# -- run -----------------------------------------------------------------------


def cmd_run(args) -> int:
    spec = load_spec(args.spec)
    dataset = datagen.load_dataset(args.dataset)
    if spec.task is TaskId.CLUSTER and spec.k is not None:
        dataset.params = {**dataset.params, "k": spec.k}
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    res = run_task(spec.task, dataset, spec.layout, exec_config(args, spec), spec.split_size, spec.params, spec.retention)
    root = Path(spec.storage.root) if spec.storage.root else out / "store"
    stores = Stores.under(root, spec.storage.aux, spec.storage.shard_count, spec.storage.replication_factor)
    receipt = route(res.result, stores, prefix=spec.task.value)
    manifest = out / f"{spec.task.value}.results.tsv"
    manifest.write_text("".join(f"{k}\t{_manifest_value(v)}\n" for k, v in res.outputs.items()), encoding="utf-8")
    print(f"task={spec.task.value} layout={res.plan.layout.value} N_S={res.n_s} items={len(res.outputs)} "
          f"stored={len(receipt.keys)} manifest={manifest}")
    print(res.stats.summary())
    return EXIT_OK


# -- bench ---------------------------------------------------------------------


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=False) + "\n" for r in self.rows)

    def table(self) -> str:
        head = list(BENCH_FIELDS)
        lines = ["\t".join(head)]
        for r in self.rows:
            cells = []
            for f in head:
                v = r[f]
                cells.append(f"{v:.1f}" if f == "wall_ms" else ("-" if v is None else str(v).lower() if isinstance(v, bool) else str(v)))
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def bench_dataset(task: TaskId, n: int, args) -> datagen.Dataset:
    if args.data:
        path = Path(args.data) / f"{task.value}-{n}"
        if path.exists():
            return datagen.load_dataset(path)
        if not args.gen:
            raise BadParam(f"dataset {path} does not exist (pass --gen to generate)")
    elif not args.gen:
        raise BadParam("bench needs --data DIR or --gen")
    kw = {"k": args.k}
    if task is TaskId.IMREG:
        kw.update(outlier_rate=0.2, max_rotation=5.0)
    ds = generate(task, n, args.seed, args.width, args.height, **kw)
    if args.data:
        datagen.write_dataset(ds, Path(args.data) / f"{task.value}-{n}")
    return ds


def run_bench(args) -> BenchReport:
    report = BenchReport()
    layouts = [Layout(x) for x in args.layouts]
    for name in args.tasks:
        task = TaskId(name)
        for n in args.sizes:
            dataset = bench_dataset(task, n, args)
            reference = run_oracle(task, dataset)
            cap = int(args.cap_fraction * n * HIST_BYTES) if args.cap_fraction is not None else None
            for layout in layouts:
                if layout not in layouts_for(task):
                    continue
                row = {"task": task.value, "n": n, "layout": layout.value, "outcome": "ok", "failing_stage": None,
                       "N_S": N_S[task], "groups": plan_groups(task, layout)}
                engine = Engine(exec_config(args, cap=cap))
                try:
                    res = run_task(task, dataset, layout, engine, args.split_size)
                    stats, equal = res.stats, results_equal(task, res, reference)
                except MemoryExceeded as exc:
                    row.update(outcome="MemoryExceeded", failing_stage=exc.stage)
                    stats, equal = engine.snapshot(), None
                except MdpError as exc:
                    row.update(outcome=type(exc).__name__)
                    stats, equal = engine.snapshot(), None
                m = stats.as_dict()
                for f in ("driver_highwater", "flowed_bytes", "shuffle_bytes", "broadcast_bytes", "stage_count"):
                    row[f] = m.get(f)
                row["outputs_equal"] = equal
                row["wall_ms"] = round(m.get("wall_ms", 0.0), 3)
                report.rows.append(row)
    return report


def cmd_bench(args) -> int:
    report = run_bench(args)
    out = Path(args.out or "bench")
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.jsonl").write_text(report.jsonl(), encoding="utf-8")
    text = report.table()
    (out / "bench.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- iobench -------------------------------------------------------------------


def cmd_iobench(args) -> int:
    envs_by_size = {}
    if args.dataset:
        ds = datagen.load_dataset(args.dataset)
        envs_by_size[len(ds)] = _envelopes(ds)
    else:
        for n in args.sizes:
            envs_by_size[n] = _envelopes(datagen.gen_flower_field(n, 128, 128, seed=args.seed))
    out = Path(args.out or "iobench")
    report = run_io_bench(envs_by_size, out / "work")
    text = report.table()
    out.mkdir(parents=True, exist_ok=True)
    (out / "iobench.txt").write_text(text, encoding="utf-8")
    with open(out / "iobench.jsonl", "w", encoding="utf-8") as fh:
        for r in report.rows:
            fh.write(json.dumps({"pair": r.pair, "n": r.n, "read_ms": round(r.read_ms, 3), "write_ms": round(r.write_ms, 3), "fidelity": r.fidelity}) + "\n")
    sys.stdout.write(text)
    return EXIT_OK


def _envelopes(ds: datagen.Dataset) -> list[RecordEnvelope]:
    envs = []
    for im_id, value in ds.items:
        if isinstance(value, Image):
            envs.append(RecordEnvelope(f"images/{im_id}", encode_ppm(value), Encoding.IMAGE))
        else:
            for j, im in enumerate(value):
                envs.append(RecordEnvelope(f"images/{im_id}/{j}", encode_ppm(im), Encoding.IMAGE))
    return envs


# -- entry point ---------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--workers", type=int, default=d(None), help="worker threads (default 1)")
    parser.add_argument("--partitions", type=int, default=d(None), help="dataset partitions (default: spec value or workers)")
    parser.add_argument("--driver-cap-bytes", type=int, default=d(None), help="driver memory cap in bytes, 0 = unlimited")
    parser.add_argument("--seed", type=int, default=d(0), help="generator / engine seed")
    parser.add_argument("--out", default=d(None), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdpflow", description="Modular data-parallel image pipelines.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    tasks = [t.value for t in TaskId]

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--task", required=True, choices=tasks)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--blobs", type=_blobs, default=7, help="blobs per image, N or LO-HI (fcount)")
    g.add_argument("--k", type=int, default=2, help="number of groups (cluster)")
    g.add_argument("--separation", type=float, default=0.5, help="palette separation (cluster)")
    g.add_argument("--noise", type=float, default=0.0, help="noise sigma (imreg)")
    g.add_argument("--outlier-rate", type=float, default=0.0, help="outlier area fraction (imreg)")
    g.add_argument("--max-translation", type=float, default=20.0, help="imreg")
    g.add_argument("--max-rotation", type=float, default=10.0, help="degrees (imreg)")
    g.add_argument("--identical", action="store_true", help="identical pairs, H = identity (imreg)")
    g.add_argument("--step", type=int, default=48, help="tile step in pixels (mosaic)")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--full-scale", action="store_true", help="1280x720 images")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", parents=[common], help="run a pipeline spec on a dataset")
    r.add_argument("spec", help="pipeline spec file (TOML)")
    r.add_argument("dataset", help="dataset directory written by gen")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", parents=[common], help="compare layouts across tasks and sizes")
    b.add_argument("--tasks", type=_csv(str), default=tasks)
    b.add_argument("--sizes", type=_csv(int), default=[20])
    b.add_argument("--layouts", type=_csv(str), default=[x.value for x in Layout])
    b.add_argument("--cap-fraction", type=float, help="driver cap as a fraction of n x histogram bytes")
    b.add_argument("--split-size", type=int, help="chunk size for split layouts (default ceil(n/10))")
    b.add_argument("--data", help="directory of <task>-<n> datasets")
    b.add_argument("--gen", action="store_true", help="generate missing datasets")
    b.add_argument("--k", type=int, default=2, help="cluster count for generated cluster data")
    b.add_argument("--width", type=int)
    b.add_argument("--height", type=int)
    b.set_defaults(func=cmd_bench)

    io = sub.add_parser("iobench", parents=[common], help="time backend pairs and verify round trips")
    io.add_argument("--dataset", help="dataset directory; default generates flower fields")
    io.add_argument("--sizes", type=_csv(int), default=[10, 50])
    io.set_defaults(func=cmd_iobench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "layouts", None):
        bad = [x for x in args.layouts if x not in {l.value for l in Layout}]
        if bad:
            parser.error(f"unknown layout {bad[0]!r}")
    if getattr(args, "tasks", None) and args.command == "bench":
        bad = [x for x in args.tasks if x not in {t.value for t in TaskId}]
        if bad:
            parser.error(f"unknown task {bad[0]!r}")
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except MemoryExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except BadParam as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BADPARAM
    except MdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
