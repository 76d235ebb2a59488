"""Data-parallel modules: packed records, the DPF layer and pipeline plans.

A pipeline is up to four canonical stages (S1 preprocess, S2 estimate,
S3 model, S4 analyze). Each stage is a :class:`ModuleSpec` wrapping a
:class:`StageLogic` object. A :class:`PipelinePlan` arranges the stages into
*groups*; every group runs as one engine map stage over
:class:`PackedRecord` values, optionally preceded by a driver-side
collective step (dataset-wide reductions, chunked scans).

Two layouts are built from the same stages:

* modular -- one group per stage, so records cross a boundary after each;
* minimal -- adjacent stages fused unless a stage needs a collective result
  of an earlier stage in the group, giving exactly N_S groups.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Sequence

from .engine import Engine, ExecConfig, PartitionedDataset, RunStats
from .errors import InvalidFusion, MalformedRecord, MemoryExceeded, MissingSlot, PlanError
from .sizing import SLOT_TAG_BYTES, size_of


class Stage(enum.IntEnum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4


SLOTS = ("im_id", "raw", "processed", "metrics", "model")
RESULT_TAG = "result"

# slots each stage reads by default
DEFAULT_REQUIRES = {
    Stage.S1: ("raw",),
    Stage.S2: ("processed",),
    Stage.S3: ("processed", "metrics"),
    Stage.S4: ("raw", "processed", "model"),
}


# -- records ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PackedRecord:
    """Ordered entity bundle flowing between modules.

    Slot order is fixed: ``im_id, raw, processed, metrics, model`` followed
    by tagged ``extra`` values in insertion order.
    """

    im_id: str
    raw: Any = None
    processed: Any = None
    metrics: Any = None
    model: Any = None
    extra: tuple = ()

    def __post_init__(self):
        if not isinstance(self.im_id, str) or not self.im_id:
            raise MalformedRecord("record requires a non-empty im_id")
        object.__setattr__(self, "extra", tuple((str(t), v) for t, v in self.extra))

    def unpack(self) -> tuple:
        return (self.im_id, self.raw, self.processed, self.metrics, self.model, *self.extra)

    @classmethod
    def from_tuple(cls, values: Sequence) -> "PackedRecord":
        if not values or not values[0]:
            raise MalformedRecord("record tuple is missing im_id")
        fixed = list(values[:5]) + [None] * (5 - min(5, len(values)))
        return cls(*fixed, extra=tuple(tuple(x) for x in values[5:]))

    def get(self, slot: str) -> Any:
        if slot in SLOTS:
            return getattr(self, slot)
        return self.get_extra(slot)

    def get_extra(self, tag: str, default: Any = None) -> Any:
        for t, v in self.extra:
            if t == tag:
                return v
        return default

    def has(self, slot: str) -> bool:
        if slot in SLOTS:
            return getattr(self, slot) is not None
        return any(t == slot for t, _ in self.extra)

    def with_slots(self, **slots) -> "PackedRecord":
        return replace(self, **slots)

    def with_extra(self, tag: str, value: Any) -> "PackedRecord":
        kept = tuple((t, v) for t, v in self.extra if t != tag)
        return replace(self, extra=kept + ((tag, value),))

    @property
    def result(self) -> Any:
        return self.get_extra(RESULT_TAG)

    def size_bytes(self) -> int:
        fixed = sum(size_of(getattr(self, s)) for s in SLOTS) + SLOT_TAG_BYTES * len(SLOTS)
        extra = sum(SLOT_TAG_BYTES + size_of(t) + size_of(v) for t, v in self.extra)
        return fixed + extra

    def to_bytes(self) -> bytes:
        from .codec import encode

        return encode(self)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PackedRecord":
        from .codec import decode

        rec = decode(buf)
        if not isinstance(rec, PackedRecord):
            raise MalformedRecord("payload is not a packed record")
        return rec

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedRecord):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __repr__(self) -> str:
        filled = [s for s in SLOTS[1:] if getattr(self, s) is not None] + [t for t, _ in self.extra]
        return f"PackedRecord({self.im_id!r}, slots={filled})"


def pack(im_id: str, raw=None, processed=None, metrics=None, model=None, *extra) -> PackedRecord:
    return PackedRecord(im_id, raw, processed, metrics, model, tuple(extra))


def unpack(rec: PackedRecord) -> tuple:
    if not isinstance(rec, PackedRecord) or not rec.im_id:
        raise MalformedRecord("not a packed record with an im_id")
    return rec.unpack()


# -- parameters -------------------------------------------------------------


class ParamSet:
    """Immutable per-stage parameter maps R_S1..R_S4."""

    def __init__(self, r_s1: Mapping | None = None, r_s2: Mapping | None = None, r_s3: Mapping | None = None, r_s4: Mapping | None = None):
        self._maps = {
            Stage.S1: MappingProxyType(dict(r_s1 or {})),
            Stage.S2: MappingProxyType(dict(r_s2 or {})),
            Stage.S3: MappingProxyType(dict(r_s3 or {})),
            Stage.S4: MappingProxyType(dict(r_s4 or {})),
        }

    def for_stage(self, stage: Stage) -> Mapping:
        return self._maps[Stage(stage)]

    r_s1 = property(lambda self: self._maps[Stage.S1])
    r_s2 = property(lambda self: self._maps[Stage.S2])
    r_s3 = property(lambda self: self._maps[Stage.S3])
    r_s4 = property(lambda self: self._maps[Stage.S4])

    def bind(self, from_stage: Stage, values: Mapping) -> "ParamSet":
        """New ParamSet with ``values`` merged into the R_S of ``from_stage`` and every later stage."""
        maps = {}
        for s, m in self._maps.items():
            maps[s] = {**m, **values} if s >= from_stage else dict(m)
        return ParamSet(maps[Stage.S1], maps[Stage.S2], maps[Stage.S3], maps[Stage.S4])

    def __repr__(self):
        return "ParamSet(" + ", ".join(f"r_s{int(s)}={sorted(m)}" for s, m in self._maps.items()) + ")"


# -- stage logic and modules -------------------------------------------------


class StageLogic:
    """Per-record image logic of one task; subclass and override what the task uses."""

    def preprocess(self, raw, r_s1):
        raise NotImplementedError

    def estimate(self, processed, r_s2):
        raise NotImplementedError

    def model(self, processed, metrics, r_s3):
        raise NotImplementedError

    def analyze(self, raw, processed, model, r_s4):
        raise NotImplementedError


@dataclass(frozen=True)
class Chunked:
    split_size: int

    def __post_init__(self):
        if self.split_size < 1:
            raise PlanError("split_size must be >= 1")


@dataclass
class CollectiveContext:
    """What a driver-side collective step sees."""

    engine: Engine
    dataset: PartitionedDataset
    params: Mapping
    module: "ModuleSpec"


@dataclass(frozen=True)
class ModuleSpec:
    """One canonical stage packaged as a data-parallel module.

    ``collective`` is a driver callback run over the records entering the
    stage; the mapping it returns is bound into this and later stages'
    parameters, under the names listed in ``provides``. ``needs`` names the
    collective results this stage's per-record logic reads. A stage with
    ``per_record=False`` contributes only its collective.
    """

    stage: Stage
    logic: StageLogic
    chunking: Chunked | None = None
    collective: Callable[[CollectiveContext], Mapping] | None = None
    provides: frozenset = frozenset()
    needs: frozenset = frozenset()
    per_record: bool = True
    requires: tuple | None = None

    @property
    def required_slots(self) -> tuple:
        return self.requires if self.requires is not None else DEFAULT_REQUIRES[self.stage]

    @property
    def name(self) -> str:
        return self.stage.name


class Layout(str, enum.Enum):
    MINIMAL = "minimal"
    MODULAR = "modular"
    SPLIT = "split"


class Retention(str, enum.Enum):
    ALL = "retain-all"
    DROP_RAW = "drop-raw-after-S2"


class ResultKind(str, enum.Enum):
    IMAGES = "I_R"
    LIST = "L_s"
    MATRICES = "L_M"
    DICT = "D_S"
    TUPLE_LISTS = "T_L"


@dataclass
class ResultValue:
    kind: ResultKind
    items: Any
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def as_dict(self) -> dict:
        if self.kind is ResultKind.DICT:
            return dict(self.items)
        if self.kind is ResultKind.TUPLE_LISTS:
            raise TypeError("tuple-of-lists result has no key mapping")
        return dict(self.items)


Finalizer = Callable[[Engine, PartitionedDataset, ParamSet], ResultValue]


@dataclass(frozen=True)
class PipelinePlan:
    groups: tuple
    layout: Layout
    result_kind: ResultKind = ResultKind.LIST
    retention: Retention = Retention.ALL
    finalize: Finalizer | None = None

    @property
    def n_s(self) -> int:
        return len(self.groups)

    @property
    def stages(self) -> tuple:
        return tuple(m for g in self.groups for m in g)

    def describe(self) -> str:
        return " | ".join("+".join(m.name for m in g) for g in self.groups)


def _validate_stages(stages: Sequence[ModuleSpec]) -> None:
    if not 1 <= len(stages) <= 4:
        raise PlanError(f"a pipeline declares 1-4 stages, got {len(stages)}")
    kinds = [m.stage for m in stages]
    if kinds != sorted(kinds) or len(set(kinds)) != len(kinds):
        raise PlanError(f"stages must appear once each in S1..S4 order, got {[k.name for k in kinds]}")


def validate_group(group: Sequence[ModuleSpec]) -> None:
    """Raise :class:`InvalidFusion` if the group cannot run as one map stage."""
    provided: set = set()
    for i, m in enumerate(group):
        if i > 0 and m.collective is not None:
            raise InvalidFusion(f"{m.name} runs a collective over earlier outputs and must start its own module")
        clash = m.needs & provided
        if clash:
            raise InvalidFusion(f"{m.name} depends on collective result(s) {sorted(clash)} of a stage in the same fused group")
        provided |= set(m.provides)


def plan_from_groups(groups: Sequence[Sequence[ModuleSpec]], layout: Layout = Layout.MINIMAL, **kw) -> PipelinePlan:
    groups = tuple(tuple(g) for g in groups if g)
    _validate_stages([m for g in groups for m in g])
    for g in groups:
        validate_group(g)
    return PipelinePlan(groups, layout, **kw)


def build_modular_plan(stages: Sequence[ModuleSpec], params: ParamSet | None = None, **kw) -> PipelinePlan:
    return plan_from_groups([[m] for m in stages], Layout.MODULAR, **kw)


def build_minimal_plan(stages: Sequence[ModuleSpec], params: ParamSet | None = None, layout: Layout = Layout.MINIMAL, **kw) -> PipelinePlan:
    _validate_stages(stages)
    groups: list[list[ModuleSpec]] = []
    provided: set = set()
    for m in stages:
        if not groups or m.collective is not None or (m.needs & provided):
            groups.append([m])
            provided = set(m.provides)
        else:
            groups[-1].append(m)
            provided |= set(m.provides)
    return plan_from_groups(groups, layout, **kw)


# -- DPF ----------------------------------------------------------------------


def apply_stage(rec: PackedRecord, module: ModuleSpec, params: ParamSet, retention: Retention = Retention.ALL) -> PackedRecord:
    """Unpack, run one stage's logic, repack (the DPF step for a single record)."""
    for slot in module.required_slots:
        if not rec.has(slot):
            raise MissingSlot(module.name, slot, rec.im_id)
    r = params.for_stage(module.stage)
    logic = module.logic
    if module.stage is Stage.S1:
        out = rec.with_slots(processed=logic.preprocess(rec.raw, r))
    elif module.stage is Stage.S2:
        out = rec.with_slots(metrics=logic.estimate(rec.processed, r))
        if retention is Retention.DROP_RAW:
            out = out.with_slots(raw=None)
    elif module.stage is Stage.S3:
        out = rec.with_slots(model=logic.model(rec.processed, rec.metrics, r))
    else:
        out = rec.with_extra(RESULT_TAG, logic.analyze(rec.raw, rec.processed, rec.model, r))
    return out


def dpf_apply(
    ds: PartitionedDataset,
    stage: ModuleSpec | Sequence[ModuleSpec],
    params: ParamSet,
    retention: Retention = Retention.ALL,
) -> PartitionedDataset:
    """One engine map stage running ``stage`` (or a fused group) over every record.

    Output record sizes are metered as flowed bytes: they are what crosses
    the boundary into the next module.
    """
    group = [stage] if isinstance(stage, ModuleSpec) else list(stage)
    per_record = [m for m in group if m.per_record]
    engine = ds.engine

    def run(rec: PackedRecord) -> PackedRecord:
        for m in per_record:
            rec = apply_stage(rec, m, params, retention)
        engine.meter_flow(size_of(rec))
        return rec

    return ds.map(run, name="dpf[" + "+".join(m.name for m in group) + "]")


def default_finalize(kind: ResultKind) -> Finalizer:
    def fin(engine: Engine, ds: PartitionedDataset, params: ParamSet) -> ResultValue:
        pairs = ds.map(lambda r: (r.im_id, r.result), name="project-result").collect()
        items = list(pairs)
        engine.driver_release(pairs.nbytes)
        if kind is ResultKind.DICT:
            return ResultValue(kind, dict(items))
        return ResultValue(kind, items)

    return fin


def execute_plan(
    plan: PipelinePlan,
    records: PartitionedDataset | Iterable[PackedRecord],
    config: ExecConfig | Engine | None = None,
    params: ParamSet | None = None,
) -> tuple[ResultValue, RunStats]:
    """Run every group in order; collectives run on the driver between groups."""
    if isinstance(records, PartitionedDataset):
        engine = records.engine
        ds = records
    else:
        engine = config if isinstance(config, Engine) else Engine(config)
        ds = engine.parallelize(records)
    params = params or ParamSet()
    for group in plan.groups:
        head = group[0]
        if head.collective is not None:
            ctx = CollectiveContext(engine, ds, params.for_stage(head.stage), head)
            try:
                produced = head.collective(ctx)
            except MemoryExceeded as exc:
                raise exc.with_stage(head.name)
            params = params.bind(head.stage, produced or {})
        if any(m.per_record for m in group):
            ds = dpf_apply(ds, group, params, plan.retention).cache()
            try:
                ds.materialize()
            except MemoryExceeded as exc:
                raise exc.with_stage("+".join(m.name for m in group))
    finalize = plan.finalize or default_finalize(plan.result_kind)
    try:
        result = finalize(engine, ds, params)
    except MemoryExceeded as exc:
        raise exc.with_stage("finalize")
    return result, engine.snapshot()


# -- storage routing ------------------------------------------------------------

SHARDED_KINDS = (ResultKind.IMAGES, ResultKind.MATRICES)


def route_result(result: ResultValue, stores, prefix: str = "result"):
    """Write I_R / L_M results to the sharded store, everything else to flat or KV."""
    from .storage import route

    return route(result, stores, prefix)
