"""The layered migration state machine, with stage cost and wire-byte
accounting.

A migration walks an ordered list of stages chosen from what the
destination already holds (instance, application, base, or nothing) and
whether the scenario runs the two-layer or three-layer model.  Sync
stages run the real delta engine between source and destination trees;
clone, suspend, restore and catch-all stages charge calibrated fixed
and per-byte costs.  Service downtime is the span from suspending the
instance to restoring it at the destination: the suspend, instance
filesystem sync, in-memory-state sync and restore stages.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .delta_sync import DEFAULT_BLOCK_SIZE, SyncStats, apply_tree_delta, sync_tree
from .guest import (
    CHECKPOINT_PREFIX,
    GuestInstance,
    GuestSpec,
    RunState,
    Virtualization,
    build_guest,
    checkpoint,
    restore,
)
from .layer_store import (
    DEFAULT_CHUNK_SIZE,
    FileTree,
    Layer,
    LayerKind,
    advance_memory,
    new_memory_image,
)
from .netsim import LinkSpec, transfer_time

MB = 1_000_000


class MigrationMode(enum.Enum):
    TWO_LAYER = "two_layer"
    THREE_LAYER = "three_layer"


class Stage(enum.Enum):
    SYNC_BASE_FILESYSTEM = "sync_base_filesystem"
    CLONE_BASE_AS_APP = "clone_base_as_app"
    SYNC_APP_FILESYSTEM = "sync_app_filesystem"
    CLONE_APP_AS_INSTANCE = "clone_app_as_instance"
    SUSPEND_INSTANCE = "suspend_instance"
    SYNC_INSTANCE_FILESYSTEM = "sync_instance_filesystem"
    SYNC_INSTANCE_MEMORY = "sync_instance_memory"
    RESTORE_INSTANCE = "restore_instance"
    OTHER_TASKS = "other_tasks"


# The stages during which the service is stopped.
DOWNTIME_STAGES = frozenset(
    {
        Stage.SUSPEND_INSTANCE,
        Stage.SYNC_INSTANCE_FILESYSTEM,
        Stage.SYNC_INSTANCE_MEMORY,
        Stage.RESTORE_INSTANCE,
    }
)


@dataclass(frozen=True)
class DestinationState:
    """What the destination MEC already holds before migration starts."""

    has_base: bool = False
    has_app: bool = False
    has_stale_instance: bool = False

    def validate(self, mode: MigrationMode) -> None:
        if self.has_app and not self.has_base:
            raise ValueError("destination cannot hold an app layer without the base")
        if self.has_stale_instance:
            if mode is MigrationMode.THREE_LAYER and not self.has_app:
                raise ValueError("three-layer stale instance requires the app layer")
            if not self.has_base:
                raise ValueError("stale instance requires the base layer")


@dataclass(frozen=True)
class CostModel:
    """Calibrated stage costs.

    Rates are bytes/s, fixed terms seconds.  ``stage_fixed_overhead``
    is charged once per sync stage (session setup, file-list walk);
    ``scan_rate`` converts scanned target bytes into comparison time at
    the sender.
    """

    clone_rate: float
    suspend_fixed: float
    suspend_per_byte: float
    restore_fixed: float
    restore_per_byte: float
    scan_rate: float
    stage_fixed_overhead: float
    other_tasks_fixed: float

    def __post_init__(self):
        if self.clone_rate <= 0 or self.scan_rate <= 0:
            raise ValueError("rates must be positive")
        for name in ("suspend_fixed", "suspend_per_byte", "restore_fixed",
                     "restore_per_byte", "stage_fixed_overhead", "other_tasks_fixed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "clone_rate": self.clone_rate,
            "suspend_fixed": self.suspend_fixed,
            "suspend_per_byte": self.suspend_per_byte,
            "restore_fixed": self.restore_fixed,
            "restore_per_byte": self.restore_per_byte,
            "scan_rate": self.scan_rate,
            "stage_fixed_overhead": self.stage_fixed_overhead,
            "other_tasks_fixed": self.other_tasks_fixed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        return cls(**data)


def default_cost_model(virtualization: Virtualization) -> CostModel:
    """Uncalibrated starting points, also the fitter's initial values."""
    if virtualization is Virtualization.CONTAINER:
        return CostModel(
            clone_rate=130 * MB,
            suspend_fixed=0.30,
            suspend_per_byte=1.5e-9,
            restore_fixed=0.40,
            restore_per_byte=2.4e-9,
            scan_rate=2000 * MB,
            stage_fixed_overhead=0.5,
            other_tasks_fixed=2.5,
        )
    return CostModel(
        clone_rate=170 * MB,
        suspend_fixed=1.8,
        suspend_per_byte=4.5e-9,
        restore_fixed=2.4,
        restore_per_byte=1.0e-9,
        scan_rate=65 * MB,
        stage_fixed_overhead=0.6,
        other_tasks_fixed=3.7,
    )


@dataclass(frozen=True)
class StageRecord:
    stage: Stage
    seconds: float
    wire_bytes: int
    # Work drivers behind the duration, kept for calibration and debugging:
    # bytes compared by the sync engine, and bytes processed locally
    # (layer size for clones, memory size for suspend/restore).
    scanned_bytes: int = 0
    local_bytes: int = 0


@dataclass(frozen=True)
class MigrationReport:
    mode: MigrationMode
    destination: DestinationState
    stages: tuple[StageRecord, ...]
    scenario_echo: dict

    @property
    def total_seconds(self) -> float:
        return sum(s.seconds for s in self.stages)

    @property
    def downtime_seconds(self) -> float:
        return sum(s.seconds for s in self.stages if s.stage in DOWNTIME_STAGES)

    @property
    def total_wire_bytes(self) -> int:
        return sum(s.wire_bytes for s in self.stages)

    def stage_seconds(self, stage: Stage) -> float:
        return sum(s.seconds for s in self.stages if s.stage is stage)

    def to_json_dict(self) -> dict:
        return {
            "schema": "layermig.report/v1",
            "scenario": self.scenario_echo,
            "mode": self.mode.value,
            "destination": {
                "has_base": self.destination.has_base,
                "has_app": self.destination.has_app,
                "has_stale_instance": self.destination.has_stale_instance,
            },
            "stages": [
                {
                    "stage": s.stage.value,
                    "seconds": s.seconds,
                    "wire_bytes": s.wire_bytes,
                    "scanned_bytes": s.scanned_bytes,
                    "local_bytes": s.local_bytes,
                }
                for s in self.stages
            ],
            "total_seconds": self.total_seconds,
            "downtime_seconds": self.downtime_seconds,
            "total_wire_bytes": self.total_wire_bytes,
        }


def downtime_of(report: MigrationReport) -> float:
    """Seconds the service was stopped: the four suspend-to-restore stages."""
    return report.downtime_seconds


@dataclass(frozen=True)
class MigrationScenario:
    """Everything needed to run one migration deterministically."""

    guest_spec: GuestSpec
    profile: object  # AppProfile-shaped: name, sizes, churn, wire ratios
    mode: MigrationMode
    destination: DestinationState
    link: LinkSpec
    cost_model: CostModel
    scale: float = 1.0
    seed: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    chunk_size: int = DEFAULT_CHUNK_SIZE
    round_trips: int = 2
    staleness_epochs: int = 3
    retain_source: bool = True

    def echo(self) -> dict:
        return {
            "profile": self.profile.name,
            "virtualization": self.guest_spec.virtualization.value,
            "mode": self.mode.value,
            "destination": {
                "has_base": self.destination.has_base,
                "has_app": self.destination.has_app,
                "has_stale_instance": self.destination.has_stale_instance,
            },
            "link": {
                "bandwidth_bps": self.link.bandwidth_bps,
                "latency_s": self.link.latency_s,
                "jitter_s": self.link.jitter_s,
                "processing_cap_bps": self.link.processing_cap_bps,
                "seed": self.link.seed,
            },
            "scale": self.scale,
            "seed": self.seed,
            "block_size": self.block_size,
            "chunk_size": self.chunk_size,
            "round_trips": self.round_trips,
            "staleness_epochs": self.staleness_epochs,
        }


def plan(mode: MigrationMode, dest: DestinationState) -> list[Stage]:
    """Stage order for one migration, as a function of what the
    destination already holds.

    The closing sequence is always suspend, instance filesystem sync,
    in-memory-state sync, restore, other tasks.  A found (stale)
    instance skips straight to it; a found app (three-layer) or base
    (two-layer) is cloned as the new instance first; anything missing
    below that is synced and cloned on the way.  Two-layer mode never
    emits application-layer stages: the clone step duplicates the base
    and the app files travel inside the instance sync.
    """
    dest.validate(mode)
    tail = [
        Stage.SUSPEND_INSTANCE,
        Stage.SYNC_INSTANCE_FILESYSTEM,
        Stage.SYNC_INSTANCE_MEMORY,
        Stage.RESTORE_INSTANCE,
        Stage.OTHER_TASKS,
    ]
    if dest.has_stale_instance:
        return tail
    stages: list[Stage] = []
    if mode is MigrationMode.THREE_LAYER:
        if not dest.has_app:
            if not dest.has_base:
                stages.append(Stage.SYNC_BASE_FILESYSTEM)
            stages.append(Stage.CLONE_BASE_AS_APP)
            stages.append(Stage.SYNC_APP_FILESYSTEM)
        stages.append(Stage.CLONE_APP_AS_INSTANCE)
    else:
        if not dest.has_base:
            stages.append(Stage.SYNC_BASE_FILESYSTEM)
        stages.append(Stage.CLONE_APP_AS_INSTANCE)  # app := base in two-layer mode
    return stages + tail


@dataclass
class MigrationOutcome:
    """Report plus the concrete guests, for end-to-end verification."""

    report: MigrationReport
    source_at_suspend: GuestInstance
    destination: GuestInstance
    source_retained: GuestInstance | None


def execute(scenario: MigrationScenario) -> MigrationReport:
    """Run the migration and return its report.  See :func:`run_migration`
    for access to the resulting guests."""
    return run_migration(scenario).report


def run_migration(scenario: MigrationScenario) -> MigrationOutcome:
    """Execute every planned stage against real trees.

    Sync stages call the delta engine with the destination's actual
    basis and charge link transfer time for the wire bytes, comparison
    time for scanned bytes, and the per-stage fixed overhead.  Clone
    stages charge bytes/clone_rate; suspend and restore charge their
    fixed plus per-memory-byte terms.  The destination finishes with a
    running guest whose trees and memory equal the source's at suspend
    time, which is asserted before returning.
    """
    spec = scenario.guest_spec
    mode = scenario.mode
    dest_state = scenario.destination
    dest_state.validate(mode)
    cm = scenario.cost_model
    link = scenario.link
    app_layer = mode is MigrationMode.THREE_LAYER

    source = build_guest(
        spec, scenario.profile, scenario.seed, scenario.scale,
        app_layer=app_layer, virt_nonce=1,
    )

    # Destination holdings. Bases and app layers are bit-identical across
    # MECs by construction; a stale instance is this same guest as it was
    # checkpointed some epochs ago (older memory, older background state).
    dest_base_tree = source.base.tree if dest_state.has_base else None
    dest_app_tree = source.app.tree if (app_layer and dest_state.has_app) else None
    dest_instance_tree: FileTree | None = None
    if dest_state.has_stale_instance:
        stale = checkpoint(
            build_guest(spec, scenario.profile, scenario.seed, scenario.scale,
                        app_layer=app_layer, virt_nonce=0),
            scenario.chunk_size,
        )
        dest_instance_tree = stale.instance.tree
        if scenario.staleness_epochs:
            source = replace(
                source, memory=advance_memory(source.memory, scenario.staleness_epochs)
            )

    suspended: GuestInstance | None = None
    records: list[StageRecord] = []
    sync_calls = 0

    def run_sync(basis: FileTree, target: FileTree) -> tuple[FileTree, SyncStats, float]:
        nonlocal sync_calls
        tree_delta, stats = sync_tree(
            basis, target, scenario.block_size, verify_unchanged=spec.scan_unchanged
        )
        synced = apply_tree_delta(basis, tree_delta)
        seconds = (
            transfer_time(link, stats.wire_bytes, scenario.round_trips, call_index=sync_calls)
            + stats.scanned_bytes / cm.scan_rate
            + cm.stage_fixed_overhead
        )
        sync_calls += 1
        return synced, stats, seconds

    for stage in plan(mode, dest_state):
        if stage is Stage.SYNC_BASE_FILESYSTEM:
            dest_base_tree, stats, seconds = run_sync(FileTree(), source.base.tree)
            records.append(StageRecord(stage, seconds, stats.wire_bytes, stats.scanned_bytes))

        elif stage is Stage.CLONE_BASE_AS_APP:
            assert dest_base_tree is not None
            dest_app_tree = FileTree(dict(dest_base_tree.items()))
            records.append(
                StageRecord(stage, dest_base_tree.total_length / cm.clone_rate, 0,
                            local_bytes=dest_base_tree.total_length)
            )

        elif stage is Stage.SYNC_APP_FILESYSTEM:
            assert dest_app_tree is not None and source.app is not None
            dest_app_tree, stats, seconds = run_sync(dest_app_tree, source.app.tree)
            records.append(StageRecord(stage, seconds, stats.wire_bytes, stats.scanned_bytes))

        elif stage is Stage.CLONE_APP_AS_INSTANCE:
            lower = dest_app_tree if mode is MigrationMode.THREE_LAYER else dest_base_tree
            assert lower is not None
            dest_instance_tree = FileTree(dict(lower.items()))
            records.append(
                StageRecord(stage, lower.total_length / cm.clone_rate, 0,
                            local_bytes=lower.total_length)
            )

        elif stage is Stage.SUSPEND_INSTANCE:
            suspended = checkpoint(source, scenario.chunk_size)
            seconds = cm.suspend_fixed + cm.suspend_per_byte * source.memory.total_bytes
            records.append(StageRecord(stage, seconds, 0, local_bytes=source.memory.total_bytes))

        elif stage is Stage.SYNC_INSTANCE_FILESYSTEM:
            assert suspended is not None and dest_instance_tree is not None
            _, src_fs = suspended.instance.tree.split(CHECKPOINT_PREFIX)
            dest_mem, dest_fs = dest_instance_tree.split(CHECKPOINT_PREFIX)
            synced_fs, stats, seconds = run_sync(dest_fs, src_fs)
            dest_instance_tree = synced_fs.with_entries(dict(dest_mem.items()))
            records.append(StageRecord(stage, seconds, stats.wire_bytes, stats.scanned_bytes))

        elif stage is Stage.SYNC_INSTANCE_MEMORY:
            assert suspended is not None and dest_instance_tree is not None
            src_mem, _ = suspended.instance.tree.split(CHECKPOINT_PREFIX)
            dest_mem, dest_fs = dest_instance_tree.split(CHECKPOINT_PREFIX)
            synced_mem, stats, seconds = run_sync(dest_mem, src_mem)
            dest_instance_tree = dest_fs.with_entries(dict(synced_mem.items()))
            records.append(StageRecord(stage, seconds, stats.wire_bytes, stats.scanned_bytes))

        elif stage is Stage.RESTORE_INSTANCE:
            assert suspended is not None and dest_instance_tree is not None
            seconds = cm.restore_fixed + cm.restore_per_byte * suspended.memory.total_bytes
            records.append(StageRecord(stage, seconds, 0, local_bytes=suspended.memory.total_bytes))

        else:  # OTHER_TASKS
            records.append(StageRecord(stage, cm.other_tasks_fixed, 0))

    assert suspended is not None and dest_instance_tree is not None

    dest_guest = GuestInstance(
        spec=spec,
        base=Layer(id="dest-base", kind=LayerKind.BASE,
                   tree=dest_base_tree if dest_base_tree is not None else source.base.tree),
        app=(
            Layer(id="dest-app", kind=LayerKind.APPLICATION,
                  tree=dest_app_tree, parent_id="dest-base")
            if dest_app_tree is not None else None
        ),
        instance=Layer(id="dest-instance", kind=LayerKind.INSTANCE,
                       tree=dest_instance_tree, parent_id="dest-base"),
        memory=new_memory_image(0, 0),  # rebuilt from checkpoint files below
        run_state=RunState.SUSPENDED,
        seed=scenario.seed,
        scale=scenario.scale,
        memory_wire_ratio=suspended.memory_wire_ratio,
    )
    dest_guest = restore(dest_guest)

    # Internal consistency: the migrated guest must hold exactly the
    # source's state at suspend time.  A mismatch means a sync stage
    # went wrong and the report would be meaningless.
    source_fs = suspended.instance.tree.without(
        suspended.instance.tree.subtree(CHECKPOINT_PREFIX).paths()
    )
    if dest_guest.instance.tree != source_fs:
        raise RuntimeError("destination instance tree diverged from source at suspend")
    if dest_guest.memory != suspended.memory:
        raise RuntimeError("destination memory diverged from source at suspend")

    report = MigrationReport(
        mode=mode,
        destination=dest_state,
        stages=tuple(records),
        scenario_echo=scenario.echo(),
    )
    return MigrationOutcome(
        report=report,
        source_at_suspend=suspended,
        destination=dest_guest,
        source_retained=suspended if scenario.retain_source else None,
    )
