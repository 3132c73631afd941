"""Layered live migration for edge services: an incremental
file-synchronization core, a base/application/instance layer model, the
migration state machine, and a deterministic network and cost model."""

from .delta_sync import (
    BasisMismatchError,
    CorruptDeltaError,
    FileDelta,
    FileSignature,
    SyncStats,
    apply_delta,
    apply_tree_delta,
    compute_delta,
    compute_signature,
    sync_tree,
)
from .guest import (
    GuestInstance,
    GuestSpec,
    InvalidStateError,
    CorruptInstanceError,
    RunState,
    Virtualization,
    build_guest,
    checkpoint,
    container_spec,
    restore,
    vm_spec,
)
from .layer_store import (
    FileTree,
    Layer,
    LayerKind,
    MemoryImage,
    advance_memory,
    clone_layer,
    materialize,
    new_memory_image,
    serialize_memory,
)
from .migrator import (
    CostModel,
    DestinationState,
    MigrationMode,
    MigrationReport,
    MigrationScenario,
    Stage,
    default_cost_model,
    downtime_of,
    execute,
    plan,
    run_migration,
)
from .netsim import LinkSpec, effective_rate, transfer_time
from .workloads import AppProfile, builtin_profiles, profile_by_name, scenario_matrix

__version__ = "0.1.0"
