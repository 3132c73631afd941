"""Guest lifecycle: build a layered guest from a base image and an
application profile, checkpoint it (suspend and serialize memory into
the instance tree), and restore it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .layer_store import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_PAGE_SIZE,
    FileTree,
    Layer,
    LayerKind,
    MemoryImage,
    SyntheticContent,
    clone_layer,
    new_memory_image,
    restore_memory,
    serialize_memory,
    synthetic_files,
)

MB = 1_000_000

CHECKPOINT_PREFIX = "checkpoint"
VM_STATE_FILE = "checkpoint/vmstate.img"


class Virtualization(enum.Enum):
    CONTAINER = "container"
    VM = "vm"


class RunState(enum.Enum):
    RUNNING = "running"
    SUSPENDED = "suspended"


class InvalidStateError(Exception):
    """Operation not legal in the guest's current run state."""


class CorruptInstanceError(Exception):
    """Suspended guest whose checkpoint files are missing or inconsistent."""


@dataclass(frozen=True)
class GuestSpec:
    """Static properties of the encapsulation technology.

    ``virtualization_overhead_bytes`` is background state that differs on
    every migration regardless of the application (packaging metadata,
    logs, device state); it is charged as irreducible instance-layer
    transfer.  The wire ratios and the VM-only memory floor are
    calibration constants fitted from reference measurements: container
    filesystems compress roughly 2:1 on the wire, VM image trees sync
    poorly enough to expand, and an idle VM's save file is large but
    almost entirely zero pages.
    """

    virtualization: Virtualization
    base_tree_size: int
    virtualization_overhead_bytes: int
    base_wire_ratio: float = 1.0
    fs_wire_ratio: float = 1.0
    scan_unchanged: bool = False
    memory_floor_bytes: int = 0
    memory_floor_wire_ratio: float = 1.0

    def __post_init__(self):
        if self.base_tree_size <= 0:
            raise ValueError("base_tree_size must be positive")


def container_spec() -> GuestSpec:
    return GuestSpec(
        virtualization=Virtualization.CONTAINER,
        base_tree_size=400 * MB,
        virtualization_overhead_bytes=1_400_000,
        base_wire_ratio=0.30,
        fs_wire_ratio=0.48,
        scan_unchanged=False,
    )


def vm_spec() -> GuestSpec:
    return GuestSpec(
        virtualization=Virtualization.VM,
        base_tree_size=2_700 * MB,
        virtualization_overhead_bytes=65 * MB,
        base_wire_ratio=0.20,
        fs_wire_ratio=1.60,
        scan_unchanged=True,
        memory_floor_bytes=600 * MB,
        memory_floor_wire_ratio=0.01,
    )


@dataclass(frozen=True)
class GuestInstance:
    """A built guest: its layers, its memory image, and its run state.

    Checkpoint files are present in the instance tree exactly while the
    guest is suspended.
    """

    spec: GuestSpec
    base: Layer
    app: Layer | None
    instance: Layer
    memory: MemoryImage
    run_state: RunState
    seed: int
    scale: float
    memory_wire_ratio: float = 1.0

    @property
    def layers(self) -> list[Layer]:
        return [l for l in (self.base, self.app, self.instance) if l is not None]


def _scaled(size: int, scale: float) -> int:
    return round(size * scale)


def _slug(name: str) -> str:
    return name.lower().replace(" ", "-")


def build_guest(
    spec: GuestSpec,
    app,
    seed: int,
    scale: float = 1.0,
    *,
    app_layer: bool = True,
    page_size: int = DEFAULT_PAGE_SIZE,
    virt_nonce: int = 0,
) -> GuestInstance:
    """Construct a running guest for an application profile.

    Layer byte sizes scale linearly with ``scale``; the memory image is
    quantized to whole pages.  ``virt_nonce`` keys the content of the
    always-churning virtualization files so that successive migrations
    of the same guest produce distinct background state.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    kind = spec.virtualization
    slug = _slug(app.name)

    base_tree = FileTree(
        synthetic_files(
            "base", _scaled(spec.base_tree_size, scale), seed=seed ^ 0xB5E,
            wire_ratio=spec.base_wire_ratio,
        )
    )
    base = Layer(id=f"base:{seed:x}", kind=LayerKind.BASE, tree=base_tree)

    app_entries = synthetic_files(
        f"app/{slug}", _scaled(app.install_bytes[kind], scale), seed=seed ^ 0xA99,
        wire_ratio=spec.fs_wire_ratio,
    )
    app_entries.update(
        synthetic_files(
            f"data/{slug}", _scaled(app.data_bytes, scale), seed=seed ^ 0xDA7A,
            wire_ratio=spec.fs_wire_ratio,
        )
    )

    instance_entries = synthetic_files(
        f"inst/{slug}", _scaled(app.instance_unique_file_bytes, scale), seed=seed ^ 0x1457,
        wire_ratio=spec.fs_wire_ratio,
    )
    instance_entries.update(
        synthetic_files(
            "virt", _scaled(spec.virtualization_overhead_bytes, scale),
            seed=seed ^ 0x717, epoch=virt_nonce, wire_ratio=1.0,
        )
    )

    app_layer_obj: Layer | None = None
    if app_layer:
        app_tree = base_tree.with_entries(app_entries)
        app_layer_obj = Layer(
            id=f"application:{seed:x}", kind=LayerKind.APPLICATION,
            tree=app_tree, parent_id=base.id,
        )
        instance_tree = app_tree.with_entries(instance_entries)
        parent_id = app_layer_obj.id
    else:
        # Two-layer packaging: application files live inside the instance.
        merged = dict(app_entries)
        merged.update(instance_entries)
        instance_tree = base_tree.with_entries(merged)
        parent_id = base.id

    instance = Layer(
        id=f"instance:{seed:x}", kind=LayerKind.INSTANCE,
        tree=instance_tree, parent_id=parent_id,
    )

    memory = new_memory_image(
        _scaled(app.memory_bytes, scale), seed=seed ^ 0x3E3,
        page_size=page_size, churn_rate=app.memory_churn_rate,
    )
    return GuestInstance(
        spec=spec,
        base=base,
        app=app_layer_obj,
        instance=instance,
        memory=memory,
        run_state=RunState.RUNNING,
        seed=seed,
        scale=scale,
        memory_wire_ratio=app.memory_wire_ratio[kind],
    )


def checkpoint(g: GuestInstance, chunk_size: int = DEFAULT_CHUNK_SIZE) -> GuestInstance:
    """Suspend the guest and serialize its memory into the instance tree.

    VM guests additionally write a save-state file (device and mapping
    state plus untouched RAM) whose size does not depend on the
    application.
    """
    if g.run_state is not RunState.RUNNING:
        raise InvalidStateError("guest is already suspended")
    entries = serialize_memory(
        g.memory, chunk_size, prefix=CHECKPOINT_PREFIX, wire_ratio=g.memory_wire_ratio
    )
    floor = _scaled(g.spec.memory_floor_bytes, g.scale)
    if floor:
        entries[VM_STATE_FILE] = SyntheticContent(
            seed=g.seed ^ 0x54A7E, length=floor, epoch=g.memory.epoch,
            wire_ratio=g.spec.memory_floor_wire_ratio,
        )
    instance = replace(g.instance, tree=g.instance.tree.with_entries(entries))
    return replace(g, instance=instance, run_state=RunState.SUSPENDED)


def restore(g: GuestInstance) -> GuestInstance:
    """Resume a suspended guest from its checkpoint files.

    The memory image is rebuilt from the serialized chunks (so a guest
    whose instance tree arrived over the wire resumes with exactly the
    bytes the source had at suspend time) and the checkpoint files are
    dropped from the instance tree.
    """
    if g.run_state is not RunState.SUSPENDED:
        raise InvalidStateError("guest is not suspended")
    try:
        memory = restore_memory(g.instance.tree, prefix=CHECKPOINT_PREFIX)
    except ValueError as exc:
        raise CorruptInstanceError(str(exc)) from exc
    drop = g.instance.tree.subtree(CHECKPOINT_PREFIX).paths()
    instance = replace(g.instance, tree=g.instance.tree.without(drop))
    return replace(g, instance=instance, memory=memory, run_state=RunState.RUNNING)
