import pytest

from layermig.guest import (
    CHECKPOINT_PREFIX,
    VM_STATE_FILE,
    CorruptInstanceError,
    InvalidStateError,
    RunState,
    Virtualization,
    build_guest,
    checkpoint,
    container_spec,
    restore,
    vm_spec,
)
from layermig.layer_store import MemoryChunkContent, materialize, materialize_memory
from layermig.workloads import profile_by_name

MB = 1_000_000


def test_no_application_adds_nothing_beyond_base():
    g = build_guest(container_spec(), profile_by_name("No Application"), seed=1, scale=0.01)
    assert g.app.tree.total_length == g.base.tree.total_length


def test_face_detection_app_layer_size_at_scale_one():
    g = build_guest(container_spec(), profile_by_name("Face Detection"), seed=1, scale=1.0)
    added = g.app.tree.total_length - g.base.tree.total_length
    assert added == 655 * MB


def test_vm_install_size_differs():
    g = build_guest(vm_spec(), profile_by_name("Face Detection"), seed=1, scale=1.0)
    added = g.app.tree.total_length - g.base.tree.total_length
    assert added == 565 * MB


def test_scale_is_exactly_linear_for_trees():
    profile = profile_by_name("Video Streaming")
    full = build_guest(container_spec(), profile, seed=2, scale=1.0)
    small = build_guest(container_spec(), profile, seed=2, scale=0.01)
    assert small.base.tree.total_length * 100 == full.base.tree.total_length
    assert small.app.tree.total_length * 100 == full.app.tree.total_length
    assert small.instance.tree.total_length * 100 == full.instance.tree.total_length


def test_layer_parentage_and_superset():
    g = build_guest(container_spec(), profile_by_name("Video Streaming"), seed=3, scale=0.01)
    assert g.app.parent_id == g.base.id
    assert g.instance.parent_id == g.app.id
    assert g.app.tree.is_superset_of(g.base.tree)
    assert g.instance.tree.is_superset_of(g.app.tree)


def test_two_layer_guest_has_no_app_layer():
    g = build_guest(container_spec(), profile_by_name("Video Streaming"),
                    seed=3, scale=0.01, app_layer=False)
    assert g.app is None
    assert g.instance.parent_id == g.base.id
    assert g.instance.tree.is_superset_of(g.base.tree)


def test_checkpoint_grows_instance_tree_by_memory_size():
    profile = profile_by_name("RAM Simulation")  # 330 MB RAM by default
    g = build_guest(container_spec(), profile, seed=4, scale=1.0)
    suspended = checkpoint(g)
    assert suspended.run_state is RunState.SUSPENDED
    chunks = [
        e for _, e in suspended.instance.tree.subtree(CHECKPOINT_PREFIX).items()
        if isinstance(e, MemoryChunkContent)
    ]
    total = sum(c.length for c in chunks)
    assert 0 <= total - 330 * MB < g.memory.page_size
    assert g.run_state is RunState.RUNNING  # original untouched


def test_vm_checkpoint_adds_state_floor_file():
    g = build_guest(vm_spec(), profile_by_name("No Application"), seed=4, scale=0.01)
    suspended = checkpoint(g)
    state = suspended.instance.tree.get(VM_STATE_FILE)
    assert state is not None
    assert state.length == round(600 * MB * 0.01)


def test_checkpoint_twice_is_invalid():
    g = build_guest(container_spec(), profile_by_name("Game Server"), seed=5, scale=0.01)
    with pytest.raises(InvalidStateError):
        checkpoint(checkpoint(g))


def test_restore_running_guest_is_invalid():
    g = build_guest(container_spec(), profile_by_name("Game Server"), seed=5, scale=0.01)
    with pytest.raises(InvalidStateError):
        restore(g)


def test_checkpoint_restore_round_trip_preserves_memory():
    g = build_guest(container_spec(), profile_by_name("Video Streaming"), seed=6, scale=0.01)
    resumed = restore(checkpoint(g))
    assert resumed.run_state is RunState.RUNNING
    assert resumed.memory == g.memory
    assert materialize_memory(resumed.memory) == materialize_memory(g.memory)
    assert resumed.instance.tree == g.instance.tree


def test_recheckpoint_without_churn_is_bit_identical():
    g = build_guest(container_spec(), profile_by_name("Video Streaming"), seed=7, scale=0.01)
    first = checkpoint(g)
    second = checkpoint(restore(first))
    a = first.instance.tree.subtree(CHECKPOINT_PREFIX)
    b = second.instance.tree.subtree(CHECKPOINT_PREFIX)
    assert materialize(a) == materialize(b)


def test_restore_with_missing_checkpoint_is_corrupt():
    g = checkpoint(build_guest(container_spec(), profile_by_name("Game Server"),
                               seed=8, scale=0.01))
    from dataclasses import replace

    chunk_paths = [
        p for p, e in g.instance.tree.subtree(CHECKPOINT_PREFIX).items()
        if isinstance(e, MemoryChunkContent)
    ]
    broken = replace(g, instance=replace(g.instance, tree=g.instance.tree.without(chunk_paths)))
    with pytest.raises(CorruptInstanceError):
        restore(broken)


def test_build_guest_rejects_bad_scale():
    with pytest.raises(ValueError):
        build_guest(container_spec(), profile_by_name("Game Server"), seed=1, scale=0.0)
    with pytest.raises(ValueError):
        build_guest(container_spec(), profile_by_name("Game Server"), seed=1, scale=1.5)
