import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layermig.delta_sync import (
    COPY_OP_WIRE,
    FILE_WIRE_OVERHEAD,
    LITERAL_OP_WIRE,
    SIG_BYTES_PER_BLOCK,
    BasisMismatchError,
    CopyOp,
    CorruptDeltaError,
    Created,
    Deleted,
    FileDelta,
    LiteralOp,
    Patched,
    Unchanged,
    apply_delta,
    apply_tree_delta,
    combine_weak,
    compute_delta,
    compute_signature,
    strong_digest,
    sync_tree,
    weak_checksum,
    weak_roll,
)
from layermig.layer_store import FileTree, LiteralContent, SyntheticContent, materialize


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


# --- signatures ---------------------------------------------------------------


def test_signature_of_empty_data():
    sig = compute_signature(b"", 1024)
    assert sig.blocks == ()
    assert sig.total_length == 0


def test_signature_block_ceiling():
    data = rng(1).bytes(2048)
    assert len(compute_signature(data, 1024).blocks) == 2
    sig = compute_signature(data + b"x", 1024)
    assert len(sig.blocks) == 3
    assert sig.block_length(2) == 1


def test_signature_rejects_tiny_block_size():
    with pytest.raises(ValueError):
        compute_signature(b"abc", 0)
    with pytest.raises(ValueError):
        compute_signature(b"abc", 8)


def test_signature_deterministic():
    data = rng(2).bytes(10_000)
    assert compute_signature(data, 2048) == compute_signature(data, 2048)


def test_rolling_update_matches_recomputation():
    # Oracle: recompute the checksum of each shifted window from scratch.
    g = rng(3)
    data = g.bytes(3000)
    window = 64
    for _ in range(1000):
        start = int(g.integers(0, len(data) - window - 1))
        a, b = weak_checksum(data[start:start + window])
        rolled = weak_roll(a, b, data[start], data[start + window], window)
        direct = weak_checksum(data[start + 1:start + 1 + window])
        assert rolled == direct


def test_vectorized_signature_weaks_match_reference():
    data = rng(4).bytes(5000)
    sig = compute_signature(data, 512)
    for i, block in enumerate(sig.blocks):
        ref = combine_weak(*weak_checksum(data[i * 512:(i + 1) * 512]))
        assert block.weak == ref


# --- deltas -------------------------------------------------------------------


def test_identical_target_is_single_copy_run():
    data = rng(5).bytes(64 * 1024)
    delta, stats = compute_delta(compute_signature(data, 2048), data)
    assert stats.literal_bytes == 0
    assert delta.ops == (CopyOp(first_block=0, block_count=32),)
    assert apply_delta(data, delta) == data


def test_identical_unaligned_target_single_copy_run():
    data = rng(6).bytes(64 * 1024 + 123)  # short final block
    delta, stats = compute_delta(compute_signature(data, 2048), data)
    assert stats.literal_bytes == 0
    assert len(delta.ops) == 1
    assert apply_delta(data, delta) == data


def test_empty_basis_means_all_literals():
    target = rng(7).bytes(5000)
    sig = compute_signature(b"", 1024)
    delta, stats = compute_delta(sig, target)
    assert stats.literal_bytes == 5000
    assert apply_delta(b"", delta) == target


def test_single_byte_flip_costs_at_most_two_blocks():
    basis = rng(8).bytes(64 * 1024)
    target = bytearray(basis)
    target[30_000] ^= 0xFF
    target = bytes(target)
    delta, stats = compute_delta(compute_signature(basis, 2048), target)
    assert stats.literal_bytes <= 2 * 2048
    assert apply_delta(basis, delta) == target


def test_stats_accounting_exact():
    basis = rng(9).bytes(8192)
    target = bytearray(basis)
    target[5000] ^= 1
    target = bytes(target)
    sig = compute_signature(basis, 2048)
    delta, stats = compute_delta(sig, target)
    copies = sum(1 for op in delta.ops if isinstance(op, CopyOp))
    literals = [op for op in delta.ops if isinstance(op, LiteralOp)]
    expected = (
        sig.wire_bytes
        + FILE_WIRE_OVERHEAD
        + copies * COPY_OP_WIRE
        + sum(len(op.data) + LITERAL_OP_WIRE for op in literals)
    )
    assert stats.wire_bytes == expected
    assert stats.scanned_bytes == len(target)
    assert stats.literal_bytes == sum(len(op.data) for op in literals)


def test_wire_ratio_scales_literal_charge():
    target = rng(10).bytes(10_000)
    sig = compute_signature(b"", 1024)
    _, full = compute_delta(sig, target, wire_ratio=1.0)
    _, half = compute_delta(sig, target, wire_ratio=0.5)
    assert half.literal_bytes == 5000
    assert full.literal_bytes == 10_000
    assert half.wire_bytes < full.wire_bytes
    assert half.literal_bytes <= half.wire_bytes


def test_monotone_efficiency_in_changed_blocks():
    basis = rng(11).bytes(32 * 2048)
    sig = compute_signature(basis, 2048)
    previous = compute_delta(sig, basis)[1].wire_bytes
    target = bytearray(basis)
    for k in (3, 9, 17, 25):  # flip one byte in successive blocks
        target[k * 2048 + 7] ^= 0xFF
        wire = compute_delta(sig, bytes(target))[1].wire_bytes
        assert wire >= previous
        previous = wire


def test_determinism_bit_identical():
    basis = rng(12).bytes(100_000)
    target = rng(13).bytes(100_000)
    sig = compute_signature(basis, 2048)
    first = compute_delta(sig, target)
    second = compute_delta(sig, target)
    assert first[0] == second[0]
    assert first[1] == second[1]


def test_repeated_block_basis_prefers_earliest_block():
    tile = rng(14).bytes(2048)
    basis = tile * 8
    delta, _ = compute_delta(compute_signature(basis, 2048), tile)
    assert delta.ops == (CopyOp(first_block=0, block_count=1),)


def test_apply_rejects_wrong_basis():
    basis = rng(15).bytes(4096)
    delta, _ = compute_delta(compute_signature(basis, 1024), basis)
    with pytest.raises(BasisMismatchError):
        apply_delta(basis[:-1] + b"x", delta)


def test_apply_rejects_out_of_range_copy():
    basis = rng(16).bytes(4096)
    delta = FileDelta(
        block_size=1024,
        ops=(CopyOp(first_block=4, block_count=1),),
        target_length=1024,
        basis_digest=strong_digest(basis),
    )
    with pytest.raises(CorruptDeltaError):
        apply_delta(basis, delta)


def test_apply_all_literal_to_empty_basis():
    delta = FileDelta(
        block_size=1024,
        ops=(LiteralOp(data=b"hello world"),),
        target_length=11,
        basis_digest=strong_digest(b""),
    )
    assert apply_delta(b"", delta) == b"hello world"


@settings(max_examples=80, deadline=None)
@given(
    basis=st.binary(max_size=6000),
    target=st.binary(max_size=6000),
    block_size=st.sampled_from([16, 64, 256, 1024]),
)
def test_round_trip_property(basis, target, block_size):
    delta, stats = compute_delta(compute_signature(basis, block_size), target)
    assert apply_delta(basis, delta) == target
    assert stats.literal_bytes <= stats.wire_bytes


@settings(max_examples=40, deadline=None)
@given(
    data=st.binary(min_size=1, max_size=4000),
    edits=st.lists(st.tuples(st.integers(0, 3999), st.binary(max_size=64)), max_size=4),
    block_size=st.sampled_from([16, 128, 512]),
)
def test_round_trip_of_edited_targets(data, edits, block_size):
    target = bytearray(data)
    for pos, chunk in edits:
        pos = pos % (len(target) + 1)
        target[pos:pos] = chunk  # insertion shifts alignment
    target = bytes(target)
    delta, _ = compute_delta(compute_signature(data, block_size), target)
    assert apply_delta(data, delta) == target


# --- tree sync -----------------------------------------------------------------


def tree_of(entries):
    return FileTree(entries)


def test_sync_tree_identical_trees_all_unchanged():
    tree = tree_of({
        "a/one.bin": SyntheticContent(seed=1, length=5000),
        "b/two.bin": SyntheticContent(seed=2, length=3000),
    })
    delta, stats = sync_tree(tree, tree)
    assert stats.files_unchanged == 2
    assert stats.literal_bytes == 0
    assert all(isinstance(op, Unchanged) for _, op in delta.entries)


def test_sync_tree_created_file_charges_its_length():
    basis = tree_of({"a.bin": SyntheticContent(seed=1, length=1000)})
    target = basis.with_entries({"new.bin": SyntheticContent(seed=9, length=10_240)})
    delta, stats = sync_tree(basis, target)
    assert stats.files_created == 1
    assert stats.literal_bytes == 10_240
    assert stats.wire_bytes == 2 * FILE_WIRE_OVERHEAD + 10_240 + LITERAL_OP_WIRE
    ops = dict(delta.entries)
    assert isinstance(ops["new.bin"], Created)


def test_sync_tree_deletion():
    basis = tree_of({
        "keep.bin": SyntheticContent(seed=1, length=100),
        "drop.bin": SyntheticContent(seed=2, length=100),
    })
    target = basis.without(["drop.bin"])
    delta, stats = sync_tree(basis, target)
    assert stats.files_deleted == 1
    assert isinstance(dict(delta.entries)["drop.bin"], Deleted)
    rebuilt = apply_tree_delta(basis, delta)
    assert rebuilt == target


def test_sync_tree_patches_match_per_file_diff_oracle():
    # Oracle: run compute_delta per differing file directly and compare
    # the aggregate wire accounting.
    shared = {f"app/f{i}.bin": SyntheticContent(seed=i, length=4096) for i in range(6)}
    basis = tree_of(shared)
    changed = dict(shared)
    changed["app/f2.bin"] = SyntheticContent(seed=2, length=4096, epoch=1)
    unique = {"inst/u.bin": SyntheticContent(seed=77, length=8192)}
    target = tree_of({**changed, **unique})

    delta, stats = sync_tree(basis, target, 1024)

    basis_bytes = materialize(basis)
    target_bytes = materialize(target)
    expected_wire = 0
    for path in sorted(set(basis_bytes) | set(target_bytes)):
        if path not in basis_bytes:
            expected_wire += FILE_WIRE_OVERHEAD + len(target_bytes[path]) + LITERAL_OP_WIRE
        elif basis_bytes[path] == target_bytes[path]:
            expected_wire += FILE_WIRE_OVERHEAD
        else:
            sig = compute_signature(basis_bytes[path], 1024)
            expected_wire += compute_delta(sig, target_bytes[path])[1].wire_bytes
    assert stats.wire_bytes == expected_wire
    assert stats.files_patched == 1
    assert stats.files_created == 1

    rebuilt = apply_tree_delta(basis, delta)
    assert materialize(rebuilt) == target_bytes


def test_apply_tree_delta_verifies_patches():
    basis = tree_of({"f.bin": SyntheticContent(seed=1, length=2048)})
    target = tree_of({"f.bin": SyntheticContent(seed=1, length=2048, epoch=3)})
    delta, _ = sync_tree(basis, target, 1024)
    # Applying against a different basis tree must fail loudly.
    wrong = tree_of({"f.bin": SyntheticContent(seed=99, length=2048)})
    with pytest.raises((BasisMismatchError, CorruptDeltaError)):
        apply_tree_delta(wrong, delta)


def test_sync_tree_verify_unchanged_charges_scan():
    tree = tree_of({"a.bin": SyntheticContent(seed=1, length=4096)})
    _, lazy = sync_tree(tree, tree)
    _, checked = sync_tree(tree, tree, verify_unchanged=True)
    assert lazy.scanned_bytes == 0
    assert checked.scanned_bytes == 4096
    assert checked.wire_bytes > lazy.wire_bytes
