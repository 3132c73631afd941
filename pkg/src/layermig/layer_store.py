"""Synthetic file trees, the base/application/instance layer model, and
churning in-memory images.

Content never lives on disk: every file is a descriptor whose bytes are
a pure function of its fields, generated from counter-mode Philox
streams.  That keeps trees cheap to build and clone at any scale while
still materializing to real, incompressible bytes whenever the delta
engine needs them.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import posixpath
from dataclasses import dataclass, replace
from typing import Iterator, Mapping

import numpy as np

DEFAULT_PAGE_SIZE = 4096
DEFAULT_CHUNK_SIZE = 4 * 1024 * 1024
_STREAM_BLOCK = 32  # bytes produced per Philox counter increment


def _stream_key(*parts: object) -> np.ndarray:
    material = "\x1f".join(str(p) for p in parts).encode()
    digest = hashlib.blake2b(material, digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64)


def _stream_bytes(key: np.ndarray, length: int, offset: int = 0) -> bytes:
    """Deterministic pseudo-random bytes at a 32-byte-aligned offset."""
    if length == 0:
        return b""
    if offset % _STREAM_BLOCK:
        raise ValueError("stream offset must be 32-byte aligned")
    bg = np.random.Philox(key=key, counter=offset // _STREAM_BLOCK)
    n_words = math.ceil(length / 8)
    raw = bg.random_raw(n_words).astype("<u8").tobytes()
    return raw[:length]


# --- content descriptors ----------------------------------------------------


@dataclass(frozen=True)
class LiteralContent:
    """Explicit bytes, for small metadata files."""

    data: bytes
    wire_ratio: float = 1.0

    @property
    def length(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class SyntheticContent:
    """Pseudo-random bytes keyed by (seed, path, epoch).

    ``wire_ratio`` is the modeled on-the-wire cost per literal byte when
    this content is transferred (compression, or expansion for content
    that syncs badly); it does not affect the bytes themselves.
    """

    seed: int
    length: int
    epoch: int = 0
    wire_ratio: float = 1.0


@dataclass(frozen=True)
class MemoryChunkContent:
    """A slice of a serialized memory image: whole pages, lazily rendered.

    ``epochs`` stores one little-endian uint32 per page; each page's
    bytes depend only on (seed, page index, that page's epoch), so a
    chunk's content is stable wherever its pages are unchanged.
    """

    seed: int
    page_size: int
    start_page: int
    epochs: bytes
    wire_ratio: float = 1.0

    @property
    def pages(self) -> int:
        return len(self.epochs) // 4

    @property
    def length(self) -> int:
        return self.pages * self.page_size


ContentDescriptor = LiteralContent | SyntheticContent | MemoryChunkContent


def _page_run_bytes(seed: int, page_size: int, start_page: int, epochs: np.ndarray) -> bytes:
    out = bytearray()
    i = 0
    n = len(epochs)
    while i < n:
        j = i
        epoch = int(epochs[i])
        while j < n and int(epochs[j]) == epoch:
            j += 1
        key = _stream_key("layermig.mem", seed, epoch)
        out.extend(_stream_bytes(key, (j - i) * page_size, offset=(start_page + i) * page_size))
        i = j
    return bytes(out)


def materialize_entry(path: str, entry: ContentDescriptor) -> bytes:
    """Render one descriptor to bytes.  Pure and deterministic."""
    if isinstance(entry, LiteralContent):
        return entry.data
    if isinstance(entry, SyntheticContent):
        key = _stream_key("layermig.file", entry.seed, path, entry.epoch)
        return _stream_bytes(key, entry.length)
    epochs = np.frombuffer(entry.epochs, dtype="<u4")
    return _page_run_bytes(entry.seed, entry.page_size, entry.start_page, epochs)


def entry_length(entry: ContentDescriptor) -> int:
    return entry.length


# --- file trees --------------------------------------------------------------


def normalize_path(path: str) -> str:
    norm = posixpath.normpath(path.replace("\\", "/")).lstrip("/")
    if norm in ("", ".") or norm.startswith("..") or "/../" in norm:
        raise ValueError(f"invalid tree path: {path!r}")
    return norm


class FileTree:
    """Immutable map of normalized path -> content descriptor."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, ContentDescriptor] | None = None):
        normed = {}
        for path, entry in (entries or {}).items():
            normed[normalize_path(path)] = entry
        self._entries = dict(sorted(normed.items()))

    def get(self, path: str) -> ContentDescriptor | None:
        return self._entries.get(path)

    def paths(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, ContentDescriptor]]:
        return iter(self._entries.items())

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, path: str) -> bool:
        return path in self._entries

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FileTree) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"FileTree({len(self._entries)} entries, {self.total_length} bytes)"

    @property
    def total_length(self) -> int:
        return sum(e.length for e in self._entries.values())

    def with_entries(self, extra: Mapping[str, ContentDescriptor]) -> "FileTree":
        merged = dict(self._entries)
        for path, entry in extra.items():
            merged[normalize_path(path)] = entry
        return FileTree(merged)

    def without(self, paths: list[str]) -> "FileTree":
        drop = {normalize_path(p) for p in paths}
        return FileTree({p: e for p, e in self._entries.items() if p not in drop})

    def subtree(self, prefix: str) -> "FileTree":
        prefix = normalize_path(prefix) + "/"
        return FileTree({p: e for p, e in self._entries.items() if p.startswith(prefix)})

    def split(self, prefix: str) -> tuple["FileTree", "FileTree"]:
        """(entries under prefix/, everything else)."""
        prefix = normalize_path(prefix) + "/"
        inside = {}
        outside = {}
        for p, e in self._entries.items():
            (inside if p.startswith(prefix) else outside)[p] = e
        return FileTree(inside), FileTree(outside)

    def is_superset_of(self, other: "FileTree") -> bool:
        return all(self._entries.get(p) == e for p, e in other.items())


def materialize(tree: FileTree) -> dict[str, bytes]:
    """Render a whole tree.  Intended for tests and small scales."""
    return {path: materialize_entry(path, entry) for path, entry in tree.items()}


def tree_manifest(tree: FileTree) -> list[dict]:
    """JSON-ready manifest (path, length, kind, digest) for golden tests."""
    rows = []
    for path, entry in tree.items():
        digest = hashlib.blake2b(materialize_entry(path, entry), digest_size=16).hexdigest()
        row = {"path": path, "length": entry.length, "digest": digest}
        if isinstance(entry, SyntheticContent):
            row["kind"] = "synthetic"
            row["seed"] = entry.seed
            row["epoch"] = entry.epoch
        elif isinstance(entry, MemoryChunkContent):
            row["kind"] = "memory"
            row["start_page"] = entry.start_page
        else:
            row["kind"] = "literal"
        rows.append(row)
    return rows


def manifest_json(tree: FileTree) -> str:
    return json.dumps(tree_manifest(tree), indent=2, sort_keys=True)


def synthetic_files(
    prefix: str,
    total_bytes: int,
    seed: int,
    *,
    wire_ratio: float = 1.0,
    max_file_bytes: int = DEFAULT_CHUNK_SIZE,
    epoch: int = 0,
) -> dict[str, ContentDescriptor]:
    """Chunk ``total_bytes`` of synthetic content into files under ``prefix``."""
    entries: dict[str, ContentDescriptor] = {}
    remaining = total_bytes
    index = 0
    while remaining > 0:
        size = min(remaining, max_file_bytes)
        entries[f"{prefix}/f{index:05d}.bin"] = SyntheticContent(
            seed=seed, length=size, epoch=epoch, wire_ratio=wire_ratio
        )
        remaining -= size
        index += 1
    return entries


# --- layers ------------------------------------------------------------------


class LayerKind(enum.Enum):
    BASE = "base"
    APPLICATION = "application"
    INSTANCE = "instance"


_VALID_CLONES = {
    (LayerKind.BASE, LayerKind.APPLICATION),
    (LayerKind.APPLICATION, LayerKind.INSTANCE),
    (LayerKind.BASE, LayerKind.INSTANCE),
}


@dataclass(frozen=True)
class Layer:
    """One package layer: its full tree (own data plus everything below).

    A layer always carries all files of its predecessors; the superset
    relation over (paths, contents) is the defining invariant of the
    model and is what makes clone-then-sync transfers cheap.
    """

    id: str
    kind: LayerKind
    tree: FileTree
    parent_id: str | None = None

    def is_superset_of(self, parent: "Layer") -> bool:
        return self.tree.is_superset_of(parent.tree)


def clone_layer(layer: Layer, new_kind: LayerKind, *, clone_id: str | None = None) -> Layer:
    """Duplicate a layer one level up (base->app, app->instance, base->instance).

    The clone shares no mutable state with the source: trees are
    immutable and copied, so later extensions of the clone never touch
    the original.
    """
    if (layer.kind, new_kind) not in _VALID_CLONES:
        raise ValueError(f"cannot clone {layer.kind.value} layer as {new_kind.value}")
    return Layer(
        id=clone_id or f"{new_kind.value}:{layer.id}",
        kind=new_kind,
        tree=FileTree(dict(layer.tree.items())),
        parent_id=layer.id,
    )


# --- memory images ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MemoryImage:
    """Guest RAM as pages whose content churns over discrete epochs.

    Page content is a pure function of (seed, page index, the epoch the
    page was last modified in), so two images with equal fields
    materialize to identical bytes.
    """

    seed: int
    page_size: int
    pages: int
    epoch: int
    page_epochs: np.ndarray  # uint32, one entry per page
    churn_rate: float

    def __post_init__(self):
        if self.page_size <= 0 or self.page_size % _STREAM_BLOCK:
            raise ValueError("page_size must be a positive multiple of 32")
        if not 0.0 <= self.churn_rate <= 1.0:
            raise ValueError("churn_rate must be within [0, 1]")
        if len(self.page_epochs) != self.pages:
            raise ValueError("page_epochs length must equal pages")

    @property
    def total_bytes(self) -> int:
        return self.page_size * self.pages

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, MemoryImage)
            and self.seed == other.seed
            and self.page_size == other.page_size
            and self.pages == other.pages
            and self.epoch == other.epoch
            and np.array_equal(self.page_epochs, other.page_epochs)
        )

    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        h.update(f"{self.seed}:{self.page_size}:{self.pages}:{self.epoch}".encode())
        h.update(np.ascontiguousarray(self.page_epochs, dtype="<u4").tobytes())
        return h.digest()


def new_memory_image(
    total_bytes: int,
    seed: int,
    *,
    page_size: int = DEFAULT_PAGE_SIZE,
    churn_rate: float = 0.0,
) -> MemoryImage:
    pages = math.ceil(total_bytes / page_size)
    return MemoryImage(
        seed=seed,
        page_size=page_size,
        pages=pages,
        epoch=0,
        page_epochs=np.zeros(pages, dtype=np.uint32),
        churn_rate=churn_rate,
    )


def advance_memory(image: MemoryImage, steps: int) -> MemoryImage:
    """Advance the churn clock: each step rewrites round(churn_rate * pages)
    pages, chosen by a seeded draw so the sequence is reproducible."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return image
    epochs = image.page_epochs.copy()
    count = round(image.churn_rate * image.pages)
    epoch = image.epoch
    for _ in range(steps):
        epoch += 1
        if count:
            rng = np.random.Generator(np.random.Philox(key=_stream_key("layermig.churn", image.seed, epoch)))
            touched = rng.choice(image.pages, size=count, replace=False)
            epochs[touched] = epoch
    return replace(image, epoch=epoch, page_epochs=epochs)


def materialize_memory(image: MemoryImage) -> bytes:
    """All pages concatenated.  Test helper; linear in image size."""
    return _page_run_bytes(image.seed, image.page_size, 0, image.page_epochs)


MEMORY_META_FILE = "meta.json"


def serialize_memory(
    image: MemoryImage,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    *,
    prefix: str = "checkpoint",
    wire_ratio: float = 1.0,
) -> dict[str, ContentDescriptor]:
    """Render the image as checkpoint files: ceil(size / chunk) page-aligned
    chunks plus a small metadata file, ready to merge into an instance tree."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    pages_per_chunk = max(1, chunk_size // image.page_size)
    entries: dict[str, ContentDescriptor] = {}
    for index, start in enumerate(range(0, image.pages, pages_per_chunk)):
        stop = min(start + pages_per_chunk, image.pages)
        blob = np.ascontiguousarray(image.page_epochs[start:stop], dtype="<u4").tobytes()
        entries[f"{prefix}/mem-{index:05d}.img"] = MemoryChunkContent(
            seed=image.seed,
            page_size=image.page_size,
            start_page=start,
            epochs=blob,
            wire_ratio=wire_ratio,
        )
    meta = {
        "seed": image.seed,
        "page_size": image.page_size,
        "pages": image.pages,
        "epoch": image.epoch,
        "churn_rate": image.churn_rate,
        "chunk_pages": pages_per_chunk,
    }
    entries[f"{prefix}/{MEMORY_META_FILE}"] = LiteralContent(
        data=json.dumps(meta, sort_keys=True).encode()
    )
    return entries


def restore_memory(tree: FileTree, *, prefix: str = "checkpoint") -> MemoryImage:
    """Rebuild a MemoryImage from checkpoint files previously produced by
    :func:`serialize_memory`.  Raises ValueError when files are missing
    or inconsistent."""
    meta_entry = tree.get(f"{prefix}/{MEMORY_META_FILE}")
    if meta_entry is None or not isinstance(meta_entry, LiteralContent):
        raise ValueError("checkpoint metadata missing")
    meta = json.loads(meta_entry.data.decode())
    chunks = [
        (path, entry)
        for path, entry in tree.subtree(prefix).items()
        if isinstance(entry, MemoryChunkContent)
    ]
    chunks.sort(key=lambda item: item[1].start_page)
    epochs = np.zeros(meta["pages"], dtype=np.uint32)
    covered = 0
    for _, chunk in chunks:
        if chunk.start_page != covered:
            raise ValueError("checkpoint chunks are not contiguous")
        part = np.frombuffer(chunk.epochs, dtype="<u4")
        epochs[covered:covered + len(part)] = part
        covered += len(part)
    if covered != meta["pages"]:
        raise ValueError(f"checkpoint covers {covered} pages, expected {meta['pages']}")
    return MemoryImage(
        seed=meta["seed"],
        page_size=meta["page_size"],
        pages=meta["pages"],
        epoch=meta["epoch"],
        page_epochs=epochs,
        churn_rate=meta["churn_rate"],
    )
