"""Target-node partitioning by sorted in-degree prefix sums.

Nodes are sorted by non-increasing in-degree (ties by ascending id), and
node ``pi_i`` goes to shard ``ceil(d * C_i / W)``. Here ``C_i`` is the
running sum of in-degrees and ``W = M``. Every target lands in exactly one
shard together with all of its in-edges, so a shard can update its targets
without seeing any other shard's edges. Each shard's edge load stays within
``max in-degree`` of ``M / d``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, StorageError, ValidationError
from .graph import (
    FLAG_DIRECTED,
    FLAG_PARTITION,
    CsrGraph,
    decode_csr,
    encode_csr,
    fnv_words,
    graph_hash,
    in_degree,
)

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True, eq=False)
class Partition:
    index: int
    owned_targets: np.ndarray
    row_ptr: np.ndarray
    src_idx: np.ndarray
    weights: np.ndarray | None
    global_num_nodes: int
    num_parts: int
    directed: bool = True

    @property
    def num_edges(self) -> int:
        return int(self.src_idx.size)

    @property
    def load(self) -> int:
        return self.num_edges

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def same_as(self, other: Partition) -> bool:
        same_w = (self.weights is None and other.weights is None) or (
            self.weights is not None and other.weights is not None and np.array_equal(self.weights, other.weights))
        return (
            (self.index, self.global_num_nodes, self.num_parts, self.directed)
            == (other.index, other.global_num_nodes, other.num_parts, other.directed)
            and np.array_equal(self.owned_targets, other.owned_targets)
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.src_idx, other.src_idx)
            and same_w
        )


def assign_parts(degrees, n_parts: int) -> np.ndarray:
    """Shard number (1-based) of every node."""
    degrees = np.asarray(degrees, dtype=np.int64)
    n = degrees.size
    if not 1 <= n_parts <= n:
        raise ValidationError(f"n_parts must be in [1, {n}], got {n_parts}")
    total = int(degrees.sum())
    if total == 0:
        raise ValidationError("cannot partition an edgeless graph (total in-degree is 0)")
    order = np.lexsort((np.arange(n), -degrees))
    prefix = np.cumsum(degrees[order])
    shard_sorted = (n_parts * prefix + total - 1) // total  # exact integer ceil
    shard = np.empty(n, dtype=np.int64)
    shard[order] = shard_sorted
    return shard


def _gather_rows(g: CsrGraph, rows: np.ndarray):
    starts = g.row_ptr[rows]
    lengths = g.row_ptr[rows + 1] - starts
    row_ptr = np.zeros(rows.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=row_ptr[1:])
    # position e of the shard maps to starts[row] + (e - row_ptr[row])
    edge_pos = np.repeat(starts - row_ptr[:-1], lengths) + np.arange(row_ptr[-1])
    weights = None if g.weights is None else g.weights[edge_pos].copy()
    return row_ptr, g.src_idx[edge_pos].copy(), weights


def generate_partition(g: CsrGraph, n_parts: int) -> list[Partition]:
    shard = assign_parts(in_degree(g), n_parts)
    parts = []
    for q in range(1, n_parts + 1):
        owned = np.flatnonzero(shard == q)
        row_ptr, src_idx, weights = _gather_rows(g, owned)
        parts.append(Partition(q, owned, row_ptr, src_idx, weights, g.num_nodes, n_parts, g.directed))
    return parts


def check_cover(parts: list[Partition]) -> None:
    """Raise unless the shards' targets are pairwise disjoint and cover every node."""
    n = parts[0].global_num_nodes
    hits = np.zeros(n, dtype=np.int64)
    for p in parts:
        np.add.at(hits, p.owned_targets, 1)
    if np.any(hits != 1):
        bad = np.flatnonzero(hits != 1)[:5].tolist()
        raise ValidationError(f"partitions do not form a disjoint cover (e.g. nodes {bad})")


def assemble_graph(parts: list[Partition]) -> CsrGraph:
    """Rebuild the whole in-CSR from a complete set of shards."""
    check_cover(parts)
    n = parts[0].global_num_nodes
    deg = np.zeros(n, dtype=np.int64)
    for p in parts:
        deg[p.owned_targets] = p.in_degrees()
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=row_ptr[1:])
    src_idx = np.empty(row_ptr[-1], dtype=np.int64)
    weighted = parts[0].weights is not None
    weights = np.empty(row_ptr[-1]) if weighted else None
    for p in parts:
        starts = row_ptr[p.owned_targets]
        lengths = p.in_degrees()
        dest = np.repeat(starts - p.row_ptr[:-1], lengths) + np.arange(p.num_edges)
        src_idx[dest] = p.src_idx
        if weighted:
            weights[dest] = p.weights
    g = CsrGraph(n, row_ptr, src_idx, weights, directed=parts[0].directed)
    g.validate()
    return g


# -- persistence -----------------------------------------------------------------


def _shard_name(q: int) -> str:
    return f"part_{q}.gprc"


def _encode_shard(p: Partition) -> bytes:
    body = encode_csr(p.owned_targets.size, p.row_ptr, p.src_idx, p.weights, p.directed, FLAG_PARTITION)
    return body + np.asarray(p.owned_targets, dtype="<u8").tobytes()


def _bytes_hash(buf: bytes) -> int:
    pad = (-len(buf)) % 8
    words = np.frombuffer(buf + b"\0" * pad, dtype="<u8")
    return fnv_words([len(buf)] + words.tolist())


def save_partitions(parts: list[Partition], root) -> dict:
    """Write ``manifest.json`` and one ``part_<q>.gprc`` per shard under ``root``."""
    root = Path(root)
    g = assemble_graph(parts)
    try:
        root.mkdir(parents=True, exist_ok=True)
        shards = []
        for p in parts:
            data = _encode_shard(p)
            path = root / _shard_name(p.index)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
            shards.append({
                "index": p.index,
                "file": path.name,
                "num_targets": int(p.owned_targets.size),
                "num_edges": p.num_edges,
                "shard_hash": f"{_bytes_hash(data):016x}",
            })
        manifest = {
            "format_version": MANIFEST_VERSION,
            "num_parts": len(parts),
            "global_num_nodes": g.num_nodes,
            "num_edges": g.num_edges,
            "directed": g.directed,
            "weighted": g.weighted,
            "graph_hash": f"{graph_hash(g):016x}",
            "shards": shards,
        }
        (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write partitions under {root}: {exc}") from exc
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise StorageError(f"missing partition manifest {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable partition manifest {path}: {exc}") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise IntegrityError(f"{path}: unsupported manifest version {manifest.get('format_version')}")
    return manifest


def load_partition(root, partition_idx: int, graph: CsrGraph | None = None) -> tuple[Partition, list[int]]:
    """Load shard ``partition_idx`` (1-based); returns the shard and its owned targets.

    Passing ``graph`` additionally checks that the stored partitions were
    generated from that graph.
    """
    root = Path(root)
    manifest = read_manifest(root)
    d = manifest["num_parts"]
    if not 1 <= partition_idx <= d:
        raise ValidationError(f"partition index {partition_idx} out of range; valid range is 1..{d}")
    if graph is not None and f"{graph_hash(graph):016x}" != manifest["graph_hash"]:
        raise IntegrityError(f"partitions under {root} were generated from a different graph")
    entry = manifest["shards"][partition_idx - 1]
    path = root / entry["file"]
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise StorageError(f"missing partition shard {path}") from None
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from None
    if f"{_bytes_hash(buf):016x}" != entry["shard_hash"]:
        raise IntegrityError(f"{path}: content hash does not match manifest")
    flags, rows, row_ptr, src_idx, weights, off = decode_csr(buf, source=path)
    if not flags & FLAG_PARTITION:
        raise IntegrityError(f"{path}: not a partition shard")
    if len(buf) - off != 8 * rows:
        raise IntegrityError(f"{path}: owned-target block has wrong length")
    owned = np.frombuffer(buf, dtype="<u8", count=rows, offset=off).astype(np.int64)
    part = Partition(partition_idx, owned, row_ptr, src_idx, weights, manifest["global_num_nodes"], d,
                     bool(flags & FLAG_DIRECTED))
    return part, owned.tolist()


def load_partitions(root) -> list[Partition]:
    d = read_manifest(root)["num_parts"]
    return [load_partition(root, q)[0] for q in range(1, d + 1)]


class GraphPartitioner:
    """Convenience wrapper: ``GraphPartitioner(g, n_parts, root).generate_partition()``."""

    def __init__(self, data: CsrGraph, n_parts: int, root=None):
        self.data = data
        self.n_parts = n_parts
        self.root = root
        self.parts: list[Partition] = []

    def generate_partition(self) -> list[Partition]:
        self.parts = generate_partition(self.data, self.n_parts)
        if self.root is not None:
            save_partitions(self.parts, self.root)
        return self.parts

    def balance_report(self) -> dict:
        return balance_report(self.data, self.parts)


def balance_report(g: CsrGraph, parts: list[Partition]) -> dict:
    m, d = g.num_edges, len(parts)
    w_max = int(in_degree(g).max()) if g.num_nodes else 0
    # |load - M/d| < w_max  <=>  |d*load - M| < d*w_max, checked in integers
    shards = [{"index": p.index, "num_targets": int(p.owned_targets.size), "load": p.load,
               "deviation": p.load - m / d, "within_bound": abs(d * p.load - m) < d * w_max}
              for p in parts]
    return {
        "num_parts": d,
        "num_edges": m,
        "ideal_load": m / d,
        "max_in_degree": w_max,
        "max_deviation": max(abs(s["deviation"]) for s in shards),
        "bound_holds": all(s["within_bound"] for s in shards),
        "shards": shards,
    }
