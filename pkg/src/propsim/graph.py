"""Target-indexed CSR graphs.

Row ``v`` of a :class:`CsrGraph` lists the *sources* of edges pointing at
``v``, so a node's incoming messages sit in one contiguous segment and can be
aggregated by a single sequential scan.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphParseError, IntegrityError, ValidationError

MAGIC = b"GPRC"
FORMAT_VERSION = 1
FLAG_WEIGHTED = 1
FLAG_DIRECTED = 2
FLAG_PARTITION = 4
_HEADER = struct.Struct("<4sHHQQ")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True, eq=False)
class CsrGraph:
    num_nodes: int
    row_ptr: np.ndarray
    src_idx: np.ndarray
    weights: np.ndarray | None = None
    directed: bool = True

    def __post_init__(self):
        for arr in (self.row_ptr, self.src_idx, self.weights):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def num_edges(self) -> int:
        return int(self.src_idx.size)

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def in_neighbors(self, v: int) -> np.ndarray:
        return self.src_idx[self.row_ptr[v]:self.row_ptr[v + 1]]

    def edge_weights(self) -> np.ndarray:
        """Weights array, or ones when the graph is unweighted."""
        if self.weights is None:
            return np.ones(self.num_edges, dtype=np.float64)
        return self.weights

    def validate(self) -> None:
        n, rp, src = self.num_nodes, self.row_ptr, self.src_idx
        if rp.shape != (n + 1,):
            raise ValidationError(f"row_ptr must have length N+1={n + 1}, got {rp.size}")
        if rp[0] != 0 or rp[-1] != src.size:
            raise ValidationError("row_ptr must start at 0 and end at M")
        if np.any(np.diff(rp) < 0):
            raise ValidationError("row_ptr must be non-decreasing")
        if src.size and (src.min() < 0 or src.max() >= n):
            raise ValidationError("src_idx entries must lie in [0, N)")
        if self.weights is not None:
            w = self.weights
            if w.shape != src.shape:
                raise ValidationError("weights must have length M")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValidationError("weights must be finite and > 0")

    def same_as(self, other: CsrGraph) -> bool:
        if (self.num_nodes, self.directed, self.weighted) != (other.num_nodes, other.directed, other.weighted):
            return False
        if not (np.array_equal(self.row_ptr, other.row_ptr) and np.array_equal(self.src_idx, other.src_idx)):
            return False
        return self.weights is None or np.array_equal(self.weights, other.weights)


def from_edges(num_nodes: int, sources, targets, weights=None, directed: bool = True) -> CsrGraph:
    """Build an in-CSR from parallel edge arrays.

    When ``directed`` is false every edge is mirrored. Within a row, sources
    keep their input order (mirrored copies follow the originals), so the
    CSR order is reproducible from the input order alone.
    """
    src = np.asarray(sources, dtype=np.int64)
    dst = np.asarray(targets, dtype=np.int64)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    if src.shape != dst.shape:
        raise ValidationError("sources and targets must have equal length")
    if not directed:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        if w is not None:
            w = np.concatenate([w, w])
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
        raise ValidationError(f"edge endpoint outside [0, {num_nodes})")
    order = np.argsort(dst, kind="stable")
    counts = np.bincount(dst, minlength=num_nodes)
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    g = CsrGraph(
        num_nodes=int(num_nodes),
        row_ptr=row_ptr,
        src_idx=src[order].copy(),
        weights=None if w is None else w[order].copy(),
        directed=directed,
    )
    g.validate()
    return g


def _parse_edge_list(path: Path, weighted: bool):
    path = Path(path)
    if not path.is_file():
        raise GraphParseError("no such file", path=path)
    sources, targets, weights = [], [], []
    header_nodes = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("%"):
                body = line[1:].strip()
                if body.startswith("nodes="):
                    try:
                        header_nodes = int(body[len("nodes="):])
                    except ValueError:
                        raise GraphParseError(f"bad header {line!r}", path, lineno) from None
                    if header_nodes < 0:
                        raise GraphParseError("negative node count in header", path, lineno)
                    continue
                raise GraphParseError(f"unknown header {line!r}", path, lineno)
            tokens = line.split()
            expected = (3,) if weighted else (2, 3)
            if len(tokens) not in expected:
                need = "'u v w'" if weighted else "'u v' or 'u v w'"
                raise GraphParseError(f"expected {need}, got {len(tokens)} tokens", path, lineno)
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise GraphParseError(f"non-integer node id in {line!r}", path, lineno) from None
            if u < 0 or v < 0:
                raise GraphParseError("negative node id", path, lineno)
            if weighted:
                try:
                    w = float(tokens[2])
                except ValueError:
                    raise GraphParseError(f"non-numeric weight {tokens[2]!r}", path, lineno) from None
                if not math.isfinite(w) or w <= 0:
                    raise ValidationError(f"{path}:{lineno}: weight must be finite and > 0, got {tokens[2]}")
                weights.append(w)
            sources.append(u)
            targets.append(v)
    return sources, targets, (weights if weighted else None), header_nodes


def load_edge_list(path, directed: bool = False, weighted: bool = False) -> CsrGraph:
    """Parse a whitespace-separated edge list (``u v`` or ``u v w`` per line).

    Lines starting with ``#`` are comments; a ``% nodes=N`` line fixes the
    node count, which otherwise is one more than the largest id seen.
    """
    path = Path(path)
    sources, targets, weights, header_nodes = _parse_edge_list(path, weighted)
    n = (max(max(sources), max(targets)) + 1) if sources else 0
    if header_nodes is not None:
        if header_nodes < n:
            raise GraphParseError(f"header declares {header_nodes} nodes but ids reach {n - 1}", path)
        n = header_nodes
    return from_edges(n, sources, targets, weights, directed=directed)


def load_edge_list_with_ids(path, directed: bool = False, weighted: bool = False):
    """Like :func:`load_edge_list` but for sparse external ids.

    Ids are relabelled densely in ascending order; returns ``(graph, ids)``
    where ``ids[k]`` is the external id of internal node ``k``.
    """
    sources, targets, weights, _ = _parse_edge_list(Path(path), weighted)
    ids, inverse = np.unique(np.asarray(sources + targets, dtype=np.int64), return_inverse=True)
    m = len(sources)
    g = from_edges(ids.size, inverse[:m], inverse[m:], weights, directed=directed)
    return g, ids


def in_degree(g: CsrGraph) -> np.ndarray:
    return np.diff(g.row_ptr)


def degree_centrality_seeds(g: CsrGraph, fraction: float) -> list[int]:
    """The ``floor(fraction * N)`` nodes of highest in-degree, ties by lower id."""
    return top_degree_seeds(in_degree(g), fraction)


def top_degree_seeds(degrees, fraction: float) -> list[int]:
    if not 0 < fraction <= 1:
        raise ValidationError(f"seed fraction must be in (0, 1], got {fraction}")
    degrees = np.asarray(degrees)
    count = math.floor(fraction * degrees.size)
    if count == 0:
        raise ValidationError(f"fraction {fraction} of {degrees.size} nodes selects no seeds")
    # lexsort: last key is primary -> descending degree, then ascending id.
    order = np.lexsort((np.arange(degrees.size), -degrees.astype(np.int64)))
    return sorted(int(v) for v in order[:count])


def check_seeds(seeds, num_nodes: int) -> list[int]:
    seeds = [int(s) for s in seeds]
    ids = sorted(set(seeds))
    if len(ids) != len(seeds):
        raise ValidationError("seed set contains duplicates")
    if ids and (ids[0] < 0 or ids[-1] >= num_nodes):
        raise ValidationError(f"seed ids must lie in [0, {num_nodes})")
    return ids


def fnv_words(words, h: int = _FNV_OFFSET) -> int:
    """FNV-1a style hash folding whole little-endian u64 words."""
    mask = (1 << 64) - 1
    for w in words:
        h = ((h ^ (int(w) & mask)) * _FNV_PRIME) & mask
    return h


def graph_hash(g: CsrGraph) -> int:
    h = fnv_words((g.num_nodes, g.num_edges))
    h = fnv_words(g.row_ptr.tolist(), h)
    return fnv_words(g.src_idx.tolist(), h)


# -- binary format -------------------------------------------------------------


def encode_csr(num_rows: int, row_ptr, src_idx, weights, directed: bool, extra_flags: int = 0) -> bytes:
    flags = extra_flags | (FLAG_DIRECTED if directed else 0) | (FLAG_WEIGHTED if weights is not None else 0)
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, flags, num_rows, len(src_idx)),
        np.asarray(row_ptr, dtype="<u8").tobytes(),
        np.asarray(src_idx, dtype="<u8").tobytes(),
    ]
    if weights is not None:
        parts.append(np.asarray(weights, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_csr(buf: bytes, source="<bytes>"):
    """Return ``(flags, num_rows, row_ptr, src_idx, weights, offset_after)``."""
    if len(buf) < _HEADER.size:
        raise IntegrityError(f"{source}: truncated header")
    magic, version, flags, n, m = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise IntegrityError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{source}: unsupported format version {version}")
    off = _HEADER.size
    need = 8 * (n + 1) + 8 * m + (8 * m if flags & FLAG_WEIGHTED else 0)
    if len(buf) - off < need:
        raise IntegrityError(f"{source}: truncated body")
    row_ptr = np.frombuffer(buf, dtype="<u8", count=n + 1, offset=off).astype(np.int64)
    off += 8 * (n + 1)
    src_idx = np.frombuffer(buf, dtype="<u8", count=m, offset=off).astype(np.int64)
    off += 8 * m
    weights = None
    if flags & FLAG_WEIGHTED:
        weights = np.frombuffer(buf, dtype="<f8", count=m, offset=off).astype(np.float64)
        off += 8 * m
    return flags, n, row_ptr, src_idx, weights, off


def save_csr(g: CsrGraph, path) -> None:
    data = encode_csr(g.num_nodes, g.row_ptr, g.src_idx, g.weights, g.directed)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_csr(path) -> CsrGraph:
    buf = Path(path).read_bytes()
    flags, n, row_ptr, src_idx, weights, off = decode_csr(buf, source=path)
    if flags & FLAG_PARTITION:
        raise IntegrityError(f"{path}: file is a partition shard, not a whole graph")
    if off != len(buf):
        raise IntegrityError(f"{path}: trailing bytes after CSR body")
    g = CsrGraph(n, row_ptr, src_idx, weights, directed=bool(flags & FLAG_DIRECTED))
    try:
        g.validate()
    except ValidationError as exc:
        raise IntegrityError(f"{path}: {exc}") from None
    return g


def load_graph(path, directed: bool = False, weighted: bool = False) -> CsrGraph:
    """Load either a binary ``.gprc`` file or a text edge list."""
    path = Path(path)
    if path.is_file():
        with open(path, "rb") as fh:
            if fh.read(4) == MAGIC:
                return load_csr(path)
    return load_edge_list(path, directed=directed, weighted=weighted)
