"""Bulk-synchronous multi-worker simulation over target-node partitions.

Each worker owns one shard. In every step it computes new states for its
own targets from the shared previous-step snapshot and sends back only that
block. The coordinator places the disjoint blocks into a fresh global state,
which becomes the next snapshot for everyone. Since the shards' targets are
disjoint, the merge is a placement, not an arithmetic reduction, and the
per-step traffic is ``B * N * channels`` values whatever the edge count.

Workers use the same RNG keys as the single-process engine (keyed by
global node id), so a distributed run is bit-identical to a local one.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import Block, EpochResults, StateBatch, run_batched
from .errors import ProtocolError, ValidationError, WorkerError
from .models import ModelSpec
from .partition import Partition, check_cover, load_partitions, read_manifest

_FRAME_LEN = struct.Struct("<I")
_FRAME_HEAD = struct.Struct("<IHII")
_FAILURE_PART = 0xFFFF


@dataclass(eq=False)
class SyncMessage:
    step: int
    part: int
    lane_lo: int
    lane_hi: int
    payload: np.ndarray  # (channels, lane_hi - lane_lo, owned targets)
    targets: np.ndarray = field(repr=False)

    @property
    def num_values(self) -> int:
        return int(self.payload.size)


def encode_frame(msg: SyncMessage) -> bytes:
    """``u32 length`` + ``{u32 step, u16 part, u32 lane_lo, u32 lane_hi, payload}``."""
    body = _FRAME_HEAD.pack(msg.step, msg.part, msg.lane_lo, msg.lane_hi)
    body += np.ascontiguousarray(msg.payload, dtype=msg.payload.dtype.newbyteorder("<")).tobytes()
    return _FRAME_LEN.pack(len(body)) + body


def decode_frame(body: bytes, dtype, channels: int, targets: np.ndarray) -> SyncMessage:
    """Inverse of :func:`encode_frame` minus the length prefix."""
    step, part, lo, hi = _FRAME_HEAD.unpack_from(body, 0)
    dt = np.dtype(dtype).newbyteorder("<")
    expected = channels * (hi - lo) * targets.size * dt.itemsize
    if len(body) - _FRAME_HEAD.size != expected:
        raise ProtocolError(f"frame from part {part} carries {len(body) - _FRAME_HEAD.size} bytes, expected {expected}")
    payload = np.frombuffer(body, dtype=dt, offset=_FRAME_HEAD.size).astype(dtype)
    return SyncMessage(step, part, lo, hi, payload.reshape(channels, hi - lo, targets.size), targets)


def merge_states(messages: list[SyncMessage], num_nodes: int) -> np.ndarray:
    """Place disjoint per-shard blocks into one global (channels, lanes, N) array."""
    if not messages:
        raise ProtocolError("no messages to merge")
    first = messages[0]
    if any(m.step != first.step for m in messages):
        raise ProtocolError(f"messages from different steps: {sorted({m.step for m in messages})}")
    if any((m.lane_lo, m.lane_hi) != (first.lane_lo, first.lane_hi) for m in messages):
        raise ProtocolError("messages cover different lane ranges")
    hits = np.zeros(num_nodes, dtype=np.int64)
    for m in messages:
        np.add.at(hits, m.targets, 1)
    if np.any(hits > 1):
        raise ProtocolError(f"overlapping targets, e.g. node {int(np.flatnonzero(hits > 1)[0])}")
    if np.any(hits == 0):
        raise ProtocolError(f"missing targets, e.g. node {int(np.flatnonzero(hits == 0)[0])}")
    channels = first.payload.shape[0]
    out = np.empty((channels, first.lane_hi - first.lane_lo, num_nodes), dtype=first.payload.dtype)
    for m in messages:
        out[:, :, m.targets] = m.payload
    return out


@dataclass
class TrafficLog:
    """Per-step count of state values moved from workers to the coordinator."""

    values_per_step: list[int] = field(default_factory=list)
    bytes_per_step: list[int] = field(default_factory=list)

    def record(self, messages: list[SyncMessage]) -> None:
        self.values_per_step.append(sum(m.num_values for m in messages))
        self.bytes_per_step.append(sum(m.payload.nbytes for m in messages))


@dataclass
class _Failure:
    part: int
    error: str


class _InProcessLink:
    def __init__(self):
        self._q: queue.Queue = queue.Queue()

    def send(self, item) -> None:
        self._q.put(item)

    def recv(self):
        return self._q.get()

    def close(self) -> None:
        pass


class _SocketLink:
    """Worker -> coordinator frames over a local stream socket pair."""

    def __init__(self, model: ModelSpec, targets: np.ndarray):
        self._w, self._c = socket.socketpair()
        self._dtype = model.definition.dtype
        self._channels = len(model.channels)
        self._targets = targets

    def send(self, item) -> None:
        if isinstance(item, _Failure):
            text = item.error.encode("utf-8")
            # failure frames carry the failing part in the step slot
            body = _FRAME_HEAD.pack(item.part, _FAILURE_PART, 0, 0) + text
            self._w.sendall(_FRAME_LEN.pack(len(body)) + body)
        else:
            self._w.sendall(encode_frame(item))

    def _read(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self._c.recv(min(n, 1 << 20))
            if not chunk:
                raise WorkerError("worker socket closed mid-frame")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv(self):
        (length,) = _FRAME_LEN.unpack(self._read(_FRAME_LEN.size))
        body = self._read(length)
        first, part, _, _ = _FRAME_HEAD.unpack_from(body, 0)
        if part == _FAILURE_PART:
            return _Failure(first, body[_FRAME_HEAD.size:].decode("utf-8", "replace"))
        return decode_frame(body, self._dtype, self._channels, self._targets)

    def close(self) -> None:
        self._w.close()
        self._c.close()


class _Worker(threading.Thread):
    def __init__(self, part: Partition, model: ModelSpec, master_seed: int, link, threads: int):
        super().__init__(name=f"propsim-worker-{part.index}", daemon=True)
        self.part = part
        self.model = model
        self.master_seed = master_seed
        self.link = link
        self.threads = threads
        self.inbox: queue.Queue = queue.Queue()
        self.block = Block(part.row_ptr, part.src_idx, part.weights, part.owned_targets, part.global_num_nodes)

    def run(self) -> None:
        while True:
            task = self.inbox.get()
            if task is None:
                return
            snapshot, sim_offset, step = task
            try:
                out = self.block.compute(self.model, snapshot, sim_offset, step, self.master_seed, self.threads)
                msg = SyncMessage(step, self.part.index, 0, snapshot.shape[1], out, self.part.owned_targets)
            except Exception as exc:  # reported to the coordinator, which aborts the run
                self.link.send(_Failure(self.part.index, f"{type(exc).__name__}: {exc}"))
            else:
                self.link.send(msg)


class Coordinator:
    """Drives one bulk-synchronous step at a time across shard workers."""

    def __init__(self, parts: list[Partition], model: ModelSpec, master_seed: int, *,
                 transport: str = "inproc", threads_per_worker: int = 1, traffic: TrafficLog | None = None):
        if transport not in ("inproc", "socket"):
            raise ValidationError(f"unknown transport {transport!r}; use 'inproc' or 'socket'")
        check_cover(parts)
        self.num_nodes = parts[0].global_num_nodes
        self.model = model
        self.traffic = traffic if traffic is not None else TrafficLog()
        self.workers = []
        for p in parts:
            link = _InProcessLink() if transport == "inproc" else _SocketLink(model, p.owned_targets)
            self.workers.append(_Worker(p, model, master_seed, link, threads_per_worker))

    def __enter__(self) -> Coordinator:
        for w in self.workers:
            w.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        for w in self.workers:
            if w.is_alive():
                w.inbox.put(None)
        for w in self.workers:
            if w.is_alive():
                w.join()
            w.link.close()

    def advance(self, s: StateBatch) -> StateBatch:
        snapshot = s.data.view()
        snapshot.flags.writeable = False
        step = s.step + 1
        for w in self.workers:
            w.inbox.put((snapshot, s.sim_offset, step))
        messages, failures = [], []
        for w in self.workers:
            item = w.link.recv()
            (failures if isinstance(item, _Failure) else messages).append(item)
        if failures:
            detail = "; ".join(f"part {f.part}: {f.error}" for f in failures)
            raise WorkerError(f"step {step} aborted: {detail}")
        self.traffic.record(messages)
        return replace(s, data=merge_states(messages, self.num_nodes), step=step)


def partition_in_degrees(parts: list[Partition]) -> np.ndarray:
    deg = np.zeros(parts[0].global_num_nodes, dtype=np.int64)
    for p in parts:
        deg[p.owned_targets] = p.in_degrees()
    return deg


def run_distributed_epochs(root, workers: int, model: ModelSpec, seeds, epochs: int, times: int | None,
                           batch_size: int, master_seed: int = 0, *, transport: str = "inproc",
                           threads_per_worker: int = 1, traffic: TrafficLog | None = None,
                           sim_base: int = 0, max_steps: int | None = None,
                           memory_cap: int | None = None) -> EpochResults:
    """Monte Carlo epochs over the partitions stored under ``root``, one worker per shard."""
    manifest = read_manifest(root)
    if workers != manifest["num_parts"]:
        raise ValidationError(f"{workers} workers requested but {root} holds {manifest['num_parts']} partitions")
    parts = load_partitions(root)
    return run_on_partitions(parts, model, seeds, epochs, times, batch_size, master_seed, transport=transport,
                             threads_per_worker=threads_per_worker, traffic=traffic, sim_base=sim_base,
                             max_steps=max_steps, memory_cap=memory_cap)


def run_on_partitions(parts: list[Partition], model: ModelSpec, seeds, epochs: int, times: int | None,
                      batch_size: int, master_seed: int = 0, *, transport: str = "inproc",
                      threads_per_worker: int = 1, traffic: TrafficLog | None = None, sim_base: int = 0,
                      max_steps: int | None = None, memory_cap: int | None = None) -> EpochResults:
    n = parts[0].global_num_nodes
    model.check_graph(n, parts[0].weights is not None)
    with Coordinator(parts, model, master_seed, transport=transport,
                     threads_per_worker=threads_per_worker, traffic=traffic) as coord:
        return run_batched(model, n, seeds, epochs, times, batch_size, master_seed, coord.advance,
                           sim_base=sim_base, max_steps=max_steps, memory_cap=memory_cap)
