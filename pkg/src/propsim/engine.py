"""Batched synchronous execution of model kernels over an in-CSR graph.

State for ``B`` Monte Carlo lanes is stored densely as a
``(channels, B, N)`` array. One step reads that array as an immutable
snapshot and writes a fresh one, so any split of the (lane, node) work
across threads produces identical bits. Lane ``b`` of a batch whose first
lane is ``sim_offset`` draws its randomness under ``sim_index = sim_offset + b``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ResourceError, ValidationError
from .graph import CsrGraph, check_seeds
from .models import ASYNCHRONOUS, ModelSpec
from .rng import key_schedule

RESULTS_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class StateBatch:
    data: np.ndarray
    channel_names: tuple[str, ...]
    step: int
    sim_offset: int
    master_seed: int

    @property
    def batch_size(self) -> int:
        return self.data.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> dict[str, np.ndarray]:
        return {name: self.data[i] for i, name in enumerate(self.channel_names)}

    def same_state(self, other: StateBatch) -> bool:
        return self.channel_names == other.channel_names and np.array_equal(self.data, other.data)


def init_states(model: ModelSpec, g: CsrGraph | int, seeds: Sequence[int], batch_size: int,
                sim_offset: int = 0, master_seed: int = 0) -> StateBatch:
    num_nodes = g if isinstance(g, int) else g.num_nodes
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    seeds = check_seeds(seeds, num_nodes)
    model.check_seeds(seeds)
    lanes = np.arange(sim_offset, sim_offset + batch_size)
    data = model.initial_data(num_nodes, seeds, lanes, master_seed)
    return StateBatch(data, model.channels, 0, sim_offset, master_seed)


@lru_cache(maxsize=None)
def _executor(threads: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=threads, thread_name_prefix="propsim")


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


class Block:
    """A set of target rows with their in-edges, as seen by one executor.

    The whole graph is one block; a partition shard is another. ``src_idx``
    always holds global node ids, so kernels read the global snapshot.
    """

    def __init__(self, row_ptr, src_idx, weights, targets, num_nodes: int):
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.src_idx = np.ascontiguousarray(src_idx, dtype=np.int64)
        self.weighted = weights is not None
        self.weights = (np.ones(self.src_idx.size) if weights is None
                        else np.ascontiguousarray(weights, dtype=np.float64))
        self.targets = np.ascontiguousarray(targets, dtype=np.int64)
        self.num_nodes = int(num_nodes)
        self.row_of = np.full(self.num_nodes, -1, dtype=np.int64)
        self.row_of[self.targets] = np.arange(self.targets.size)

    @classmethod
    def from_graph(cls, g: CsrGraph) -> Block:
        return cls(g.row_ptr, g.src_idx, g.weights, np.arange(g.num_nodes), g.num_nodes)

    @property
    def num_rows(self) -> int:
        return self.targets.size

    def compute(self, model: ModelSpec, prev: np.ndarray, sim_offset: int, step: int,
                master_seed: int, threads: int = 1) -> np.ndarray:
        """Run one step of ``model`` for this block's rows; returns (C, B, rows)."""
        channels, lanes, n = prev.shape
        if n != self.num_nodes:
            raise ContractError(f"snapshot has {n} nodes, block expects {self.num_nodes}")
        d = model.definition
        out = np.empty((channels, lanes, self.num_rows), dtype=prev.dtype)
        params = model.kernel_params()
        key = np.uint64(key_schedule(master_seed))
        sim_offset = np.int64(sim_offset)
        step = np.int64(step)

        lane_tiles = _split(lanes, threads)
        if d.iteration_mode == ASYNCHRONOUS or threads <= len(lane_tiles):
            row_tiles = [(0, self.num_rows)]
        else:
            row_tiles = _split(self.num_rows, -(-threads // len(lane_tiles)))

        def run(lane_tile, row_tile):
            (b0, b1), (r0, r1) = lane_tile, row_tile
            if (r0, r1) == (0, self.num_rows):
                rp, tg, o = self.row_ptr, self.targets, out
            else:
                rp, tg, o = self.row_ptr[r0:r1 + 1], self.targets[r0:r1], out[:, :, r0:r1]
            d.kernel(rp, self.src_idx, self.weights, tg, self.row_of, prev, o,
                     b0, b1, params, key, sim_offset, step)

        tiles = [(lt, rt) for lt in lane_tiles for rt in row_tiles]
        if threads <= 1 or len(tiles) == 1:
            for lt, rt in tiles:
                run(lt, rt)
        else:
            for fut in [_executor(threads).submit(run, lt, rt) for lt, rt in tiles]:
                fut.result()
        return out


def _check_batch(model: ModelSpec, s: StateBatch) -> None:
    if s.channel_names != model.channels:
        raise ContractError(f"state channels {s.channel_names} do not match model {model.model_id} {model.channels}")
    if s.data.dtype != model.definition.dtype:
        raise ContractError(f"state dtype {s.data.dtype} does not match model {model.model_id}")


def step(model: ModelSpec, g: CsrGraph | Block, s: StateBatch, threads: int = 1) -> StateBatch:
    """Advance every lane of ``s`` by one synchronous step."""
    _check_batch(model, s)
    block = g if isinstance(g, Block) else Block.from_graph(g)
    data = block.compute(model, s.data, s.sim_offset, s.step + 1, s.master_seed, threads)
    return replace(s, data=data, step=s.step + 1)


# -- results -------------------------------------------------------------------


@dataclass(eq=False)
class EpochResults:
    model: str
    params: dict
    master_seed: int
    epochs: int
    steps: int
    state_labels: tuple[str, ...]
    per_state_mean_trajectory: dict[str, list[float]]
    per_epoch_final_counts: np.ndarray
    expected_spread: float
    final_states: np.ndarray = field(repr=False)
    config: dict | None = None

    @property
    def final_mean_counts(self) -> dict[str, float]:
        means = self.per_epoch_final_counts.sum(axis=0) / self.epochs
        return {label: float(m) for label, m in zip(self.state_labels, means)}

    def spread_of(self, *labels: str) -> float:
        """Mean final count over the union of ``labels``."""
        idx = [self.state_labels.index(lab) for lab in labels]
        return float(self.per_epoch_final_counts[:, idx].sum() / self.epochs)

    def to_dict(self) -> dict:
        out = {
            "format_version": RESULTS_FORMAT_VERSION,
            "model": self.model,
            "params": self.params,
            "master_seed": self.master_seed,
            "epochs": self.epochs,
            "steps": self.steps,
            "state_labels": list(self.state_labels),
            "per_state_mean_trajectory": self.per_state_mean_trajectory,
            "per_epoch_final_counts": self.per_epoch_final_counts.tolist(),
            "final_mean_counts": self.final_mean_counts,
            "expected_spread": self.expected_spread,
        }
        if self.config is not None:
            out["config"] = self.config
        return out

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, sort_keys=True, indent=2) + "\n"

    def identical_to(self, other: EpochResults) -> bool:
        return (json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)
                and self.final_states.dtype == other.final_states.dtype
                and np.array_equal(self.final_states, other.final_states))


def physical_memory() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 8 << 30


def default_memory_cap() -> int:
    return int(0.75 * physical_memory())


def estimate_memory(model: ModelSpec, num_nodes: int, batch_size: int, epochs: int) -> int:
    itemsize = np.dtype(model.definition.dtype).itemsize
    channels = len(model.channels)
    # prev + next snapshots, label decode buffer, stored final states
    return (2 * channels * itemsize + 8) * batch_size * num_nodes + channels * itemsize * epochs * num_nodes


def run_batched(model: ModelSpec, num_nodes: int, seeds, epochs: int, times: int | None,
                batch_size: int, master_seed: int, advance: Callable[[StateBatch], StateBatch],
                *, sim_base: int = 0, max_steps: int | None = None,
                memory_cap: int | None = None) -> EpochResults:
    """Monte Carlo driver shared by the single-process and distributed runners.

    ``times=None`` runs each batch until its state stops changing (only for
    models with a guaranteed fixed point), capped at ``max_steps``
    (default ``10 * N``).
    """
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if times is None:
        if not model.definition.has_fixed_point:
            raise ValidationError(f"run-until-convergence is only valid for IC and THRESHOLD, not {model.model_id}")
        max_steps = 10 * num_nodes if max_steps is None else max_steps
    elif times < 0:
        raise ValidationError(f"times must be >= 0, got {times}")
    batch_size = min(batch_size, epochs)
    cap = default_memory_cap() if memory_cap is None else memory_cap
    need = estimate_memory(model, num_nodes, batch_size, epochs)
    if need > cap:
        raise ResourceError(
            f"estimated memory {need} bytes exceeds cap {cap} bytes; use a smaller batch_size"
        )

    labels = model.state_labels
    n_labels = len(labels)
    channels = len(model.channels)
    final_states = np.empty((channels, epochs, num_nodes), dtype=model.definition.dtype)
    final_counts = np.empty((epochs, n_labels), dtype=np.int64)
    batch_traj: list[list[np.ndarray]] = []
    last_change = 0

    def counts(s: StateBatch) -> np.ndarray:
        lab = model.labels(s.data)
        return np.stack([(lab == i).sum(axis=1) for i in range(n_labels)], axis=1)

    for start in range(0, epochs, batch_size):
        lanes = min(batch_size, epochs - start)
        s = init_states(model, num_nodes, seeds, lanes, sim_base + start, master_seed)
        c = counts(s)
        traj = [c.sum(axis=0)]
        if times is not None:
            for _ in range(times):
                s = advance(s)
                c = counts(s)
                traj.append(c.sum(axis=0))
        else:
            for k in range(1, max_steps + 1):
                nxt = advance(s)
                if nxt.same_state(s):
                    break
                s = nxt
                last_change = max(last_change, k)
                c = counts(s)
                traj.append(c.sum(axis=0))
        final_states[:, start:start + lanes] = s.data
        final_counts[start:start + lanes] = c
        batch_traj.append(traj)

    steps = times if times is not None else last_change
    totals = np.zeros((steps + 1, n_labels), dtype=np.int64)
    for traj in batch_traj:
        for t in range(steps + 1):
            totals[t] += traj[min(t, len(traj) - 1)]
    trajectory = {lab: (totals[:, i] / epochs).tolist() for i, lab in enumerate(labels)}
    spread = float(final_counts[:, 1:].sum() / epochs)
    return EpochResults(
        model=model.model_id,
        params=dict(model.params),
        master_seed=master_seed,
        epochs=epochs,
        steps=steps,
        state_labels=labels,
        per_state_mean_trajectory=trajectory,
        per_epoch_final_counts=final_counts,
        expected_spread=spread,
        final_states=final_states,
    )


class Simulation:
    """Handle bundling a model, graph and seed set with a live state.

    Mirrors the four run interfaces: :meth:`run_iteration`,
    :meth:`run_iterations`, :meth:`run_epoch` and :meth:`run_epochs`.
    """

    def __init__(self, model: ModelSpec, graph: CsrGraph, seeds: Sequence[int], master_seed: int = 0,
                 *, threads: int = 1, memory_cap: int | None = None):
        model.check_graph(graph.num_nodes, graph.weighted)
        self.model = model
        self.graph = graph
        self.seeds = check_seeds(seeds, graph.num_nodes)
        model.check_seeds(self.seeds)
        self.master_seed = int(master_seed)
        self.threads = max(1, int(threads))
        self.memory_cap = memory_cap
        self.block = Block.from_graph(graph)
        self.state = init_states(model, graph, self.seeds, 1, 0, self.master_seed)
        self._next_sim = 1

    def _advance(self, s: StateBatch) -> StateBatch:
        return step(self.model, self.block, s, self.threads)

    def run_iteration(self) -> StateBatch:
        self.state = self._advance(self.state)
        return self.state

    def run_iterations(self, times: int) -> StateBatch:
        if times < 0:
            raise ValidationError(f"times must be >= 0, got {times}")
        for _ in range(times):
            self.state = self._advance(self.state)
        return self.state

    def run_epoch(self, times: int, sim_index: int | None = None) -> StateBatch:
        """Reset to fresh initial states (new ``sim_index``) and run ``times`` steps."""
        if sim_index is None:
            sim_index = self._next_sim
        self._next_sim = sim_index + 1
        self.state = init_states(self.model, self.graph, self.seeds, 1, sim_index, self.master_seed)
        return self.run_iterations(times)

    def run_until_converged(self, max_steps: int | None = None) -> StateBatch:
        if not self.model.definition.has_fixed_point:
            raise ValidationError(f"{self.model.model_id} has no guaranteed fixed point")
        max_steps = 10 * self.graph.num_nodes if max_steps is None else max_steps
        for _ in range(max_steps):
            nxt = self._advance(self.state)
            if nxt.same_state(self.state):
                break
            self.state = nxt
        return self.state

    def run_epochs(self, epochs: int, times: int | None, batch_size: int, *, sim_base: int = 0,
                   max_steps: int | None = None) -> EpochResults:
        return run_batched(self.model, self.graph.num_nodes, self.seeds, epochs, times, batch_size,
                           self.master_seed, self._advance, sim_base=sim_base, max_steps=max_steps,
                           memory_cap=self.memory_cap)
