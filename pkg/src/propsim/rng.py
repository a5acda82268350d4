"""Stateless counter-based random variates.

Every draw is addressed by ``(master_seed, sim_index, step, node_id, draw_tag)``.
The key is packed into two 64-bit words,

    hi = sim_index << 32 | step
    lo = node_id << 16 | draw_tag

and hashed with the SplitMix64 finalizer in two keyed rounds: the first
round mixes ``hi`` into the scheduled seed, the second mixes ``lo`` into the
result of the first, and a last finalizer pass combines both. The top 53
bits of the output become a double in ``[0, 1)``.

Because nothing is sequential, a draw depends only on its key: thread
count, batch layout and graph partitioning cannot change any value.

Two implementations are kept in lock-step: plain Python integers (used by
the public scalar API and the reference oracle) and numba-compiled uint64
arithmetic (used inside the engine kernels). Tests assert they agree.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple

import numba
import numpy as np

from .errors import ValidationError

MASK64 = (1 << 64) - 1
MAX_NODE_ID = (1 << 48) - 1

_GAMMA = 0x9E3779B97F4A7C15
_GAMMA_NODE = 0xD1B54A32D192ED03
_GAMMA_ROUND = 0xDA942042E4DD58B5
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_UNIT = 2.0**-53


class DrawTag(IntEnum):
    INFECT = 0
    RECOVER = 1
    LATENT = 2
    EDGE_TRIAL = 3
    NODE_PICK = 4
    OPINION_INIT = 5


class RngKey(NamedTuple):
    master_seed: int
    sim_index: int
    step: int
    node_id: int
    draw_tag: int


# -- pure Python route -------------------------------------------------------


def _fmix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def key_schedule(master_seed: int) -> int:
    return _fmix((master_seed + _GAMMA) & MASK64)


def stream_word(scheduled: int, sim_index: int, step: int) -> int:
    """First round: everything shared by all draws of one (sim, step)."""
    hi = ((sim_index << 32) | step) & MASK64
    return _fmix(scheduled ^ ((hi * _GAMMA) & MASK64))


def draw_bits(stream: int, node_id: int, draw_tag: int, attempt: int = 0) -> int:
    lo = ((node_id << 16) | draw_tag) & MASK64
    y = _fmix(stream ^ ((lo * _GAMMA_NODE) & MASK64))
    return _fmix((y + stream + attempt * _GAMMA_ROUND) & MASK64)


def _check_key(key: RngKey) -> None:
    if not 0 <= key.master_seed <= MASK64:
        raise ValidationError(f"master_seed out of u64 range: {key.master_seed}")
    if not 0 <= key.sim_index < 1 << 32:
        raise ValidationError(f"sim_index out of u32 range: {key.sim_index}")
    if not 0 <= key.step < 1 << 32:
        raise ValidationError(f"step out of u32 range: {key.step}")
    if not 0 <= key.node_id <= MAX_NODE_ID:
        raise ValidationError(f"node_id must fit in 48 bits: {key.node_id}")
    if not 0 <= key.draw_tag < 1 << 16:
        raise ValidationError(f"draw_tag out of u16 range: {key.draw_tag}")


def bits64(key: RngKey, attempt: int = 0) -> int:
    _check_key(key)
    stream = stream_word(key_schedule(key.master_seed), key.sim_index, key.step)
    return draw_bits(stream, key.node_id, key.draw_tag, attempt)


def uniform(key: RngKey) -> float:
    """Uniform double in [0, 1) addressed by ``key``."""
    return (bits64(key) >> 11) * _UNIT


def unit_from_bits(bits: int) -> float:
    return (bits >> 11) * _UNIT


def bounded_from_stream(stream: int, node_id: int, draw_tag: int, n: int) -> int:
    # Rejection keeps the result unbiased: accept only the top
    # 2**64 - (2**64 mod n) values, which split evenly into n buckets.
    threshold = (1 << 64) % n
    attempt = 0
    while True:
        b = draw_bits(stream, node_id, draw_tag, attempt)
        if b >= threshold:
            return b % n
        attempt += 1


def uniform_int(key: RngKey, n: int) -> int:
    """Unbiased integer in ``[0, n)`` addressed by ``key``."""
    if n < 1:
        raise ValidationError(f"uniform_int needs n >= 1, got {n}")
    _check_key(key)
    stream = stream_word(key_schedule(key.master_seed), key.sim_index, key.step)
    return bounded_from_stream(stream, key.node_id, key.draw_tag, n)


# -- numba route ---------------------------------------------------------------

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U32 = np.uint64(32)
_U16 = np.uint64(16)
_U11 = np.uint64(11)
_NB_M1 = np.uint64(_M1)
_NB_M2 = np.uint64(_M2)
_NB_GAMMA = np.uint64(_GAMMA)
_NB_GAMMA_NODE = np.uint64(_GAMMA_NODE)
_NB_GAMMA_ROUND = np.uint64(_GAMMA_ROUND)


@numba.njit(cache=True, nogil=True)
def nb_fmix(z):
    z = (z ^ (z >> _U30)) * _NB_M1
    z = (z ^ (z >> _U27)) * _NB_M2
    return z ^ (z >> _U31)


@numba.njit(cache=True, nogil=True)
def nb_key_schedule(master_seed):
    return nb_fmix(np.uint64(master_seed) + _NB_GAMMA)


@numba.njit(cache=True, nogil=True)
def nb_stream_word(scheduled, sim_index, step):
    hi = (np.uint64(sim_index) << _U32) | np.uint64(step)
    return nb_fmix(scheduled ^ (hi * _NB_GAMMA))


@numba.njit(cache=True, nogil=True)
def nb_draw_bits(stream, node_id, draw_tag, attempt):
    lo = (np.uint64(node_id) << _U16) | np.uint64(draw_tag)
    y = nb_fmix(stream ^ (lo * _NB_GAMMA_NODE))
    return nb_fmix(y + stream + np.uint64(attempt) * _NB_GAMMA_ROUND)


@numba.njit(cache=True, nogil=True)
def nb_uniform(stream, node_id, draw_tag):
    return np.float64(nb_draw_bits(stream, node_id, draw_tag, 0) >> _U11) * _UNIT


@numba.njit(cache=True, nogil=True)
def nb_uniform_int(stream, node_id, draw_tag, n):
    nn = np.uint64(n)
    threshold = (np.uint64(0) - nn) % nn
    attempt = 0
    while True:
        b = nb_draw_bits(stream, node_id, draw_tag, attempt)
        if b >= threshold:
            return np.int64(b % nn)
        attempt += 1


@numba.njit(cache=True, nogil=True)
def _uniform_grid(scheduled, sims, step, nodes, draw_tag, out):
    for a in range(sims.size):
        stream = nb_stream_word(scheduled, sims[a], step)
        for c in range(nodes.size):
            out[a, c] = nb_uniform(stream, nodes[c], draw_tag)


def uniform_grid(master_seed: int, sims, step: int, nodes, draw_tag: int) -> np.ndarray:
    """Uniforms for every (sim, node) pair at one step; shape ``(len(sims), len(nodes))``."""
    sims = np.asarray(sims, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    out = np.empty((sims.size, nodes.size), dtype=np.float64)
    _uniform_grid(np.uint64(key_schedule(master_seed)), sims, np.int64(step), nodes, np.int64(draw_tag), out)
    return out


@numba.njit(cache=True, nogil=True)
def _uniform_keys(seeds, sims, steps, nodes, tags, out):
    for i in range(out.size):
        stream = nb_stream_word(nb_key_schedule(seeds[i]), sims[i], steps[i])
        out[i] = nb_uniform(stream, nodes[i], tags[i])


def uniform_array(master_seed, sim_index, step, node_id, draw_tag) -> np.ndarray:
    """Vectorised ``uniform`` over broadcast key components."""
    parts = np.broadcast_arrays(
        np.asarray(master_seed, dtype=np.uint64),
        np.asarray(sim_index, dtype=np.int64),
        np.asarray(step, dtype=np.int64),
        np.asarray(node_id, dtype=np.int64),
        np.asarray(draw_tag, dtype=np.int64),
    )
    flat = [np.ascontiguousarray(p).ravel() for p in parts]
    out = np.empty(flat[0].size, dtype=np.float64)
    _uniform_keys(*flat, out)
    return out.reshape(parts[0].shape)
