"""Model catalog: initial-state rules, parameters and step kernels.

Every synchronous kernel has the same message / aggregate / update shape.
For each target row it scans the row's in-edge segment in CSR order and
folds the source messages into one aggregate with a plain sequential
loop. It then updates the target from that aggregate, its previous state
and keyed random draws. All reads come from the previous-step snapshot
``prev`` (channels x lanes x nodes) and all writes go to ``out`` (channels
x lanes x rows). So the kernel is a pure function of its inputs and may run
on any disjoint tile of (lane, row) work.

Kernel signature (shared by all models)::

    kernel(row_ptr, src_idx, weights, targets, row_of, prev, out,
           lane_lo, lane_hi, params, key, sim_offset, step)

``targets[r]`` is the global node id of row ``r``; ``row_of`` maps global
ids back to rows (-1 when the node is not in this block) and is only used by
the asynchronous models, whose updated node is chosen at random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numba
import numpy as np

from .errors import ValidationError
from .rng import DrawTag, nb_stream_word, nb_uniform, nb_uniform_int, uniform_grid

INFECT = int(DrawTag.INFECT)
RECOVER = int(DrawTag.RECOVER)
LATENT = int(DrawTag.LATENT)
NODE_PICK = int(DrawTag.NODE_PICK)
OPINION_INIT = int(DrawTag.OPINION_INIT)

SYNCHRONOUS = "synchronous"
ASYNCHRONOUS = "asynchronous"


def log_keep(prob: float) -> float:
    """log(1 - prob), with the prob == 1 limit taken as -inf."""
    return -math.inf if prob >= 1.0 else math.log(1.0 - prob)


# -- kernels -------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _pressure(row_ptr, src_idx, weights, r, prev, chan, b, active, lk):
    # Sum of log(1 - p) over in-edges whose source is in state `active`.
    acc = 0.0
    for e in range(row_ptr[r], row_ptr[r + 1]):
        if prev[chan, b, src_idx[e]] == active:
            acc += weights[e] * lk
    return acc


@numba.njit(cache=True, nogil=True)
def si_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    lk = params[0]
    for b in range(lane_lo, lane_hi):
        stream = nb_stream_word(key, sim_offset + b, step)
        for r in range(targets.size):
            v = targets[r]
            h = prev[0, b, v]
            if h == 0:
                acc = _pressure(row_ptr, src_idx, weights, r, prev, 0, b, 1, lk)
                if acc < 0.0 and nb_uniform(stream, v, INFECT) < 1.0 - math.exp(acc):
                    h = 1
            out[0, b, r] = h


@numba.njit(cache=True, nogil=True)
def sis_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    lk = params[0]
    lam = params[1]
    for b in range(lane_lo, lane_hi):
        stream = nb_stream_word(key, sim_offset + b, step)
        for r in range(targets.size):
            v = targets[r]
            h = prev[0, b, v]
            if h == 0:
                acc = _pressure(row_ptr, src_idx, weights, r, prev, 0, b, 1, lk)
                if acc < 0.0 and nb_uniform(stream, v, INFECT) < 1.0 - math.exp(acc):
                    h = 1
            elif nb_uniform(stream, v, RECOVER) < lam:
                h = 0
            out[0, b, r] = h


@numba.njit(cache=True, nogil=True)
def sir_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    lk = params[0]
    lam = params[1]
    for b in range(lane_lo, lane_hi):
        stream = nb_stream_word(key, sim_offset + b, step)
        for r in range(targets.size):
            v = targets[r]
            h = prev[0, b, v]
            rec = prev[1, b, v]
            if h == 0 and rec == 0:
                acc = _pressure(row_ptr, src_idx, weights, r, prev, 0, b, 1, lk)
                if acc < 0.0 and nb_uniform(stream, v, INFECT) < 1.0 - math.exp(acc):
                    h = 1
            elif h == 1 and nb_uniform(stream, v, RECOVER) < lam:
                h = 0
                rec = 1
            out[0, b, r] = h
            out[1, b, r] = rec


@numba.njit(cache=True, nogil=True)
def seir_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    lk = params[0]
    lam = params[1]
    alpha = params[2]
    for b in range(lane_lo, lane_hi):
        stream = nb_stream_word(key, sim_offset + b, step)
        for r in range(targets.size):
            v = targets[r]
            ex = prev[0, b, v]
            h = prev[1, b, v]
            rec = prev[2, b, v]
            if ex == 0 and h == 0 and rec == 0:
                acc = _pressure(row_ptr, src_idx, weights, r, prev, 1, b, 1, lk)
                if acc < 0.0 and nb_uniform(stream, v, INFECT) < 1.0 - math.exp(acc):
                    ex = 1
            elif ex == 1:
                if nb_uniform(stream, v, LATENT) < alpha:
                    ex = 0
                    h = 1
            elif h == 1 and nb_uniform(stream, v, RECOVER) < lam:
                h = 0
                rec = 1
            out[0, b, r] = ex
            out[1, b, r] = h
            out[2, b, r] = rec


@numba.njit(cache=True, nogil=True)
def ic_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    lk = params[0]
    for b in range(lane_lo, lane_hi):
        stream = nb_stream_word(key, sim_offset + b, step)
        for r in range(targets.size):
            v = targets[r]
            s = prev[0, b, v]
            if s == 0:
                acc = _pressure(row_ptr, src_idx, weights, r, prev, 0, b, 1, lk)
                if acc < 0.0 and nb_uniform(stream, v, INFECT) < 1.0 - math.exp(acc):
                    s = 1
            elif s == 1:
                s = 2
            out[0, b, r] = s


@numba.njit(cache=True, nogil=True)
def threshold_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    tau = params[0]
    for b in range(lane_lo, lane_hi):
        for r in range(targets.size):
            v = targets[r]
            a = prev[0, b, v]
            lo = row_ptr[r]
            hi = row_ptr[r + 1]
            if a == 0 and hi > lo:
                active_w = 0.0
                total_w = 0.0
                for e in range(lo, hi):
                    total_w += weights[e]
                    if prev[0, b, src_idx[e]] == 1:
                        active_w += weights[e]
                if active_w / total_w >= tau:
                    a = 1
            out[0, b, r] = a


@numba.njit(cache=True, nogil=True)
def hk_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    eps = params[0]
    for b in range(lane_lo, lane_hi):
        for r in range(targets.size):
            own = prev[0, b, targets[r]]
            total = 0.0
            count = 0
            lo = np.inf
            hi = -np.inf
            for e in range(row_ptr[r], row_ptr[r + 1]):
                other = prev[0, b, src_idx[e]]
                if abs(own - other) < eps:
                    total += other
                    count += 1
                    lo = min(lo, other)
                    hi = max(hi, other)
            # clamp: rounding must not push a mean outside the averaged values
            out[0, b, r] = min(max(total / count, lo), hi) if count > 0 else own


@numba.njit(cache=True, nogil=True)
def _copy_rows(prev, out, targets, b):
    for c in range(prev.shape[0]):
        for r in range(targets.size):
            out[c, b, r] = prev[c, b, targets[r]]


@numba.njit(cache=True, nogil=True)
def voter_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    n = prev.shape[2]
    for b in range(lane_lo, lane_hi):
        _copy_rows(prev, out, targets, b)
        stream = nb_stream_word(key, sim_offset + b, step)
        v = nb_uniform_int(stream, 0, NODE_PICK, n)
        r = row_of[v]
        if r >= 0:
            lo = row_ptr[r]
            deg = row_ptr[r + 1] - lo
            if deg > 0:
                j = nb_uniform_int(stream, 1, NODE_PICK, deg)
                out[0, b, r] = prev[0, b, src_idx[lo + j]]


@numba.njit(cache=True, nogil=True)
def majority_kernel(row_ptr, src_idx, weights, targets, row_of, prev, out, lane_lo, lane_hi, params, key, sim_offset, step):
    n = prev.shape[2]
    q = np.int64(params[0])
    group = np.empty(q, dtype=np.int64)
    taken = np.zeros(n, dtype=np.bool_)
    for b in range(lane_lo, lane_hi):
        _copy_rows(prev, out, targets, b)
        stream = nb_stream_word(key, sim_offset + b, step)
        size = 0
        slot = 0
        while size < q:
            cand = nb_uniform_int(stream, n + 1 + slot, NODE_PICK, n)
            slot += 1
            if not taken[cand]:
                taken[cand] = True
                group[size] = cand
                size += 1
        ones = 0
        for i in range(q):
            ones += prev[0, b, group[i]]
            taken[group[i]] = False
        if 2 * ones > q:
            major = 1
        elif 2 * ones < q:
            major = 0
        else:
            major = 1 if nb_uniform(stream, n, NODE_PICK) < 0.5 else 0
        for i in range(q):
            r = row_of[group[i]]
            if r >= 0:
                out[0, b, r] = major


# -- catalog -------------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    low: float
    high: float = 1.0
    low_open: bool = False
    integer: bool = False

    def check(self, value) -> float | int:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ValidationError(f"parameter {self.name} must be numeric, got {value!r}") from None
        if self.integer:
            if v != int(v):
                raise ValidationError(f"parameter {self.name} must be an integer, got {value!r}")
            v = int(v)
        too_low = v <= self.low if self.low_open else v < self.low
        if too_low or v > self.high or math.isnan(v):
            lo = "(" if self.low_open else "["
            raise ValidationError(f"parameter {self.name}={value} outside {lo}{self.low}, {self.high}]")
        return v


PROB = {name: Param(name, 0.0, 1.0) for name in ("beta", "lambda", "alpha", "p", "tau")}
Q = Param("q", 1, high=math.inf, integer=True)
EPSILON = Param("epsilon", 0.0, high=math.inf, low_open=True)


def _seeded(*channel_of_seed: int):
    def init(num_nodes, seeds, lanes, channels, master_seed):
        data = np.zeros((channels, len(lanes), num_nodes), dtype=np.int8)
        for c in channel_of_seed:
            data[c][:, seeds] = 1
        return data
    return init


def _hk_init(num_nodes, seeds, lanes, channels, master_seed):
    u = uniform_grid(master_seed, lanes, 0, np.arange(num_nodes), OPINION_INIT)
    return (2.0 * u - 1.0)[np.newaxis]


@dataclass(frozen=True)
class ModelDef:
    model_id: str
    channels: tuple[str, ...]
    state_labels: tuple[str, ...]
    params: tuple[Param, ...]
    kernel: Callable
    kernel_params: Callable[[Mapping], list[float]]
    init: Callable
    decode: Callable[[np.ndarray], np.ndarray]
    iteration_mode: str = SYNCHRONOUS
    supports_weights: bool = True
    requires_seeds: bool = True
    stochastic: bool = True
    has_fixed_point: bool = False
    dtype: type = np.int8
    aliases: tuple[str, ...] = field(default=())


def _first(data):
    return data[0].astype(np.int64)


CATALOG: dict[str, ModelDef] = {
    m.model_id: m
    for m in (
        ModelDef(
            "SI", ("h",), ("S", "I"), (PROB["beta"],), si_kernel,
            lambda p: [log_keep(p["beta"])], _seeded(0), _first,
        ),
        ModelDef(
            "SIS", ("h",), ("S", "I"), (PROB["beta"], PROB["lambda"]), sis_kernel,
            lambda p: [log_keep(p["beta"]), p["lambda"]], _seeded(0), _first,
        ),
        ModelDef(
            "SIR", ("h", "r"), ("S", "I", "R"), (PROB["beta"], PROB["lambda"]), sir_kernel,
            lambda p: [log_keep(p["beta"]), p["lambda"]], _seeded(0),
            lambda d: d[0].astype(np.int64) + 2 * d[1],
        ),
        ModelDef(
            "SEIR_DT", ("e", "h", "r"), ("S", "E", "I", "R"),
            (PROB["beta"], PROB["lambda"], PROB["alpha"]), seir_kernel,
            lambda p: [log_keep(p["beta"]), p["lambda"], p["alpha"]], _seeded(1),
            lambda d: d[0].astype(np.int64) + 2 * d[1] + 3 * d[2],
            aliases=("SEIR", "SEIRDT"),
        ),
        ModelDef(
            "IC", ("state",), ("INACTIVE", "NEWLY_ACTIVE", "ACTIVE_SPENT"), (PROB["p"],), ic_kernel,
            lambda p: [log_keep(p["p"])], _seeded(0), _first,
            supports_weights=False, has_fixed_point=True,
            aliases=("INDEPENDENT_CASCADES", "INDEPENDENTCASCADES"),
        ),
        ModelDef(
            "THRESHOLD", ("active",), ("INACTIVE", "ACTIVE"), (PROB["tau"],), threshold_kernel,
            lambda p: [p["tau"]], _seeded(0), _first,
            stochastic=False, has_fixed_point=True,
        ),
        ModelDef(
            "VOTER", ("opinion",), ("OPINION_0", "OPINION_1"), (), voter_kernel,
            lambda p: [0.0], _seeded(0), _first,
            iteration_mode=ASYNCHRONOUS, supports_weights=False,
        ),
        ModelDef(
            "MAJORITY_RULE", ("opinion",), ("OPINION_0", "OPINION_1"), (Q,), majority_kernel,
            lambda p: [float(p["q"])], _seeded(0), _first,
            iteration_mode=ASYNCHRONOUS, supports_weights=False,
            aliases=("MAJORITYRULE", "MAJORITY"),
        ),
        ModelDef(
            "HK", ("opinion",), ("AT_MOST_0.5", "ABOVE_0.5"), (EPSILON,), hk_kernel,
            lambda p: [p["epsilon"]], _hk_init,
            lambda d: (d[0] > 0.5).astype(np.int64),
            supports_weights=False, requires_seeds=False, stochastic=False, dtype=np.float64,
            aliases=("HEGSELMANN_KRAUSE", "HEGSELMANNKRAUSE"),
        ),
    )
}

_ALIASES = {alias: m.model_id for m in CATALOG.values() for alias in (m.model_id, *m.aliases)}
_PARAM_ALIASES = {"eps": "epsilon", "gamma": "lambda", "delta": "lambda"}


def resolve_model_id(name: str) -> str:
    key = name.strip().upper().replace("-", "_").replace("(", "_").replace(")", "").rstrip("_")
    if key not in _ALIASES:
        known = ", ".join(sorted(CATALOG))
        raise ValidationError(f"unknown model {name!r}; known models: {known}")
    return _ALIASES[key]


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        mid = resolve_model_id(self.model_id)
        definition = CATALOG[mid]
        given = {}
        for name, value in dict(self.params).items():
            canon = _PARAM_ALIASES.get(name, name)
            if canon in given:
                raise ValidationError(f"parameter {canon} given twice")
            given[canon] = value
        expected = {p.name: p for p in definition.params}
        unknown = sorted(set(given) - set(expected))
        if unknown:
            raise ValidationError(f"unknown parameter(s) for {mid}: {', '.join(unknown)}")
        missing = sorted(set(expected) - set(given))
        if missing:
            raise ValidationError(f"missing parameter(s) for {mid}: {', '.join(missing)}")
        checked = {name: expected[name].check(given[name]) for name in expected}
        object.__setattr__(self, "model_id", mid)
        object.__setattr__(self, "params", checked)

    @property
    def definition(self) -> ModelDef:
        return CATALOG[self.model_id]

    @property
    def state_labels(self) -> tuple[str, ...]:
        return self.definition.state_labels

    @property
    def channels(self) -> tuple[str, ...]:
        return self.definition.channels

    @property
    def iteration_mode(self) -> str:
        return self.definition.iteration_mode

    @property
    def supports_weights(self) -> bool:
        return self.definition.supports_weights

    def kernel_params(self) -> np.ndarray:
        return np.asarray(self.definition.kernel_params(self.params), dtype=np.float64)

    def check_graph(self, num_nodes: int, weighted: bool) -> None:
        if weighted and not self.supports_weights:
            raise ValidationError(f"model {self.model_id} does not support weighted graphs")
        if self.model_id == "MAJORITY_RULE" and self.params["q"] > num_nodes:
            raise ValidationError(f"majority-rule group size q={self.params['q']} exceeds N={num_nodes}")

    def check_seeds(self, seeds) -> None:
        if self.definition.requires_seeds and len(seeds) == 0:
            raise ValidationError(f"model {self.model_id} requires a non-empty seed set")

    def initial_data(self, num_nodes: int, seeds, lanes, master_seed: int) -> np.ndarray:
        d = self.definition
        return d.init(num_nodes, np.asarray(seeds, dtype=np.int64), np.asarray(lanes, dtype=np.int64),
                      len(d.channels), master_seed)

    def labels(self, data: np.ndarray) -> np.ndarray:
        """Decode channel data (channels x lanes x nodes) into label codes."""
        return self.definition.decode(data)

    def to_dict(self) -> dict:
        return {"model": self.model_id, "params": dict(self.params)}
