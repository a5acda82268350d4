"""Naive reference simulator used as a correctness oracle.

Plain Python loops over (epoch, step, node, in-edge), with no numpy and no
numba. Randomness comes from the same keyed generator as the engine with
the same key layout, so for every model except IC the oracle should agree
with the engine bit for bit. IC here uses one independent trial per edge,
keyed by ``(step, edge position, EDGE_TRIAL)``, which only matches the
engine's combined per-node draw in distribution.

Two exhaustive modes give exact expectations for tiny instances:
:func:`ic_exhaustive_expected_spread` enumerates live-edge outcomes, and
:func:`exact_label_distribution` propagates the full Markov chain of node
states.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque

import numpy as np

from .errors import ValidationError
from .graph import CsrGraph, check_seeds
from .models import ModelSpec
from .rng import DrawTag, bounded_from_stream, draw_bits, key_schedule, stream_word, unit_from_bits

MAX_ORACLE_NODES = 10_000

_INFECT = int(DrawTag.INFECT)
_RECOVER = int(DrawTag.RECOVER)
_LATENT = int(DrawTag.LATENT)
_EDGE = int(DrawTag.EDGE_TRIAL)
_PICK = int(DrawTag.NODE_PICK)
_INIT = int(DrawTag.OPINION_INIT)


def _log_keep(prob):
    return -math.inf if prob >= 1.0 else math.log(1.0 - prob)


def _initial(model, n, seeds, sim_index, master_seed):
    if model.model_id == "HK":
        stream = stream_word(key_schedule(master_seed), sim_index, 0)
        return [[2.0 * unit_from_bits(draw_bits(stream, i, _INIT)) - 1.0 for i in range(n)]]
    chans = [[0] * n for _ in model.channels]
    seeded = 1 if model.model_id == "SEIR_DT" else 0
    for s in seeds:
        chans[seeded][s] = 1
    return chans


def naive_epoch(model: ModelSpec, g: CsrGraph, seeds, steps: int, sim_index: int, master_seed: int,
                *, allow_large: bool = False) -> np.ndarray:
    """Final channel values (channels x N) of one simulation."""
    n = g.num_nodes
    if n > MAX_ORACLE_NODES and not allow_large:
        raise ValidationError(f"oracle limited to {MAX_ORACLE_NODES} nodes (got {n}); pass allow_large=True")
    model.check_graph(n, g.weighted)
    seeds = check_seeds(seeds, n)
    model.check_seeds(seeds)
    rp = g.row_ptr.tolist()
    src = g.src_idx.tolist()
    w = g.weights.tolist() if g.weighted else [1.0] * len(src)
    p = model.params
    mid = model.model_id
    x = _initial(model, n, seeds, sim_index, master_seed)
    sched = key_schedule(master_seed)

    for k in range(1, steps + 1):
        stream = stream_word(sched, sim_index, k)

        def u(node, tag):
            return unit_from_bits(draw_bits(stream, node, tag))

        new = [list(c) for c in x]
        if mid in ("SI", "SIS", "SIR", "SEIR_DT"):
            lk = _log_keep(p["beta"])
            inf_ch = 1 if mid == "SEIR_DT" else 0
            for i in range(n):
                susceptible = all(c[i] == 0 for c in x)
                if susceptible:
                    total = 0.0
                    for e in range(rp[i], rp[i + 1]):
                        if x[inf_ch][src[e]] == 1:
                            total += w[e] * lk
                    if u(i, _INFECT) < 1.0 - math.exp(total):
                        new[0][i] = 1
                elif mid == "SEIR_DT" and x[0][i] == 1:
                    if u(i, _LATENT) < p["alpha"]:
                        new[0][i], new[1][i] = 0, 1
                elif mid != "SI" and x[inf_ch][i] == 1:
                    if u(i, _RECOVER) < p["lambda"]:
                        new[inf_ch][i] = 0
                        if mid != "SIS":
                            new[inf_ch + 1][i] = 1
        elif mid == "IC":
            for i in range(n):
                if x[0][i] == 1:
                    new[0][i] = 2
                elif x[0][i] == 0:
                    for e in range(rp[i], rp[i + 1]):
                        if x[0][src[e]] == 1 and u(e, _EDGE) < p["p"]:
                            new[0][i] = 1
                            break
        elif mid == "THRESHOLD":
            for i in range(n):
                if x[0][i] == 0 and rp[i + 1] > rp[i]:
                    active = total = 0.0
                    for e in range(rp[i], rp[i + 1]):
                        total += w[e]
                        if x[0][src[e]] == 1:
                            active += w[e]
                    if active / total >= p["tau"]:
                        new[0][i] = 1
        elif mid == "HK":
            for i in range(n):
                own = x[0][i]
                total, close = 0.0, []
                for e in range(rp[i], rp[i + 1]):
                    other = x[0][src[e]]
                    if abs(own - other) < p["epsilon"]:
                        total += other
                        close.append(other)
                if close:
                    new[0][i] = min(max(total / len(close), min(close)), max(close))
        elif mid == "VOTER":
            v = bounded_from_stream(stream, 0, _PICK, n)
            deg = rp[v + 1] - rp[v]
            if deg:
                j = bounded_from_stream(stream, 1, _PICK, deg)
                new[0][v] = x[0][src[rp[v] + j]]
        elif mid == "MAJORITY_RULE":
            q = p["q"]
            group, slot = [], 0
            while len(group) < q:
                cand = bounded_from_stream(stream, n + 1 + slot, _PICK, n)
                slot += 1
                if cand not in group:
                    group.append(cand)
            ones = sum(x[0][v] for v in group)
            if 2 * ones != q:
                major = int(2 * ones > q)
            else:
                major = int(u(n, _PICK) < 0.5)
            for v in group:
                new[0][v] = major
        else:  # pragma: no cover - catalog and oracle out of sync
            raise ValidationError(f"oracle has no rule for {mid}")
        x = new

    return np.array(x, dtype=model.definition.dtype)


def naive_epochs(model: ModelSpec, g: CsrGraph, seeds, steps: int, epochs: int, master_seed: int,
                 sim_base: int = 0) -> np.ndarray:
    """Stacked finals, shaped like ``EpochResults.final_states`` (channels x epochs x N)."""
    runs = [naive_epoch(model, g, seeds, steps, sim_base + e, master_seed) for e in range(epochs)]
    return np.stack(runs, axis=1)


def naive_ic_spreads(model: ModelSpec, g: CsrGraph, seeds, epochs: int, master_seed: int) -> np.ndarray:
    """Activated counts of ``epochs`` per-edge-trial IC cascades, run to convergence."""
    n = g.num_nodes
    rp = g.row_ptr.tolist()
    src = g.src_idx.tolist()
    prob = model.params["p"]
    sched = key_schedule(master_seed)
    seeds = check_seeds(seeds, n)
    out = np.empty(epochs, dtype=np.int64)
    for sim in range(epochs):
        state = [0] * n
        for s in seeds:
            state[s] = 1
        k = 0
        while 1 in state:
            k += 1
            stream = stream_word(sched, sim, k)
            new = list(state)
            for i in range(n):
                if state[i] == 1:
                    new[i] = 2
                elif state[i] == 0:
                    for e in range(rp[i], rp[i + 1]):
                        if state[src[e]] == 1 and unit_from_bits(draw_bits(stream, e, _EDGE)) < prob:
                            new[i] = 1
                            break
            state = new
        out[sim] = sum(1 for s in state if s)
    return out


# -- exhaustive modes ------------------------------------------------------------


def ic_exhaustive_expected_spread(g: CsrGraph, seeds, p: float, max_trials: int = 16) -> float:
    """Exact expected IC spread by enumerating every edge-trial outcome.

    Only edges into non-seed nodes can matter; each is live with
    probability ``p`` and the cascade reaches whatever live edges connect
    to the seeds.
    """
    seeds = check_seeds(seeds, g.num_nodes)
    seed_set = set(seeds)
    arcs = [(int(g.src_idx[e]), v) for v in range(g.num_nodes) if v not in seed_set
            for e in range(g.row_ptr[v], g.row_ptr[v + 1])]
    if len(arcs) > max_trials:
        raise ValidationError(f"{len(arcs)} edge trials exceed exhaustive limit {max_trials}")
    expected = 0.0
    for outcome in itertools.product((False, True), repeat=len(arcs)):
        live = defaultdict(list)
        for (a, b), on in zip(arcs, outcome):
            if on:
                live[a].append(b)
        seen = set(seeds)
        queue = deque(seeds)
        while queue:
            a = queue.popleft()
            for b in live[a]:
                if b not in seen:
                    seen.add(b)
                    queue.append(b)
        k = sum(outcome)
        expected += p**k * (1 - p) ** (len(arcs) - k) * len(seen)
    return expected


def _node_options(mid, p, g, state, i):
    """Possible next labels of node i with probabilities, given full state."""
    lab = state[i]
    sources = g.in_neighbors(i)
    weights = g.edge_weights()[g.row_ptr[i]:g.row_ptr[i + 1]]

    def infection_prob(infectious_label):
        keep = 1.0
        for s, wt in zip(sources, weights):
            if state[s] == infectious_label:
                keep *= (1.0 - p["beta" if "beta" in p else "p"]) ** wt
        return 1.0 - keep

    def coin(prob, yes, no):
        return [(yes, prob), (no, 1.0 - prob)] if 0.0 < prob < 1.0 else [(yes if prob >= 1.0 else no, 1.0)]

    if mid in ("SI", "SIS", "SIR", "IC"):
        if lab == 0:
            return coin(infection_prob(1), 1, 0)
        if mid == "IC":
            return [(2 if lab == 1 else lab, 1.0)]
        if mid == "SI" or lab == 2:
            return [(lab, 1.0)]
        return coin(p["lambda"], 0 if mid == "SIS" else 2, 1)
    if mid == "SEIR_DT":
        if lab == 0:
            return coin(infection_prob(2), 1, 0)
        if lab == 1:
            return coin(p["alpha"], 2, 1)
        if lab == 2:
            return coin(p["lambda"], 3, 2)
        return [(3, 1.0)]
    if mid == "THRESHOLD":
        if lab == 1 or len(sources) == 0:
            return [(lab, 1.0)]
        active = sum(wt for s, wt in zip(sources, weights) if state[s] == 1)
        return [(int(active / weights.sum() >= p["tau"]), 1.0)]
    raise ValidationError(f"exact enumeration does not support {mid}")


def exact_label_distribution(model: ModelSpec, g: CsrGraph, seeds, steps: int,
                             max_branching: int = 1 << 16) -> dict[tuple[int, ...], float]:
    """Exact distribution of node labels after ``steps`` steps.

    Propagates probability mass over full-graph states. Supports the
    synchronous discrete models and VOTER; meant for graphs of a handful of
    nodes.
    """
    n = g.num_nodes
    seeds = check_seeds(seeds, n)
    mid = model.model_id
    p = model.params
    init = [0] * n
    for s in seeds:
        init[s] = 2 if mid == "SEIR_DT" else 1
    dist = {tuple(init): 1.0}
    for _ in range(steps):
        nxt: dict[tuple[int, ...], float] = defaultdict(float)
        for state, mass in dist.items():
            if mid == "VOTER":
                for v in range(n):
                    srcs = g.in_neighbors(v)
                    if len(srcs) == 0:
                        nxt[state] += mass / n
                        continue
                    for s in srcs:
                        new = list(state)
                        new[v] = state[s]
                        nxt[tuple(new)] += mass / (n * len(srcs))
                continue
            options = [_node_options(mid, p, g, state, i) for i in range(n)]
            branching = math.prod(len(o) for o in options)
            if branching > max_branching:
                raise ValidationError(f"{branching} joint outcomes exceed limit {max_branching}")
            for combo in itertools.product(*options):
                prob = math.prod(q for _, q in combo)
                nxt[tuple(lab for lab, _ in combo)] += mass * prob
        dist = dict(nxt)
    return dist
