import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MODEL_PARAMS, random_graph
from propsim.engine import Simulation, StateBatch, estimate_memory, init_states, step
from propsim.errors import ContractError, ResourceError, ValidationError
from propsim.graph import degree_centrality_seeds, from_edges
from propsim.models import ModelSpec
from propsim.oracle import exact_label_distribution


def model_of(mid):
    return ModelSpec(mid, MODEL_PARAMS[mid])


def seeds_for(mid, g):
    return [] if mid == "HK" else degree_centrality_seeds(g, 0.05)


def test_init_sir():
    s = init_states(ModelSpec("SIR", MODEL_PARAMS["SIR"]), 3, [0], 2)
    assert s.channels["h"].tolist() == [[1, 0, 0], [1, 0, 0]]
    assert s.channels["r"].tolist() == [[0, 0, 0], [0, 0, 0]]
    assert s.step == 0 and s.batch_size == 2


def test_init_ic_marks_newly_active():
    s = init_states(model_of("IC"), 4, [0, 1], 1)
    assert s.data[0, 0].tolist() == [1, 1, 0, 0]


def test_init_rejects_bad_seeds():
    with pytest.raises(ValidationError):
        init_states(model_of("SIR"), 3, [3], 1)


def test_step_counter_and_composition(graph200):
    model = model_of("SIR")
    s0 = init_states(model, graph200, [0, 1], 4, master_seed=3)
    s2 = step(model, graph200, step(model, graph200, s0))
    assert s2.step == 2
    sim = Simulation(model, graph200, [0, 1], 3)
    sim.state = init_states(model, graph200, [0, 1], 4, master_seed=3)
    assert sim.run_iterations(2).same_state(s2)


def test_times_zero_and_times_k(graph200):
    model = model_of("SIS")
    a = Simulation(model, graph200, [0, 1], 5)
    start = a.state
    assert a.run_iterations(0) is start
    b = Simulation(model, graph200, [0, 1], 5)
    a.run_iterations(7)
    for _ in range(7):
        b.run_iteration()
    assert a.state.same_state(b.state)
    with pytest.raises(ValidationError):
        a.run_iterations(-1)


def test_frozen_ic_state_is_identity():
    g = from_edges(4, [0, 1, 2], [1, 2, 3])
    model = ModelSpec("IC", {"p": 0.7})
    s = StateBatch(np.array([[[2, 2, 0, 0]]], dtype=np.int8), ("state",), 5, 0, 0)
    assert np.array_equal(step(model, g, s).data, s.data)


def test_channel_contract(graph200):
    s = init_states(model_of("SIR"), graph200, [0], 1)
    with pytest.raises(ContractError):
        step(model_of("SI"), graph200, s)


def test_run_epoch_sim_index(graph200):
    model = model_of("SIR")
    sim = Simulation(model, graph200, [0, 1, 2], 11)
    a = sim.run_epoch(10, sim_index=4).data.copy()
    b = sim.run_epoch(10, sim_index=4).data.copy()
    c = sim.run_epoch(10, sim_index=5).data.copy()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_different_sim_index_differs_on_ten_nodes():
    g = from_edges(10, list(range(9)), list(range(1, 10)), directed=False)
    sim = Simulation(ModelSpec("SIR", {"beta": 0.5, "lambda": 0.3}), g, [0], 1)
    finals = {sim.run_epoch(6).data.tobytes() for _ in range(20)}
    assert len(finals) > 1


def test_threshold_epochs_identical(graph200):
    res = Simulation(model_of("THRESHOLD"), graph200, [0, 1, 2, 3, 4]).run_epochs(10, 20, 4)
    assert all(np.array_equal(res.final_states[:, 0], res.final_states[:, e]) for e in range(10))


@pytest.mark.parametrize("mid", sorted(MODEL_PARAMS))
def test_batch_and_thread_invariance(graph200, mid):
    model = model_of(mid)
    seeds = seeds_for(mid, graph200)
    ref = Simulation(model, graph200, seeds, 21).run_epochs(12, 15, 12)
    for batch, threads in [(1, 1), (5, 1), (12, 3), (7, 4)]:
        other = Simulation(model, graph200, seeds, 21, threads=threads).run_epochs(12, 15, batch)
        assert ref.identical_to(other), (batch, threads)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(sorted(MODEL_PARAMS)), st.integers(0, 2**32), st.integers(1, 9), st.integers(1, 4))
def test_batch_invariance_property(mid, seed, batch, threads):
    g = random_graph(30, 90, np.random.default_rng(seed))
    model = model_of(mid)
    seeds = [] if mid == "HK" else [0, 1]
    a = Simulation(model, g, seeds, seed).run_epochs(9, 6, 9)
    b = Simulation(model, g, seeds, seed, threads=threads).run_epochs(9, 6, batch)
    assert a.identical_to(b)


@pytest.mark.parametrize("mid", [m for m in sorted(MODEL_PARAMS) if m != "HK"])
def test_counts_sum_to_n(graph200, mid):
    res = Simulation(model_of(mid), graph200, seeds_for(mid, graph200), 2).run_epochs(6, 10, 4)
    traj = np.array(list(res.per_state_mean_trajectory.values()))
    assert np.allclose(traj.sum(axis=0), 200)
    assert np.all(res.per_epoch_final_counts.sum(axis=1) == 200)


def test_absorbing_trajectories_monotone(graph200):
    res = Simulation(model_of("SIR"), graph200, [0, 1], 2).run_epochs(6, 30, 6)
    assert np.all(np.diff(res.per_state_mean_trajectory["R"]) >= 0)
    res = Simulation(model_of("IC"), graph200, [0, 1], 2).run_epochs(6, None, 6)
    spent = np.array(res.per_state_mean_trajectory["ACTIVE_SPENT"])
    assert np.all(np.diff(spent) >= 0)


def test_expected_spread_counts_non_susceptible(graph200):
    res = Simulation(model_of("SIR"), graph200, [0, 1, 2], 2).run_epochs(5, 20, 5)
    lab = model_of("SIR").labels(res.final_states)
    assert res.expected_spread == (lab > 0).sum() / 5
    assert res.expected_spread == res.spread_of("I", "R")


def test_converge_mode(graph200):
    res = Simulation(model_of("IC"), graph200, [0, 1], 4).run_epochs(8, None, 3)
    assert res.steps >= 1
    assert not np.any(res.final_states == 1)  # frontier exhausted
    with pytest.raises(ValidationError):
        Simulation(model_of("SIR"), graph200, [0], 1).run_epochs(2, None, 2)
    sim = Simulation(model_of("THRESHOLD"), graph200, [0, 1, 2, 3])
    final = sim.run_until_converged()
    assert step(model_of("THRESHOLD"), graph200, final).same_state(final)


def test_converge_cap():
    g = from_edges(30, list(range(29)), list(range(1, 30)))
    res = Simulation(ModelSpec("IC", {"p": 1.0}), g, [0]).run_epochs(1, None, 1, max_steps=5)
    assert res.steps == 5
    assert res.expected_spread == 6


def test_memory_cap(graph200):
    model = model_of("SIR")
    need = estimate_memory(model, 200, 50, 100)
    sim = Simulation(model, graph200, [0], memory_cap=need - 1)
    with pytest.raises(ResourceError):
        sim.run_epochs(100, 5, 50)
    Simulation(model, graph200, [0], memory_cap=need).run_epochs(100, 5, 50)


def test_invalid_run_arguments(graph200):
    sim = Simulation(model_of("SI"), graph200, [0])
    for args in [(0, 5, 1), (5, 5, 0), (5, -1, 1)]:
        with pytest.raises(ValidationError):
            sim.run_epochs(*args)


def test_results_json_is_deterministic(graph200):
    a = Simulation(model_of("SEIR_DT"), graph200, [0, 1], 9).run_epochs(7, 12, 3)
    b = Simulation(model_of("SEIR_DT"), graph200, [0, 1], 9).run_epochs(7, 12, 5)
    assert a.to_json() == b.to_json()
    assert a.to_dict()["format_version"] == 1


def test_hk_reproducible_and_bounded():
    g = random_graph(60, 200, np.random.default_rng(3))
    model = ModelSpec("HK", {"epsilon": 0.4})
    a = Simulation(model, g, [], 17).run_epochs(3, 20, 3)
    b = Simulation(model, g, [], 17).run_epochs(3, 20, 1)
    assert a.identical_to(b)
    assert a.final_states.min() >= -1 and a.final_states.max() <= 1


def _count_distribution(dist, n):
    out = np.zeros(n + 1)
    for state, p in dist.items():
        out[sum(1 for x in state if x)] += p
    return out


@pytest.mark.parametrize("mid,params,steps", [
    ("SIR", {"beta": 0.4, "lambda": 0.3}, 3),
    ("SIS", {"beta": 0.5, "lambda": 0.4}, 3),
    ("SEIR_DT", {"beta": 0.6, "lambda": 0.2, "alpha": 0.5}, 3),
    ("IC", {"p": 0.35}, 4),
    ("VOTER", {}, 5),
])
def test_distribution_matches_exact_chain(mid, params, steps):
    g = from_edges(6, [0, 1, 2, 3, 4, 0], [1, 2, 3, 4, 5, 3], directed=False)
    model = ModelSpec(mid, params)
    exact = _count_distribution(exact_label_distribution(model, g, [0], steps), 6)
    epochs = 20_000
    lab = model.labels(Simulation(model, g, [0], 5).run_epochs(epochs, steps, 5000).final_states)
    observed = np.bincount((lab > 0).sum(axis=1), minlength=7) / epochs
    for p, f in zip(exact, observed):
        assert abs(f - p) <= 4 * math.sqrt(max(p * (1 - p), 1e-9) / epochs) + 1e-9
