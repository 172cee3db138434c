import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fleetsim import _core
from fleetsim.demand import DemandPattern, generate_random_demand
from fleetsim.dispatch import variant_router
from fleetsim.engine import PolicyRouter, RouterError, run_epoch
from fleetsim.graph import RoadNetwork, all_pairs_shortest, build_lattice
from fleetsim.policy import PolicyMatrix, random_policy


def two_node(weight=5):
    net = RoadNetwork.from_edges(2, [(0, 1, weight), (1, 0, weight)])
    demand = DemandPattern(np.zeros(2), np.array([[0.0, 1.0], [1.0, 0.0]]))
    return net, all_pairs_shortest(net), demand


def stay_policy(net):
    probs = (net.row_of(np.arange(len(net.indices))) == net.indices).astype(float)
    return PolicyMatrix(net, probs)


def test_single_trip_by_hand():
    net, tt, demand = two_node(5)
    r = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 1, 10, 0,
                  initial_positions=[0], initial_commuters=[(0, 1)], validate=True)
    # picked up at t=0, occupied for the five steps of the edge, dropped at t=5
    assert r.total_extrinsic_reward == 5
    assert r.trajectory.occupancy.tolist() == [1] * 5 + [0] * 5
    assert (r.delivered, r.commuters_served, r.waiting_total) == (1, 1, 0)
    c = r.commuters[0]
    assert (c[_core.C_PICK], c[_core.C_DROP]) == (0, 5)


def test_commuter_waits_until_taxi_arrives():
    net, tt, demand = two_node(3)
    r = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 1, 20, 0,
                  initial_positions=[1], initial_commuters=[(0, 1)], validate=True)
    c = r.commuters[0]
    pick = c[_core.C_PICK]
    assert pick >= 3
    assert r.waiting_total == pick
    assert c[_core.C_DROP] == pick + 3


def test_pickup_in_drop_off_step():
    net, tt, demand = two_node(2)
    r = run_epoch(net, tt, demand, PolicyRouter(stay_policy(net)), 1, 10, 0,
                  initial_positions=[0], initial_commuters=[(0, 1), (1, 0)], validate=True)
    first, second = r.commuters[0], r.commuters[1]
    assert first[_core.C_DROP] == 2 and second[_core.C_PICK] == 2
    assert r.total_extrinsic_reward == 4


def test_fifo_and_ascending_taxi_ids():
    net, tt, demand = two_node(4)
    r = run_epoch(net, tt, demand, PolicyRouter(stay_policy(net)), 3, 6, 0,
                  initial_positions=[0, 0, 1], initial_commuters=[(0, 1), (0, 1), (0, 1)], validate=True)
    picks = r.commuters[:3, _core.C_PICK]
    assert picks.tolist()[:2] == [0, 0] and picks[2] == -1
    assert r.waiting_total == 6  # the third commuter waits through the whole run


def test_zero_taxis():
    net = build_lattice(3, 3, seed=0)
    demand = generate_random_demand(net, 1, 0.5, band=(0.0, 1.0))
    r = run_epoch(net, all_pairs_shortest(net), demand, PolicyRouter(random_policy(net)), 0, 500, 0, validate=True)
    assert r.total_extrinsic_reward == 0 and r.commuters_served == 0
    assert np.all(np.diff(r.queue_totals) >= 0)
    assert len(r.trajectory) == 0


def test_queue_cap_drops_are_counted():
    net = build_lattice(2, 2, seed=0)
    demand = DemandPattern(np.full(4, 0.9), (np.ones((4, 4)) - np.eye(4)) / 3)
    r = run_epoch(net, all_pairs_shortest(net), demand, PolicyRouter(random_policy(net)), 0, 200, 0,
                  queue_cap=5, validate=True)
    assert r.queue_totals.max() <= 20
    assert r.overflow_drops == r.births - 20
    assert r.violations == 0


@pytest.fixture(scope="module")
def s1():
    net = build_lattice(10, 10, seed=1)
    return net, all_pairs_shortest(net), generate_random_demand(net, 2, 0.3)


def test_determinism_and_stream_separation(s1):
    net, tt, demand = s1
    a = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 20, 3000, [7, 1])
    b = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 20, 3000, [7, 1])
    assert a.total_extrinsic_reward == b.total_extrinsic_reward
    assert np.array_equal(a.queue_totals, b.queue_totals)
    assert np.array_equal(a.trajectory.slots, b.trajectory.slots)
    c = run_epoch(net, tt, demand, variant_router("committed", tt, demand.g), 20, 3000, [7, 1])
    # a different router sees exactly the same commuters
    assert c.births == a.births
    assert np.array_equal(c.commuters[:, :3], a.commuters[:, :3])


def test_trajectory_records_are_consistent(s1):
    net, tt, demand = s1
    r = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 20, 2000, 3)
    b = r.trajectory
    assert len(b) == r.vacant_moves
    assert np.array_equal(net.row_of(b.slots), b.states)
    assert np.array_equal(net.indices[b.slots], b.actions)
    assert np.all(np.diff(b.times) >= 0)
    assert r.total_extrinsic_reward == b.occupancy.sum() == b.own_final.sum()
    assert np.all(b.own_before <= b.own_final[b.taxis])
    assert np.array_equal(np.bincount(b.states, minlength=net.node_count), r.visits)
    capped = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 20, 2000, 3, max_samples=100)
    assert len(capped.trajectory) == 100
    assert capped.total_extrinsic_reward == r.total_extrinsic_reward


def test_bad_inputs(s1):
    net, tt, demand = s1
    with pytest.raises(ValueError):
        run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), -1, 10)
    with pytest.raises(ValueError):
        run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 1, 0)
    with pytest.raises(ValueError):
        run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 2, 10, initial_positions=[0])
    broken = PolicyMatrix(net, random_policy(net).probs * 0.5)
    with pytest.raises(RouterError):
        run_epoch(net, tt, demand, PolicyRouter(broken), 1, 10)
    other = build_lattice(3, 3, seed=0)
    with pytest.raises(RouterError):
        run_epoch(net, tt, demand, PolicyRouter(random_policy(other)), 1, 10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 15), st.sampled_from(["policy", "committed", "non-committed-normalized"]))
def test_accounting_invariants(seed, taxis, router_name):
    rng = np.random.default_rng(seed)
    net = build_lattice(int(rng.integers(2, 5)), int(rng.integers(2, 5)), seed=seed)
    tt = all_pairs_shortest(net)
    n = net.node_count
    M = rng.random((n, n))
    np.fill_diagonal(M, 0)
    demand = DemandPattern(rng.random(n) * 0.3, M / M.sum(axis=1, keepdims=True))
    router = PolicyRouter(random_policy(net)) if router_name == "policy" else variant_router(router_name, tt, demand.g)
    r = run_epoch(net, tt, demand, router, taxis, 800, seed, queue_cap=int(rng.integers(1, 30)), validate=True)
    assert r.violations == 0
    waiting = int(r.queue_totals[-1])
    assert r.births == waiting + r.in_transit + r.delivered + r.overflow_drops
    assert np.all(r.trajectory.occupancy <= taxis)
    trips = r.commuters[r.commuters[:, _core.C_DROP] >= 0]
    assert np.all(trips[:, _core.C_DROP] - trips[:, _core.C_PICK] >= tt.d[trips[:, 0], trips[:, 1]])
