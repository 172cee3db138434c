import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fleetsim.demand import generate_random_demand
from fleetsim.dispatch import extract_effective_policy, variant_router
from fleetsim.engine import PolicyRouter, run_epoch
from fleetsim.graph import RoadNetwork, all_pairs_shortest, build_lattice
from fleetsim.policy import PROB_FLOOR, PolicyMatrix, project_rows, random_policy
from fleetsim.rl import (
    Adam, RndPair, RunningSigma, Trainer, TrainerConfig, TrainingError, ValueTable, advantages,
    clipped_surrogate, clipped_surrogate_grad, combine_rewards, cross_entropy, extrinsic_returns,
    imitation_init, normalize_advantages, ppo_update, sample_sigma, tail_sums, train,
)


def test_tail_sum_example():
    assert tail_sums([0, 1, 2, 0])[0] == 3


@given(st.lists(st.integers(0, 50), min_size=1, max_size=60))
def test_tail_sum_recursion(occ):
    r = tail_sums(occ)
    assert r[-1] == 0
    for t in range(len(occ)):
        assert r[t] == r[t + 1] + occ[t]


@pytest.fixture(scope="module")
def s1():
    net = build_lattice(10, 10, seed=1)
    return net, all_pairs_shortest(net), generate_random_demand(net, 2, 0.3)


def test_extrinsic_returns_modes(s1):
    net, tt, demand = s1
    r = run_epoch(net, tt, demand, PolicyRouter(random_policy(net)), 20, 2000, 0)
    b = r.trajectory
    fleet = extrinsic_returns(b, "fleet")
    taxi = extrinsic_returns(b, "taxi")
    assert np.all(taxi >= 0) and np.all(taxi <= b.horizon - b.times)
    assert np.all(fleet >= taxi)
    assert fleet[0] == tail_sums(b.occupancy)[b.times[0]]
    with pytest.raises(ValueError):
        extrinsic_returns(b, "team")


def test_two_point_sigma():
    assert sample_sigma([1.0, 3.0]) == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert sample_sigma([5.0]) == 0.0


@given(st.lists(st.lists(st.floats(-100, 100), min_size=1, max_size=10), min_size=1, max_size=5))
def test_running_sigma_matches_pooled(chunks):
    acc = RunningSigma()
    for c in chunks:
        acc.update(c)
    flat = np.concatenate([np.asarray(c, float) for c in chunks])
    expect = flat.std(ddof=1) if flat.size > 1 else 0.0
    assert acc.sigma == pytest.approx(expect, rel=1e-6, abs=1e-6)


def test_combine_rewards():
    assert np.allclose(combine_rewards([1.0, 2.0], [2.0, 4.0], 2.0), [2.0, 4.0])
    assert np.allclose(combine_rewards([1.0, 2.0], [2.0, 4.0], 0.0), [1.0, 2.0])


def test_adam_first_step_is_lr_sign():
    opt = Adam(3, 0.01)
    assert np.allclose(opt.step(np.array([5.0, -0.1, 0.0])), [0.01, -0.01, 0.0], atol=1e-6)


def test_value_table_and_advantages():
    v = ValueTable(3, lr=0.5)
    v.fit(np.array([0, 0, 1]), np.array([2.0, 4.0, 1.0]))
    assert v.V.tolist() == [3.0, 1.0, 0.0]
    v.fit(np.array([0]), np.array([5.0]))
    assert v.V[0] == 4.0
    adv = advantages(np.array([4.0, 4.0, 6.0]), np.array([0, 0, 0]), v, normalize=False)
    assert adv.tolist() == [0.0, 0.0, 2.0]
    n = normalize_advantages(np.array([1.0, 2.0, 3.0]))
    assert n.mean() == pytest.approx(0) and n.std() == pytest.approx(1)
    timed = ValueTable(1, with_time=True)
    rem = np.linspace(1, 0, 50)
    timed.fit(np.zeros(50, dtype=int), 3 * rem + 1, rem)
    assert timed.time_coef == pytest.approx(3.0)
    assert np.allclose(timed.predict(np.zeros(50, dtype=int), rem), 3 * rem + 1)


def _single_row():
    net = RoadNetwork.from_edges(2, [(0, 1, 1), (1, 0, 1)])
    return net


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_surrogate_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = _single_row()
    old = project_rows(rng.uniform(0.1, 1, 4), net, 0.05)
    theta = old * rng.uniform(0.85, 1.15, 4)
    slots = rng.integers(0, 2, 12)
    adv = rng.normal(size=12)
    ratio = theta[slots] / old[slots]
    # stay clear of the kinks where finite differences are meaningless
    if np.min(np.abs(np.abs(ratio - 1) - 0.1)) < 1e-3:
        return
    g = clipped_surrogate_grad(theta, old, slots, adv, 0.1)
    h = 1e-7
    for k in range(2):
        e = np.zeros(4)
        e[k] = h
        fd = (clipped_surrogate(theta + e, old, slots, adv, 0.1)
              - clipped_surrogate(theta - e, old, slots, adv, 0.1)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.001, 0.5))
def test_ppo_update_keeps_policy_valid(seed, lr):
    rng = np.random.default_rng(seed)
    net = build_lattice(3, 3, seed=0)
    policy = random_policy(net).floored()
    slots = rng.integers(0, len(net.indices), 200)
    adv = rng.normal(size=200) * 10
    new, _ = ppo_update(policy, slots, adv, TrainerConfig(learning_rate=lr))
    new.check()
    assert np.all(new.probs >= PROB_FLOOR * (1 - 1e-9))


def test_zero_advantage_is_fixed_point():
    net = build_lattice(3, 3, seed=0)
    policy = PolicyMatrix(net, project_rows(np.random.default_rng(1).random(len(net.indices)), net, PROB_FLOOR))
    slots = np.arange(len(net.indices))
    new, surrogate = ppo_update(policy, slots, np.zeros(slots.size), TrainerConfig(exploration=False))
    assert np.allclose(new.probs, policy.probs, atol=1e-15)
    assert surrogate == 0.0


def test_positive_advantage_raises_probability():
    net = build_lattice(2, 2, seed=0)
    policy = random_policy(net).floored()
    slot = net.indptr[0]
    new, _ = ppo_update(policy, np.array([slot]), np.array([1.0]), TrainerConfig())
    assert new.probs[slot] > policy.probs[slot]
    assert new.probs[slot] <= policy.probs[slot] * 1.1 + 0.01 * 10


def test_ppo_rejects_sub_floor_behaviour():
    net = build_lattice(2, 2, seed=0)
    probs = np.zeros(len(net.indices))
    probs[net.indptr[:-1]] = 1.0
    with pytest.raises(TrainingError):
        ppo_update(PolicyMatrix(net, probs), np.array([1]), np.array([1.0]), TrainerConfig())


def test_imitation_random_target():
    net = build_lattice(4, 4, seed=0)
    target = random_policy(net)
    learned, info = imitation_init(target, init=PolicyMatrix(net, project_rows(
        np.random.default_rng(0).random(len(net.indices)), net, 0.01)))
    assert learned.total_variation(target).max() <= 0.01
    entropy = -np.sum(target.probs * np.log(target.probs))
    assert info["loss"] == pytest.approx(entropy, rel=1e-3)


def test_imitation_deterministic_row_respects_floor():
    net = RoadNetwork.from_edges(2, [(0, 1, 1), (1, 0, 1)])
    target = PolicyMatrix(net, np.array([1.0, 0.0, 0.5, 0.5]))
    learned, _ = imitation_init(target)
    assert learned.row(0)[0] == pytest.approx(1 - PROB_FLOOR, abs=1e-9)
    assert learned.row(0)[1] == pytest.approx(PROB_FLOOR, abs=1e-9)


def test_imitation_of_effective_policy(s1):
    net, tt, demand = s1
    router = variant_router("non-committed-normalized", tt, demand.g)
    target, visited, _ = extract_effective_policy(net, tt, demand, router, 20, 20_000, 0)
    learned, _ = imitation_init(target)
    assert learned.total_variation(target).max() <= 0.01
    assert cross_entropy(target, learned.probs) < cross_entropy(target, random_policy(net).probs)
    # paired first-epoch evaluation
    eff = run_epoch(net, tt, demand, PolicyRouter(target), 20, 10_000, [0, 2, 0]).average_reward
    init = run_epoch(net, tt, demand, PolicyRouter(learned), 20, 10_000, [0, 2, 0]).average_reward
    assert init >= 0.9 * eff


def test_rnd_two_pair_experiment():
    rnd = RndPair(2, 16, seed=1)
    before = rnd.bonus(np.array([0, 1]))
    for _ in range(100):
        rnd.train(np.array([0]))
    after = rnd.bonus(np.array([0, 1]))
    assert after[0] == pytest.approx(before[0] * 0.98 ** 200)
    assert after[1] == before[1]
    twin = RndPair(2, 16, seed=1)
    twin.predictor[:] = twin.target
    assert np.all(twin.bonus(np.array([0, 1])) == 0)


def test_rnd_bonus_decreases_with_visits():
    rnd = RndPair(40, 16, seed=0, lr=0.01)
    rng = np.random.default_rng(0)
    weights = 1.0 / np.arange(1, 41) ** 1.5
    counts = np.zeros(40)
    for _ in range(50):
        slots = rng.choice(40, size=2000, p=weights / weights.sum())
        counts += np.bincount(slots, minlength=40)
        rnd.train(slots)
    bonus = rnd.bonus(np.arange(40))
    order = np.argsort(counts)
    assert bonus[order[-4:]].mean() < bonus[order[:4]].mean()


def test_trainer_rnd_deciles(s1):
    net, tt, demand = s1
    cfg = TrainerConfig(epochs=50, horizon=1000, taxi_count=20, seed=3)
    trainer = Trainer(cfg, net, tt, demand)
    trainer.run()
    counts = trainer.slot_counts
    bonus = trainer.rnd.bonus(np.arange(counts.size))
    order = np.argsort(counts, kind="stable")
    k = counts.size // 10
    assert bonus[order[-k:]].mean() < bonus[order[:k]].mean()


def test_zero_epochs_returns_init(s1):
    net, tt, demand = s1
    init = PolicyMatrix(net, project_rows(np.random.default_rng(0).random(len(net.indices)), net))
    curve, policy = train(TrainerConfig(epochs=0), net, tt, demand, init)
    assert curve == [] and policy is init


def test_training_is_deterministic_and_sigma_modes(s1):
    net, tt, demand = s1
    cfg = TrainerConfig(epochs=3, horizon=1000, seed=5)
    a, pa = train(cfg, net, tt, demand)
    b, pb = train(cfg, net, tt, demand)
    assert a == b and np.array_equal(pa.probs, pb.probs)
    c, _ = train(TrainerConfig(epochs=3, horizon=1000, seed=5, sigma_mode="epoch"), net, tt, demand)
    assert [r["reward_avg"] for r in c][:1] == [r["reward_avg"] for r in a][:1]
    d, pd = train(TrainerConfig(epochs=3, horizon=1000, seed=5, exploration=False), net, tt, demand)
    assert all(r["intrinsic_mean"] == 0.0 for r in d)
    pd.check()


def test_trainer_checkpoint(s1, tmp_path):
    net, tt, demand = s1
    trainer = Trainer(TrainerConfig(epochs=2, horizon=500), net, tt, demand)
    trainer.run()
    out = trainer.save(tmp_path)
    assert out.name == "epoch-00002"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.txt", "policy.txt", "rnd_predictor.txt", "rnd_target.txt", "value.txt"]


@pytest.mark.parametrize("kwargs", [{"clip": 0}, {"learning_rate": -1}, {"gamma": 0.9},
                                    {"sigma_mode": "x"}, {"return_mode": "x"}, {"baseline": "x"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainerConfig(**kwargs)
