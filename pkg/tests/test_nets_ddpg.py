import math

import numpy as np
import pytest

from pinchfl.ddpg import (DDPGAgent, Hyperparams, ReplayBuffer, RoundEnv, reward, reward_from_batch,
                          train, write_reward_csv)
from pinchfl.nets import Adam, DenseNet, soft_update
from pinchfl.noma import RoundDecision, RoundInstance, evaluate_round
from pinchfl.oracle import BaselineKind
from pinchfl.topology import NetworkGeometry, place_clients

import reference as ref


def small_instance(seed=3):
    geo = NetworkGeometry()
    cl = place_clients(6, geo, seed)
    return RoundInstance(geo, cl[:3], cl[3:])


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


def net_param_fd(net, loss_of_output, x):
    """Analytic vs finite-difference gradient of loss(net(x)) w.r.t. all params."""
    out, cache = net.forward(x)
    grads, _ = net.backward(cache, loss_of_output(out, grad=True))
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = net.get_flat()

    def f(theta):
        net.set_flat(np.asarray(theta))
        return loss_of_output(net(x))

    numeric = ref.central_diff(f, list(flat), eps=1e-6)
    net.set_flat(flat)
    return analytic, np.array(numeric)


def test_dense_net_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for trial in range(5):
        net = DenseNet([4, 6, 5, 3], ["tanh", "tanh", "tanh"], rng, out_scale=0.5)
        x = rng.standard_normal((7, 4))
        w = rng.standard_normal((7, 3))

        def loss(out, grad=False):
            return w if grad else float(np.sum(w * out))

        a, n = net_param_fd(net, loss, x)
        assert rel_err(a, n) < 1e-4


def test_soft_update_examples():
    rng = np.random.default_rng(0)
    online = DenseNet([2, 3, 1], ["relu", "linear"], rng)
    target = online.copy()
    target.set_flat(np.zeros_like(online.get_flat()))
    online.set_flat(np.full_like(online.get_flat(), 2.0))
    soft_update(online, target, 0.5)
    assert np.all(target.get_flat() == 1.0)
    before = target.get_flat()
    soft_update(online, target, 0.0)
    assert np.array_equal(target.get_flat(), before)
    soft_update(online, target, 1.0)
    assert np.array_equal(target.get_flat(), online.get_flat())
    with pytest.raises(ValueError):
        soft_update(online, DenseNet([2, 4, 1], ["relu", "linear"], rng), 0.5)


def test_soft_update_contraction():
    rng = np.random.default_rng(1)
    online = DenseNet([3, 4, 2], ["relu", "tanh"], rng)
    target = DenseNet([3, 4, 2], ["relu", "tanh"], rng)
    gap = target.get_flat() - online.get_flat()
    soft_update(online, target, 0.3)
    assert np.allclose(target.get_flat() - online.get_flat(), 0.7 * gap, rtol=1e-12, atol=1e-15)


def test_adam_minimises_quadratic():
    p = np.array([3.0, -2.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2 * (p - np.array([1.0, 0.5]))])
    assert p == pytest.approx([1.0, 0.5], abs=1e-3)


def make_agent(n=2, seed=0, **kw):
    hyper = Hyperparams(hidden=(8, 8), **kw)
    return DDPGAgent(2 * n, 2 * n + 1, hyper, np.random.default_rng(seed)), hyper


def random_batch(agent, rng, z=5):
    s = rng.uniform(0, 1, (z, agent.state_dim))
    a = rng.uniform(-1, 1, (z, agent.action_dim))
    return s, a, rng.standard_normal(z), rng.uniform(0, 1, (z, agent.state_dim)), np.ones(z)


def test_critic_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for seed in range(5):
        agent, _ = make_agent(seed=seed)
        agent.critic.set_flat(agent.critic.get_flat() + 0.3 * rng.standard_normal(
            agent.critic.get_flat().size))
        batch = random_batch(agent, rng)
        _, grads = agent.critic_loss_and_grads(*batch)
        analytic = np.concatenate([g.ravel() for g in grads])
        flat = agent.critic.get_flat()

        def f(theta):
            agent.critic.set_flat(np.asarray(theta))
            return agent.critic_loss_and_grads(*batch)[0]

        numeric = ref.central_diff(f, list(flat))
        agent.critic.set_flat(flat)
        assert rel_err(analytic, numeric) < 1e-4


def test_actor_gradient_through_critic_matches_finite_differences():
    rng = np.random.default_rng(3)
    for seed in range(5):
        agent, _ = make_agent(seed=seed)
        for net in (agent.actor, agent.critic):
            net.set_flat(net.get_flat() + 0.3 * rng.standard_normal(net.get_flat().size))
        s = rng.uniform(0, 1, (6, agent.state_dim))
        _, grads = agent.actor_objective_and_grads(s)
        analytic = np.concatenate([g.ravel() for g in grads])
        flat = agent.actor.get_flat()

        def f(theta):
            agent.actor.set_flat(np.asarray(theta))
            return agent.actor_objective_and_grads(s)[0]

        numeric = ref.central_diff(f, list(flat))
        agent.actor.set_flat(flat)
        assert rel_err(analytic, numeric) < 1e-4


def test_critic_loss_single_sample_by_hand():
    agent, _ = make_agent()
    s, a, r, s2, done = random_batch(agent, np.random.default_rng(4), z=1)
    q = agent.q_value(s, a)[0]
    loss, _ = agent.critic_loss_and_grads(s, a, r, s2, done)
    assert loss == pytest.approx((r[0] - q) ** 2, rel=1e-12)
    # Target equal to the prediction gives zero loss and zero gradient.
    loss, grads = agent.critic_loss_and_grads(s, a, np.array([q]), s2, done)
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert all(np.allclose(g, 0.0) for g in grads)


def test_actor_gradient_zero_when_critic_ignores_action():
    agent, _ = make_agent()
    w0 = agent.critic.weights[0]
    w0[agent.state_dim:, :] = 0.0
    _, grads = agent.actor_objective_and_grads(np.random.default_rng(5).uniform(0, 1, (4, 4)))
    assert all(np.all(g == 0.0) for g in grads)


def test_actor_climbs_toy_critic_to_optimum():
    # Critic fixed at Q(s, a) = -(a - a*)^2 via a hand-built quadratic.
    rng = np.random.default_rng(6)
    actor = DenseNet([1, 8, 1], ["relu", "tanh"], rng)
    opt = Adam(actor.params, 1e-2)
    s = np.ones((16, 1))
    target = 0.4
    for _ in range(1500):
        a, cache = actor.forward(s)
        grads, _ = actor.backward(cache, -2.0 * (a - target) / len(a))
        opt.step([-g for g in grads])
    assert actor(s)[0, 0] == pytest.approx(target, abs=1e-3)


def test_action_box_corners():
    inst = small_instance()
    env = RoundEnv(inst, BaselineKind.optimized())
    up = env.to_decision(np.ones(env.action_dim))
    assert up.x_p == 30.0 and np.all(up.power == 0.2) and np.all(up.freq == 2e9)
    down = env.to_decision(-np.ones(env.action_dim))
    assert down.x_p == 0.0 and np.all(down.power == 0.0) and np.allclose(down.freq, 2e7)


def test_fixed_and_without_schemes_drop_placement_action():
    inst = small_instance()
    assert RoundEnv(inst, BaselineKind.fixed(12.0)).action_dim == 12
    assert RoundEnv(inst, BaselineKind.fixed(12.0)).to_decision(np.zeros(12)).x_p == 12.0
    wo = RoundInstance(inst.geometry, inst.conventional, inst.pinching, use_pinching=False)
    assert RoundEnv(wo, BaselineKind.without_pinching()).action_dim == 12


def test_act_is_deterministic_without_noise_and_always_in_box():
    agent, _ = make_agent(n=3)
    s = np.linspace(0, 1, 6)
    assert np.array_equal(agent.act(s), agent.act(s))
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = agent.act(s, 5.0, rng)
        assert np.all(np.abs(a) <= 1.0)


def test_reward_examples():
    inst = small_instance()
    d = RoundDecision(10.0, np.full(6, 0.2), np.full(6, 2e9))
    m = evaluate_round(inst, d)
    assert m.energy_ok.all()
    assert reward(m, 1.0, 1.0) == pytest.approx(-m.round_latency + 6)
    # Starve one client so it never finishes: one sign flips, T is capped.
    m2 = evaluate_round(inst, RoundDecision(10.0, np.array([0.2, 0.2, 0.0, 0.2, 0.2, 0.2]),
                                            np.full(6, 2e9)))
    assert reward(m2, 1.0, 1.0, t_cap=100.0) == pytest.approx(-100.0 + 4)
    m.t_cmp[:] = 0.0
    m.t_com[:] = 0.0
    assert reward(m, 1.0, 2.0) == 12.0


def test_batch_reward_matches_scalar_reward():
    inst = small_instance()
    env = RoundEnv(inst)
    rng = np.random.default_rng(1)
    raw = rng.uniform(-1, 1, (20, env.action_dim))
    r, _ = env.evaluate(raw)
    for row, value in zip(raw, r):
        assert value == pytest.approx(reward(evaluate_round(inst, env.to_decision(row))), rel=1e-12)


def test_replay_buffer_evicts_oldest_and_samples_without_replacement():
    buf = ReplayBuffer(1, 1, 4)
    for i in range(6):
        buf.add([i], [i], float(i), [i], True)
    assert len(buf) == 4
    assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0, 5.0]
    s, a, r, s2, d = buf.sample(4, np.random.default_rng(0))
    assert sorted(r.tolist()) == [2.0, 3.0, 4.0, 5.0]


def test_zero_steps_returns_initial_nets():
    inst = small_instance()
    res = train(inst, Hyperparams(total_steps=0), seed=1)
    fresh = DDPGAgent(12, 13, Hyperparams(), np.random.default_rng(1))
    assert res.episodes == [] and res.best_decision is None
    assert res.agent.actor.get_flat().size == fresh.actor.get_flat().size


def test_training_is_bit_deterministic():
    inst = small_instance()
    h = Hyperparams(total_steps=600, warmup_steps=200)
    a, b = train(inst, h, seed=9), train(inst, h, seed=9)
    assert a.rewards == b.rewards
    assert np.array_equal(a.agent.actor.get_flat(), b.agent.actor.get_flat())


def test_smoke_run_learns():
    inst = small_instance()
    res = train(inst, Hyperparams(total_steps=5000), seed=0)
    r = res.rewards
    assert np.mean(r[-100:]) > np.mean(r[:100])
    assert res.best_feasible and math.isfinite(res.best_t)


def test_checkpoint_round_trip(tmp_path):
    inst = small_instance()
    res = train(inst, Hyperparams(total_steps=300, warmup_steps=100), seed=2)
    path = tmp_path / "agent.npz"
    res.agent.save(path, np.random.default_rng(5))
    agent, rng_state = DDPGAgent.load(path)
    assert np.array_equal(agent.actor.get_flat(), res.agent.actor.get_flat())
    assert np.array_equal(agent.critic_target.get_flat(), res.agent.critic_target.get_flat())
    assert agent.actor_opt.t == res.agent.actor_opt.t
    assert rng_state == np.random.default_rng(5).bit_generator.state
    csv_path = tmp_path / "rewards.csv"
    write_reward_csv(csv_path, res.episodes)
    assert csv_path.read_text().splitlines()[0] == "episode,mean_reward,best_T,energy_violations"


def test_hyperparam_validation():
    with pytest.raises(ValueError):
        Hyperparams(discount=1.0)
    with pytest.raises(ValueError):
        Hyperparams(batch_size=10, buffer_size=5)
