import itertools

import numpy as np
import pytest

from lmdc.ddpg import (AgentParams, Minibatch, OrnsteinUhlenbeck, ReplayBuffer, Transition, actor_update,
                       critic_loss_grad, critic_update, linear_sigma, policy_objective_grad, push, sample,
                       select_action, soft_update, td_targets)
from lmdc.neuralnet import GradientBundle, Mlp, OptimizerState, numeric_gradient, relative_error


def transition(i, terminal=False, state_dim=15):
    return Transition(np.full(state_dim, float(i)), np.full(3, 0.1 * i), float(i), np.full(state_dim, i + 0.5),
                      terminal)


def constant_critic(value, state_dim=15):
    c = Mlp.zeros([state_dim + 3, 8, 1])
    c.biases[-1][0] = value
    return c


def random_batch(rng, k=16, state_dim=15):
    return Minibatch(rng.normal(size=(k, state_dim)), rng.uniform(-1, 1, (k, 3)), rng.normal(size=k),
                     rng.normal(size=(k, state_dim)), rng.random(k) < 0.2)


class TestReplayBuffer:
    def test_push_once(self):
        buf = ReplayBuffer(10)
        push(buf, transition(0))
        assert len(buf) == 1

    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(2)
        for i in range(3):
            buf.push(transition(i))
        assert len(buf) == 2
        assert [buf[j].reward for j in range(2)] == [1.0, 2.0]

    def test_all_retrievable(self):
        buf = ReplayBuffer(50)
        for i in range(50):
            buf.push(transition(i, terminal=i % 7 == 0))
        for i in range(50):
            t = buf[i]
            assert t.reward == i and t.terminal == (i % 7 == 0)
            np.testing.assert_array_equal(t.state, np.full(15, float(i)))

    def test_sample_whole_buffer(self):
        buf = ReplayBuffer(8)
        for i in range(5):
            buf.push(transition(i))
        batch = sample(buf, 5, np.random.default_rng(0))
        assert sorted(batch.rewards) == [0, 1, 2, 3, 4]

    def test_sample_deterministic(self):
        buf = ReplayBuffer(100)
        for i in range(100):
            buf.push(transition(i))
        a = buf.sample(10, np.random.default_rng(3)).indices
        b = buf.sample(10, np.random.default_rng(3)).indices
        np.testing.assert_array_equal(a, b)
        assert len(set(a.tolist())) == 10

    def test_sample_too_many_rejected(self):
        buf = ReplayBuffer(10)
        buf.push(transition(0))
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))

    def test_pairs_uniform(self):
        buf = ReplayBuffer(4)
        for i in range(4):
            buf.push(transition(i))
        rng = np.random.default_rng(2024)
        n = 100_000
        counts = dict.fromkeys(itertools.combinations(range(4), 2), 0)
        for _ in range(n):
            i, j = sorted(buf.sample(2, rng).indices.tolist())
            counts[(i, j)] += 1
        p = 1 / 6
        sigma = np.sqrt(n * p * (1 - p))
        for c in counts.values():
            assert abs(c - n * p) <= 3 * sigma

    def test_minibatch_round_trip(self):
        ts = [transition(i, terminal=i == 2) for i in range(4)]
        back = Minibatch.from_transitions(ts).transitions()
        assert [t.reward for t in back] == [0, 1, 2, 3] and [t.terminal for t in back] == [False, False, True, False]


class TestSelectAction:
    actor = Mlp.init([15, 32, 3], np.random.default_rng(0), output_activation="tanh")

    def test_greedy_is_forward(self):
        x = np.random.default_rng(1).normal(size=15)
        np.testing.assert_array_equal(select_action(self.actor, x, 0.0), np.clip(self.actor(x), -1, 1))

    def test_greedy_draws_nothing(self):
        rng = np.random.default_rng(5)
        select_action(self.actor, np.zeros(15), 0.0, rng)
        assert rng.random() == np.random.default_rng(5).random()

    def test_large_noise_clamped(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            u = select_action(self.actor, rng.normal(size=15), 10.0, rng)
            assert np.all(np.abs(u) <= 1)

    def test_reproducible(self):
        x = np.ones(15)
        a = select_action(self.actor, x, 0.3, np.random.default_rng(9))
        b = select_action(self.actor, x, 0.3, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            select_action(self.actor, np.ones(15), -0.1)

    def test_ou_noise_is_correlated(self):
        ou = OrnsteinUhlenbeck()
        rng = np.random.default_rng(0)
        xs = np.array([ou(0.3, rng) for _ in range(5000)])
        lag1 = np.corrcoef(xs[:-1, 0], xs[1:, 0])[0, 1]
        assert lag1 > 0.7
        u = select_action(self.actor, np.ones(15), 0.3, rng, ou)
        assert np.all(np.abs(u) <= 1)


def test_linear_sigma_schedule():
    assert linear_sigma(0, 0.3, 0.05, 100) == 0.3
    assert linear_sigma(50, 0.3, 0.05, 100) == pytest.approx(0.175)
    assert linear_sigma(100, 0.3, 0.05, 100) == 0.05
    assert linear_sigma(10_000, 0.3, 0.05, 100) == 0.05


class TestTdTargets:
    actor = Mlp.init([15, 16, 3], np.random.default_rng(0), output_activation="tanh")
    critic = constant_critic(2.0)

    def test_terminal_drops_bootstrap(self):
        b = Minibatch.from_transitions([Transition(np.zeros(15), np.zeros(3), -1.0, np.zeros(15), True)])
        assert td_targets(b, self.actor, self.critic, 0.9).tolist() == [-1.0]

    def test_non_terminal(self):
        b = Minibatch.from_transitions([Transition(np.zeros(15), np.zeros(3), 0.0, np.ones(15), False)])
        assert td_targets(b, self.actor, self.critic, 0.9).tolist() == [0.9 * 2.0]

    def test_batch(self):
        b = Minibatch.from_transitions([Transition(np.zeros(15), np.zeros(3), -1.0, np.zeros(15), True),
                                        Transition(np.zeros(15), np.zeros(3), 0.0, np.ones(15), False)])
        assert td_targets(b, self.actor, self.critic, 0.9).tolist() == [-1.0, 0.9 * 2.0]
        assert 0.9 * 2.0 == 1.8


def kink_margin(net, X):
    """Smallest |pre-activation| of any hidden ReLU unit over the batch."""
    _, (pre, _) = net.forward_cached(X)
    return min(np.abs(z).min() for z in pre[:-1])


def smooth_batch(rng, net, k, margin=1e-3):
    """Random batch with no hidden unit near its ReLU kink, where finite differences are invalid."""
    while True:
        batch = random_batch(rng, k)
        if kink_margin(net, np.concatenate([batch.states, batch.actions], 1)) > margin:
            return batch


class TestCriticUpdate:
    def test_zero_error_leaves_parameters(self):
        rng = np.random.default_rng(1)
        critic = Mlp.init([18, 16, 1], rng)
        batch = random_batch(rng)
        targets = critic(np.concatenate([batch.states, batch.actions], 1))[:, 0]
        before = critic.flatten()
        assert critic_update(critic, batch, targets, OptimizerState("sgd", 0.1)) == 0.0
        np.testing.assert_array_equal(critic.flatten(), before)

    def test_half_squared_error(self):
        critic = Mlp.zeros([18, 4, 1])
        batch = Minibatch.from_transitions([Transition(np.zeros(15), np.zeros(3), 0.0, np.zeros(15), False)])
        assert critic_update(critic, batch, [2.0], OptimizerState("sgd", 0.1)) == 2.0

    def test_mean_normalized(self):
        critic = Mlp.zeros([18, 4, 1])
        ts = [Transition(np.zeros(15), np.zeros(3), 0.0, np.zeros(15), False)] * 4
        loss, _ = critic_loss_grad(critic, Minibatch.from_transitions(ts), np.array([2.0, 2.0, 0.0, 0.0]))
        assert loss == (0.5 * (4 + 4)) / 4

    def test_uses_stored_actions(self):
        rng = np.random.default_rng(2)
        critic = Mlp.init([18, 16, 1], rng)
        batch = random_batch(rng, 4)
        loss, _ = critic_loss_grad(critic, batch, np.zeros(4))
        q = critic(np.concatenate([batch.states, batch.actions], 1))[:, 0]
        assert loss == pytest.approx(0.5 * np.mean(q ** 2), rel=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        critic = Mlp.init([18, 128, 128, 1], rng)
        batch = smooth_batch(rng, critic, 8)
        y = rng.normal(size=8)
        _, g = critic_loss_grad(critic, batch, y)
        probe = critic.clone()

        def f(theta):
            probe.load_flat(theta)
            return critic_loss_grad(probe, batch, y)[0]

        assert relative_error(g.flatten(), numeric_gradient(f, critic.flatten())) < 1e-4

    def test_target_length_checked(self):
        with pytest.raises(ValueError):
            critic_update(Mlp.zeros([18, 4, 1]), random_batch(np.random.default_rng(0), 3), [1.0],
                          OptimizerState("sgd", 0.1))


class QuadraticCritic:
    """Q(x, u) = -(u - 0.5)^2 for a one-dimensional action; stands in for a critic network."""

    def forward_cached(self, X):
        u = X[:, -1:]
        return -(u - 0.5) ** 2, u

    def backward_cached(self, cache, upstream, need_input=True):
        u = cache
        dx = np.zeros((len(u), 2))
        dx[:, 1:] = upstream * (-2.0 * (u - 0.5))
        return GradientBundle([], [], dx)


class TestActorUpdate:
    def test_constant_critic_leaves_actor(self):
        rng = np.random.default_rng(0)
        actor = Mlp.init([15, 16, 3], rng, output_activation="tanh")
        critic = constant_critic(3.0)
        before = actor.flatten()
        loss = actor_update(actor, critic, random_batch(rng), OptimizerState("sgd", 0.1))
        assert loss == -3.0
        np.testing.assert_array_equal(actor.flatten(), before)

    def test_loss_is_negative_mean_q(self):
        rng = np.random.default_rng(1)
        actor = Mlp.init([15, 16, 3], rng, output_activation="tanh")
        critic = Mlp.init([18, 16, 1], rng)
        batch = random_batch(rng)
        q = critic(np.concatenate([batch.states, actor(batch.states)], 1))
        assert actor_update(actor, critic, batch, OptimizerState("sgd", 1e-3)) == pytest.approx(-q.mean(), rel=1e-14)

    def test_critic_untouched(self):
        rng = np.random.default_rng(2)
        actor = Mlp.init([15, 16, 3], rng, output_activation="tanh")
        critic = Mlp.init([18, 16, 1], rng)
        before = critic.flatten()
        actor_update(actor, critic, random_batch(rng), OptimizerState("adam", 1e-3))
        np.testing.assert_array_equal(critic.flatten(), before)

    def test_converges_to_quadratic_maximizer(self):
        rng = np.random.default_rng(3)
        actor = Mlp.init([1, 1], rng, output_activation="tanh")
        states = rng.uniform(-1, 1, size=(32, 1))
        batch = Minibatch(states, np.zeros((32, 1)), np.zeros(32), states, np.zeros(32, dtype=bool))
        opt = OptimizerState("adam", 1e-2)
        critic = QuadraticCritic()
        for n in range(1, 5001):
            actor_update(actor, critic, batch, opt)
            if np.max(np.abs(actor(states) - 0.5)) < 1e-3:
                break
        assert np.max(np.abs(actor(states) - 0.5)) < 1e-3 and n <= 5000

    def test_composed_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        actor = Mlp.init([15, 128, 128, 3], rng, output_activation="tanh")
        critic = Mlp.init([18, 128, 128, 1], rng)
        states = rng.normal(size=(4, 15))
        _, g = policy_objective_grad(actor, critic, states)
        probe = actor.clone()

        def f(theta):
            probe.load_flat(theta)
            return float(critic(np.concatenate([states, probe(states)], 1)).mean())

        assert relative_error(g.flatten(), numeric_gradient(f, actor.flatten())) < 1e-4


class TestSoftUpdate:
    def test_tau_one_copies(self):
        rng = np.random.default_rng(0)
        a, b = Mlp.init([4, 5, 2], rng), Mlp.init([4, 5, 2], rng)
        soft_update(a, b, 1.0)
        np.testing.assert_array_equal(a.flatten(), b.flatten())

    def test_small_tau(self):
        target, online = Mlp.zeros([1, 1]), Mlp.zeros([1, 1])
        online.weights[0][0, 0] = 1.0
        soft_update(target, online, 0.005)
        assert target.weights[0][0, 0] == 0.005

    def test_geometric_closed_form(self):
        target, online = Mlp.zeros([2, 3]), Mlp.zeros([2, 3])
        for p in online.params:
            p[...] = 1.0
        for _ in range(200):
            soft_update(target, online, 0.005)
        np.testing.assert_allclose(target.flatten(), 1 - (1 - 0.005) ** 200, rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            soft_update(Mlp.zeros([2, 3]), Mlp.zeros([2, 4]), 0.5)

    @pytest.mark.parametrize("tau", [0.0, 1.5])
    def test_bad_tau_rejected(self, tau):
        with pytest.raises(ValueError):
            soft_update(Mlp.zeros([2, 3]), Mlp.zeros([2, 3]), tau)


class TestAgent:
    def test_targets_start_equal(self):
        agent = AgentParams.create(np.random.default_rng(0))
        np.testing.assert_array_equal(agent.actor.flatten(), agent.target_actor.flatten())
        np.testing.assert_array_equal(agent.critic.flatten(), agent.target_critic.flatten())
        assert agent.actor.layer_dims == [15, 128, 128, 3] and agent.critic.layer_dims == [18, 128, 128, 1]

    @pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": 0.0}, {"tau": 0.0}])
    def test_rejects_bad_coefficients(self, kw):
        with pytest.raises(ValueError):
            AgentParams.create(np.random.default_rng(0), **kw)

    def test_update_deterministic_and_moves_targets_softly(self):
        def run():
            rng = np.random.default_rng(1)
            agent = AgentParams.create(rng, hidden=(32, 32))
            batch = random_batch(rng, 32)
            losses = [agent.update(batch) for _ in range(3)]
            return agent, losses

        (a, la), (b, lb) = run(), run()
        assert la == lb
        for n in a.networks():
            np.testing.assert_array_equal(a.networks()[n].flatten(), b.networks()[n].flatten())
        assert not np.array_equal(a.target_actor.flatten(), a.actor.flatten())

    def test_td_targets_ignore_online_networks(self):
        rng = np.random.default_rng(2)
        agent = AgentParams.create(rng, hidden=(16,))
        batch = random_batch(rng)
        y = td_targets(batch, agent.target_actor, agent.target_critic, agent.gamma)
        for p in agent.actor.params + agent.critic.params:
            p[...] = 123.0
        np.testing.assert_array_equal(td_targets(batch, agent.target_actor, agent.target_critic, agent.gamma), y)

    def test_critic_update_leaves_actor(self):
        rng = np.random.default_rng(3)
        agent = AgentParams.create(rng, hidden=(16,))
        before = agent.actor.flatten()
        batch = random_batch(rng)
        critic_update(agent.critic, batch, np.ones(len(batch)), agent.critic_opt)
        np.testing.assert_array_equal(agent.actor.flatten(), before)
