"""Policy distribution math, GAE, clipped surrogate, and the update loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentsr.diffusion import make_denoiser, make_schedule
from latentsr.env import EnvConfig, SuperResEnv, Trajectory
from latentsr.errors import InvalidInputError
from latentsr.nn import AdamOptimizer
from latentsr.ppo import (
    ActorCritic,
    GaussianPolicy,
    PpoConfig,
    clipped_surrogate,
    gae,
    gaussian_log_prob,
    policy_sample,
    ppo_update,
    smoothed_series,
    train,
)
from latentsr.rng import Xoshiro256, mix_seed
from latentsr.scenes import build_corpus

FEAT = np.array([1.0, 0.0, 0.0, 0.0])


class _ZeroNoiseRng:
    def fill_normal(self, n):
        return np.zeros(n)


def _bandit_trajectory(agent, rng, reward_fn):
    u, lp = agent.sample_raw(FEAT, rng)
    return Trajectory(
        features=FEAT[None, :],
        raw_actions=u[None, :],
        log_probs=np.array([lp]),
        values=np.array([agent.value(FEAT)]),
        rewards=np.array([reward_fn(u)]),
        dones=np.array([True]),
    )


def _collect(agent, n, rng, reward_fn):
    return [_bandit_trajectory(agent, rng, reward_fn) for _ in range(n)]


def _bandit_cfg(seed, lr=0.01):
    return PpoConfig(
        learning_rate=lr,
        batch_size=64,
        update_epochs=4,
        policy_hidden=(16,),
        value_hidden=(16,),
        seed=seed,
        stop_bias_init=0.0,
    )


def _quadratic_reward(u):
    return -(math.tanh(u[0]) - 0.7) ** 2


class TestPolicySample:
    def test_vanishing_std_gives_squashed_mean(self):
        # sigma = exp(-4) ~ 0.018, so every draw sits within a few centi-units
        # of tanh(mean) and the average lands right on it
        policy = GaussianPolicy(4, hidden=(8,), seed=1, log_std_init=-4.0)
        want = np.tanh(policy.mean(FEAT))
        rng = Xoshiro256(2)
        draws = []
        for _ in range(50):
            action, _ = policy_sample(policy, FEAT, rng)
            vec = np.array([action.mean_shift, action.log_scale, action.stop_gate])
            assert np.all(np.abs(vec - want) < 0.08)
            draws.append(vec)
        assert np.allclose(np.mean(draws, axis=0), want, atol=0.01)

    def test_log_prob_at_mean_unit_std(self):
        policy = GaussianPolicy(4, hidden=(8,), seed=3, log_std_init=0.0)
        _, lp = policy.sample_raw(FEAT, _ZeroNoiseRng())
        assert lp == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-12)

    def test_gaussian_log_prob_formula(self):
        m = np.array([0.2, -0.4, 0.9])
        assert gaussian_log_prob(m, m, np.zeros(3)) == pytest.approx(-1.5 * math.log(2 * math.pi))
        # one-sigma deviation in one dim adds -0.5
        u = m + np.array([1.0, 0.0, 0.0])
        assert gaussian_log_prob(u, m, np.zeros(3)) == pytest.approx(
            -1.5 * math.log(2 * math.pi) - 0.5
        )

    def test_fixed_rng_identical_samples(self):
        policy = GaussianPolicy(4, hidden=(8,), seed=4)
        a, lpa = policy.sample_raw(FEAT, Xoshiro256(9))
        b, lpb = policy.sample_raw(FEAT, Xoshiro256(9))
        assert np.array_equal(a, b) and lpa == lpb

    def test_log_std_clamped(self):
        policy = GaussianPolicy(4, hidden=(8,), seed=5, log_std_init=-9.0)
        assert np.all(policy.log_std() == -4.0)
        policy.params["log_std"][:] = 3.0
        assert np.all(policy.log_std() == 1.0)


class TestGae:
    def test_single_step(self):
        adv, ret = gae([1.0], [0.0, 0.0], 0.99, 0.95)
        assert adv.tolist() == [1.0]
        assert ret.tolist() == [1.0]

    def test_two_step_hand_recursion(self):
        adv, ret = gae([0.0, 1.0], [0.0, 0.0, 0.0], 0.99, 0.95)
        assert adv[1] == pytest.approx(1.0)
        assert adv[0] == pytest.approx(0.99 * 0.95, abs=1e-12)
        assert np.allclose(ret, adv)

    def test_all_zero(self):
        adv, ret = gae(np.zeros(5), np.zeros(6), 0.99, 0.95)
        assert np.all(adv == 0.0) and np.all(ret == 0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            gae([1.0, 2.0], [0.0, 0.0], 0.99, 0.95)

    @given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60)
    def test_matches_bruteforce_double_loop(self, length, seed):
        rng = Xoshiro256(seed)
        rewards = rng.normal_array(length)
        values = rng.normal_array(length + 1)
        gamma, lam = 0.99, 0.95
        adv, ret = gae(rewards, values, gamma, lam)
        deltas = rewards + gamma * values[1:] - values[:-1]
        brute = np.array(
            [sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, length)) for t in range(length)]
        )
        assert np.allclose(adv, brute, atol=1e-12)
        assert np.allclose(ret, brute + values[:-1], atol=1e-12)


class TestClippedSurrogate:
    def test_unit_ratio_passes_through(self):
        assert clipped_surrogate(1.0, 2.0, 0.2) == 2.0

    def test_positive_advantage_clips_above(self):
        assert clipped_surrogate(1.5, 2.0, 0.2) == pytest.approx(2.4)

    def test_negative_advantage_clips_below(self):
        assert clipped_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)

    def test_vectorized(self):
        out = clipped_surrogate(np.array([1.0, 1.5, 0.5]), np.array([2.0, 2.0, -1.0]), 0.2)
        assert np.allclose(out, [2.0, 2.4, -0.8])

    @given(st.floats(min_value=-5, max_value=5), st.floats(min_value=0.01, max_value=0.5))
    @settings(max_examples=100)
    def test_unit_ratio_identity_for_all_advantages(self, adv, clip):
        assert clipped_surrogate(1.0, adv, clip) == adv

    def test_nonpositive_clip_rejected(self):
        with pytest.raises(InvalidInputError):
            clipped_surrogate(1.0, 1.0, 0.0)


class TestPpoUpdate:
    def _fresh(self, seed=0):
        cfg = _bandit_cfg(seed)
        agent = ActorCritic(4, cfg, seed=seed)
        popt = AdamOptimizer(agent.policy.params, cfg.learning_rate)
        vopt = AdamOptimizer(agent.value_net.params, cfg.learning_rate)
        return cfg, agent, popt, vopt

    def test_empty_batch_rejected(self):
        cfg, agent, popt, vopt = self._fresh()
        with pytest.raises(InvalidInputError):
            ppo_update(agent.policy, agent.value_net, [], cfg, popt, vopt)

    def test_zero_advantages_leave_mean_net_untouched(self):
        # identical rewards => normalized advantages are exactly zero, so the
        # surrogate gradient vanishes and only the entropy term moves log_std
        cfg, agent, popt, vopt = self._fresh(1)
        trajs = _collect(agent, 32, Xoshiro256(5), lambda u: 0.5)
        before = {n: agent.policy.params[n].copy() for n in agent.policy.params.names()}
        ppo_update(agent.policy, agent.value_net, trajs, cfg, popt, vopt, rng=Xoshiro256(6))
        for name in before:
            if name == "log_std":
                assert not np.array_equal(agent.policy.params[name], before[name])
            else:
                assert agent.policy.params[name].tobytes() == before[name].tobytes()

    def test_first_minibatch_has_zero_clip_fraction(self):
        cfg, agent, popt, vopt = self._fresh(2)
        cfg.update_epochs = 1
        cfg.batch_size = 10_000  # one minibatch covering the whole batch
        trajs = _collect(agent, 32, Xoshiro256(7), _quadratic_reward)
        stats = ppo_update(agent.policy, agent.value_net, trajs, cfg, popt, vopt, rng=Xoshiro256(8))
        assert stats.clip_fraction == 0.0
        assert stats.min_mean_ratio == pytest.approx(1.0, abs=1e-9)

    def test_value_net_regresses_returns(self):
        cfg, agent, popt, vopt = self._fresh(3)
        err0 = abs(agent.value(FEAT) - 0.5)
        for _ in range(40):
            trajs = _collect(agent, 32, Xoshiro256(9), lambda u: 0.5)
            ppo_update(agent.policy, agent.value_net, trajs, cfg, popt, vopt, rng=Xoshiro256(10))
        assert abs(agent.value(FEAT) - 0.5) < min(0.05, err0)

    def test_mean_ratio_stays_in_trust_region(self):
        for seed in (0, 1, 2):
            cfg, agent, popt, vopt = self._fresh(seed)
            rng = Xoshiro256(mix_seed(seed, 11))
            urng = Xoshiro256(mix_seed(seed, 12))
            for _ in range(30):
                trajs = _collect(agent, 64, rng, _quadratic_reward)
                stats = ppo_update(agent.policy, agent.value_net, trajs, cfg, popt, vopt, rng=urng)
                assert 1.0 - 2 * cfg.clip < stats.min_mean_ratio
                assert stats.max_mean_ratio < 1.0 + 2 * cfg.clip

    def test_quadratic_bandit_converges(self):
        cfg, agent, popt, vopt = self._fresh(0)
        rng = Xoshiro256(21)
        urng = Xoshiro256(22)
        for _ in range(60):
            trajs = _collect(agent, 64, rng, _quadratic_reward)
            ppo_update(agent.policy, agent.value_net, trajs, cfg, popt, vopt, rng=urng)
        assert math.tanh(agent.policy.mean(FEAT)[0]) == pytest.approx(0.7, abs=0.05)


class TestTrain:
    def _tiny_env(self):
        sched = make_schedule(8, 1e-3, 0.12)
        den = make_denoiser(8, hidden=(16,), seed=5)
        corpus = build_corpus(2, seed=23)
        return SuperResEnv(den, sched, EnvConfig(timesteps=8), scenes=corpus.train)

    def _tiny_cfg(self, epochs):
        return PpoConfig(
            train_epochs=epochs,
            steps_per_epoch=24,
            batch_size=16,
            policy_hidden=(16,),
            value_hidden=(16,),
            seed=42,
        )

    def test_zero_epochs_returns_untrained_policy(self):
        agent, curve = train(self._tiny_env(), self._tiny_cfg(0))
        assert curve == []
        fresh = ActorCritic(76, self._tiny_cfg(0))
        for name in fresh.policy.params.names():
            assert np.array_equal(agent.policy.params[name], fresh.policy.params[name])

    def test_deterministic_curves(self):
        _, c1 = train(self._tiny_env(), self._tiny_cfg(3))
        _, c2 = train(self._tiny_env(), self._tiny_cfg(3))
        assert [s.mean_reward for s in c1] == [s.mean_reward for s in c2]
        assert [s.policy_loss for s in c1] == [s.policy_loss for s in c2]

    def test_curve_has_one_entry_per_epoch(self):
        _, curve = train(self._tiny_env(), self._tiny_cfg(4))
        assert [s.epoch for s in curve] == [0, 1, 2, 3]


class TestCheckpoint:
    def test_actor_critic_roundtrip(self, tmp_path):
        cfg = _bandit_cfg(7)
        agent = ActorCritic(6, cfg, seed=7)
        path = tmp_path / "policy.orlm"
        agent.save(path)
        back = ActorCritic.load(path)
        x = Xoshiro256(1).normal_array(6)
        assert np.array_equal(back.policy.mean(x), agent.policy.mean(x))
        assert back.value(x) == agent.value(x)
        assert np.array_equal(back.policy.params["log_std"], agent.policy.params["log_std"])


def test_smoothed_series():
    s = smoothed_series([1.0, 2.0, 3.0, 4.0], window=2)
    assert s == [1.0, 1.5, 2.5, 3.5]
    assert smoothed_series([], window=3) == []
    assert smoothed_series([5.0], window=10) == [5.0]
