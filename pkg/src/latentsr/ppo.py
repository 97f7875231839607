"""Gaussian policy + value networks, GAE, the clipped surrogate, and the
PPO training loop.

The policy head is a tanh-output MLP giving the Gaussian mean; a learned
per-dimension log_std (clamped to [-4, 1]) sets exploration. Draws happen
pre-squash, the executed action is tanh(draw), and log-probs are the plain
diagonal-Gaussian density of the pre-squash draw: old and new densities are
always evaluated at the same squash point, so the tanh Jacobian cancels from
every ratio and is deliberately left out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import StepAction
from .env import EnvState, SuperResEnv, Trajectory
from .errors import InvalidInputError
from .nn import (
    AdamOptimizer,
    Mlp,
    NetParams,
    _backward_from_acts,
    _forward_cached,
    init_mlp,
    load_params,
    merge_params,
    mlp_forward,
    save_params,
    split_params,
)
from .rng import Xoshiro256, mix_seed

ACTION_DIM = 3
LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
_LOG_2PI = math.log(2.0 * math.pi)

_SALT_POLICY_INIT = 0x90117
_SALT_VALUE_INIT = 0x7A15E
_SALT_ROLLOUT = 0x8011
_SALT_UPDATE = 0x97DA7E


@dataclass
class PpoConfig:
    """Hyperparameters; the desk default shortens training to 200 epochs but
    every other value matches the reference configuration."""

    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    update_epochs: int = 4
    batch_size: int = 64
    train_epochs: int = 200
    steps_per_epoch: int = 1000
    seed: int = 42
    policy_hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    log_std_init: float = -0.5
    stop_bias_init: float = -2.0


class GaussianPolicy:
    """Diagonal-Gaussian policy over the 3-dim step action.

    ``params`` holds the mean net's weights plus a ``log_std`` entry; the Mlp
    shares the same NetParams object and ignores the extra entry.
    """

    def __init__(self, feature_dim: int, hidden=(64, 64), seed: int = 0,
                 log_std_init: float = -0.5, stop_bias_init: float = 0.0):
        self.mean_net = init_mlp([feature_dim, *hidden, ACTION_DIM], "tanh", "tanh", seed)
        # a negative stop-gate bias starts episodes long so the trained policy
        # has to *earn* early stopping through the efficiency reward
        self.mean_net.params[f"b{self.mean_net.n_layers - 1}"][2] = stop_bias_init
        self.mean_net.params["log_std"] = np.full(ACTION_DIM, float(log_std_init))

    @property
    def params(self) -> NetParams:
        return self.mean_net.params

    def set_params(self, params: NetParams) -> None:
        self.mean_net.params = params

    def log_std(self) -> np.ndarray:
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def mean(self, features) -> np.ndarray:
        return mlp_forward(self.mean_net, features)

    def sample_raw(self, features: np.ndarray, rng: Xoshiro256):
        """Pre-squash draw and its diagonal-Gaussian log density."""
        mean = self.mean(features)
        ls = self.log_std()
        u = mean + np.exp(ls) * rng.fill_normal(ACTION_DIM)
        return u, gaussian_log_prob(u, mean, ls)

    def mean_action(self, features) -> StepAction:
        """Deterministic action (the draw collapsed onto its mean)."""
        return StepAction.from_raw(self.mean(features))


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> float:
    z = (u - mean) * np.exp(-log_std)
    return float(-0.5 * (np.sum(z * z) + 2.0 * np.sum(log_std) + u.size * _LOG_2PI))


def policy_sample(policy: GaussianPolicy, state, rng: Xoshiro256):
    """Draw an executable StepAction from the policy at a state.

    ``state`` may be an EnvState or a raw feature vector. Returns the squashed
    action and the pre-squash log density.
    """
    features = state.features if isinstance(state, EnvState) else np.asarray(state)
    u, lp = policy.sample_raw(features, rng)
    return StepAction.from_raw(u), lp


class ActorCritic:
    """Policy + value bundle with the interface env rollouts expect."""

    def __init__(self, feature_dim: int, cfg: PpoConfig, seed: int | None = None):
        seed = cfg.seed if seed is None else seed
        self.policy = GaussianPolicy(
            feature_dim,
            cfg.policy_hidden,
            seed=mix_seed(seed, _SALT_POLICY_INIT),
            log_std_init=cfg.log_std_init,
            stop_bias_init=cfg.stop_bias_init,
        )
        self.value_net = init_mlp(
            [feature_dim, *cfg.value_hidden, 1], "tanh", "none", mix_seed(seed, _SALT_VALUE_INIT)
        )

    def sample_raw(self, features, rng):
        return self.policy.sample_raw(features, rng)

    def value(self, features) -> float:
        return float(mlp_forward(self.value_net, features)[0])

    def mean_action(self, features) -> StepAction:
        return self.policy.mean_action(features)

    def save(self, path) -> None:
        meta = NetParams(
            [
                ("policy_layer_sizes", np.array(self.policy.mean_net.layer_sizes, dtype=np.float64)),
                ("value_layer_sizes", np.array(self.value_net.layer_sizes, dtype=np.float64)),
            ]
        )
        save_params(
            merge_params({"meta": meta, "policy": self.policy.params, "value": self.value_net.params}),
            path,
        )

    @classmethod
    def load(cls, path) -> "ActorCritic":
        blob = load_params(path)
        meta = split_params(blob, "meta")
        policy_sizes = tuple(int(v) for v in meta["policy_layer_sizes"])
        value_sizes = tuple(int(v) for v in meta["value_layer_sizes"])
        agent = cls.__new__(cls)
        agent.policy = GaussianPolicy(policy_sizes[0], policy_sizes[1:-1])
        agent.policy.set_params(split_params(blob, "policy"))
        agent.value_net = Mlp(value_sizes, "tanh", "none", split_params(blob, "value"))
        return agent


def gae(rewards, values, gamma: float, lam: float):
    """Generalized advantage estimation over one episode.

    ``values`` carries one bootstrap entry more than ``rewards`` (zero at the
    terminal state). Returns (advantages, returns) with
    returns = advantages + values[:-1].
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.size != r.size + 1:
        raise InvalidInputError(f"need len(values) == len(rewards)+1, got {v.size} vs {r.size}")
    adv = np.empty(r.size)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        delta = r[t] + gamma * v[t + 1] - v[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v[:-1]


def clipped_surrogate(ratio, advantage, clip: float):
    """min(ratio * A, clamp(ratio, 1-clip, 1+clip) * A); elementwise on arrays."""
    if clip <= 0:
        raise InvalidInputError(f"clip must be positive, got {clip}")
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)
    return float(out) if out.ndim == 0 else out


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    clip_fraction: float
    entropy: float
    # extremes over minibatches of each minibatch's mean probability ratio;
    # a healthy update keeps these inside [1 - 2*clip, 1 + 2*clip]
    min_mean_ratio: float
    max_mean_ratio: float


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    policy_loss: float
    value_loss: float
    clip_fraction: float


def ppo_update(
    policy: GaussianPolicy,
    value_net: Mlp,
    batch: list[Trajectory],
    cfg: PpoConfig,
    policy_opt: AdamOptimizer,
    value_opt: AdamOptimizer,
    rng: Xoshiro256 | None = None,
) -> UpdateStats:
    """One PPO optimization cycle over a rollout batch.

    Runs cfg.update_epochs shuffled passes in cfg.batch_size minibatches,
    maximizing clipped surrogate + entropy_coef * entropy
    - value_coef * (V - returns)^2 with per-batch advantage normalization.
    Mutates policy/value parameters through the supplied optimizers.
    """
    if not batch:
        raise InvalidInputError("empty trajectory batch")
    if rng is None:
        rng = Xoshiro256(mix_seed(cfg.seed, _SALT_UPDATE))
    feats = np.concatenate([tr.features for tr in batch])
    raw = np.concatenate([tr.raw_actions for tr in batch])
    old_lp = np.concatenate([tr.log_probs for tr in batch])
    advs, rets = [], []
    for tr in batch:
        a, r = gae(tr.rewards, np.append(tr.values, 0.0), cfg.gamma, cfg.gae_lambda)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs)
    ret = np.concatenate(rets)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = adv.size
    mean_net = policy.mean_net
    raw_ls = policy.params["log_std"]
    pol_losses, val_losses, clip_fracs, entropies, mean_ratios = [], [], [], [], []
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            mb = perm[start : start + cfg.batch_size]
            m = mb.size
            x = feats[mb]
            u = raw[mb]
            a_norm = adv[mb]
            lp_old = old_lp[mb]

            acts = _forward_cached(mean_net, x)
            mean = acts[-1]
            ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
            inv_var = np.exp(-2.0 * ls)
            diff = u - mean
            lp_new = -0.5 * ((diff * diff * inv_var).sum(axis=1) + 2.0 * ls.sum() + ACTION_DIM * _LOG_2PI)
            ratio = np.exp(lp_new - lp_old)
            surr1 = ratio * a_norm
            surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a_norm
            pol_losses.append(float(-np.minimum(surr1, surr2).mean()))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
            mean_ratios.append(float(ratio.mean()))
            entropy = float(ls.sum() + 0.5 * ACTION_DIM * (1.0 + _LOG_2PI))
            entropies.append(entropy)

            # gradient of -mean(min(surr1, surr2)) w.r.t. lp_new: active only
            # where the unclipped branch is selected (ties included)
            dlp = np.where(surr1 <= surr2, -a_norm * ratio, 0.0) / m
            dmean = dlp[:, None] * (diff * inv_var)
            dls = (dlp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
            dls -= cfg.entropy_coef  # d/d log_std of -entropy_coef * entropy
            inside = (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)
            dls = np.where(inside, dls, 0.0)
            grads, _ = _backward_from_acts(mean_net, acts, dmean)
            full = NetParams(
                [(name, dls if name == "log_std" else grads[name]) for name in policy.params.names()]
            )
            policy.set_params(policy_opt.step(policy.params, full))
            raw_ls = policy.params["log_std"]

            vacts = _forward_cached(value_net, x)
            v = vacts[-1][:, 0]
            verr = v - ret[mb]
            val_losses.append(float(np.mean(verr * verr)))
            dv = (cfg.value_coef * 2.0 * verr / m)[:, None]
            vgrads, _ = _backward_from_acts(value_net, vacts, dv)
            value_net.params = value_opt.step(value_net.params, vgrads)

    return UpdateStats(
        policy_loss=float(np.mean(pol_losses)),
        value_loss=float(np.mean(val_losses)),
        clip_fraction=float(np.mean(clip_fracs)),
        entropy=float(np.mean(entropies)),
        min_mean_ratio=float(np.min(mean_ratios)),
        max_mean_ratio=float(np.max(mean_ratios)),
    )


def train(env: SuperResEnv, cfg: PpoConfig) -> tuple[ActorCritic, list[EpochStats]]:
    """Alternate rollout collection and PPO updates for cfg.train_epochs.

    Deterministic given (cfg, env dataset, denoiser weights): every stream is
    derived from cfg.seed. Returns the agent plus the per-epoch curve.
    """
    agent = ActorCritic(env.feature_dim, cfg)
    policy_opt = AdamOptimizer(agent.policy.params, cfg.learning_rate)
    value_opt = AdamOptimizer(agent.value_net.params, cfg.learning_rate)
    curve: list[EpochStats] = []
    for epoch in range(cfg.train_epochs):
        trajs = env.rollout_steps(
            agent, cfg.steps_per_epoch, seed=mix_seed(mix_seed(cfg.seed, _SALT_ROLLOUT), epoch)
        )
        stats = ppo_update(
            agent.policy,
            agent.value_net,
            trajs,
            cfg,
            policy_opt,
            value_opt,
            rng=Xoshiro256(mix_seed(mix_seed(cfg.seed, _SALT_UPDATE), epoch)),
        )
        mean_reward = float(np.mean([tr.total_reward for tr in trajs]))
        curve.append(
            EpochStats(epoch, mean_reward, stats.policy_loss, stats.value_loss, stats.clip_fraction)
        )
    return agent, curve


def smoothed_series(values, window: int = 10) -> list[float]:
    """Trailing-window means; entry i averages values[max(0, i-window+1) .. i]."""
    out = []
    vals = list(values)
    for i in range(len(vals)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(vals[lo : i + 1])))
    return out
