"""The super-resolution MDP: reverse diffusion wrapped as episodes.

One episode walks a full reverse trajectory for one scene. State features are
flatten(z_t) ++ sinusoidal(t) ++ (mean, std, min, max) of the LR condition
latent. All intermediate rewards are zero; the terminal reward is the
composite image-quality score of the decoded latent against the HR image.

The environment replays exactly the RNG stream of diffusion.sample for a
matching episode seed, so an all-zero action sequence reproduces the plain
sampler bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import Latent, decode, encode
from .diffusion import (
    Denoiser,
    NoiseSchedule,
    StepAction,
    ZERO_ACTION,
    predict_x0,
    reverse_step,
    timestep_embedding,
)
from .errors import ConfigurationError, InvalidInputError, ProtocolError
from .metrics import (
    DEFAULT_PERCEPTUAL_NORM,
    DEFAULT_PSNR_NORM_DB,
    RewardBreakdown,
    composite_reward,
    perceptual_distance,
    psnr,
    ssim,
)
from .rng import Xoshiro256, mix_seed
from .scenes import ScenePair

_SALT_EPISODE = 0xE915
_SALT_ACTIONS = 0xAC7105

T_EMBED_DIM = 8
CONDITION_SUMMARY_DIM = 4


@dataclass
class EnvConfig:
    timesteps: int = 50
    gamma: float = 0.99
    image_side: int = 32
    latent_side: int = 8
    seed: int = 42
    psnr_norm_db: float = DEFAULT_PSNR_NORM_DB
    perceptual_norm: float = DEFAULT_PERCEPTUAL_NORM


@dataclass
class EnvState:
    features: np.ndarray
    t: int
    episode_done: bool


@dataclass
class EpisodeOutcome:
    """Terminal details kept around for evaluation reports."""

    breakdown: RewardBreakdown
    steps_used: int
    image: np.ndarray


@dataclass
class Trajectory:
    """One episode's rollout records (raw actions are pre-squash draws)."""

    features: np.ndarray  # [L, F]
    raw_actions: np.ndarray  # [L, 3]
    log_probs: np.ndarray  # [L]
    values: np.ndarray  # [L]
    rewards: np.ndarray  # [L]
    dones: np.ndarray  # [L] bool

    def __len__(self) -> int:
        return self.rewards.size

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def condition_summary(cond: np.ndarray) -> np.ndarray:
    return np.array(
        [float(cond.mean()), float(cond.std()), float(cond.min()), float(cond.max())]
    )


def state_features(z_values: np.ndarray, t: int, cond_stats: np.ndarray) -> np.ndarray:
    return np.concatenate([z_values.ravel(), timestep_embedding(t, T_EMBED_DIM), cond_stats])


class SuperResEnv:
    """reset/step environment over reverse-diffusion episodes.

    Single-threaded: each instance owns its episode RNG. Run several
    instances with disjoint seeds if you want parallel rollouts.
    """

    def __init__(
        self,
        denoiser: Denoiser,
        schedule: NoiseSchedule,
        config: EnvConfig,
        scenes: list[ScenePair] | None = None,
    ):
        if denoiser is None:
            raise ConfigurationError("environment needs a trained denoiser")
        if schedule.T != config.timesteps:
            raise ConfigurationError(
                f"schedule has T={schedule.T} but config.timesteps={config.timesteps}"
            )
        if denoiser.latent_side != config.latent_side:
            raise ConfigurationError(
                f"denoiser latent side {denoiser.latent_side} != config {config.latent_side}"
            )
        self.denoiser = denoiser
        self.schedule = schedule
        self.config = config
        self.scenes = list(scenes) if scenes else []
        self._cursor = 0  # round-robin position, persists across rollouts
        self._scene: ScenePair | None = None
        self._bound: Denoiser | None = None
        self._cond_stats: np.ndarray | None = None
        self._rng: Xoshiro256 | None = None
        self._z: Latent | None = None
        self._t = 0
        self._steps_used = 0
        self._done = True
        self.last_outcome: EpisodeOutcome | None = None

    @property
    def feature_dim(self) -> int:
        return self.config.latent_side**2 + T_EMBED_DIM + CONDITION_SUMMARY_DIM

    def reset(self, scene: ScenePair, episode_seed: int) -> EnvState:
        cond = encode(scene.lr, self.config.latent_side).values
        self._scene = scene
        self._bound = self.denoiser.bind_condition(cond)
        self._cond_stats = condition_summary(cond)
        self._rng = Xoshiro256(episode_seed)
        side = self.config.latent_side
        self._z = Latent(self._rng.normal_array((side, side)), t=self.schedule.T)
        self._t = self.schedule.T
        self._steps_used = 0
        self._done = False
        self.last_outcome = None
        return self._state()

    def _state(self) -> EnvState:
        return EnvState(
            features=state_features(self._z.values, self._t, self._cond_stats),
            t=self._t,
            episode_done=self._done,
        )

    def step(self, action: StepAction) -> tuple[EnvState, float, bool]:
        """Apply one action; reward is 0 until the episode terminates."""
        if self._done:
            raise ProtocolError("step() called on a finished episode")
        self._steps_used += 1
        if action.clamped()[2] > 0.0:
            self._z = predict_x0(self._z, self._t, self._bound, self.schedule)
            self._t = 0
            self._done = True
        else:
            side = self.config.latent_side
            if self._t > 1:
                xi = self._rng.normal_array((side, side))
            else:
                xi = np.zeros((side, side))
            self._z = reverse_step(self._z, self._t, self._bound, self.schedule, action, xi)
            self._t -= 1
            self._done = self._t == 0
        reward = 0.0
        if self._done:
            reward = self._terminal_reward()
        return self._state(), reward, self._done

    def _terminal_reward(self) -> float:
        img = decode(self._z, self.config.image_side)
        hr = self._scene.hr
        breakdown = composite_reward(
            psnr(img, hr),
            ssim(img, hr),
            perceptual_distance(img, hr),
            self._steps_used,
            self.schedule.T,
            psnr_norm_db=self.config.psnr_norm_db,
            perceptual_norm=self.config.perceptual_norm,
        )
        self.last_outcome = EpisodeOutcome(breakdown, self._steps_used, img)
        return breakdown.composite

    def play_episode(self, scene: ScenePair, episode_seed: int, agent, action_rng) -> Trajectory:
        """Run one stochastic-policy episode and record it."""
        state = self.reset(scene, episode_seed)
        feats, raws, lps, vals, rews, dones = [], [], [], [], [], []
        done = False
        while not done:
            u, lp = agent.sample_raw(state.features, action_rng)
            value = agent.value(state.features)
            next_state, reward, done = self.step(StepAction.from_raw(u))
            feats.append(state.features)
            raws.append(u)
            lps.append(lp)
            vals.append(value)
            rews.append(reward)
            dones.append(done)
            state = next_state
        return Trajectory(
            features=np.stack(feats),
            raw_actions=np.stack(raws),
            log_probs=np.array(lps),
            values=np.array(vals),
            rewards=np.array(rews),
            dones=np.array(dones, dtype=bool),
        )

    def _next_scene(self) -> ScenePair:
        if not self.scenes:
            raise ConfigurationError("environment has no scene dataset configured")
        scene = self.scenes[self._cursor % len(self.scenes)]
        self._cursor += 1
        return scene

    def rollout(self, agent, n_episodes: int, seed: int) -> list[Trajectory]:
        """n episodes over scenes drawn round-robin (cursor persists across
        calls; fresh env => deterministic trajectories for a given seed)."""
        if n_episodes < 0:
            raise InvalidInputError(f"n_episodes must be >= 0, got {n_episodes}")
        action_rng = Xoshiro256(mix_seed(seed, _SALT_ACTIONS))
        out = []
        for k in range(n_episodes):
            scene = self._next_scene()
            out.append(self.play_episode(scene, mix_seed(seed, _SALT_EPISODE + k), agent, action_rng))
        return out

    def rollout_steps(self, agent, min_steps: int, seed: int) -> list[Trajectory]:
        """Whole episodes until at least ``min_steps`` env steps are collected."""
        if min_steps < 1:
            raise InvalidInputError(f"min_steps must be >= 1, got {min_steps}")
        action_rng = Xoshiro256(mix_seed(seed, _SALT_ACTIONS))
        out, total, k = [], 0, 0
        while total < min_steps:
            scene = self._next_scene()
            traj = self.play_episode(scene, mix_seed(seed, _SALT_EPISODE + k), agent, action_rng)
            out.append(traj)
            total += len(traj)
            k += 1
        return out
