"""Noise schedules, closed-form forward noising, the conditional denoiser,
and the reverse sampler with per-step action hooks.

The reverse step is the textbook ancestral update

    mu = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
    z_{t-1} = mu + kappa * mean_shift * sigma_t
                 + exp(kappa * log_scale) * sigma_t * xi,   sigma_t = sqrt(beta_t)

with a (mean_shift, log_scale, stop_gate) action squashed into [-1, 1] and
modulation gain kappa = 0.5; the all-zero action reproduces the plain sampler
bit for bit, which is what makes baseline-vs-steered comparisons well-posed.
A positive stop_gate ends sampling early through the direct clean-latent
prediction z0 = (z_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import Latent, encode
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
    save_params,
    split_params,
)
from .rng import Xoshiro256, mix_seed

MODULATION_GAIN = 0.5
DEFAULT_T_EMBED_DIM = 8

_SALT_INIT = 0x11217
_SALT_BATCH = 0xB47C4


@dataclass
class NoiseSchedule:
    """Linear-beta schedule with cached alpha products; t is 1-based."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.ascontiguousarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 2:
            raise InvalidInputError("schedule needs at least 2 betas")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise InvalidInputError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.betas) < 0.0):
            raise InvalidInputError("betas must be non-decreasing")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    @property
    def T(self) -> int:
        return self.betas.size

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"timestep {t} outside [1, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """alpha_bar(0) == 1 by convention (no noise yet)."""
        t = int(t)
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check_t(t) - 1])


def make_schedule(T: int = 50, beta_min: float = 1e-3, beta_max: float = 0.12) -> NoiseSchedule:
    """Betas linearly interpolated over [beta_min, beta_max] inclusive."""
    if T < 2:
        raise InvalidInputError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise InvalidInputError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    return NoiseSchedule(np.linspace(beta_min, beta_max, int(T)))


def timestep_embedding(t, dim: int = DEFAULT_T_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding [sin(t*w_k) ... cos(t*w_k)], w_k = 10000^(-k/(dim/2))."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _timestep_embedding_batch(ts: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = ts.astype(np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class StepAction:
    """Per-step steering knobs, each meaningful on [-1, 1] (clamped at use)."""

    mean_shift: float = 0.0
    log_scale: float = 0.0
    stop_gate: float = 0.0

    @classmethod
    def from_raw(cls, u) -> "StepAction":
        """Squash an unbounded 3-vector through tanh."""
        sq = np.tanh(np.asarray(u, dtype=np.float64))
        return cls(float(sq[0]), float(sq[1]), float(sq[2]))

    def clamped(self) -> tuple[float, float, float]:
        c = lambda v: min(max(float(v), -1.0), 1.0)
        return c(self.mean_shift), c(self.log_scale), c(self.stop_gate)


ZERO_ACTION = StepAction(0.0, 0.0, 0.0)


@dataclass
class Denoiser:
    """Conditional noise predictor: input flatten(z_t) + sinusoidal(t) + flatten(c)."""

    net: Mlp
    latent_side: int
    t_embed_dim: int = DEFAULT_T_EMBED_DIM
    condition: np.ndarray | None = None

    def bind_condition(self, condition: np.ndarray) -> "Denoiser":
        cond = np.ascontiguousarray(condition, dtype=np.float64)
        if cond.size != self.latent_side**2:
            raise InvalidInputError(
                f"condition has {cond.size} values, expected {self.latent_side ** 2}"
            )
        return replace(self, condition=cond)

    def predict(self, z_values: np.ndarray, t: int) -> np.ndarray:
        """Predicted noise for one latent; shape mirrors ``z_values``."""
        if self.condition is None:
            raise InvalidInputError("denoiser has no condition bound")
        from .nn import mlp_forward

        x = np.concatenate(
            [
                np.ravel(z_values),
                timestep_embedding(t, self.t_embed_dim),
                self.condition.ravel(),
            ]
        )
        return mlp_forward(self.net, x).reshape(np.shape(z_values))

    def predict_batch(self, z_flat: np.ndarray, ts: np.ndarray, cond_flat: np.ndarray) -> np.ndarray:
        from .nn import mlp_forward

        emb = _timestep_embedding_batch(ts, self.t_embed_dim)
        return mlp_forward(self.net, np.concatenate([z_flat, emb, cond_flat], axis=1))


def make_denoiser(latent_side: int, hidden=(128, 128), activation="tanh", seed=0,
                  t_embed_dim: int = DEFAULT_T_EMBED_DIM) -> Denoiser:
    latent_dim = latent_side * latent_side
    in_dim = latent_dim + t_embed_dim + latent_dim
    net = init_mlp([in_dim, *hidden, latent_dim], activation, "none", seed)
    return Denoiser(net=net, latent_side=latent_side, t_embed_dim=t_embed_dim)


def forward_noise(z0: Latent, t: int, noise: np.ndarray, sched: NoiseSchedule) -> Latent:
    """Closed-form noisy latent: z_t = sqrt(ab_t) z_0 + sqrt(1 - ab_t) eps."""
    t = int(t)
    if not 1 <= t <= sched.T:
        raise InvalidInputError(f"timestep {t} outside [1, {sched.T}]")
    eps = np.ascontiguousarray(noise, dtype=np.float64)
    if eps.shape != z0.values.shape:
        raise InvalidInputError(f"noise shape {eps.shape} != latent shape {z0.values.shape}")
    ab = sched.alpha_bar(t)
    return Latent(math.sqrt(ab) * z0.values + math.sqrt(1.0 - ab) * eps, t=t)


def predict_x0(z_t: Latent, t: int, den: Denoiser, sched: NoiseSchedule) -> Latent:
    """Direct clean-latent estimate from the predicted noise at step t."""
    t = int(t)
    if not 1 <= t <= sched.T:
        raise InvalidInputError(f"timestep {t} outside [1, {sched.T}]")
    ab = sched.alpha_bar(t)
    eps_hat = den.predict(z_t.values, t)
    return Latent((z_t.values - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab), t=0)


def reverse_step(
    z_t: Latent,
    t: int,
    den: Denoiser,
    sched: NoiseSchedule,
    action: StepAction,
    xi: np.ndarray,
) -> Latent:
    """One modulated ancestral step z_t -> z_{t-1}; the noise term is dropped
    at t == 1 so the final step is deterministic."""
    t = int(t)
    if not 1 <= t <= sched.T:
        raise InvalidInputError(f"timestep {t} outside [1, {sched.T}]")
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    if xi.shape != z_t.values.shape:
        raise InvalidInputError(f"xi shape {xi.shape} != latent shape {z_t.values.shape}")
    mean_shift, log_scale, _ = action.clamped()
    beta = sched.beta(t)
    alpha = sched.alpha(t)
    ab = sched.alpha_bar(t)
    eps_hat = den.predict(z_t.values, t)
    mu = (z_t.values - (beta / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(alpha)
    sigma = math.sqrt(beta)
    shift = (MODULATION_GAIN * mean_shift) * sigma
    scale = math.exp(MODULATION_GAIN * log_scale)
    if t > 1:
        values = mu + shift + scale * (sigma * xi)
    else:
        values = mu + shift
    return Latent(values, t=t - 1)


def sample(
    lr_latent: Latent,
    den: Denoiser,
    sched: NoiseSchedule,
    policy=None,
    rng_seed: int = 0,
) -> tuple[Latent, int]:
    """Reverse-sample a latent conditioned on ``lr_latent``.

    Starts from a seeded standard-normal z_T and walks t = T..1. If a policy
    is given it must expose ``act(z_values, t) -> StepAction``; a positive
    stop_gate ends the episode through predict_x0. Without a policy every
    action is zero. Returns (final latent, steps actually used).

    The RNG consumption order (z_T fill, then one xi fill per non-final,
    non-stopping step) is part of the sampler's contract: the RL environment
    replays exactly the same stream for matching episode seeds.
    """
    side = lr_latent.side
    bound = den.bind_condition(lr_latent.values)
    rng = Xoshiro256(rng_seed)
    z = Latent(rng.normal_array((side, side)), t=sched.T)
    zeros = np.zeros((side, side))
    steps_used = 0
    for t in range(sched.T, 0, -1):
        action = policy.act(z.values, t) if policy is not None else ZERO_ACTION
        steps_used += 1
        if action.clamped()[2] > 0.0:
            z = predict_x0(z, t, bound, sched)
            break
        xi = rng.normal_array((side, side)) if t > 1 else zeros
        z = reverse_step(z, t, bound, sched, action, xi)
    return z, steps_used


def train_denoiser(
    dataset,
    sched: NoiseSchedule,
    steps: int = 2000,
    batch_size: int = 64,
    seed: int = 42,
    latent_side: int = 8,
    hidden=(128, 128),
    activation: str = "tanh",
    learning_rate: float = 3e-4,
) -> tuple[Denoiser, list[float]]:
    """Fit the noise predictor by MSE against the injected noise.

    ``dataset`` is a list of (HR image, LR image) pairs; each optimization
    step draws a uniform minibatch of pairs, uniform timesteps in [1, T] and
    fresh Gaussian noise. Returns the denoiser plus the per-step loss history.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("empty training dataset")
    if steps < 0 or batch_size < 1:
        raise InvalidInputError("steps must be >= 0 and batch_size >= 1")
    latent_dim = latent_side * latent_side
    z0s = np.stack([encode(hr, latent_side).values.ravel() for hr, _ in dataset])
    conds = np.stack([encode(lr, latent_side).values.ravel() for _, lr in dataset])
    den = make_denoiser(latent_side, hidden, activation, seed=mix_seed(seed, _SALT_INIT))
    rng = Xoshiro256(mix_seed(seed, _SALT_BATCH))
    opt = AdamOptimizer(den.net.params, learning_rate)
    n = len(dataset)
    losses: list[float] = []
    sqrt_ab = np.sqrt(sched.alpha_bars)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bars)
    for _ in range(int(steps)):
        idx = np.array([rng.integers(0, n) for _ in range(batch_size)])
        ts = np.array([rng.integers(1, sched.T + 1) for _ in range(batch_size)])
        eps = rng.normal_array((batch_size, latent_dim))
        a = sqrt_ab[ts - 1][:, None]
        b = sqrt_1mab[ts - 1][:, None]
        zt = a * z0s[idx] + b * eps
        x = np.concatenate([zt, _timestep_embedding_batch(ts, den.t_embed_dim), conds[idx]], axis=1)
        acts = _forward_cached(den.net, x)
        pred = acts[-1]
        diff = pred - eps
        losses.append(float(np.mean(diff * diff)))
        grads, _ = _backward_from_acts(den.net, acts, 2.0 * diff / diff.size)
        den.net.params = opt.step(den.net.params, grads)
    return den, losses


def smoothed_tail_mean(values, window: int = 100) -> float:
    """Mean of the trailing ``window`` entries (the run's 'smoothed' value)."""
    tail = list(values)[-window:]
    if not tail:
        raise InvalidInputError("no values to smooth")
    return float(np.mean(tail))


# --- checkpointing -----------------------------------------------------------

_META_ACTIVATION = {name: i for i, name in enumerate(("tanh", "relu"))}
_META_OUT_ACTIVATION = {name: i for i, name in enumerate(("none", "tanh"))}


def save_denoiser(den: Denoiser, path) -> None:
    """ORLM checkpoint holding the net weights plus shape/activation metadata
    (encoded as small float arrays so the format stays plain ORLM)."""
    meta = NetParams(
        [
            ("layer_sizes", np.array(den.net.layer_sizes, dtype=np.float64)),
            ("activation", np.array([_META_ACTIVATION[den.net.activation]], dtype=np.float64)),
            (
                "output_activation",
                np.array([_META_OUT_ACTIVATION[den.net.output_activation]], dtype=np.float64),
            ),
            ("latent_side", np.array([den.latent_side], dtype=np.float64)),
            ("t_embed_dim", np.array([den.t_embed_dim], dtype=np.float64)),
        ]
    )
    save_params(merge_params({"meta": meta, "net": den.net.params}), path)


def load_denoiser(path) -> Denoiser:
    blob = load_params(path)
    meta = split_params(blob, "meta")
    weights = split_params(blob, "net")
    act_names = {v: k for k, v in _META_ACTIVATION.items()}
    out_names = {v: k for k, v in _META_OUT_ACTIVATION.items()}
    net = Mlp(
        layer_sizes=tuple(int(v) for v in meta["layer_sizes"]),
        activation=act_names[int(meta["activation"][0])],
        output_activation=out_names[int(meta["output_activation"][0])],
        params=weights,
    )
    return Denoiser(
        net=net,
        latent_side=int(meta["latent_side"][0]),
        t_embed_dim=int(meta["t_embed_dim"][0]),
    )
