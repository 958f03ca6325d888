"""Small deterministic control tasks, observation normalization and perturbations.

Both environments step a whole batch of independent copies at once; the
batch shape is fixed at construction and every state array carries it as
leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

GRAVITY = 9.81


@dataclass(frozen=True)
class PointMassParams:
    mass: float = 1.0
    f_max: float = 1.0
    drag: float = 0.5
    init_velocity_noise: float = 0.1


@dataclass(frozen=True)
class ChainParams:
    n_masses: int = 5
    mass: float = 1.0
    stiffness: float = 40.0
    damping: float = 2.0
    mu_fwd: float = 0.1
    mu_back: float = 0.6
    rest_length: float = 1.0
    # actuated rest length = rest_length * (1 + offset * action)
    offset: float = 0.3
    init_noise: float = 0.005


@dataclass(frozen=True)
class EnvSpec:
    """Task definition.  ``control_hz`` is the controller rate f_NN."""

    kind: str = "point_mass"
    dt: float = 0.01
    control_hz: float = 20.0
    episode_steps: int = 1000
    v_target: float = 1.0
    reward_sigma: float = 0.25
    point_mass: PointMassParams = field(default_factory=PointMassParams)
    chain: ChainParams = field(default_factory=ChainParams)

    def __post_init__(self):
        if self.kind not in ("point_mass", "chain_crawler"):
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        if self.dt <= 0 or self.control_hz <= 0:
            raise ConfigurationError("dt and control_hz must be positive")
        ratio = 1.0 / (self.control_hz * self.dt)
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigurationError(
                f"physics dt={self.dt} does not divide the control period 1/{self.control_hz} s"
            )
        if self.episode_steps < 1:
            raise ConfigurationError("episode_steps must be >= 1")
        if self.reward_sigma <= 0:
            raise ConfigurationError("reward_sigma must be positive")
        if self.kind == "chain_crawler" and self.chain.n_masses < 2:
            raise ConfigurationError("chain crawler needs at least two masses")

    @property
    def substeps(self) -> int:
        return int(round(1.0 / (self.control_hz * self.dt)))

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_hz

    @property
    def obs_dim(self) -> int:
        return 2 if self.kind == "point_mass" else 2 * self.chain.n_masses

    @property
    def act_dim(self) -> int:
        return 1 if self.kind == "point_mass" else self.chain.n_masses - 1


@dataclass
class StepResult:
    observation: np.ndarray
    reward: np.ndarray
    done: bool
    info: dict


def gaussian_tracking_reward(v, v_target: float, sigma: float) -> np.ndarray:
    return np.exp(-((np.asarray(v) - v_target) ** 2) / sigma ** 2)


def _row_generators(seed, batch_shape: tuple[int, ...]) -> list[np.random.Generator]:
    seeds = np.broadcast_to(np.asarray(seed, dtype=np.int64), batch_shape).ravel()
    return [np.random.default_rng(int(s)) for s in seeds]


class PointMassTracking:
    """One-dimensional mass pushed by ``f_max * a`` against linear drag."""

    def __init__(self, spec: EnvSpec, batch_shape: tuple[int, ...] = ()):
        if spec.kind != "point_mass":
            raise ConfigurationError("PointMassTracking needs a point_mass spec")
        self.spec = spec
        self.p = spec.point_mass
        self.batch_shape = tuple(batch_shape)
        self.position = np.zeros(self.batch_shape)
        self.velocity = np.zeros(self.batch_shape)
        self.t = 0

    @property
    def masses(self) -> np.ndarray:
        return np.full(1, self.p.mass)

    @property
    def head_velocity(self) -> np.ndarray:
        return self.velocity

    def reset(self, seed=0) -> np.ndarray:
        gens = _row_generators(seed, self.batch_shape)
        noise = self.p.init_velocity_noise
        v0 = np.array([g.uniform(-noise, noise) if noise > 0 else 0.0 for g in gens])
        self.velocity = v0.reshape(self.batch_shape)
        self.position = np.zeros(self.batch_shape)
        self.t = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        v = self.velocity
        return np.stack([v, self.spec.v_target - v], axis=-1)

    def add_impulse(self, impulse) -> None:
        j = np.asarray(impulse, dtype=float).reshape(-1)
        self.velocity = self.velocity + j[0] / self.p.mass

    def energy(self) -> np.ndarray:
        return 0.5 * self.p.mass * self.velocity ** 2

    def step(self, action) -> StepResult:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        a = np.broadcast_to(a, (*self.batch_shape, 1))[..., 0]
        dt, p = self.spec.dt, self.p
        v, x = self.velocity, self.position
        for _ in range(self.spec.substeps):
            v = v + dt * (p.f_max * a - p.drag * v) / p.mass
            x = x + dt * v
        self.velocity, self.position = v, x
        self.t += 1
        reward = gaussian_tracking_reward(v, self.spec.v_target, self.spec.reward_sigma)
        return StepResult(
            observation=self.observe(),
            reward=reward,
            done=self.t >= self.spec.episode_steps,
            info={"velocity": v.copy(), "position": x.copy()},
        )


class ChainCrawler:
    """Masses on a line joined by actuated springs, sliding on anisotropic Coulomb friction.

    The action sets each spring's rest length.  Because sliding backward is
    harder than sliding forward, periodic contraction waves produce net
    forward motion while any constant action eventually comes to rest.  The
    head is the last (front-most) mass.
    """

    def __init__(self, spec: EnvSpec, batch_shape: tuple[int, ...] = ()):
        if spec.kind != "chain_crawler":
            raise ConfigurationError("ChainCrawler needs a chain_crawler spec")
        self.spec = spec
        self.p = spec.chain
        self.batch_shape = tuple(batch_shape)
        n = self.p.n_masses
        self.position = np.zeros((*self.batch_shape, n))
        self.velocity = np.zeros((*self.batch_shape, n))
        self.rest = np.full((*self.batch_shape, n - 1), self.p.rest_length)
        self.t = 0

    @property
    def masses(self) -> np.ndarray:
        return np.full(self.p.n_masses, self.p.mass)

    @property
    def head_velocity(self) -> np.ndarray:
        return self.velocity[..., -1]

    @property
    def head_position(self) -> np.ndarray:
        return self.position[..., -1]

    def reset(self, seed=0) -> np.ndarray:
        n, L = self.p.n_masses, self.p.rest_length
        gens = _row_generators(seed, self.batch_shape)
        base = np.arange(n) * L
        rows = [base + (g.uniform(-self.p.init_noise, self.p.init_noise, n) * L if self.p.init_noise > 0 else 0.0)
                for g in gens]
        self.position = np.array(rows).reshape(*self.batch_shape, n)
        self.velocity = np.zeros_like(self.position)
        self.rest = np.full((*self.batch_shape, n - 1), L)
        self.t = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        ext = np.diff(self.position, axis=-1) - self.p.rest_length
        return np.concatenate([ext, self.velocity, self.head_velocity[..., None]], axis=-1)

    def add_impulse(self, impulse) -> None:
        j = np.broadcast_to(np.asarray(impulse, dtype=float), (self.p.n_masses,))
        self.velocity = self.velocity + j / self.p.mass

    def _internal_forces(self, x, v, rest):
        p = self.p
        tension = p.stiffness * (np.diff(x, axis=-1) - rest) + p.damping * np.diff(v, axis=-1)
        f = np.zeros_like(x)
        f[..., :-1] += tension
        f[..., 1:] -= tension
        return f

    def energy(self) -> np.ndarray:
        stretch = np.diff(self.position, axis=-1) - self.rest
        return (0.5 * self.p.mass * (self.velocity ** 2).sum(-1)
                + 0.5 * self.p.stiffness * (stretch ** 2).sum(-1))

    def step(self, action) -> StepResult:
        p, dt = self.p, self.spec.dt
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        a = np.broadcast_to(a, (*self.batch_shape, p.n_masses - 1))
        rest = p.rest_length * (1.0 + p.offset * a)
        x, v = self.position, self.velocity
        cap_fwd = p.mu_fwd * GRAVITY * dt
        cap_back = p.mu_back * GRAVITY * dt
        for _ in range(self.spec.substeps):
            v_free = v + dt * self._internal_forces(x, v, rest) / p.mass
            # Coulomb friction as a velocity projection: sticks when the
            # available friction impulse can cancel the free velocity.
            v = np.where(v_free > cap_fwd, v_free - cap_fwd,
                         np.where(v_free < -cap_back, v_free + cap_back, 0.0))
            x = x + dt * v
        self.position, self.velocity, self.rest = x, v, rest
        self.t += 1
        diverged = ~np.isfinite(x).all(axis=-1)
        reward = gaussian_tracking_reward(self.head_velocity, self.spec.v_target, self.spec.reward_sigma)
        return StepResult(
            observation=self.observe(),
            reward=np.where(diverged, 0.0, reward),
            done=self.t >= self.spec.episode_steps,
            info={
                "velocity": self.head_velocity.copy(),
                "position": self.head_position.copy(),
                "diverged": diverged,
            },
        )


def make_env(spec: EnvSpec, batch_shape: tuple[int, ...] = ()):
    if spec.kind == "point_mass":
        return PointMassTracking(spec, batch_shape)
    return ChainCrawler(spec, batch_shape)


def reset(spec: EnvSpec, seed=0, batch_shape: tuple[int, ...] = ()):
    """Build an environment and reset it; returns ``(env, observation)``."""
    env = make_env(spec, batch_shape)
    return env, env.reset(seed)


class RunningNormalizer:
    """Per-dimension running standardization using Chan's parallel update.

    ``normalize`` standardizes with the statistics gathered *before* the
    current sample and then folds the sample in.  Results are clipped to
    ``±clip`` (``None`` disables clipping).
    """

    def __init__(self, dim: int, batch_shape: tuple[int, ...] = (), clip: float | None = 5.0,
                 min_std: float = 1e-8):
        self.dim = dim
        self.batch_shape = tuple(batch_shape)
        self.clip = clip
        self.min_std = min_std
        self.count = 0
        self.mean = np.zeros((*self.batch_shape, dim))
        self.m2 = np.zeros((*self.batch_shape, dim))

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.m2)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def update(self, batch: np.ndarray) -> None:
        """Fold in a block of samples shaped (n, *batch_shape, dim)."""
        batch = np.asarray(batch, dtype=float)
        n_b = batch.shape[0]
        if n_b == 0:
            return
        mean_b = batch.mean(axis=0)
        m2_b = ((batch - mean_b) ** 2).sum(axis=0)
        self._merge(n_b, mean_b, m2_b)

    def push(self, x: np.ndarray) -> None:
        """Single-sample Welford update."""
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def _merge(self, n_b: int, mean_b: np.ndarray, m2_b: np.ndarray) -> None:
        n_a = self.count
        n = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta ** 2 * (n_a * n_b / n)
        self.count = n

    def merge(self, other: "RunningNormalizer") -> "RunningNormalizer":
        out = self.copy()
        if other.count:
            out._merge(other.count, other.mean, other.m2)
        return out

    def copy(self) -> "RunningNormalizer":
        out = RunningNormalizer(self.dim, self.batch_shape, self.clip, self.min_std)
        out.count, out.mean, out.m2 = self.count, self.mean.copy(), self.m2.copy()
        return out

    def normalize(self, obs: np.ndarray, update: bool = True) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if self.count == 0:
            z = np.zeros(np.broadcast_shapes(obs.shape, self.mean.shape))
        else:
            z = (obs - self.mean) / np.maximum(self.std, self.min_std)
            if self.clip is not None:
                z = np.clip(z, -self.clip, self.clip)
        if update:
            self.push(obs)
        return z

    __call__ = normalize


def normalize(obs: np.ndarray, normalizer: RunningNormalizer) -> np.ndarray:
    return normalizer.normalize(obs)


@dataclass
class PerturbationSpec:
    """Impulses ``(time_s, impulse)`` plus an optional plasticity-freeze window in seconds."""

    impulses: list[tuple[float, Sequence[float] | float]] = field(default_factory=list)
    freeze: tuple[float, float] | None = None

    def validate(self, env_spec: EnvSpec) -> None:
        horizon = env_spec.episode_steps * env_spec.control_period
        for time_s, _ in self.impulses:
            if not 0 <= time_s <= horizon:
                raise ConfigurationError(f"impulse time {time_s}s outside episode (0..{horizon}s)")
        if self.freeze is not None:
            t0, t1 = self.freeze
            if not 0 <= t0 <= t1:
                raise ConfigurationError(f"freeze interval {self.freeze} is not well ordered")

    def impulses_at(self, step: int, control_period: float) -> list:
        return [j for time_s, j in self.impulses if int(round(time_s / control_period)) == step]

    def frozen(self, step: int, control_period: float) -> bool:
        if self.freeze is None:
            return False
        t = step * control_period
        return self.freeze[0] <= t < self.freeze[1]


def apply_perturbation(env, spec: PerturbationSpec, t: int) -> bool:
    """Add every impulse scheduled for control step ``t`` to the env's velocities."""
    hits = spec.impulses_at(t, env.spec.control_period)
    for impulse in hits:
        env.add_impulse(impulse)
    return bool(hits)
