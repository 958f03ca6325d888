"""Genome encoding and the two evolution strategies used for meta-training.

Both optimizers follow an ask/tell protocol and *maximize* fitness.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, PersistenceError
from .network import NetworkShape
from .plasticity import LayerCoefficients, PlasticityRule

_FIELDS_EVOLVED = ("A", "B", "C", "D", "eta")
_FIELDS_CONSTANT = ("A", "B", "C", "D")


class Segment(NamedTuple):
    layer: int
    name: str
    start: int
    stop: int
    shape: tuple[int, int]


class GenomeLayout:
    """Maps a flat parameter vector onto per-layer ABCD(+η) matrices.

    Order: layer by layer; inside a layer A, B, C, D and (if evolved) η, each
    flattened row-major.
    """

    def __init__(self, shape: NetworkShape, eta_mode: str | float = "evolved"):
        self.shape = shape
        self.eta_mode = eta_mode
        names = _FIELDS_EVOLVED if eta_mode == "evolved" else _FIELDS_CONSTANT
        self.segments: list[Segment] = []
        pos = 0
        for k, (r, c) in enumerate(shape.weight_shapes):
            for name in names:
                self.segments.append(Segment(k, name, pos, pos + r * c, (r, c)))
                pos += r * c
        self.size = pos

    def __len__(self):
        return self.size

    def describe(self) -> list[dict]:
        return [seg._asdict() for seg in self.segments]

    def encode(self, rule: PlasticityRule) -> np.ndarray:
        if len(rule.layers) != self.shape.n_layers:
            raise ConfigurationError("rule has a different number of layers than the layout")
        out = np.empty(self.size)
        for seg in self.segments:
            arr = getattr(rule.layers[seg.layer], seg.name)
            if arr.shape != seg.shape:
                raise ConfigurationError(f"layer {seg.layer} {seg.name} has shape {arr.shape}, expected {seg.shape}")
            out[seg.start:seg.stop] = arr.ravel()
        return out

    def decode_layers(self, genome: np.ndarray) -> list[LayerCoefficients]:
        """Split one genome, or a batch of genomes (..., d), into layer coefficients."""
        genome = np.asarray(genome, dtype=float)
        if genome.shape[-1] != self.size:
            raise ConfigurationError(f"genome length {genome.shape[-1]} != layout size {self.size}")
        batch = genome.shape[:-1]
        parts: list[dict] = [{} for _ in range(self.shape.n_layers)]
        for seg in self.segments:
            parts[seg.layer][seg.name] = genome[..., seg.start:seg.stop].reshape(*batch, *seg.shape)
        if self.eta_mode != "evolved":
            for p in parts:
                p["eta"] = np.full_like(p["A"], float(self.eta_mode))
        return [LayerCoefficients(**p) for p in parts]

    def decode(self, genome: np.ndarray, **rule_kwargs) -> PlasticityRule:
        return PlasticityRule(layers=self.decode_layers(genome), eta_mode=self.eta_mode, **rule_kwargs)


def _selection_order(fitness: np.ndarray) -> np.ndarray:
    """Indices from best to worst; NaN last, ties by lower index."""
    f = np.asarray(fitness, dtype=float)
    nan = np.isnan(f)
    key = np.where(nan, 0.0, -f)
    return np.lexsort((np.arange(f.size), key, nan))


def center_rank(fitness: np.ndarray) -> np.ndarray:
    """Map fitness ranks linearly onto [-0.5, 0.5], best -> +0.5.

    Tied values share their average rank; NaN is treated as the worst value.
    """
    f = np.asarray(fitness, dtype=float).ravel()
    n = f.size
    if n < 2:
        raise ConfigurationError("center ranking needs at least two fitness values")
    f = np.where(np.isnan(f), -np.inf, f)
    values, inverse, counts = np.unique(f, return_inverse=True, return_counts=True)
    first = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_rank = first + (counts - 1) / 2.0
    ranks = avg_rank[inverse.ravel()]
    return ranks / (n - 1) - 0.5


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    name = state["bit_generator"]
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)


@dataclass
class AdaptiveESConfig:
    popsize: int = 128
    sigma_init: float = 0.5
    c_mu: float = 1.0
    c_sigma: float = 0.1
    elite_ratio: float = 0.1
    init_low: float = -1.0
    init_high: float = 1.0
    # False: step-size estimate uses the pre-update mean.
    sigma_from_new_mean: bool = False

    def __post_init__(self):
        if self.popsize < 2:
            raise ConfigurationError("population size must be >= 2")
        if not 0 < self.elite_ratio <= 1:
            raise ConfigurationError("elite_ratio must be in (0, 1]")
        if self.sigma_init <= 0:
            raise ConfigurationError("sigma_init must be positive")

    @property
    def n_parents(self) -> int:
        return max(1, math.ceil(self.elite_ratio * self.popsize - 1e-9))


class AdaptiveES:
    """Truncation-selection ES with a per-dimension, parent-estimated step size.

    Each generation samples ``x_i = mean + sigma * z_i``, keeps the best
    ``ceil(elite_ratio * popsize)`` candidates with equal weights, moves the
    mean toward their average and blends ``sigma`` with the parents' RMS
    deviation.
    """

    name = "adaptive"

    def __init__(self, num_dims: int, config: AdaptiveESConfig | None = None,
                 rng: np.random.Generator | int | None = None, mean: np.ndarray | None = None):
        self.config = config or AdaptiveESConfig()
        self.num_dims = int(num_dims)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if mean is None:
            mean = self.rng.uniform(self.config.init_low, self.config.init_high, self.num_dims)
        self.mean = np.array(mean, dtype=float)
        self.sigma = np.full(self.num_dims, float(self.config.sigma_init))
        self.generation = 0
        self._pending: np.ndarray | None = None

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.config.popsize, self.num_dims))
        self._pending = self.mean + self.sigma * z
        return self._pending.copy()

    def tell(self, population: np.ndarray, fitness: np.ndarray) -> None:
        population = np.asarray(population, dtype=float)
        fitness = np.asarray(fitness, dtype=float)
        if population.shape[0] != fitness.shape[0]:
            raise ConfigurationError("population and fitness sizes differ")
        parents = population[_selection_order(fitness)[: self.config.n_parents]]
        w = 1.0 / parents.shape[0]
        old_mean = self.mean
        y_w = w * (parents - old_mean).sum(axis=0)
        self.mean = old_mean + self.config.c_mu * y_w
        ref = self.mean if self.config.sigma_from_new_mean else old_mean
        sigma_hat = np.sqrt(w * ((parents - ref) ** 2).sum(axis=0))
        c = self.config.c_sigma
        self.sigma = (1 - c) * self.sigma + c * sigma_hat
        self.generation += 1
        self._pending = None

    def state_dict(self) -> dict:
        return {
            "kind": self.name,
            "generation": self.generation,
            "config": asdict(self.config),
            "mean": self.mean.tolist(),
            "sigma": self.sigma.tolist(),
            "rng": _rng_state(self.rng),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "AdaptiveES":
        if state.get("kind") != cls.name:
            raise PersistenceError(f"state is for optimizer {state.get('kind')!r}, not {cls.name!r}")
        es = cls(len(state["mean"]), AdaptiveESConfig(**state["config"]),
                 rng=_restore_rng(state["rng"]), mean=np.array(state["mean"]))
        es.sigma = np.array(state["sigma"], dtype=float)
        es.generation = int(state["generation"])
        return es


@dataclass
class OpenAIESConfig:
    popsize: int = 512
    lr_init: float = 0.1
    lr_decay: float = 0.999
    sigma_init: float = 0.2
    sigma_decay: float = 0.995
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mirrored: bool = True
    init_low: float = -1.0
    init_high: float = 1.0

    def __post_init__(self):
        if self.popsize < 2:
            raise ConfigurationError("population size must be >= 2")
        if self.mirrored and self.popsize % 2:
            raise ConfigurationError("mirrored sampling needs an even population size")
        if min(self.lr_init, self.lr_decay, self.sigma_init, self.sigma_decay) <= 0:
            raise ConfigurationError("learning-rate and mutation schedules must be positive")


class OpenAIES:
    """Search-gradient ES: center-ranked fitness, Adam on the mean, decaying lr and sigma."""

    name = "openai"

    def __init__(self, num_dims: int, config: OpenAIESConfig | None = None,
                 rng: np.random.Generator | int | None = None, mean: np.ndarray | None = None):
        self.config = config or OpenAIESConfig()
        self.num_dims = int(num_dims)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if mean is None:
            mean = self.rng.uniform(self.config.init_low, self.config.init_high, self.num_dims)
        self.mean = np.array(mean, dtype=float)
        self.lr = float(self.config.lr_init)
        self.sigma = float(self.config.sigma_init)
        self.m = np.zeros(self.num_dims)
        self.v = np.zeros(self.num_dims)
        self.t = 0
        self.generation = 0
        self._noise: np.ndarray | None = None

    def ask(self) -> np.ndarray:
        n = self.config.popsize
        if self.config.mirrored:
            half = self.rng.standard_normal((n // 2, self.num_dims))
            z = np.concatenate([half, -half])
        else:
            z = self.rng.standard_normal((n, self.num_dims))
        self._noise = z
        return self.mean + self.sigma * z

    def gradient(self, population: np.ndarray, fitness: np.ndarray) -> np.ndarray:
        z = (np.asarray(population, dtype=float) - self.mean) / self.sigma
        shaped = center_rank(fitness)
        return shaped @ z / (len(shaped) * self.sigma)

    def tell(self, population: np.ndarray, fitness: np.ndarray) -> None:
        population = np.asarray(population, dtype=float)
        if population.shape[0] != np.asarray(fitness).shape[0]:
            raise ConfigurationError("population and fitness sizes differ")
        g = self.gradient(population, fitness)
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        self.mean = self.mean + self.lr * m_hat / (np.sqrt(v_hat) + c.eps)
        self.generation += 1
        self.lr = c.lr_init * c.lr_decay ** self.generation
        self.sigma = c.sigma_init * c.sigma_decay ** self.generation
        self._noise = None

    def state_dict(self) -> dict:
        return {
            "kind": self.name,
            "generation": self.generation,
            "config": asdict(self.config),
            "mean": self.mean.tolist(),
            "lr": self.lr,
            "sigma": self.sigma,
            "adam": {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t},
            "rng": _rng_state(self.rng),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "OpenAIES":
        if state.get("kind") != cls.name:
            raise PersistenceError(f"state is for optimizer {state.get('kind')!r}, not {cls.name!r}")
        es = cls(len(state["mean"]), OpenAIESConfig(**state["config"]),
                 rng=_restore_rng(state["rng"]), mean=np.array(state["mean"]))
        es.lr = float(state["lr"])
        es.sigma = float(state["sigma"])
        es.m = np.array(state["adam"]["m"], dtype=float)
        es.v = np.array(state["adam"]["v"], dtype=float)
        es.t = int(state["adam"]["t"])
        es.generation = int(state["generation"])
        return es


def optimizer_from_state(state: dict):
    kinds = {AdaptiveES.name: AdaptiveES, OpenAIES.name: OpenAIES}
    try:
        return kinds[state["kind"]].from_state_dict(state)
    except KeyError:
        raise PersistenceError(f"unknown optimizer state kind {state.get('kind')!r}") from None
