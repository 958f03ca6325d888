"""Experiment orchestration: rollouts, meta-training, condition grids and persistence."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import analysis
from .analysis import AttractorReport, Verdict, WeightTrajectory
from .envs import (ChainParams, EnvSpec, PerturbationSpec, PointMassParams, RunningNormalizer,
                   apply_perturbation, make_env)
from .errors import ConfigurationError, NumericDivergenceError, PersistenceError
from .evolution import (AdaptiveES, AdaptiveESConfig, GenomeLayout, OpenAIES, OpenAIESConfig,
                        optimizer_from_state)
from .network import NetworkShape, PlasticNetwork
from .plasticity import (LayerCoefficients, PlasticityRule, Stabilization, UpdateSchedule,
                         condition_preset, load_rule, scheduled_step)

log = logging.getLogger(__name__)

RECORD_FORMAT = "hebbian-run-record"
CHECKPOINT_FORMAT = "hebbian-checkpoint"
GENOME_FORMAT = "hebbian-genome"
FILE_VERSION = 1

# stream tags for seed derivation
_ES_STREAM, _ROLLOUT_STREAM, _EVAL_STREAM = 0, 1, 2


def derive_seed(master: int, *keys: int) -> int:
    """Counter-based seed split: the same key path always yields the same seed."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1, np.uint32)[0])


@dataclass
class ExperimentConfig:
    """One meta-training experiment.

    ``condition`` (A-E) overrides ``stabilization``, ``window`` and
    ``f_hebb`` with the preset values when set.
    """

    env: EnvSpec = field(default_factory=EnvSpec)
    hidden: tuple[int, ...] = (16,)
    condition: str | None = None
    stabilization: str = "maxnorm"
    oja_averaged: bool = True
    window: int = 10
    f_hebb: float = 5.0
    eta_mode: str | float = "evolved"
    weight_init: float = 0.1
    optimizer: str = "adaptive"
    popsize: int = 64
    sigma_init: float | None = None
    elite_ratio: float = 0.1
    generations: int = 150
    repeats: int = 2
    seed: int = 0
    common_random_numbers: bool = True
    fitness_floor: float = -1e6
    normalizer_clip: float | None = 5.0
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.env, dict):
            self.env = env_spec_from_dict(self.env)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        self.shape  # noqa: B018 - validates layer sizes
        stab, window, schedule = self.resolved()
        if self.optimizer not in ("adaptive", "openai"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "openai" and self.popsize % 2:
            raise ConfigurationError("OpenAI-ES with mirrored sampling needs an even popsize")
        if self.popsize < 2 or self.generations < 0 or self.repeats < 1 or self.workers < 1:
            raise ConfigurationError("popsize >= 2, generations >= 0, repeats >= 1 and workers >= 1 required")
        if self.weight_init < 0:
            raise ConfigurationError("weight_init must be >= 0")

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape((self.env.obs_dim, *self.hidden, self.env.act_dim))

    def resolved(self) -> tuple[Stabilization, int, UpdateSchedule]:
        if self.condition:
            stab, window, ratio = condition_preset(self.condition)
            schedule = UpdateSchedule.from_ratio(ratio, self.env.control_hz)
        else:
            stab, window = Stabilization.parse(self.stabilization), int(self.window)
            schedule = UpdateSchedule(self.env.control_hz, float(self.f_hebb))
        stab = dataclasses.replace(stab, oja_averaged=self.oja_averaged)
        return stab, window, schedule

    @property
    def layout(self) -> GenomeLayout:
        return GenomeLayout(self.shape, self.eta_mode)

    def rule_for(self, genome: np.ndarray) -> PlasticityRule:
        stab, window, schedule = self.resolved()
        return self.layout.decode(genome, stabilization=stab, window=window, schedule=schedule)

    def to_dict(self) -> dict:
        return flatten_dict(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, flat: dict) -> "ExperimentConfig":
        nested = unflatten_dict(flat)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(nested) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**nested)

    def replace(self, **changes) -> "ExperimentConfig":
        flat = self.to_dict()
        for key, value in changes.items():
            flat[key.replace("__", ".")] = value
        return ExperimentConfig.from_dict(flat)

    def hash(self) -> str:
        flat = self.to_dict()
        for volatile in ("workers", "output_dir"):
            flat.pop(volatile, None)
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]


def flatten_dict(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten_dict(v, key + "."))
        else:
            out[key] = list(v) if isinstance(v, tuple) else v
    return out


def unflatten_dict(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return out


def env_spec_from_dict(d: dict) -> EnvSpec:
    d = dict(d)
    if isinstance(d.get("point_mass"), dict):
        d["point_mass"] = PointMassParams(**d["point_mass"])
    if isinstance(d.get("chain"), dict):
        d["chain"] = ChainParams(**d["chain"])
    try:
        return EnvSpec(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad env section: {exc}") from exc


# --------------------------------------------------------------------------- rollouts


@dataclass
class RolloutHooks:
    """Deployment-time interventions.

    ``swaps`` maps a control step to the coefficient set loaded at that step
    (a PlasticityRule or a path to a rule JSON file).  Weights are carried
    over unchanged; only the coefficients are replaced.
    """

    perturbation: PerturbationSpec | None = None
    freeze_steps: tuple[int, int] | None = None
    swaps: dict[int, PlasticityRule | str | Path] = field(default_factory=dict)

    def frozen(self, t: int, control_period: float) -> bool:
        if self.freeze_steps is not None and self.freeze_steps[0] <= t < self.freeze_steps[1]:
            return True
        return self.perturbation is not None and self.perturbation.frozen(t, control_period)


@dataclass
class BatchRollout:
    returns: np.ndarray          # (batch,) summed reward, floored where diverged
    diverged: np.ndarray         # (batch,)
    rewards: np.ndarray | None = None   # (T, batch)
    actions: np.ndarray | None = None   # (T, batch, act_dim)
    observations: np.ndarray | None = None  # (T, batch, obs_dim) normalized network inputs
    weights: np.ndarray | None = None   # (T + 1, batch, n_weights)
    ticks: np.ndarray | None = None     # (T,) bool, Hebbian update applied at step t


def _init_weights(shape: NetworkShape, seeds: np.ndarray, scale: float) -> list[np.ndarray]:
    rows = []
    for s in np.ravel(seeds):
        rng = np.random.default_rng(int(s))
        rows.append([rng.uniform(-scale, scale, size=ws) for ws in shape.weight_shapes])
    return [np.stack([r[k] for r in rows]) for k in range(shape.n_layers)]


def rollout_batch(
    rule: PlasticityRule,
    config: ExperimentConfig,
    env_seeds: Sequence[int],
    weight_seeds: Sequence[int],
    normalizer: RunningNormalizer | None = None,
    hooks: RolloutHooks | None = None,
    record: bool = False,
) -> BatchRollout:
    """Run one episode for a batch of independent plastic networks.

    ``rule`` may carry a leading batch axis on its coefficient matrices; row
    ``i`` uses ``env_seeds[i]`` and ``weight_seeds[i]``.  A shared
    ``normalizer`` carries statistics over from earlier episodes.
    """
    spec = config.env
    shape = config.shape
    env_seeds = np.asarray(env_seeds, dtype=np.int64)
    batch = env_seeds.shape
    hooks = hooks or RolloutHooks()
    net = PlasticNetwork(shape, window=rule.window, batch_shape=batch)
    net.set_weights(_init_weights(shape, np.asarray(weight_seeds), config.weight_init))
    env = make_env(spec, batch)
    obs = env.reset(env_seeds)
    if normalizer is None:
        normalizer = RunningNormalizer(spec.obs_dim, batch, clip=config.normalizer_clip)
    if hooks.perturbation is not None:
        hooks.perturbation.validate(spec)

    T = spec.episode_steps
    total = np.zeros(batch)
    env_bad = np.zeros(batch, dtype=bool)
    rec_w = rec_r = rec_a = rec_o = rec_tick = None
    if record:
        rec_w = np.empty((T + 1, *batch, shape.n_connections))
        rec_w[0] = net.flat_weights()
        rec_r = np.empty((T, *batch))
        rec_a = np.empty((T, *batch, spec.act_dim))
        rec_o = np.empty((T, *batch, spec.obs_dim))
        rec_tick = np.zeros(T, dtype=bool)

    for t in range(T):
        if t in hooks.swaps:
            swap = hooks.swaps[t]
            new_rule = load_rule(swap) if isinstance(swap, (str, Path)) else swap
            rule = rule.with_coefficients(new_rule.layers)
        x = normalizer.normalize(obs)
        with np.errstate(invalid="ignore", over="ignore"):
            action = net.forward(np.nan_to_num(x, nan=0.0, posinf=0.0, neginf=0.0))
        if not hooks.frozen(t, spec.control_period):
            ticked = scheduled_step(net, rule, t)
            if record:
                rec_tick[t] = ticked
        if hooks.perturbation is not None:
            apply_perturbation(env, hooks.perturbation, t)
        with np.errstate(invalid="ignore", over="ignore"):
            res = env.step(action)
        obs = res.observation
        bad_now = res.info.get("diverged")
        if bad_now is not None:
            env_bad |= bad_now
            obs = np.where(env_bad[..., None], 0.0, obs)
        total += np.where(env_bad | net.diverged, 0.0, res.reward)
        if record:
            rec_w[t + 1] = net.flat_weights()
            rec_r[t] = res.reward
            rec_a[t] = action
            rec_o[t] = x

    diverged = env_bad | net.diverged
    returns = np.where(diverged, config.fitness_floor, total)
    return BatchRollout(returns, diverged, rec_r, rec_a, rec_o, rec_w, rec_tick)


def _candidate_seeds(config: ExperimentConfig, generation: int, repeat: int, indices: np.ndarray):
    if config.common_random_numbers:
        s = derive_seed(config.seed, _ROLLOUT_STREAM, generation, repeat)
        env_seeds = np.full(indices.shape, s, dtype=np.int64)
        w_seeds = np.full(indices.shape, derive_seed(s, 1), dtype=np.int64)
    else:
        env_seeds = np.array([derive_seed(config.seed, _ROLLOUT_STREAM, generation, repeat, i) for i in indices],
                             dtype=np.int64)
        w_seeds = np.array([derive_seed(s, 1) for s in env_seeds], dtype=np.int64)
    return env_seeds, w_seeds


def evaluate_chunk(config: ExperimentConfig, genomes: np.ndarray, generation: int,
                   indices: np.ndarray) -> np.ndarray:
    """Fitness (mean return over ``config.repeats`` episodes) of a block of genomes.

    Observation statistics persist across the repeats of one candidate.
    """
    genomes = np.asarray(genomes, dtype=float)
    rule = config.rule_for(genomes)
    batch = (genomes.shape[0],)
    normalizer = RunningNormalizer(config.env.obs_dim, batch, clip=config.normalizer_clip)
    acc = np.zeros(batch)
    for r in range(config.repeats):
        env_seeds, w_seeds = _candidate_seeds(config, generation, r, np.asarray(indices))
        out = rollout_batch(rule, config, env_seeds, w_seeds, normalizer=normalizer)
        acc += out.returns
    fitness = acc / config.repeats
    return np.where(np.isfinite(fitness), fitness, config.fitness_floor)


def _evaluate_chunk_packed(args):
    cfg_dict, genomes, generation, indices = args
    return evaluate_chunk(ExperimentConfig.from_dict(cfg_dict), genomes, generation, indices)


def evaluate_population(config: ExperimentConfig, population: np.ndarray, generation: int,
                        pool: ProcessPoolExecutor | None = None) -> np.ndarray:
    """Evaluate every candidate; result order and values do not depend on ``pool``."""
    population = np.asarray(population, dtype=float)
    n = population.shape[0]
    idx = np.arange(n)
    if pool is None or config.workers <= 1:
        return evaluate_chunk(config, population, generation, idx)
    chunks = np.array_split(idx, min(config.workers, n))
    cfg = config.to_dict()
    jobs = [(cfg, population[c], generation, c) for c in chunks if c.size]
    return np.concatenate(list(pool.map(_evaluate_chunk_packed, jobs)))


# --------------------------------------------------------------------------- meta-training


def make_optimizer(config: ExperimentConfig):
    rng = np.random.default_rng(derive_seed(config.seed, _ES_STREAM))
    d = len(config.layout)
    if config.optimizer == "adaptive":
        kw = {} if config.sigma_init is None else {"sigma_init": config.sigma_init}
        es_cfg = AdaptiveESConfig(popsize=config.popsize, elite_ratio=config.elite_ratio, **kw)
        return AdaptiveES(d, es_cfg, rng=rng)
    kw = {} if config.sigma_init is None else {"sigma_init": config.sigma_init}
    return OpenAIES(d, OpenAIESConfig(popsize=config.popsize, **kw), rng=rng)


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    history: list[dict]
    best_genome: list[float]
    best_fitness: float
    final_mean: list[float]
    evaluations: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def fitness_curve(self) -> np.ndarray:
        return np.array([h["best"] for h in self.history])

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def to_dict(self) -> dict:
        return {"format": RECORD_FORMAT, "version": FILE_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        _check_header(doc, RECORD_FORMAT)
        names = {f.name for f in dataclasses.fields(cls)}
        try:
            return cls(**{k: v for k, v in doc.items() if k in names})
        except TypeError as exc:
            raise PersistenceError(f"malformed run record: {exc}") from exc


def _check_header(doc, fmt: str) -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise PersistenceError(f"expected a {fmt!r} document")
    if doc.get("version") != FILE_VERSION:
        raise PersistenceError(f"{fmt} version {doc.get('version')!r} is not supported (need {FILE_VERSION})")


def _dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True)


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def _read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc


def save_record(record: RunRecord, path: str | Path) -> None:
    _write_atomic(Path(path), _dumps(record.to_dict()))


def load_record(path: str | Path) -> RunRecord:
    return RunRecord.from_dict(_read_json(path))


def save_checkpoint(path: str | Path, config: ExperimentConfig, optimizer, history, best_genome,
                    best_fitness) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": FILE_VERSION,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "generation": optimizer.generation,
        "optimizer": optimizer.state_dict(),
        "history": history,
        "best_genome": None if best_genome is None else list(map(float, best_genome)),
        "best_fitness": best_fitness,
    }
    _write_atomic(Path(path), _dumps(doc))


def load_checkpoint(path: str | Path) -> dict:
    doc = _read_json(path)
    _check_header(doc, CHECKPOINT_FORMAT)
    try:
        doc["optimizer"] = optimizer_from_state(doc["optimizer"])
        doc["config"] = ExperimentConfig.from_dict(doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"malformed checkpoint: {exc}") from exc
    return doc


def save_genome(path: str | Path, genome: np.ndarray, config: ExperimentConfig) -> None:
    doc = {
        "format": GENOME_FORMAT,
        "version": FILE_VERSION,
        "layer_sizes": list(config.shape.layer_sizes),
        "eta_mode": config.eta_mode,
        "layout": config.layout.describe(),
        "genome": list(map(float, genome)),
    }
    _write_atomic(Path(path), _dumps(doc))


def load_genome(path: str | Path) -> np.ndarray:
    doc = _read_json(path)
    _check_header(doc, GENOME_FORMAT)
    return np.array(doc["genome"], dtype=float)


def write_curve_csv(record: RunRecord, path: str | Path) -> None:
    cols = {k: [h[k] for h in record.history] for k in ("generation", "best", "mean", "std")}
    analysis.write_csv(path, cols)


def run_meta_training(
    config: ExperimentConfig,
    resume: str | Path | None = None,
    stop_after: int | None = None,
    progress: Callable[[dict], None] | None = None,
) -> RunRecord:
    """ask -> evaluate -> tell for ``config.generations`` generations.

    With ``output_dir`` set, a checkpoint is written after every generation
    (``checkpoint.json``) together with the record and the fitness curve.
    ``resume`` continues from a checkpoint file; ``stop_after`` ends the run
    early after that many generations in total (used to test resumption).
    """
    start = time.perf_counter()
    out_dir = Path(config.output_dir) if config.output_dir else None
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck["config_hash"] != config.hash():
            raise PersistenceError("checkpoint was produced by a different configuration")
        es, history = ck["optimizer"], ck["history"]
        best_genome = None if ck["best_genome"] is None else np.array(ck["best_genome"])
        best_fitness = ck["best_fitness"]
    else:
        es, history, best_genome, best_fitness = make_optimizer(config), [], None, -math.inf
    end = config.generations if stop_after is None else min(stop_after, config.generations)

    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        while es.generation < end:
            g = es.generation
            population = es.ask()
            fitness = evaluate_population(config, population, g, pool)
            es.tell(population, fitness)
            i = int(np.argmax(fitness))
            if fitness[i] > best_fitness:
                best_fitness, best_genome = float(fitness[i]), population[i].copy()
            stats = {
                "generation": g,
                "best": float(fitness[i]),
                "mean": float(np.mean(fitness)),
                "std": float(np.std(fitness)),
                "best_so_far": float(best_fitness),
            }
            history.append(stats)
            if progress:
                progress(stats)
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoint.json", config, es, history, best_genome, best_fitness)
    finally:
        if pool is not None:
            pool.shutdown()

    if best_genome is None:
        best_genome = es.mean.copy()
    record = RunRecord(
        config=config.to_dict(),
        config_hash=config.hash(),
        history=history,
        best_genome=list(map(float, best_genome)),
        best_fitness=float(best_fitness),
        final_mean=list(map(float, es.mean)),
        wall_clock=time.perf_counter() - start,
    )
    if out_dir is not None:
        save_record(record, out_dir / "record.json")
        write_curve_csv(record, out_dir / "curve.csv")
        save_genome(out_dir / "best_genome.json", best_genome, config)
    return record


# --------------------------------------------------------------------------- single rollouts


@dataclass
class RolloutResult:
    fitness: float
    diverged: bool
    trajectory: WeightTrajectory
    rewards: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    ticks: np.ndarray
    report: AttractorReport

    def series(self) -> np.ndarray:
        return analysis.plasticity_series(self.trajectory)


def run_rollout(
    genome_or_rule,
    config: ExperimentConfig,
    seed: int = 0,
    hooks: RolloutHooks | None = None,
    rho: float = 0.9,
    dump: str | Path | None = None,
) -> RolloutResult:
    """Deploy one plastic network for a full episode and analyze its weights.

    ``seed`` drives both the environment reset and the weight initialization.
    """
    if isinstance(genome_or_rule, PlasticityRule):
        rule = genome_or_rule
    else:
        genome = np.asarray(genome_or_rule, dtype=float)
        if genome.shape != (len(config.layout),):
            raise ConfigurationError(f"genome length {genome.shape} does not match layout {len(config.layout)}")
        rule = config.rule_for(genome)
    out = rollout_batch(rule, config, [seed], [derive_seed(seed, 1)], hooks=hooks, record=True)
    traj = WeightTrajectory(np.arange(config.env.episode_steps + 1), out.weights[:, 0],
                            config.shape.layer_sizes)
    diverged = bool(out.diverged[0])
    if diverged or not np.all(np.isfinite(traj.weights)):
        report = AttractorReport(float("nan"), float("nan"), rho, Verdict.DIVERGED)
    else:
        report = analysis.analyze_trajectory(traj, config.env.control_hz, rho)
    result = RolloutResult(
        fitness=float(out.returns[0]),
        diverged=diverged,
        trajectory=traj,
        rewards=out.rewards[:, 0],
        actions=out.actions[:, 0],
        observations=out.observations[:, 0],
        ticks=out.ticks,
        report=report,
    )
    if dump is not None:
        write_trajectory_dump(result, dump)
    return result


def write_trajectory_dump(result: RolloutResult, path: str | Path) -> None:
    """CSV of t, observations, actions, reward; weight snapshots at Hebbian ticks go to a sibling file."""
    path = Path(path)
    weights_path = path.with_name(path.stem + "_weights.csv")
    T = result.rewards.shape[0]
    cols: dict = {"t": np.arange(T)}
    for i in range(result.observations.shape[1]):
        cols[f"obs_{i}"] = result.observations[:, i]
    for i in range(result.actions.shape[1]):
        cols[f"action_{i}"] = result.actions[:, i]
    cols["reward"] = result.rewards
    tick_steps = np.flatnonzero(result.ticks)
    ref = np.full(T, -1)
    ref[tick_steps] = np.arange(tick_steps.size)
    cols["weights_row"] = ref
    analysis.write_csv(path, cols)
    snaps = result.trajectory.weights[tick_steps + 1]
    wcols: dict = {"t": tick_steps}
    for j in range(snaps.shape[1]):
        wcols[f"w_{j}"] = snaps[:, j]
    analysis.write_csv(weights_path, wcols)


def evaluate_genome(genome, config: ExperimentConfig, n_rollouts: int, rho: float = 0.9,
                    hooks: RolloutHooks | None = None, seed_offset: int = 0) -> list[RolloutResult]:
    """Independent deployment rollouts with evaluation seeds derived from the master seed."""
    return [
        run_rollout(genome, config, derive_seed(config.seed, _EVAL_STREAM, seed_offset + i), hooks=hooks, rho=rho)
        for i in range(n_rollouts)
    ]


# --------------------------------------------------------------------------- grids


@dataclass
class GridCell:
    window: int
    f_hebb: float
    seeds: list[int]
    converged_ratio: float
    median_fitness: float
    n_evaluations: int
    status: str = "ok"
    error: str | None = None


def run_condition_grid(
    base: ExperimentConfig,
    windows: Sequence[int],
    f_hebbs: Sequence[float],
    seeds: Sequence[int],
    n_eval: int = 10,
    rho: float = 0.9,
    output_dir: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[GridCell]:
    """Meta-train and evaluate every (M, f_hebb) pair with max normalization."""
    cells = []
    for m in windows:
        for f in f_hebbs:
            try:
                verdicts, fits = [], []
                for s in seeds:
                    cfg = base.replace(condition=None, stabilization="maxnorm", window=int(m),
                                       f_hebb=float(f), seed=int(s), output_dir=None)
                    rec = run_meta_training(cfg)
                    fits.append(rec.best_fitness)
                    for res in evaluate_genome(np.array(rec.best_genome), cfg, n_eval, rho):
                        verdicts.append(res.report.verdict is Verdict.FIXED_POINT)
                cell = GridCell(int(m), float(f), list(map(int, seeds)), float(np.mean(verdicts)),
                                float(np.median(fits)), len(verdicts))
            except (ConfigurationError, NumericDivergenceError, PersistenceError, ValueError) as exc:
                log.warning("grid cell M=%s f_hebb=%s failed: %s", m, f, exc)
                cell = GridCell(int(m), float(f), list(map(int, seeds)), float("nan"), float("nan"), 0,
                                status="failed", error=str(exc))
            cells.append(cell)
            if progress:
                progress(f"M={m} f_hebb={f}: {cell.status} ratio={cell.converged_ratio:.3f}")
    if output_dir is not None:
        write_grid_csv(cells, windows, f_hebbs, Path(output_dir))
    return cells


def write_grid_csv(cells: Sequence[GridCell], windows, f_hebbs, out_dir: Path) -> None:
    """Two files: a converged-ratio table (rows M, columns f_hebb) and a long-form listing."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lookup = {(c.window, c.f_hebb): c for c in cells}
    with open(out_dir / "grid_converged.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", *[f"f_hebb={float(f):g}" for f in f_hebbs]])
        for m in windows:
            row = []
            for f in f_hebbs:
                c = lookup[(int(m), float(f))]
                row.append("failed" if c.status != "ok" else repr(c.converged_ratio))
            w.writerow([int(m), *row])
    with open(out_dir / "grid_cells.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "f_hebb", "converged_ratio", "median_fitness", "n_evaluations", "status"])
        for c in cells:
            w.writerow([c.window, c.f_hebb, c.converged_ratio, c.median_fitness, c.n_evaluations, c.status])
