import json

import numpy as np
import pytest

from hebbian_attractors.analysis import Verdict, read_csv
from hebbian_attractors.envs import EnvSpec, PerturbationSpec
from hebbian_attractors.errors import ConfigurationError, PersistenceError
from hebbian_attractors.harness import (ExperimentConfig, RolloutHooks, derive_seed, evaluate_genome,
                                        load_checkpoint, load_genome, load_record, run_condition_grid,
                                        run_meta_training, run_rollout, save_genome, save_record)
from hebbian_attractors.plasticity import save_rule


def small_config(**kw):
    base = dict(env=EnvSpec(episode_steps=40), hidden=(4,), popsize=8, generations=3, repeats=2, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def random_genome(cfg, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, len(cfg.layout))


# ---- config

def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert len({derive_seed(0, 1, g) for g in range(100)}) == 100


def test_config_round_trip_and_hash():
    cfg = small_config(condition="E")
    flat = cfg.to_dict()
    assert "env.point_mass.drag" in flat
    back = ExperimentConfig.from_dict(json.loads(json.dumps(flat)))
    assert back == cfg and back.hash() == cfg.hash()
    assert cfg.replace(workers=4).hash() == cfg.hash()
    assert cfg.replace(seed=4).hash() != cfg.hash()
    assert cfg.replace(env__v_target=0.5).env.v_target == 0.5


def test_config_condition_resolution():
    stab, window, schedule = small_config(condition="E").resolved()
    assert (stab.kind, window, schedule.period) == ("maxnorm", 10, 4)
    stab, window, schedule = small_config(condition=None, stabilization="clip:5", window=2, f_hebb=10).resolved()
    assert (stab.kind, stab.epsilon, window, schedule.period) == ("clip", 5.0, 2, 2)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        small_config(optimizer="cma")
    with pytest.raises(ConfigurationError):
        small_config(optimizer="openai", popsize=7)
    with pytest.raises(ConfigurationError):
        small_config(condition="Z")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"bogus": 1})


# ---- meta-training

def test_zero_generations():
    cfg = small_config(generations=0)
    rec = run_meta_training(cfg)
    assert rec.history == [] and len(rec.best_genome) == len(cfg.layout)


def test_training_is_deterministic_and_best_so_far_monotone():
    a = run_meta_training(small_config())
    b = run_meta_training(small_config())
    assert a.history == b.history and a.best_genome == b.best_genome
    best = [h["best_so_far"] for h in a.history]
    assert best == sorted(best)


def test_worker_count_does_not_change_results():
    a = run_meta_training(small_config(workers=1))
    b = run_meta_training(small_config(workers=3))
    assert a.history == b.history and a.final_mean == b.final_mean


def test_openai_optimizer_runs():
    rec = run_meta_training(small_config(optimizer="openai"))
    assert len(rec.history) == 3


def test_resume_equals_uninterrupted(tmp_path):
    full = run_meta_training(small_config(generations=4))
    cfg = small_config(generations=4, output_dir=str(tmp_path))
    run_meta_training(cfg, stop_after=2)
    assert load_checkpoint(tmp_path / "checkpoint.json")["generation"] == 2
    resumed = run_meta_training(cfg, resume=tmp_path / "checkpoint.json")
    assert resumed.history == full.history and resumed.final_mean == full.final_mean
    with pytest.raises(PersistenceError):
        run_meta_training(small_config(generations=4, seed=9), resume=tmp_path / "checkpoint.json")


def test_output_files_and_byte_identical_resave(tmp_path):
    cfg = small_config(output_dir=str(tmp_path))
    run_meta_training(cfg)
    for name in ("record.json", "checkpoint.json", "curve.csv", "best_genome.json"):
        assert (tmp_path / name).exists()
    rec = load_record(tmp_path / "record.json")
    save_record(rec, tmp_path / "again.json")
    save_record(load_record(tmp_path / "again.json"), tmp_path / "again2.json")
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "again2.json").read_bytes()
    assert read_csv(tmp_path / "curve.csv")["generation"].tolist() == [0, 1, 2]
    g = load_genome(tmp_path / "best_genome.json")
    assert g.tolist() == rec.best_genome


def test_corrupt_and_mismatched_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"format\": \"hebbian-run-record\"")
    with pytest.raises(PersistenceError):
        load_record(bad)
    bad.write_text(json.dumps({"format": "hebbian-run-record", "version": 2}))
    with pytest.raises(PersistenceError):
        load_record(bad)
    with pytest.raises(PersistenceError):
        load_checkpoint(tmp_path / "missing.json")
    with pytest.raises(PersistenceError):
        load_genome(bad)


# ---- rollouts

def test_rollout_freeze_from_start():
    cfg = small_config(condition="B")
    res = run_rollout(random_genome(cfg), cfg, seed=1, hooks=RolloutHooks(freeze_steps=(0, 40)))
    assert np.array_equal(res.series(), np.zeros(40))
    assert res.report.verdict is Verdict.FIXED_POINT


def test_rollout_records_and_is_deterministic():
    cfg = small_config(condition="E")
    g = random_genome(cfg)
    a, b = run_rollout(g, cfg, seed=2), run_rollout(g, cfg, seed=2)
    assert np.array_equal(a.trajectory.weights, b.trajectory.weights) and a.fitness == b.fitness
    assert a.trajectory.weights.shape == (41, cfg.shape.n_connections)
    assert np.flatnonzero(a.ticks).tolist() == list(range(4, 40, 4))
    with pytest.raises(ConfigurationError):
        run_rollout(g[:-1], cfg)


def test_identity_hot_swap(tmp_path):
    cfg = small_config(condition="D")
    g = random_genome(cfg)
    rule = cfg.rule_for(g)
    save_rule(rule, tmp_path / "rule.json")
    plain = run_rollout(g, cfg, seed=5)
    for swap in (rule, str(tmp_path / "rule.json")):
        swapped = run_rollout(g, cfg, seed=5, hooks=RolloutHooks(swaps={0: swap, 20: swap}))
        assert np.array_equal(plain.trajectory.weights, swapped.trajectory.weights)


def test_hot_swap_changes_dynamics():
    cfg = small_config(condition="B")
    g = random_genome(cfg)
    other = cfg.rule_for(random_genome(cfg, seed=1))
    a = run_rollout(g, cfg, seed=5)
    b = run_rollout(g, cfg, seed=5, hooks=RolloutHooks(swaps={20: other}))
    assert np.array_equal(a.trajectory.weights[:21], b.trajectory.weights[:21])
    assert not np.array_equal(a.trajectory.weights[21:], b.trajectory.weights[21:])


def test_perturbation_hook_changes_rollout():
    cfg = small_config(condition="E")
    g = random_genome(cfg)
    a = run_rollout(g, cfg, seed=1)
    b = run_rollout(g, cfg, seed=1, hooks=RolloutHooks(perturbation=PerturbationSpec(impulses=[(1.0, 2.0)])))
    assert np.array_equal(a.rewards[:20], b.rewards[:20]) and not np.array_equal(a.rewards, b.rewards)


def test_divergent_rule_gets_floor():
    cfg = small_config(condition="A")
    g = np.full(len(cfg.layout), 1e200)
    res = run_rollout(g, cfg, seed=0)
    assert res.diverged and res.fitness == cfg.fitness_floor and res.report.verdict is Verdict.DIVERGED


def test_trajectory_dump(tmp_path):
    cfg = small_config(condition="C")
    run_rollout(random_genome(cfg), cfg, seed=0, dump=tmp_path / "dump.csv")
    main = read_csv(tmp_path / "dump.csv")
    assert set(main) == {"t", "obs_0", "obs_1", "action_0", "reward", "weights_row"}
    weights = read_csv(tmp_path / "dump_weights.csv")
    assert weights["t"].tolist() == list(range(4, 40, 4))
    assert main["weights_row"][8] == 1 and main["weights_row"][9] == -1


def test_evaluate_genome_seeds():
    cfg = small_config(condition="E")
    res = evaluate_genome(random_genome(cfg), cfg, 3)
    assert len(res) == 3 and len({r.fitness for r in res}) > 1


# ---- grid

def test_grid_labels_and_single_cell(tmp_path):
    cfg = small_config(generations=1)
    cells = run_condition_grid(cfg, [1, 10], [5, 20], seeds=[0], n_eval=2, output_dir=tmp_path)
    assert [(c.window, c.f_hebb) for c in cells] == [(1, 5.0), (1, 20.0), (10, 5.0), (10, 20.0)]
    lines = (tmp_path / "grid_converged.csv").read_text().splitlines()
    assert lines[0] == "M,f_hebb=5,f_hebb=20"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "10"]
    assert all(c.status == "ok" and c.n_evaluations == 2 for c in cells)


def test_grid_failed_cell_does_not_stop_grid():
    cfg = small_config(generations=1)
    # f_hebb above the controller rate is invalid for that cell only
    cells = run_condition_grid(cfg, [1], [5, 40], seeds=[0], n_eval=1)
    assert [c.status for c in cells] == ["ok", "failed"]
