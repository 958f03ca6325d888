"""Meta-train two conditions on the velocity-tracking task and compare them.

Condition B updates every control step with no activation averaging; E
averages over 10 steps and updates at a quarter of the control rate.  After
training, each best rule is deployed on fresh seeds and its weight dynamics
are classified.  The run is kept short; raise GENERATIONS for cleaner
results (150 is the desk-scale protocol).
"""
import os

import numpy as np

from hebbian_attractors import ExperimentConfig, RolloutHooks, evaluate_genome, run_meta_training, run_rollout

GENERATIONS = int(os.environ.get("GENERATIONS", 30))

for condition in "BE":
    cfg = ExperimentConfig(condition=condition, generations=GENERATIONS, popsize=64, seed=0)
    record = run_meta_training(cfg, progress=lambda s: s["generation"] % 10 == 0 and print(
        f"  [{condition}] gen {s['generation']:3d}  best {s['best']:7.1f}  mean {s['mean']:7.1f}"))
    genome = np.array(record.best_genome)
    print(f"condition {condition}: generation-0 best {record.history[0]['best']:.1f}, "
          f"final best {record.best_fitness:.1f}")

    results = evaluate_genome(genome, cfg, n_rollouts=5)
    for r in results:
        rep = r.report
        print(f"  fitness {r.fitness:7.1f}  {rep.verdict.value:12s} early {rep.mean_early:.4f}  late {rep.mean_late:.4f}")

    # freeze plasticity for the second half of one episode
    T = cfg.env.episode_steps
    live = run_rollout(genome, cfg, seed=123)
    frozen = run_rollout(genome, cfg, seed=123, hooks=RolloutHooks(freeze_steps=(T // 2, T)))
    a, b = live.rewards[T // 2:].sum(), frozen.rewards[T // 2:].sum()
    print(f"  freezing at mid-episode changes second-half reward {a:.1f} -> {b:.1f}\n")
