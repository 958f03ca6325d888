"""Changing behaviour mid-episode by loading different Hebbian coefficients.

Two rules are trained for different target velocities.  One deployment
starts with the slow rule and switches to the fast one at 25 s, keeping the
weights as they are; only the coefficients change.  A second deployment
keeps the slow rule for the whole episode as a baseline.

The running normalizer hides the absolute target from the network, so each
rule carries its speed in its coefficients.  With the short training used
here the rules are rough and the gap after the swap is modest; raise
``generations`` to sharpen it.
"""
from pathlib import Path

import numpy as np

from hebbian_attractors import ExperimentConfig, RolloutHooks, run_meta_training, run_rollout, save_rule
from hebbian_attractors.envs import make_env

out = Path("out_swap")
out.mkdir(exist_ok=True)

rules = {}
for v in (0.5, 1.0):
    cfg = ExperimentConfig(condition="E", generations=25, popsize=32, seed=2, weight_init=1.0)
    cfg = cfg.replace(env__v_target=v)
    genome = np.array(run_meta_training(cfg).best_genome)
    rules[v] = cfg.rule_for(genome)
    save_rule(rules[v], out / f"rule_v{v}.json")
    print(f"trained rule for v_target={v}")


def velocity(actions, spec):
    # replay the recorded actions through a fresh point mass
    env = make_env(spec, (1,))
    env.reset([0])
    return np.array([env.step(a).info["velocity"][0] for a in actions])


deploy = ExperimentConfig(condition="E", seed=2, weight_init=1.0)
plain = run_rollout(rules[0.5], deploy, seed=3)
swapped = run_rollout(rules[0.5], deploy, seed=3, hooks=RolloutHooks(swaps={500: out / "rule_v1.0.json"}))
for name, res in (("slow rule throughout", plain), ("swap at step 500", swapped)):
    v = velocity(res.actions, deploy.env)
    print(f"{name:22s} mean velocity {v[250:500].mean():.3f} before, {v[750:].mean():.3f} after")
np.savetxt(out / "velocity.csv", np.column_stack([velocity(plain.actions, deploy.env),
                                                  velocity(swapped.actions, deploy.env)]),
           delimiter=",", header="slow,swapped", comments="")
