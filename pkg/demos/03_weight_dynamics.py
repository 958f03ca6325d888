"""Looking inside one deployment: plasticity series, PCA, spectrum, distances.

A rule is trained briefly, then one rollout is recorded with a velocity kick
at 25 s.  The weight trajectory is summarized the same way for any rollout:
how much the weights move per step, where they travel in the top two
principal directions, which frequencies they oscillate at, and whether the
network returns to where it was before the kick.  CSVs land in ./out_dynamics.
"""
from pathlib import Path

import numpy as np

from hebbian_attractors import (ExperimentConfig, PerturbationSpec, RolloutHooks, distance_matrix, pca_embed,
                                run_meta_training, run_rollout, spectrum)
from hebbian_attractors.analysis import weight_spectrum, write_csv

out = Path("out_dynamics")
out.mkdir(exist_ok=True)

cfg = ExperimentConfig(condition="B", generations=20, popsize=32, seed=1)
genome = np.array(run_meta_training(cfg).best_genome)
hooks = RolloutHooks(perturbation=PerturbationSpec(impulses=[(25.0, 1.5)]))
res = run_rollout(genome, cfg, seed=7, hooks=hooks, dump=out / "trajectory.csv")

series = res.series()
print("verdict:", res.report.verdict.value, "| early", round(res.report.mean_early, 4),
      "| late", round(res.report.mean_late, 4))
write_csv(out / "plasticity.csv", {"t": np.arange(1, series.size + 1), "delta_w": series})

points, ratios = pca_embed(res.trajectory, k=2)
print("explained variance of PC1, PC2:", np.round(ratios, 3))
write_csv(out / "pca.csv", {"pc1": points[:, 0], "pc2": points[:, 1]})

ws = weight_spectrum(res.trajectory, sample_rate=cfg.env.control_hz)
acts = spectrum(res.actions[:, 0], cfg.env.control_hz)
print("strongest weight frequencies (Hz):", ws.peaks(3))
print("strongest action frequencies (Hz):", acts.peaks(3))

D = distance_matrix(res.trajectory, stride=20)
kick = 500 // 20
print(f"distance just before vs long after the kick: {D[kick - 1, -1]:.4f} "
      f"(largest pairwise distance {D.max():.4f})")
np.savetxt(out / "distances.csv", D, delimiter=",")
