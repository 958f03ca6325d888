"""Plastic feedforward controllers whose weights follow an evolved Hebbian rule."""
from .analysis import (AttractorReport, SpectrumReport, Verdict, WeightTrajectory, classify_convergence,
                       distance_matrix, pca_embed, plasticity_series, spectrum)
from .envs import (ChainCrawler, EnvSpec, PerturbationSpec, PointMassTracking, RunningNormalizer,
                   apply_perturbation, make_env)
from .errors import ConfigurationError, HebbianError, InputError, NumericDivergenceError, PersistenceError
from .evolution import AdaptiveES, AdaptiveESConfig, GenomeLayout, OpenAIES, OpenAIESConfig, center_rank
from .harness import (ExperimentConfig, RolloutHooks, RunRecord, evaluate_genome, run_condition_grid,
                      run_meta_training, run_rollout)
from .network import NetworkShape, PlasticNetwork
from .plasticity import (MAX_NORM, NO_STABILIZATION, OJA, PlasticityRule, Stabilization, UpdateSchedule,
                         apply_stabilization, clip, condition_preset, hebbian_delta_matrix,
                         hebbian_delta_scalar, load_rule, save_rule, scheduled_step)

__version__ = "0.1.0"
