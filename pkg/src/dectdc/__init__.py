"""Decentralized multi-agent off-policy TDC with gossip-estimated importance ratios."""
from .decentral import (AgentParams, IterationRecord, RunConfig, Trace, run, run_algorithm1,
                        run_algorithm2, run_expected, run_td0_baseline)
from .env import (EnvBundle, FeatureMap, MultiAgentMdp, PolicySet, Transition, TransitionBatch,
                  generate_features, generate_mdp, generate_policies, load_bundle, make_env,
                  mixing_estimate, sample_trajectory, save_bundle, stationary_distribution)
from .errors import (AssumptionViolation, ConvergenceError, DecTdcError, FeatureRankError,
                     MixingFitError, SpecError, SupportViolation)
from .harness import ExperimentSpec, emit_plotdata, load_spec, run_experiment
from .network import CommMatrix, build_fully_connected, build_ring, load_topology
from .ratios import estimate_global_ratios, min_rounds, ratio_error_bound
from .tdc import FixedPoint, compute_bounds, expected_stats, fixed_point_for

__version__ = "0.1.0"
