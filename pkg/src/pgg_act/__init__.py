"""PPO with adversarial curriculum transfer on the spatial public goods game."""
from ._accel import BACKEND
from .baselines import QConfig, fermi_iteration, qlearning_iteration, run_fermi, run_qlearning
from .curriculum import (PHASE1_DEFAULT, PHASE2_DEFAULT, ActConfig, PhaseConfig, RunRecord,
                         act_transition, run_act, run_phase, run_ppo)
from .experiments import (ExperimentConfig, confidence_interval, run_trials, sweep_hyperparameter,
                          sweep_r)
from .game import InitScheme, cooperation_fraction, cumulative_payoffs, init_strategies
from .lattice import Lattice, build_lattice
from .nn import PolicyParams, forward, init_opt, init_params, optimizer_step
from .ppo import RolloutBuffer, collect_rollout, compute_gae, encode_states, ppo_update

__version__ = "0.1.0"
