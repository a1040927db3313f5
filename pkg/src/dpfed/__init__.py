"""Differentially private training and federated-learning simulation."""

from .accountant import (AccountantState, MechanismParams, PrivacyBudget, RdpCurve,
                         compose, epsilon_after, max_steps, new_accountant,
                         rdp_single_step, sigma_for_budget, to_epsilon)
from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text
from .data import (Dataset, DataError, Normalizer, SplitSpec, SyntheticSpec,
                   load_csv, normalize_apply, normalize_fit, save_csv, split,
                   synth_blobs)
from .dp import (AdamState, DpSpec, StepReport, TrainConfig, adam_step,
                 clip_gradient, dp_adam_step, dp_sgd_step, exact_mean,
                 noisy_mean, sgd_step)
from .experiments import (BudgetError, ExperimentResult, MetricRecord,
                          emit_metrics, read_metrics, run_experiment)
from .federated import (ClientState, LdpSpec, RoundConfig, RoundReport,
                        ServerState, aggregate_fedavg, client_update,
                        make_clients, partition_iid, run_federation, run_round,
                        select_clients)
from .nn import (ForwardCache, MlpConfig, MlpModel, PerSampleGrads,
                 backward_per_sample, cross_entropy, evaluate, flatten_params,
                 forward, init_model, softmax, unflatten_params)
from .training import TrainStats, apply_prox, stream, train_local

__version__ = "0.1.0"
