"""Federated representation learning laboratory.

Synthetic multi-client linear regression with a shared low-dimensional
representation, the FedRep alternating minimization-descent loop and its
baselines, and a full-measurement matrix-factorization engine whose
traces expose the quantities its convergence guarantees are stated in.
"""
from .errors import (
    ConfigError,
    DimensionError,
    DimensionMismatch,
    Diverged,
    FedRepLabError,
    RankDeficient,
)
from .linalg import (
    least_squares,
    orthonormal_complement,
    principal_angle_distance,
    qr_decompose,
    singular_values,
)
from .synthetic import (
    GroundTruth,
    SampleBatch,
    SpectralBounds,
    generate_ground_truth,
    load_ground_truth,
    sample_batch,
    save_ground_truth,
    spectral_bounds,
)
from .fullmeas import FullMeasProblem, random_problem, run_fullmeas, theorem_step_size
from .fedrep import FedConfig, FedState, FedTrace, run_fedrep, server_round
from .baselines import (
    gdgd_round,
    global_model_error,
    global_model_fit,
    local_only_fit,
    new_client_eval,
    run_gdgd,
)
from .config import ExperimentConfig, parse_config
from .experiment import run_experiment

__version__ = "0.1.0"
