"""Comparison methods: GD-GD heads, local-only fits, the single global model
and the new-client evaluation."""
import math
from dataclasses import dataclass

import numpy as np

from .fedrep import run_fedrep, server_round
from .linalg import min_norm_least_squares
from .synthetic import (
    DEFAULT_NOISE_VAR,
    STREAM_NEW_CLIENT,
    STREAM_TEST,
    draw_head,
    substream,
)

__all__ = [
    "BaselineKind",
    "NewClientReport",
    "gdgd_round",
    "run_gdgd",
    "local_only_fit",
    "global_model_fit",
    "global_model_error",
    "global_objective",
    "new_client_eval",
    "NEW_CLIENT_COLUMNS",
]

NEW_CLIENT_COLUMNS = ("m_new", "mse_fedrep", "mse_fedavg_style", "mse_local")


@dataclass(frozen=True)
class BaselineKind:
    """``tag`` is one of ``gdgd``, ``local_only``, ``global_model``."""

    tag: str
    tau: int = 1

    def __post_init__(self):
        if self.tag not in ("gdgd", "local_only", "global_model"):
            raise ValueError(f"unknown baseline {self.tag!r}")
        if self.tag == "gdgd" and self.tau < 1:
            raise ValueError("gdgd needs tau >= 1")


@dataclass(frozen=True)
class NewClientReport:
    m_new: int
    mse_fedrep: float
    mse_fedavg_style: float
    mse_local: float

    def as_row(self):
        return {c: getattr(self, c) for c in NEW_CLIENT_COLUMNS}


def gdgd_round(state, gt, config, tau, alpha=None, eta=None, executor=None):
    """One round where each head takes `tau` gradient steps of size `alpha`
    (default ``1/L`` of the batch Gram) from its carried value."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if alpha is not None and alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return server_round(state, gt, config, eta, head_steps=tau, head_lr=alpha, executor=executor)


def run_gdgd(gt, config, tau, alpha=None, workers=None, b0=None):
    return run_fedrep(gt, config, head_steps=tau, head_lr=alpha, workers=workers, b0=b0)


def local_only_fit(x, y):
    """Minimum-norm least-squares regressor on one client's own samples."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return min_norm_least_squares(x, np.atleast_1d(np.asarray(y, dtype=float)))


def global_model_fit(gt):
    """Canonical minimizer of the shared-model objective: ``(B*, mean_i w_i*)``."""
    return gt.b_star.copy(), gt.w_star.mean(axis=0)


def global_objective(gt, b, w):
    """``1/(2n) sum_i ||b w - B* w_i*||^2``."""
    diff = (b @ w)[None, :] - gt.product()
    return 0.5 * float(np.sum(diff * diff)) / gt.n


def global_model_error(gt):
    """Error of the best shared model, ``1/(2n) sum_i ||(1/n) B* sum_i' (w_i'* - w_i*)||^2``."""
    w = gt.w_star
    gaps = (w.mean(axis=0)[None, :] - w) @ gt.b_star.T
    return 0.5 * float(np.sum(gaps * gaps)) / gt.n


def new_client_eval(b_learned, gt, m_new, noise_var=DEFAULT_NOISE_VAR, seed=0, test_size=10_000):
    """Test MSE for a fresh client sharing ``B*``.

    The client draws a head of norm sqrt(k) and `m_new` noisy samples. It
    fits a head on top of `b_learned` (minimum-norm when underdetermined)
    and a local-only regressor on the same samples; the shared-model entry
    is the global minimizer's product ``B* mean(w*)`` used as is. All three
    are scored on `test_size` noiseless samples.
    """
    if m_new < 1:
        raise ValueError("m_new must be >= 1")
    rng = substream(seed, STREAM_NEW_CLIENT)
    theta_star = gt.b_star @ draw_head(gt.k, rng)
    x = rng.standard_normal((m_new, gt.d))
    y = x @ theta_star
    if noise_var > 0:
        y = y + math.sqrt(noise_var) * rng.standard_normal(m_new)

    b_learned = np.asarray(b_learned, dtype=float)
    head = min_norm_least_squares(x @ b_learned, y)
    theta_rep = b_learned @ head
    theta_local = local_only_fit(x, y)
    b_glob, w_glob = global_model_fit(gt)
    theta_glob = b_glob @ w_glob

    x_test = substream(seed, STREAM_TEST).standard_normal((test_size, gt.d))
    y_test = x_test @ theta_star

    def mse(theta):
        err = x_test @ theta - y_test
        return float(err @ err) / test_size

    return NewClientReport(
        m_new=int(m_new),
        mse_fedrep=mse(theta_rep),
        mse_fedavg_style=mse(theta_glob),
        mse_local=mse(theta_local),
    )
