"""Alternating minimization-descent on ``F(U, V) = 1/2 ||U V^T - M||_F^2``.

Each iteration solves for ``U`` exactly and then takes one gradient step in
``V``. The trace keeps enough per-round state (R factors, gradient Gram
matrices, distances) to check the identities that drive the convergence
argument: ``R_{t+1}^T R_{t+1} = R_t^T R_t + eta^2 S_t^T S_t``, monotone
spectrum of ``R_t`` and the norm cap ``||R_t||^2 <= 2 ||R_0||^2``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, Diverged, RankDeficient
from .linalg import (
    least_squares,
    orthonormal_complement,
    principal_angle_distance,
    qr_decompose,
    singular_values,
)
from .synthetic import substream

__all__ = [
    "FullMeasProblem",
    "FullMeasState",
    "FullMeasTrace",
    "random_problem",
    "problem_from_matrix",
    "objective",
    "minimize_u",
    "gradient_v",
    "gradient_step_v",
    "theorem_step_size",
    "contraction_factor",
    "loss_bound",
    "random_v0",
    "run_fullmeas",
    "TRACE_COLUMNS",
    "DIVERGENCE_FACTOR",
]

DIVERGENCE_FACTOR = 1e6

TRACE_COLUMNS = (
    "round",
    "loss",
    "dist",
    "sigma_min_r",
    "sigma_max_r",
    "grad_norm",
    "contraction_ratio",
    "rate_bound",
)


@dataclass(frozen=True)
class FullMeasProblem:
    """Rank-k target ``M = U* diag(sigma*) V*^T``."""

    m_target: np.ndarray
    u_star: np.ndarray
    sigma_star: np.ndarray
    v_star: np.ndarray

    @property
    def k(self):
        return self.sigma_star.size

    @property
    def sigma_min(self):
        return float(self.sigma_star[-1])

    @property
    def sigma_max(self):
        return float(self.sigma_star[0])


def problem_from_matrix(m_target, k=None):
    """Wrap a target matrix, reading its rank-k factors off the SVD.

    With ``k=None`` the numerical rank is used.
    """
    m_target = np.asarray(m_target, dtype=float)
    u, s, vt = np.linalg.svd(m_target, full_matrices=False)
    if k is None:
        k = int(np.sum(s > 1e-12 * s[0]))
    if k < 1 or s[k - 1] <= 1e-12 * s[0]:
        raise RankDeficient(f"target does not have rank {k}")
    if k < s.size and s[k] > 1e-10 * s[0]:
        raise DimensionMismatch(f"target has rank > {k}")
    return FullMeasProblem(m_target, u[:, :k], s[:k].copy(), vt[:k].T)


def random_problem(n, d, k, seed=0):
    """``M = G1 @ G2`` with standard normal n x k and k x d factors."""
    rng = substream(seed, 0)
    m_target = rng.standard_normal((n, k)) @ rng.standard_normal((k, d))
    return problem_from_matrix(m_target, k)


def random_v0(d, k, seed=0):
    """Orthonormal starting point (so ``R_0 = I``)."""
    return qr_decompose(substream(seed, 1).standard_normal((d, k))).q


def objective(problem, u_hat, v_hat):
    return 0.5 * np.linalg.norm(u_hat @ v_hat.T - problem.m_target) ** 2


def minimize_u(problem, v_hat):
    """Exact minimizer ``M V (V^T V)^{-1}`` over U for fixed V."""
    # least squares on V^T U^T = M^T; raises RankDeficient for a singular Gram
    return least_squares(v_hat, problem.m_target.T).T


def gradient_v(problem, u_hat, v_hat):
    """``(U V^T - M)^T U``, the gradient of F in V."""
    return (u_hat @ v_hat.T - problem.m_target).T @ u_hat


def gradient_step_v(problem, u_hat, v_hat, eta):
    return v_hat - eta * gradient_v(problem, u_hat, v_hat)


def theorem_step_size(problem, r0):
    """Largest admissible fixed step: ``1/2 smin(R0)^3/smax(R0) * s*min^2 / s*max^4``."""
    s = singular_values(r0)
    if s[-1] <= 1e-12 * s[0]:
        raise RankDeficient("R0 is singular")
    return 0.5 * s[-1] ** 3 / s[0] * problem.sigma_min ** 2 / problem.sigma_max ** 4


def contraction_factor(problem, r0, eta):
    """Per-round rate ``1 - eta s*min^2 / (2 smax(R0)^2)``."""
    return 1.0 - eta * problem.sigma_min ** 2 / (2.0 * singular_values(r0)[0] ** 2)


def loss_bound(problem, r0, eta, rounds):
    """Final-loss guarantee after `rounds` iterations (plus the closing U step)."""
    s = singular_values(r0)
    c = contraction_factor(problem, r0, eta)
    return c ** rounds * np.linalg.norm(problem.m_target) ** 2 * s[0] / s[-1]


@dataclass
class FullMeasState:
    u_hat: np.ndarray
    v_hat: np.ndarray
    round: int
    r_t: np.ndarray


@dataclass
class FullMeasTrace:
    """Per-round records of a run.

    Arrays indexed by state (``loss``, ``dist``, ``r``, ...) have
    ``rounds + 1`` entries; ``loss[t]`` is ``||M - U_{t+1} V_t^T||_F^2``.
    Arrays indexed by step (``s_gram``, ``grad_norm``, ...) have ``rounds``.
    """

    eta: float
    rate: float
    loss: np.ndarray
    dist: np.ndarray
    perp_norm: np.ndarray
    lambda_min: np.ndarray
    r: np.ndarray
    v_gram: np.ndarray
    s_gram: np.ndarray
    grad_norm: np.ndarray
    rate_bound: np.ndarray
    final_state: FullMeasState
    m_norm_sq: float = field(default=0.0)

    @property
    def rounds(self):
        return self.s_gram.shape[0]

    @property
    def sigma_r(self):
        return np.array([singular_values(r) for r in self.r])

    @property
    def sigma_min_r(self):
        return self.sigma_r[:, -1]

    @property
    def sigma_max_r(self):
        return self.sigma_r[:, 0]

    @property
    def contraction_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.dist[1:] / self.dist[:-1]

    @property
    def final_loss(self):
        return float(self.loss[-1])

    def r_recursion_residual(self):
        """Max-norm of ``R_{t+1}^T R_{t+1} - R_t^T R_t - eta^2 S_t^T S_t`` per round."""
        rtr = np.einsum("tij,tik->tjk", self.r, self.r)
        res = rtr[1:] - rtr[:-1] - self.eta ** 2 * self.s_gram
        return np.abs(res).max(axis=(1, 2))

    def cross_term_residual(self):
        """Same identity stated on the Gram of V directly."""
        res = self.v_gram[1:] - self.v_gram[:-1] - self.eta ** 2 * self.s_gram
        return np.abs(res).max(axis=(1, 2))

    def sharpened_perp_factor(self, problem):
        """Per-round rate for ``||V*perp^T V_t||`` keeping the ``smin(V_t^T V*)^2`` factor."""
        rnorm_sq = self.sigma_max_r[:-1] ** 2
        return 1.0 - self.eta * problem.sigma_min ** 2 * self.lambda_min[:-1] ** 2 / rnorm_sq

    def rows(self):
        ratio = self.contraction_ratio
        s = self.sigma_r
        for t in range(self.rounds + 1):
            last = t == self.rounds
            yield {
                "round": t,
                "loss": self.loss[t],
                "dist": self.dist[t],
                "sigma_min_r": s[t, -1],
                "sigma_max_r": s[t, 0],
                "grad_norm": math.nan if last else self.grad_norm[t],
                "contraction_ratio": math.nan if last else ratio[t],
                "rate_bound": self.rate_bound[t],
            }


def run_fullmeas(problem, v0, eta, rounds):
    """Run `rounds` (U-min, V-step) iterations followed by one last U-min.

    Raises
    ------
    Diverged
        If the loss becomes non-finite or exceeds ``DIVERGENCE_FACTOR``
        times its initial value.
    """
    v = np.array(v0, dtype=float)
    d, k = v.shape
    if v.shape != problem.v_star.shape:
        raise DimensionMismatch(f"v0 has shape {v.shape}, expected {problem.v_star.shape}")
    v_perp = orthonormal_complement(problem.v_star) if d > k else np.zeros((d, 0))
    m_norm_sq = float(np.linalg.norm(problem.m_target) ** 2)

    r0 = qr_decompose(v).r
    rate = contraction_factor(problem, r0, eta)
    s0 = singular_values(r0)
    bound_scale = m_norm_sq * s0[0] / s0[-1]

    losses, dists, perps, lam_min, rs, grams, s_grams, gnorms = ([] for _ in range(8))
    u = None
    for t in range(rounds + 1):
        q, r = qr_decompose(v)
        u = minimize_u(problem, v)
        loss = float(np.linalg.norm(problem.m_target - u @ v.T) ** 2)
        if not math.isfinite(loss) or (losses and loss > DIVERGENCE_FACTOR * max(losses[0], 1e-300)):
            raise Diverged(f"loss {loss:.3e} at round {t}")
        losses.append(loss)
        dists.append(principal_angle_distance(v, problem.v_star))
        perps.append(np.linalg.norm(v_perp.T @ v, 2) if v_perp.size else 0.0)
        lam_min.append(singular_values(q.T @ problem.v_star)[-1])
        rs.append(r)
        grams.append(v.T @ v)
        if t == rounds:
            break
        grad = gradient_v(problem, u, v)
        s_grams.append(grad.T @ grad)
        gnorms.append(np.linalg.norm(grad, 2))
        v = v - eta * grad
        if not np.all(np.isfinite(v)):
            raise Diverged(f"non-finite V at round {t + 1}")

    with np.errstate(over="ignore"):
        rate_bound = bound_scale * rate ** np.arange(rounds + 1)
    return FullMeasTrace(
        eta=float(eta),
        rate=float(rate),
        loss=np.array(losses),
        dist=np.array(dists),
        perp_norm=np.array(perps),
        lambda_min=np.array(lam_min),
        r=np.array(rs),
        v_gram=np.array(grams),
        s_gram=np.array(s_grams).reshape(rounds, k, k),
        grad_norm=np.array(gnorms),
        rate_bound=rate_bound,
        final_state=FullMeasState(u_hat=u, v_hat=v, round=rounds, r_t=rs[-1]),
        m_norm_sq=m_norm_sq,
    )
