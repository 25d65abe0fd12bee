"""Federated representation learning for multi-client linear regression.

One round of :func:`server_round`:

1. the server samples ``ceil(r n)`` clients without replacement,
2. each sampled client solves for its head on a batch (exactly, or with a
   few gradient steps for the GD-GD baselines),
3. each sampled client computes the gradient of its batch loss in the
   shared representation ``B`` at its new head,
4. the server moves ``B`` along the mean of those gradients and, in ortho
   mode, re-orthonormalizes it.

In population mode the batch losses are replaced by their expectation
``1/2 ||B w - B* w_i*||^2``, which removes sampling noise entirely.
"""
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import Diverged, RankDeficient
from .linalg import (
    least_squares,
    orthonormalize,
    principal_angle_distance,
    qr_decompose,
    singular_values,
)
from .synthetic import (
    DEFAULT_NOISE_VAR,
    STREAM_INIT,
    STREAM_SAMPLING,
    STREAM_TRAIN,
    participants_count,
    sample_batch,
    spectral_bounds,
    substream,
)

logger = logging.getLogger(__name__)

__all__ = [
    "FedConfig",
    "FedState",
    "FedTrace",
    "RoundInfo",
    "TRACE_COLUMNS",
    "THREADS_ENV",
    "worker_count",
    "default_eta",
    "resolve_eta",
    "init_representation",
    "batch_loss",
    "client_head_update",
    "client_head_gd",
    "client_rep_gradient",
    "population_head_and_gradient",
    "population_head_gd",
    "sample_participants",
    "server_round",
    "run_fedrep",
    "residual_f_diagnostic",
    "operator_deviation_probe",
    "population_loss",
]

THREADS_ENV = "FEDREP_LAB_THREADS"

TRACE_COLUMNS = (
    "round",
    "dist",
    "pop_loss",
    "emp_loss",
    "sigma_min_sub",
    "sigma_max_sub",
    "rate_bound",
    "f_norm",
    "participants",
)

DATA_MODES = ("fresh", "fixed")
GRAD_MODES = ("empirical", "population")
INIT_MODES = ("random", "spectral")


@dataclass(frozen=True)
class FedConfig:
    """Run parameters. ``eta=None`` selects ``1 / (4 sigma_max^2)``."""

    n: int = 100
    d: int = 10
    k: int = 2
    m: int = 5
    r: float = 0.1
    eta: float | None = None
    rounds: int = 500
    seed: int = 0
    noise_var: float = DEFAULT_NOISE_VAR
    ortho: bool = False
    data_mode: str = "fresh"
    grad_mode: str = "empirical"
    init: str = "random"
    init_steps: int = 10

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.k < self.d:
            raise ValueError(f"need n >= 1 and 1 <= k < d, got n={self.n} d={self.d} k={self.k}")
        if not 0 < self.r <= 1:
            raise ValueError(f"participation rate must lie in (0, 1], got {self.r}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.m < 1 or self.rounds < 0 or self.init_steps < 1:
            raise ValueError("m and init_steps must be >= 1 and rounds >= 0")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        if self.data_mode not in DATA_MODES:
            raise ValueError(f"data_mode must be one of {DATA_MODES}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    @property
    def participants(self):
        return participants_count(self.n, self.r)

    def to_dict(self):
        return asdict(self)


@dataclass
class FedState:
    b: np.ndarray
    heads: np.ndarray
    round: int = 0


@dataclass
class RoundInfo:
    participants: np.ndarray
    new_heads: np.ndarray
    emp_loss: float
    head_grad_norm: float
    b_used: np.ndarray


def worker_count(default=1):
    """Worker cap from ``FEDREP_LAB_THREADS`` (at least 1)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or not raw.strip():
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def default_eta(gt, config):
    bounds = spectral_bounds(gt, config.participants)
    return 1.0 / (4.0 * bounds.sigma_max ** 2)


def resolve_eta(gt, config):
    return default_eta(gt, config) if config.eta is None else float(config.eta)


def _client_batch(gt, config, client_id, round_index, stream=STREAM_TRAIN):
    counter = round_index if config.data_mode == "fresh" else 0
    return sample_batch(gt, client_id, config.m, config.noise_var, config.seed, counter, stream)


def init_representation(gt, config):
    """Initial ``B^0``: orthonormalized Gaussian, or a spectral estimate.

    The spectral variant runs `config.init_steps` steps of projected
    gradient descent on the unfactorized least-squares objective over
    n x d matrices, projecting onto rank k with a truncated SVD after
    every step, and returns the top-k right singular vectors.
    """
    if config.init == "random":
        return orthonormalize(substream(config.seed, STREAM_INIT).standard_normal((gt.d, gt.k)))

    if config.data_mode == "fixed":
        batches = [_client_batch(gt, config, i, 0) for i in range(gt.n)]
    else:
        batches = [_client_batch(gt, config, i, 0, stream=STREAM_INIT) for i in range(gt.n)]
    x = np.stack([bt.x for bt in batches])  # n x m x d
    y = np.stack([bt.y for bt in batches])  # n x m
    est = np.zeros((gt.n, gt.d))
    vt = None
    for _ in range(config.init_steps):
        resid = np.einsum("imd,id->im", x, est) - y
        grad = np.einsum("im,imd->id", resid, x) / config.m
        u, s, vt = np.linalg.svd(est - grad, full_matrices=False)
        est = (u[:, : gt.k] * s[: gt.k]) @ vt[: gt.k]
    return orthonormalize(vt[: gt.k].T)


def batch_loss(b, w, batch):
    """``1/(2m) sum_j (y_j - w^T b^T x_j)^2``."""
    resid = batch.y - batch.x @ (b @ w)
    return 0.5 * float(resid @ resid) / batch.m


def client_head_update(b, batch):
    """Exact head ``argmin_w`` of the batch loss for fixed `b`."""
    if batch.m < b.shape[1]:
        raise RankDeficient(f"batch of {batch.m} samples cannot determine a {b.shape[1]}-dim head")
    return least_squares(batch.x @ b, batch.y)


def client_head_gd(b, w, batch, steps, lr=None):
    """`steps` gradient steps on the batch loss in the head, from `w`.

    The default step size is ``1/L`` with ``L`` the top eigenvalue of the
    batch Gram ``(X b)^T (X b) / m``.
    """
    z = batch.x @ b
    if lr is None:
        lipschitz = np.linalg.eigvalsh(z.T @ z / batch.m)[-1]
        lr = 1.0 / lipschitz if lipschitz > 0 else 0.0
    w = np.array(w, dtype=float)
    for _ in range(steps):
        w = w - lr * (z.T @ (z @ w - batch.y)) / batch.m
    return w


def client_rep_gradient(b, w, batch):
    """Gradient of the batch loss in ``B``: ``-(1/m) sum_j r_j x_j w^T``."""
    resid = batch.y - batch.x @ (b @ w)
    return -np.outer(batch.x.T @ resid, w) / batch.m


def _head_grad_norm(b, w, batch):
    z = batch.x @ b
    return float(np.linalg.norm(z.T @ (z @ w - batch.y)) / batch.m)


def population_head_and_gradient(b, gt, client_id):
    """Population head ``(b^T b)^{-1} b^T B* w_i*`` and gradient ``(b w - B* w_i*) w^T``."""
    target = gt.client_params(client_id)
    w = least_squares(b, target)
    return w, np.outer(b @ w - target, w)


def population_head_gd(b, w, gt, client_id, steps, lr=None):
    target = gt.client_params(client_id)
    gram = b.T @ b
    if lr is None:
        lr = 1.0 / np.linalg.eigvalsh(gram)[-1]
    w = np.array(w, dtype=float)
    bt_target = b.T @ target
    for _ in range(steps):
        w = w - lr * (gram @ w - bt_target)
    return w


def population_loss(b, heads, gt):
    """``1/(2n) sum_i ||B w_i - B* w_i*||^2`` over all clients."""
    diff = heads @ b.T - gt.product()
    return 0.5 * float(np.sum(diff * diff)) / gt.n


def sample_participants(config, round_index):
    """Sorted ids of the clients sampled in a round (seeded Fisher-Yates)."""
    rng = substream(config.seed, STREAM_SAMPLING, round_index)
    return np.sort(rng.permutation(config.n)[: config.participants])


def _client_work(b, prev_head, i, gt, config, round_index, head_steps, head_lr):
    if config.grad_mode == "population":
        target = gt.client_params(i)
        if head_steps is None:
            w, grad = population_head_and_gradient(b, gt, i)
        else:
            w = population_head_gd(b, prev_head, gt, i, head_steps, head_lr)
            grad = np.outer(b @ w - target, w)
        resid = b @ w - target
        loss = 0.5 * float(resid @ resid)
        hg = float(np.linalg.norm(b.T @ resid))
        return w, grad, loss, hg
    batch = _client_batch(gt, config, i, round_index)
    if head_steps is None:
        w = client_head_update(b, batch)
    else:
        w = client_head_gd(b, prev_head, batch, head_steps, head_lr)
    return w, client_rep_gradient(b, w, batch), batch_loss(b, w, batch), _head_grad_norm(b, w, batch)


def server_round(state, gt, config, eta=None, head_steps=None, head_lr=None, executor=None):
    """Advance one communication round; returns ``(new_state, RoundInfo)``.

    `head_steps=None` solves each head exactly; an integer runs that many
    gradient steps from the carried head instead. Heads of clients that
    were not sampled are carried over unchanged.
    """
    eta = resolve_eta(gt, config) if eta is None else eta
    b = state.b
    ids = sample_participants(config, state.round)

    def work(i):
        return _client_work(b, state.heads[i], i, gt, config, state.round, head_steps, head_lr)

    if executor is None:
        results = [work(i) for i in ids]
    else:
        results = list(executor.map(work, ids))

    grad_sum = np.zeros_like(b)
    for _, g, _, _ in results:
        grad_sum += g
    new_b = b - eta * (grad_sum / ids.size)
    if not np.all(np.isfinite(new_b)):
        raise Diverged(f"non-finite representation after round {state.round}")
    if config.ortho:
        new_b = orthonormalize(new_b)

    heads = state.heads.copy()
    new_heads = np.array([w for w, _, _, _ in results])
    heads[ids] = new_heads
    if not np.all(np.isfinite(heads)):
        raise Diverged(f"non-finite head after round {state.round}")
    info = RoundInfo(
        participants=ids,
        new_heads=new_heads,
        emp_loss=float(np.mean([loss for _, _, loss, _ in results])),
        head_grad_norm=max(hg for _, _, _, hg in results),
        b_used=b,
    )
    return FedState(b=new_b, heads=heads, round=state.round + 1), info


def residual_f_diagnostic(b_hat, heads_matrix, gt, subset):
    """``||W - W*_S B*^T b_hat||_F``: how far the heads are from their population values."""
    subset = np.asarray(subset)
    target = gt.w_star[subset] @ gt.b_star.T @ b_hat
    return float(np.linalg.norm(heads_matrix - target))


def operator_deviation_probe(b_hat, heads_matrix, gt, subset, batches):
    """Empirical ``(1/rn) ||((1/m) A*A(Q) - Q)^T W||_2`` with ``Q = W b_hat^T - W*_S B*^T``.

    ``A*A`` acts row-wise: row i of ``Q`` is multiplied by the sample
    second-moment matrix of client i's batch.
    """
    subset = np.asarray(subset)
    q = heads_matrix @ b_hat.T - gt.w_star[subset] @ gt.b_star.T
    dev = np.empty_like(q)
    for row, bt in enumerate(batches):
        dev[row] = bt.x.T @ (bt.x @ q[row]) / bt.m - q[row]
    return float(np.linalg.norm(dev.T @ heads_matrix, 2) / subset.size)


@dataclass
class FedTrace:
    """Per-round records; index 0 is the initial state."""

    config: FedConfig
    eta: float
    e0: float
    sigma_min_bar: float
    sigma_max_bar: float
    bounds_exact: bool
    rate_bound: float
    dist: np.ndarray
    pop_loss: np.ndarray
    emp_loss: np.ndarray
    sigma_min_sub: np.ndarray
    sigma_max_sub: np.ndarray
    f_norm: np.ndarray
    participants: np.ndarray
    head_grad_norm: np.ndarray
    b_history: np.ndarray
    final_state: FedState
    warnings: list = field(default_factory=list)

    @property
    def contraction_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.dist[1:] / self.dist[:-1]

    def rounds_to(self, threshold):
        """First round with ``dist < threshold`` (``None`` if never)."""
        hits = np.nonzero(self.dist < threshold)[0]
        return int(hits[0]) if hits.size else None

    def rows(self):
        for t in range(self.dist.size):
            yield {
                "round": t,
                "dist": self.dist[t],
                "pop_loss": self.pop_loss[t],
                "emp_loss": self.emp_loss[t],
                "sigma_min_sub": self.sigma_min_sub[t],
                "sigma_max_sub": self.sigma_max_sub[t],
                "rate_bound": self.rate_bound,
                "f_norm": self.f_norm[t],
                "participants": int(self.participants[t]),
            }


def run_fedrep(gt, config, head_steps=None, head_lr=None, workers=None, b0=None):
    """Run `config.rounds` rounds from `b0` (default :func:`init_representation`).

    `workers` caps the thread pool used for per-client work; the result
    does not depend on it. Defaults to ``FEDREP_LAB_THREADS`` or 1.
    """
    if (gt.n, gt.d, gt.k) != (config.n, config.d, config.k):
        raise ValueError("ground truth dimensions do not match the config")
    workers = worker_count() if workers is None else max(1, int(workers))
    rn = config.participants
    bounds = spectral_bounds(gt, rn)
    eta_max = 1.0 / (4.0 * bounds.sigma_max ** 2)
    eta = eta_max if config.eta is None else float(config.eta)
    notes = []
    if eta > eta_max * (1 + 1e-12):
        msg = f"eta={eta:.6g} exceeds the admissible 1/(4 sigma_max^2)={eta_max:.6g}"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    b = init_representation(gt, config) if b0 is None else np.array(b0, dtype=float)
    state = FedState(b=b, heads=np.zeros((gt.n, gt.k)), round=0)
    dist0 = principal_angle_distance(b, gt.b_star)
    e0 = 1.0 - dist0 ** 2
    rate = math.sqrt(max(0.0, 1.0 - eta * e0 * bounds.sigma_min ** 2 / 2.0))

    T = config.rounds
    dist = np.empty(T + 1)
    pop = np.empty(T + 1)
    emp = np.full(T + 1, np.nan)
    smin = np.full(T + 1, np.nan)
    smax = np.full(T + 1, np.nan)
    fnorm = np.full(T + 1, np.nan)
    parts = np.zeros(T + 1, dtype=int)
    hgn = np.full(T + 1, np.nan)
    hist = np.empty((T + 1, gt.d, gt.k))
    dist[0], pop[0], hist[0] = dist0, population_loss(b, state.heads, gt), b

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, T + 1):
            state, info = server_round(state, gt, config, eta, head_steps, head_lr, executor)
            ids = info.participants
            q, r = qr_decompose(info.b_used)
            sub = singular_values(gt.w_star[ids] / math.sqrt(ids.size))
            dist[t] = principal_angle_distance(state.b, gt.b_star)
            pop[t] = population_loss(state.b, state.heads, gt)
            emp[t] = info.emp_loss
            smin[t], smax[t] = sub[-1], sub[0]
            # heads for the orthonormalized basis: b w = q (r w)
            fnorm[t] = residual_f_diagnostic(q, info.new_heads @ r.T, gt, ids)
            parts[t] = ids.size
            hgn[t] = info.head_grad_norm
            hist[t] = state.b
    finally:
        if executor is not None:
            executor.shutdown()

    logger.debug("fedrep finished: final dist %.3e after %d rounds", dist[-1], T)
    return FedTrace(
        config=replace(config, eta=eta),
        eta=eta,
        e0=e0,
        sigma_min_bar=bounds.sigma_min,
        sigma_max_bar=bounds.sigma_max,
        bounds_exact=bounds.exact,
        rate_bound=rate,
        dist=dist,
        pop_loss=pop,
        emp_loss=emp,
        sigma_min_sub=smin,
        sigma_max_sub=smax,
        f_norm=fnorm,
        participants=parts,
        head_grad_norm=hgn,
        b_history=hist,
        final_state=state,
        warnings=notes,
    )
