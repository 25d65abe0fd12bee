"""Planted ground truth and per-client sample batches.

Every random draw goes through :func:`substream`, which keys a fresh
``numpy.random.Generator`` on a tuple of integers. Batches are therefore a
pure function of ``(seed, client_id, counter)`` and do not depend on which
thread draws them or in what order.
"""
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DimensionError, DimensionMismatch
from .linalg import qr_decompose

__all__ = [
    "GroundTruth",
    "SampleBatch",
    "SpectralBounds",
    "substream",
    "generate_ground_truth",
    "sample_batch",
    "spectral_bounds",
    "participants_count",
    "save_ground_truth",
    "load_ground_truth",
    "DEFAULT_NOISE_VAR",
    "EXACT_SUBSET_BUDGET",
]

# label noise variance of the synthetic experiments
DEFAULT_NOISE_VAR = 1e-3
# above this many subsets, spectral_bounds falls back to the full-participation proxy
EXACT_SUBSET_BUDGET = 10_000

# stream tags keep the different consumers of a seed apart
STREAM_TRUTH = 0
STREAM_TRAIN = 1
STREAM_SAMPLING = 2
STREAM_INIT = 3
STREAM_NEW_CLIENT = 4
STREAM_TEST = 5


def substream(*key):
    """Generator keyed on a tuple of nonnegative integers."""
    return np.random.default_rng(np.random.SeedSequence([int(x) for x in key]))


@dataclass(frozen=True)
class GroundTruth:
    """Planted heads ``w_star`` (n x k) and orthonormal representation ``b_star`` (d x k)."""

    w_star: np.ndarray
    b_star: np.ndarray
    seed: int = 0

    @property
    def n(self):
        return self.w_star.shape[0]

    @property
    def k(self):
        return self.w_star.shape[1]

    @property
    def d(self):
        return self.b_star.shape[0]

    def client_params(self, client_id):
        """Full-dimensional regressor ``b_star @ w_i*`` of one client."""
        return self.b_star @ self.w_star[client_id]

    def product(self):
        """The n x d matrix ``W* B*^T`` whose rows are the client regressors."""
        return self.w_star @ self.b_star.T


@dataclass(frozen=True)
class SampleBatch:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    noise_var: float

    @property
    def m(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SpectralBounds:
    sigma_min: float
    sigma_max: float
    exact: bool

    @property
    def kappa(self):
        return self.sigma_max / self.sigma_min


def _unit_rows(a, scale):
    return a * (scale / np.linalg.norm(a, axis=1, keepdims=True))


def generate_ground_truth(n, d, k, seed=0):
    """Draw ``(W*, B*)``.

    ``B*`` is the Q factor of a d x k standard normal matrix; each row of
    ``W*`` is standard normal in R^k rescaled to norm sqrt(k).
    """
    if not (1 <= k < min(n, d)):
        raise DimensionError(f"need 1 <= k < min(n, d), got n={n}, d={d}, k={k}")
    rng = substream(seed, STREAM_TRUTH)
    b_star = qr_decompose(rng.standard_normal((d, k))).q
    w_star = _unit_rows(rng.standard_normal((n, k)), math.sqrt(k))
    return GroundTruth(w_star=w_star, b_star=b_star, seed=int(seed))


def draw_head(k, rng):
    """A single head of norm sqrt(k) in a uniformly random direction."""
    w = rng.standard_normal(k)
    return w * (math.sqrt(k) / np.linalg.norm(w))


def sample_batch(gt, client_id, m, noise_var=DEFAULT_NOISE_VAR, seed=0, counter=0, stream=STREAM_TRAIN):
    """Draw `m` samples ``x ~ N(0, I_d)``, ``y = <B* w_i*, x> + N(0, noise_var)``.

    The draw is keyed on ``(seed, stream, client_id, counter)``; callers
    pass the round index as `counter` to get a fresh batch each round.
    """
    if not 0 <= client_id < gt.n:
        raise IndexError(f"client_id {client_id} out of range [0, {gt.n})")
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    rng = substream(seed, stream, client_id, counter)
    x = rng.standard_normal((m, gt.d))
    y = x @ gt.client_params(client_id)
    if noise_var > 0:
        y = y + math.sqrt(noise_var) * rng.standard_normal(m)
    return SampleBatch(client_id=int(client_id), x=x, y=y, noise_var=float(noise_var))


def participants_count(n, r):
    """Number of clients sampled per round, ``ceil(r n)`` (guarded against float fuzz)."""
    return max(1, math.ceil(round(r * n, 9)))


def spectral_bounds(gt, rn):
    """Extreme singular values over all rn-row submatrices of ``W* / sqrt(rn)``.

    Enumerates every subset when there are at most ``EXACT_SUBSET_BUDGET``
    of them; otherwise returns the singular values of ``W* / sqrt(n)`` and
    flags the result as inexact.
    """
    n = gt.n
    if not 1 <= rn <= n:
        raise DimensionMismatch(f"subset size must lie in [1, {n}], got {rn}")
    if math.comb(n, rn) <= EXACT_SUBSET_BUDGET:
        subsets = np.array(list(combinations(range(n), rn)))
        svals = np.linalg.svd(gt.w_star[subsets] / math.sqrt(rn), compute_uv=False)
        return SpectralBounds(float(svals[:, -1].min()), float(svals[:, 0].max()), True)
    s = np.linalg.svd(gt.w_star / math.sqrt(n), compute_uv=False)
    return SpectralBounds(float(s[-1]), float(s[0]), False)


_GT_MAGIC = "fedrep-lab-ground-truth v1"


def save_ground_truth(gt, path):
    """Write ground truth as text: a header line then row-major W*, then B*.

    Values are printed with 17 significant digits so reloading is exact.
    """
    path = Path(path)
    lines = [f"# {_GT_MAGIC}", f"{gt.n} {gt.d} {gt.k} {gt.seed}"]
    for block in (gt.w_star, gt.b_star):
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in block)
    path.write_text("\n".join(lines) + "\n")


def load_ground_truth(path):
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != f"# {_GT_MAGIC}":
        raise ValueError(f"{path}: not a ground-truth file")
    n, d, k, seed = (int(v) for v in text[1].split())
    rows = [np.array(line.split(), dtype=float) for line in text[2:] if line.strip()]
    if len(rows) != n + d:
        raise ValueError(f"{path}: expected {n + d} data rows, found {len(rows)}")
    w_star = np.vstack(rows[:n])
    b_star = np.vstack(rows[n:])
    if w_star.shape != (n, k) or b_star.shape != (d, k):
        raise ValueError(f"{path}: row widths do not match header k={k}")
    return GroundTruth(w_star=w_star, b_star=b_star, seed=seed)
