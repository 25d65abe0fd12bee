"""The acceptance battery.

Each ``check_*`` function runs one criterion at its fixed tolerance and
returns a :class:`CheckResult`; nothing raises on failure. The same
functions back ``fedrep-lab verify`` and ``tests/test_acceptance.py``.
"""
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import baselines, fedrep, fullmeas
from .linalg import principal_angle_distance
from .synthetic import GroundTruth, generate_ground_truth, sample_batch, substream

__all__ = ["CheckResult", "CHECKS", "run_all", "format_table"]


@dataclass
class CheckResult:
    number: int | str
    name: str
    anchor: str
    passed: bool
    detail: str
    seconds: float
    expected_fail: bool = False

    @property
    def status(self):
        if self.expected_fail:
            return "EXPECTED-FAIL" if not self.passed else "UNEXPECTED-PASS"
        return "PASS" if self.passed else "FAIL"

    @property
    def ok(self):
        return self.passed != self.expected_fail


@contextmanager
def _timer():
    box = {}
    start = time.perf_counter()
    yield box
    box["seconds"] = time.perf_counter() - start


# ---------------------------------------------------------------- full measurement

FM_DIMS = (30, 20, 3)
FM_ROUNDS = 100
FM_SEED = 0


def _fullmeas_run(eta_scale=1.0, seed=FM_SEED):
    problem = fullmeas.random_problem(*FM_DIMS, seed=seed)
    v0 = fullmeas.random_v0(FM_DIMS[1], FM_DIMS[2], seed=seed)
    r0 = fullmeas.qr_decompose(v0).r
    eta = eta_scale * fullmeas.theorem_step_size(problem, r0)
    return problem, fullmeas.run_fullmeas(problem, v0, eta, FM_ROUNDS)


def fullmeas_recursion_checks(trace):
    """R-recursion residual, monotone spectrum and the norm cap."""
    res = trace.r_recursion_residual().max()
    s = trace.sigma_r
    mono = bool(np.all(np.diff(s[:, -1]) >= -1e-10) and np.all(np.diff(s[:, 0]) >= -1e-10))
    cap = float(np.max(s[:, 0] ** 2 - 2 * s[0, 0] ** 2))
    return {
        "r_recursion": bool(res <= 1e-9),
        "monotone": mono,
        "norm_cap": bool(cap <= 1e-8),
    }, res, cap


def fullmeas_contraction_checks(problem, trace):
    """Per-round dist contraction at the theorem rate and the final-loss bound."""
    excess = trace.dist[1:] - (trace.rate * trace.dist[:-1] + 1e-9)
    bound = trace.rate_bound[-1]
    return {
        "contraction": bool(np.all(excess <= 0)),
        "loss_bound": bool(trace.final_loss <= 1.05 * bound),
    }, float(excess.max()), int(np.sum(excess > 0)), bound


def check_1():
    with _timer() as tm:
        _, trace = _fullmeas_run()
        flags, res, cap = fullmeas_recursion_checks(trace)
    ok = all(flags.values()) and tm["seconds"] < 1.0
    return CheckResult(
        1, "full-measurement R-recursion", "R_{t+1}^T R_{t+1} = R_t^T R_t + eta^2 S_t^T S_t",
        ok, f"max residual {res:.2e}, monotone={flags['monotone']}, "
        f"max(smax^2 - 2 smax0^2)={cap:.2e}, {tm['seconds']:.2f}s", tm["seconds"],
    )


def check_2():
    with _timer() as tm:
        problem, trace = _fullmeas_run()
        flags, worst, nviol, bound = fullmeas_contraction_checks(problem, trace)
    ok = all(flags.values()) and tm["seconds"] < 1.0
    return CheckResult(
        2, "full-measurement contraction and loss bound",
        "||M - U_{T+1} V_T^T||_F^2 <= (1 - eta s*min^2/(2 smax^2(R0)))^T ||M||_F^2 smax(R0)/smin(R0)",
        ok, f"per-round contraction violated in {nviol}/{FM_ROUNDS} rounds (worst excess {worst:.3e}); "
        f"final loss {trace.final_loss:.3e} vs 1.05*bound {1.05 * bound:.3e}; {tm['seconds']:.2f}s",
        tm["seconds"],
    )


def check_3(rounds=40):
    with _timer() as tm:
        problem = fullmeas.problem_from_matrix(np.eye(2))
        v0 = fullmeas.random_v0(2, 2, seed=FM_SEED)
        trace = fullmeas.run_fullmeas(problem, v0, 0.5, rounds)
        bound = 2 * 0.75 ** np.arange(rounds + 1) + 1e-9
        ok = bool(np.all(trace.loss <= bound))
    return CheckResult(
        3, "identity target", "(1 - s*min^4/(4 s*max^4))^T ||M||_F^2",
        ok, f"max loss/bound {np.max(trace.loss / bound):.3e} over T<=40", tm["seconds"],
    )


# ---------------------------------------------------------------- FedRep, population mode

def population_config(d=10, rounds=200, ortho=True, seed=0):
    return fedrep.FedConfig(
        n=100, d=d, k=2, m=5, r=1.0, rounds=rounds, seed=seed, noise_var=0.0,
        ortho=ortho, grad_mode="population",
    )


# ratios are only meaningful while dist is above round-off
RATIO_FLOOR = 1e-12


def population_contraction(trace):
    """Largest per-round dist ratio (over rounds with dist above the floor)."""
    mask = trace.dist[:-1] > RATIO_FLOOR
    return float(np.max(trace.contraction_ratio[mask])) if mask.any() else 0.0


def check_4():
    with _timer() as tm:
        cfg = population_config()
        gt = generate_ground_truth(cfg.n, cfg.d, cfg.k, cfg.seed)
        trace = fedrep.run_fedrep(gt, cfg, workers=1)
        worst = population_contraction(trace)
    ok = worst <= trace.rate_bound + 1e-6 and trace.dist[-1] < 1e-6 and tm["seconds"] < 5.0
    return CheckResult(
        4, "population-mode contraction",
        "dist(B^T, B*) <= (1 - eta E0 sigma_min^2 / 2)^{T/2} dist(B^0, B*)",
        ok, f"max ratio {worst:.8f} vs bound {trace.rate_bound:.8f}; final dist {trace.dist[-1]:.2e}; "
        f"{tm['seconds']:.2f}s", tm["seconds"],
    )


# ---------------------------------------------------------------- FedRep, empirical mode

SYNTH_SEEDS = (0, 1, 2)
SYNTH_ROUNDS = 500


def synth_config(seed, rounds=SYNTH_ROUNDS):
    return fedrep.FedConfig(
        n=100, d=10, k=2, m=5, r=0.1, rounds=rounds, seed=seed, noise_var=1e-3,
        data_mode="fixed", init="spectral",
    )


def synth_runs(seeds=SYNTH_SEEDS, rounds=SYNTH_ROUNDS):
    """Final dist and rounds-to-0.1 for FedRep, 10GD-GD and GD-GD on each seed."""
    out = []
    for seed in seeds:
        cfg = synth_config(seed, rounds)
        gt = generate_ground_truth(cfg.n, cfg.d, cfg.k, seed)
        row = {}
        for name, tau in (("fedrep", None), ("10gd", 10), ("gdgd", 1)):
            tr = fedrep.run_fedrep(gt, cfg, head_steps=tau, workers=1)
            row[name] = (float(tr.dist[-1]), tr.rounds_to(0.1))
        out.append(row)
    return out


def check_5():
    with _timer() as tm:
        runs = synth_runs()
    med = float(np.median([r["fedrep"][0] for r in runs]))

    def hit(v):
        return math.inf if v is None else v

    order = all(
        hit(r["fedrep"][1]) <= hit(r["10gd"][1]) <= hit(r["gdgd"][1]) for r in runs
    )
    hits = "; ".join(
        f"seed {s}: {r['fedrep'][1]}/{r['10gd'][1]}/{r['gdgd'][1]}" for s, r in zip(SYNTH_SEEDS, runs)
    )
    ok = med < 1e-2 and order and tm["seconds"] < 30.0
    return CheckResult(
        5, "empirical FedRep convergence and head-step ordering",
        "n=100 d=10 k=2 m=5 r=0.1: median dist < 1e-2; rounds-to-0.1 exact <= 10 steps <= 1 step",
        ok, f"median final dist {med:.2e}; rounds-to-0.1 fedrep/10gd/gdgd {hits}; {tm['seconds']:.1f}s",
        tm["seconds"],
    )


def check_6(rounds=50):
    with _timer() as tm:
        on = population_config(rounds=rounds, ortho=True)
        off = replace(on, ortho=False)
        gt = generate_ground_truth(on.n, on.d, on.k, on.seed)
        tr_on = fedrep.run_fedrep(gt, on, workers=1)
        tr_off = fedrep.run_fedrep(gt, off, workers=1)
        gaps = np.array([principal_angle_distance(a, b) for a, b in zip(tr_on.b_history, tr_off.b_history)])
    ok = bool(np.all(gaps <= 1e-8))
    return CheckResult(
        6, "orthonormalization equivalence",
        "dist(B^t with QR, B^t without QR) <= 1e-8 for 50 rounds",
        ok, f"max inter-iterate distance {gaps.max():.3e} over {rounds} rounds "
        f"(first round above 1e-8: {int(np.argmax(gaps > 1e-8)) if (gaps > 1e-8).any() else None})",
        tm["seconds"],
    )


# ---------------------------------------------------------------- gradient / LS oracles

def _rep_loss(b, w, batch):
    return fedrep.batch_loss(b, w, batch)


def gradient_fd_errors(instances=20, h=1e-6):
    errs = []
    for i in range(instances):
        rng = substream(1000, i)
        d, k = 6 + i % 5, 1 + i % 3
        gt = generate_ground_truth(8, d, k, seed=100 + i)
        batch = sample_batch(gt, i % 8, 7, noise_var=0.1, seed=i)
        b = rng.standard_normal((d, k))
        w = rng.standard_normal(k)
        delta = rng.standard_normal((d, k))
        grad = fedrep.client_rep_gradient(b, w, batch)
        fd = (_rep_loss(b + h * delta, w, batch) - _rep_loss(b - h * delta, w, batch)) / (2 * h)
        an = float(np.sum(grad * delta))
        errs.append(abs(fd - an) / max(abs(an), 1e-12))
    return np.array(errs)


def check_7():
    with _timer() as tm:
        errs = gradient_fd_errors()
    return CheckResult(
        7, "representation gradient vs finite differences", "grad_B f_i(w o B)",
        bool(np.all(errs < 1e-5)), f"max relative error {errs.max():.2e} over {errs.size} instances",
        tm["seconds"],
    )


def _normal_equation_solve(z, y):
    """Gauss-Jordan elimination on ``z^T z w = z^T y`` with partial pivoting."""
    a = z.T @ z
    rhs = z.T @ y
    k = a.shape[0]
    aug = np.hstack([a, rhs[:, None]])
    for col in range(k):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(k):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, -1]


def head_ls_errors(batches=50):
    errs = []
    for i in range(batches):
        rng = substream(2000, i)
        k = 1 + i % 4
        d = k + 3 + i % 5
        gt = generate_ground_truth(k + 2, d, k, seed=200 + i)
        batch = sample_batch(gt, 0, 4 * k + 8, noise_var=1e-2, seed=i)
        b = rng.standard_normal((d, k))
        w = fedrep.client_head_update(b, batch)
        errs.append(np.max(np.abs(w - _normal_equation_solve(batch.x @ b, batch.y))))
    return np.array(errs)


def check_8():
    with _timer() as tm:
        errs = head_ls_errors()
    return CheckResult(
        8, "head least squares vs normal equations", "argmin_w f_i(w o B^t)",
        bool(np.all(errs <= 1e-10)), f"max abs difference {errs.max():.2e} over {errs.size} batches",
        tm["seconds"],
    )


# ---------------------------------------------------------------- global model

def numerical_global_min(gt, seed=0):
    """Minimize the shared-model objective over (b, w) with L-BFGS from a random start."""
    d, k = gt.d, gt.k
    targets = gt.product()  # n x d
    mean_t = targets.mean(axis=0)
    const = 0.5 * float(np.sum(targets * targets)) / gt.n - 0.5 * float(mean_t @ mean_t)

    def fun(z):
        b = z[: d * k].reshape(d, k)
        w = z[d * k:]
        p = b @ w
        diff = p - mean_t
        # 1/(2n) sum ||p - t_i||^2 = 1/2 ||p - mean||^2 + const
        val = 0.5 * float(diff @ diff) + const
        gb = np.outer(diff, w)
        gw = b.T @ diff
        return val, np.concatenate([gb.ravel(), gw])

    z0 = substream(3000, seed).standard_normal(d * k + k)
    res = minimize(fun, z0, jac=True, method="L-BFGS-B", options={"gtol": 1e-13, "ftol": 1e-16, "maxiter": 10_000})
    return float(res.fun), res.x


def check_9(instances=20):
    with _timer() as tm:
        gaps = []
        for i in range(instances):
            gt = generate_ground_truth(10 + i, 8, 1 + i % 3, seed=300 + i)
            val, _ = numerical_global_min(gt, seed=i)
            gaps.append(abs(val - baselines.global_model_error(gt)))
        toy = GroundTruth(w_star=np.array([[1.0], [-1.0]]), b_star=np.array([[1.0], [0.0]]))
        hand_err = abs(baselines.global_model_error(toy) - 0.5)
    gaps = np.array(gaps)
    ok = bool(np.all(gaps <= 1e-8)) and hand_err <= 1e-12
    return CheckResult(
        9, "shared-model analytic error",
        "(1/2n) sum_i ||(1/n) B* sum_i' (w_i'* - w_i*)||^2",
        ok, f"max |closed form - numerical min| {gaps.max():.2e}; hand case error {hand_err:.1e}",
        tm["seconds"],
    )


# ---------------------------------------------------------------- new clients

def new_client_reports(seeds=50, m_new=2, noise_var=1e-3):
    cfg = population_config(d=20)
    gt = generate_ground_truth(cfg.n, cfg.d, cfg.k, cfg.seed)
    trace = fedrep.run_fedrep(gt, cfg, workers=1)
    b_learned = trace.final_state.b
    return trace, [
        baselines.new_client_eval(b_learned, gt, m_new, noise_var=noise_var, seed=s) for s in range(seeds)
    ]


def check_10():
    with _timer() as tm:
        _, reports = new_client_reports()
    rep = np.median([r.mse_fedrep for r in reports])
    loc = np.median([r.mse_local for r in reports])
    glob = np.median([r.mse_fedavg_style for r in reports])
    ok = rep < 0.1 * loc and rep < glob and tm["seconds"] < 10.0
    return CheckResult(
        10, "new-client gap", "m_new = k = 2, d = 20: mse fedrep < mse local and < mse shared model",
        bool(ok), f"median mse fedrep {rep:.2e}, local {loc:.2e}, shared-model {glob:.2e}; {tm['seconds']:.2f}s",
        tm["seconds"],
    )


# ---------------------------------------------------------------- determinism

@contextmanager
def _env(key, value):
    old = os.environ.get(key)
    os.environ[key] = value
    try:
        yield
    finally:
        if old is None:
            os.environ.pop(key, None)
        else:
            os.environ[key] = old


def determinism_outputs(threads=("1", "1", "4")):
    from .config import parse_config
    from .experiment import run_experiment

    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, nthreads in enumerate(threads):
            out = Path(tmp) / f"run{i}.csv"
            cfg = parse_config(overrides={
                "out": str(out), "replicates": 3, "seed_stride": 1, "seed": 0,
                "algo": "fedrep,10gd,gdgd", "rounds": SYNTH_ROUNDS,
                "data_mode": "fixed", "init": "spectral",
            })
            with _env(fedrep.THREADS_ENV, nthreads):
                run_experiment("baseline", cfg)
            blobs.append(out.read_bytes())
    return blobs


def check_11():
    with _timer() as tm:
        blobs = determinism_outputs()
    ok = all(b == blobs[0] for b in blobs[1:])
    return CheckResult(
        11, "determinism across runs and thread counts", FEDREP_THREADS_NOTE,
        ok, f"{len(blobs)} CSVs of {len(blobs[0])} bytes, identical={ok}; {tm['seconds']:.1f}s", tm["seconds"],
    )


FEDREP_THREADS_NOTE = "results independent of FEDREP_LAB_THREADS"


def check_negative_control():
    """The per-round contraction check run at twice the admissible step; reported as expected-fail."""
    with _timer() as tm:
        try:
            problem, trace = _fullmeas_run(eta_scale=2.0)
            flags, _, nviol, _ = fullmeas_contraction_checks(problem, trace)
            passed = flags["contraction"]
            detail = f"contraction violated in {nviol}/{FM_ROUNDS} rounds"
        except Exception as exc:  # divergence counts as failing the check
            passed, detail = False, f"raised {type(exc).__name__}"
    return CheckResult(
        "neg", "negative control: eta = 2x theorem bound",
        "per-round contraction at 2x the full-measurement step",
        passed, detail, tm["seconds"], expected_fail=True,
    )


CHECKS = (
    check_1, check_2, check_3, check_4, check_5, check_6,
    check_7, check_8, check_9, check_10, check_11,
)


def run_all(include_negative=True):
    results = [c() for c in CHECKS]
    if include_negative:
        results.append(check_negative_control())
    return results


def format_table(results):
    lines = [f"{'#':>4}  {'status':<15} {'check':<52} anchor / detail"]
    for r in results:
        lines.append(f"{str(r.number):>4}  {r.status:<15} {r.name:<52} {r.anchor}")
        lines.append(f"{'':>4}  {'':<15} {'':<52} {r.detail}")
    return "\n".join(lines)
