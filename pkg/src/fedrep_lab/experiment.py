"""Run an engine for a configured number of replicates and write CSV + manifest.

CSV layout: a ``# fedrep-lab schema=1 command=<cmd>`` comment line, a
header row, one block of rows per replicate (``replicate`` = 0, 1, ...)
and a summary block with ``replicate`` = ``mean`` / ``std`` rows. Floats
use Python's shortest round-trip repr so identical runs give identical
bytes. The manifest is JSON written next to the CSV (``<out>.manifest.json``).
"""
import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import acceptance, baselines, fedrep, fullmeas
from .baselines import NEW_CLIENT_COLUMNS
from .synthetic import generate_ground_truth, sample_batch

__all__ = ["SCHEMA_VERSION", "COMMANDS", "run_experiment", "write_plot_script", "ReplicateError"]

SCHEMA_VERSION = 1
COMMANDS = ("fedrep", "fullmeas", "baseline", "newclient")

_TAUS = {"fedrep": None, "gdgd": 1, "10gd": 10}


class ReplicateError(RuntimeError):
    def __init__(self, index, exc):
        self.index = index
        super().__init__(f"replicate {index}: {type(exc).__name__}: {exc}")


def _code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------- per-command replicate runners

def _fedrep_like(cfg, seed, algo, workers):
    fc = cfg.fed_config(seed)
    gt = generate_ground_truth(fc.n, fc.d, fc.k, seed)
    if algo in _TAUS:
        trace = fedrep.run_fedrep(gt, fc, head_steps=_TAUS[algo], workers=workers)
        checks = {}
        if cfg.check_theorem:
            worst = acceptance.population_contraction(trace)
            checks[f"{algo}_contraction"] = bool(worst <= trace.rate_bound + 1e-6)
        return list(trace.rows()), checks
    # local-only and shared-model baselines have no trace: a single row at the final round
    row = {c: math.nan for c in fedrep.TRACE_COLUMNS}
    row["round"] = fc.rounds
    row["participants"] = fc.n
    if algo == "local":
        losses = []
        for i in range(gt.n):
            batch = sample_batch(gt, i, fc.m, fc.noise_var, seed, 0)
            theta = baselines.local_only_fit(batch.x, batch.y)
            diff = theta - gt.client_params(i)
            losses.append(0.5 * float(diff @ diff))
        row["pop_loss"] = float(np.mean(losses))
    else:
        row["pop_loss"] = baselines.global_model_error(gt)
    return [row], {}


def _run_fedrep_cmd(cfg, seed, workers):
    return _fedrep_like(cfg, seed, "fedrep", workers)


def _run_baseline_cmd(cfg, seed, workers):
    rows, checks = [], {}
    for algo in cfg.algos:
        r, c = _fedrep_like(cfg, seed, algo, workers)
        rows.extend({"algo": algo, **row} for row in r)
        checks.update(c)
    return rows, checks


def _run_fullmeas_cmd(cfg, seed, workers):
    problem = fullmeas.random_problem(cfg.n, cfg.d, cfg.k, seed=seed)
    v0 = fullmeas.random_v0(cfg.d, cfg.k, seed=seed)
    r0 = fullmeas.qr_decompose(v0).r
    eta = fullmeas.theorem_step_size(problem, r0) if cfg.eta is None else cfg.eta
    trace = fullmeas.run_fullmeas(problem, v0, eta, cfg.rounds)
    checks = {}
    if cfg.check_theorem:
        rflags, *_ = acceptance.fullmeas_recursion_checks(trace)
        cflags, *_ = acceptance.fullmeas_contraction_checks(problem, trace)
        checks = {**rflags, **cflags}
    return list(trace.rows()), checks


def _run_newclient_cmd(cfg, seed, workers):
    fc = cfg.fed_config(seed)
    gt = generate_ground_truth(fc.n, fc.d, fc.k, seed)
    trace = fedrep.run_fedrep(gt, fc, workers=workers)
    rep = baselines.new_client_eval(
        trace.final_state.b, gt, cfg.m_new, cfg.noise_var, seed=seed, test_size=cfg.test_size
    )
    return [rep.as_row()], {}


_RUNNERS = {
    "fedrep": (_run_fedrep_cmd, fedrep.TRACE_COLUMNS),
    "baseline": (_run_baseline_cmd, ("algo",) + fedrep.TRACE_COLUMNS),
    "fullmeas": (_run_fullmeas_cmd, fullmeas.TRACE_COLUMNS),
    "newclient": (_run_newclient_cmd, NEW_CLIENT_COLUMNS),
}


def _summary(rows_per_rep, columns):
    """Mean and std rows keyed on every non-numeric / index column."""
    keys = [c for c in ("algo", "round") if c in columns]
    groups = {}
    for rows in rows_per_rep:
        for row in rows:
            groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, rows in groups.items():
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            rec = dict(zip(keys, key))
            rec["replicate"] = stat
            for c in columns:
                if c in keys:
                    continue
                vals = np.array([float(r[c]) for r in rows])
                rec[c] = float(fn(vals)) if len(vals) else math.nan
            out.append(rec)
    return out


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_path(out):
    return Path(f"{out}.manifest.json")


def run_experiment(command, cfg):
    """Run `command` for every replicate seed and write the CSV and manifest.

    Replicates run on up to ``FEDREP_LAB_THREADS`` threads; with a single
    replicate the threads go to per-client work instead. Output is
    assembled in replicate order, so it does not depend on scheduling.

    Returns ``(csv_path, manifest)``.
    """
    if command not in _RUNNERS:
        raise ValueError(f"unknown command {command!r}")
    runner, columns = _RUNNERS[command]
    seeds = cfg.replicate_seeds()
    workers = fedrep.worker_count()
    start = time.perf_counter()

    def one(idx_seed):
        idx, seed = idx_seed
        try:
            inner = workers if len(seeds) == 1 else 1
            return runner(cfg, seed, inner)
        except Exception as exc:
            raise ReplicateError(idx, exc) from exc

    jobs = list(enumerate(seeds))
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    header = ("replicate",) + tuple(columns)
    buf = io.StringIO()
    buf.write(f"# fedrep-lab schema={SCHEMA_VERSION} command={command}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for idx, (rows, _) in enumerate(results):
        for row in rows:
            writer.writerow([idx] + [_fmt(row[c]) for c in columns])
    for row in _summary([rows for rows, _ in results], columns):
        writer.writerow([_fmt(row.get(c, "")) for c in header])

    checks = {}
    for idx, (_, c) in enumerate(results):
        for name, flag in c.items():
            checks[name] = checks.get(name, True) and bool(flag)

    out = Path(cfg.out)
    _atomic_write(out, buf.getvalue().encode("utf-8"))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "replicate_seeds": seeds,
        "code_version": _code_version(),
        "wall_time_s": time.perf_counter() - start,
        "checks": checks,
        "csv": str(out),
    }
    _atomic_write(manifest_path(out), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return out, manifest


_PLOT_TEMPLATE = '''"""Plot {csv_name} (written by fedrep-lab)."""
import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv({csv_path!r}, comment="#")
per_rep = df[~df["replicate"].isin(["mean", "std"])]
fig, ax = plt.subplots()
group_cols = [c for c in ("algo", "replicate") if c in per_rep.columns]
for key, part in per_rep.groupby(group_cols):
    ax.semilogy(part["round"].astype(float), part[{y!r}].astype(float), label=str(key), alpha=0.7)
ax.set_xlabel("round")
ax.set_ylabel({y!r})
ax.legend(fontsize="small")
fig.savefig({png!r}, dpi=150)
'''


def write_plot_script(command, csv_path, script_path):
    """Emit a matplotlib script that plots the main trace column of `csv_path`."""
    y = {"fullmeas": "loss", "newclient": "mse_fedrep"}.get(command, "dist")
    if command == "newclient":
        body = (
            f'"""Bar chart of {Path(csv_path).name}."""\n'
            "import matplotlib.pyplot as plt\nimport pandas as pd\n\n"
            f"df = pd.read_csv({str(csv_path)!r}, comment='#')\n"
            "mean = df[df['replicate'] == 'mean'].iloc[0]\n"
            "cols = ['mse_fedrep', 'mse_fedavg_style', 'mse_local']\n"
            "plt.bar(cols, [float(mean[c]) for c in cols])\nplt.yscale('log')\n"
            f"plt.savefig({str(Path(csv_path).with_suffix('.png'))!r}, dpi=150)\n"
        )
    else:
        body = _PLOT_TEMPLATE.format(
            csv_name=Path(csv_path).name, csv_path=str(csv_path), y=y,
            png=str(Path(csv_path).with_suffix(".png")),
        )
    Path(script_path).write_text(body)
    return Path(script_path)
