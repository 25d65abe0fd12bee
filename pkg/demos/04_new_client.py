"""Transferring a learned representation to a client with two samples.

Run: python3 demos/04_new_client.py
"""
import numpy as np

from fedrep_lab import baselines, fedrep, generate_ground_truth

# %% train on 100 clients in d=20, then score a fresh client that has only m_new = k samples
reports = []
for seed in range(10):
    config = fedrep.FedConfig(n=100, d=20, k=2, m=5, r=0.1, rounds=500, seed=seed)
    gt = generate_ground_truth(config.n, config.d, config.k, seed)
    b = fedrep.run_fedrep(gt, config).final_state.b
    reports.append(baselines.new_client_eval(b, gt, m_new=2, seed=seed))

# %% medians over seeds
for col in ("mse_fedrep", "mse_local", "mse_fedavg_style"):
    print(f"{col:18s} median {np.median([getattr(r, col) for r in reports]):.3e}")
print(f"shared-model error on the training clients (seed 9): {baselines.global_model_error(gt):.3f}")
