"""Writing replicated runs to CSV with a manifest, as the command line does.

Run: python3 demos/05_experiment_files.py
"""
import json
import tempfile
from pathlib import Path

from fedrep_lab import parse_config, run_experiment

# %% the same text format the --config flag reads
text = """
[run]
replicates = 3
algo = fedrep,gdgd,local,global
[problem]
n = 20
d = 8
[fedrep]
r = 0.5
rounds = 40
"""
with tempfile.TemporaryDirectory() as tmp:
    cfg = parse_config(text, overrides={"out": str(Path(tmp) / "baseline.csv")})
    out, manifest = run_experiment("baseline", cfg)
    lines = out.read_text().splitlines()
    print(lines[0])
    print(lines[1])
    print(f"... {len(lines)} lines; replicate seeds {manifest['replicate_seeds']}")
    print(json.dumps({k: manifest[k] for k in ("schema_version", "command", "checks")}))
