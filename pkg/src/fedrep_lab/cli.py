"""Command-line entry point: ``fedrep-lab {fedrep,fullmeas,baseline,newclient,verify}``."""
import argparse
import logging
import sys

from .config import ALGOS, parse_config
from .errors import ConfigError, FedRepLabError
from .experiment import ReplicateError, run_experiment, write_plot_script

log = logging.getLogger("fedrep_lab")

# flag dest -> config key
_FLAG_KEYS = (
    "out", "seed", "replicates", "seed_stride", "n", "d", "k", "m", "r", "eta", "rounds",
    "noise_var", "ortho", "data_mode", "grad_mode", "init", "init_steps", "algo",
    "m_new", "test_size",
)


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="INI-style config file")
    p.add_argument("--out", metavar="PATH", help="CSV output path")
    p.add_argument("--seed", type=str, metavar="U64")
    p.add_argument("--replicates", type=str, metavar="N")
    p.add_argument("--seed-stride", dest="seed_stride", type=str, metavar="N")
    for name in ("n", "d", "k", "m", "r", "eta", "rounds"):
        p.add_argument(f"--{name}", type=str)
    p.add_argument("--noise-var", dest="noise_var", type=str)
    p.add_argument("--ortho", choices=("on", "off"))
    p.add_argument("--data-mode", dest="data_mode", choices=("fresh", "fixed"))
    p.add_argument("--grad-mode", dest="grad_mode", choices=("empirical", "population"))
    p.add_argument("--init", choices=("random", "spectral"))
    p.add_argument("--init-steps", dest="init_steps", type=str)
    p.add_argument("--algo", help=f"comma-separated subset of {{{','.join(ALGOS)}}}")
    p.add_argument("--m-new", dest="m_new", type=str)
    p.add_argument("--test-size", dest="test_size", type=str)
    p.add_argument("--check-theorem", dest="check_theorem", action="store_true", default=None)
    p.add_argument("--plot-script", dest="plot_script", metavar="PATH",
                   help="also write a matplotlib script plotting the CSV")


def build_parser():
    parser = argparse.ArgumentParser(prog="fedrep-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fedrep", "run FedRep on synthetic linear-regression clients"),
        ("fullmeas", "run alternating minimization-descent on a full low-rank target"),
        ("baseline", "run GD-GD / 10GD-GD / local-only / shared-model baselines"),
        ("newclient", "train FedRep, then fit a new client on m_new samples"),
    ):
        _add_common(sub.add_parser(name, help=help_text))
    verify = sub.add_parser("verify", help="run the acceptance battery and print a pass/fail table")
    verify.add_argument("--no-negative-control", dest="negative", action="store_false")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "verify":
        from .acceptance import format_table, run_all

        results = run_all(include_negative=args.negative)
        print(format_table(results))
        failed = [r for r in results if not r.ok]
        print(f"\n{len(results) - len(failed)}/{len(results)} checks as expected")
        return 1 if failed else 0

    overrides = {key: getattr(args, key) for key in _FLAG_KEYS}
    overrides["check_theorem"] = args.check_theorem
    if args.command == "fedrep":
        overrides["algo"] = overrides["algo"] or None
    try:
        cfg = parse_config(path=args.config, overrides=overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        out, manifest = run_experiment(args.command, cfg)
    except (ReplicateError, FedRepLabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if args.plot_script:
        write_plot_script(args.command, out, args.plot_script)
    print(f"wrote {out}")
    checks = manifest["checks"]
    for name, flag in sorted(checks.items()):
        print(f"  {name}: {'pass' if flag else 'FAIL'}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
