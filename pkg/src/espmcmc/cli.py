"""Command-line entry point.

Subcommands::

    espmcmc simulate --config cfg.yaml [--seed S] [--out DIR]
    espmcmc smooth   --config cfg.yaml [--seed S] [--workers W] [--out DIR]
    espmcmc infer    --config cfg.yaml [--seed S] [--workers W] [--out DIR]
    espmcmc diagnose CHAIN.csv [...] [--config cfg.yaml] [--batch-size B] [--warmup K] [--out DIR]
    espmcmc compare  [--config cfg.yaml] [--out DIR]

``--seed`` replaces the experiment seed from the config: the data seed for
``simulate`` and the root of the chain keys for ``smooth`` and ``infer``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, InputError
from .experiment import (
    DEFAULT_BATCH_SIZE,
    diagnose_csv,
    load_config,
    prepare_data,
    run_experiment,
    write_states_observations,
    write_tables,
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="espmcmc", description="Extended-space particle MCMC experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, seed=True, workers=False):
        sp.add_argument("--config", required=config_required, type=Path, help="YAML experiment configuration")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        if workers:
            sp.add_argument("--workers", type=int, default=None, help="number of grid cells run concurrently")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out')")

    common(sub.add_parser("simulate", help="write synthetic states and observations"))
    common(sub.add_parser("smooth", help="run a smoothing grid (pimh, pg-smooth, bsi) at fixed parameters"),
           workers=True)
    common(sub.add_parser("infer", help="run a parameter-inference grid (general or bsi with blocks)"), workers=True)
    d = sub.add_parser("diagnose", help="IACT summaries of existing chain CSVs")
    d.add_argument("chains", nargs="+", type=Path, help="chain CSV files")
    d.add_argument("--batch-size", type=int, default=None, help="OBM batch size (default: from config or model)")
    d.add_argument("--warmup", type=int, default=0, help="rows to drop from the start of each file")
    common(d, config_required=False, seed=False)
    common(sub.add_parser("compare", help="rebuild table.csv and timing.csv from summary files"),
           config_required=False, seed=False)
    return p


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data.seed = args.seed
    if cfg.data.path:
        raise ConfigurationError("simulate ignores data.path; remove it or use smooth/infer")
    x, y = prepare_data(cfg)
    out = Path(args.out or cfg.out)
    for p in write_states_observations(out, x, y):
        print(p)
    return 0


def _cmd_run(args, infer: bool) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out)
    summaries = run_experiment(cfg, infer=infer, out=out, workers=args.workers)
    for s in summaries:
        mi = s["max_iact"]
        print(f"{s['cell']['id']}: max IACT {'n/a' if mi is None else f'{mi:.4g}'}")
    print(out / "table.csv")
    return 0


def _cmd_diagnose(args) -> int:
    b = args.batch_size
    if b is None:
        b = load_config(args.config).effective_batch_size() if args.config else DEFAULT_BATCH_SIZE
    results = [diagnose_csv(p, b, args.warmup) for p in args.chains]
    text = json.dumps(results, indent=2, sort_keys=True) + "\n"
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        dest = args.out / "diagnose.json"
        dest.write_text(text)
        print(dest)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_compare(args) -> int:
    if args.out is not None:
        out = args.out
    elif args.config is not None:
        out = Path(load_config(args.config).out)
    else:
        raise ConfigurationError("compare needs --out or --config")
    for p in write_tables(out):
        print(p)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {
        "simulate": _cmd_simulate,
        "smooth": lambda a: _cmd_run(a, infer=False),
        "infer": lambda a: _cmd_run(a, infer=True),
        "diagnose": _cmd_diagnose,
        "compare": _cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, InputError) as exc:
        print(f"espmcmc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
