"""Command-line entry point: ``fidsel run|gen|curves|threshold``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments
from .config import GENERATORS, ExperimentConfig, config_from_mapping, load_config
from .datasets import format_value, load_dataset, save_dataset
from .errors import ConfigError, FidselError, NumericError
from .output import read_profile

log = logging.getLogger("fidsel")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError("expected key=value", key or None)
        out[key.strip()] = val.strip()
    return out


def _with_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    extra = _overrides(pairs)
    if not extra:
        return cfg
    values = {k: v for k, v in cfg.to_meta().items() if not k.startswith("data.")}
    values.update({f"data.{k}": v for k, v in cfg.data.items()})
    values.update(extra)
    return config_from_mapping({k: v if isinstance(v, str) else format_value(v) for k, v in values.items()})


def cmd_run(args) -> int:
    cfg = _with_overrides(load_config(args.config), args.set)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"{cfg.experiment}_seed{cfg.seed}"
    log.info("running %s (seed %d) into %s", cfg.experiment, cfg.seed, out)
    res = experiments.run_experiment(cfg, out)
    for key, val in getattr(res, "summary", {}).items():
        print(f"{key}={val}")
    print(f"wrote {len(res.files)} files to {out}")
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.experiment not in GENERATORS:
        raise ConfigError(f"choose from {', '.join(GENERATORS)}", "experiment")
    values = {"experiment": args.experiment, "seed": str(args.seed)}
    values.update(_overrides(args.set))
    cfg = config_from_mapping(values)
    ds = experiments.make_dataset(cfg)
    out = Path(args.out) if args.out else Path(f"{cfg.experiment}_seed{cfg.seed}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} observations to {out}")
    return EXIT_OK


def cmd_curves(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig(experiment="curves")
    if cfg.experiment != "curves":
        raise ConfigError("the curves command needs experiment = curves", "experiment")
    cfg = _with_overrides(cfg, args.set)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "curves"
    res = experiments.emit_curves(cfg, out)
    print(f"wrote {len(res.files)} files to {out}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    try:
        profile = read_profile(args.profile, args.label)
        ds = load_dataset(args.data)
    except (OSError, KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, FidselError):
            raise
        raise ConfigError(str(exc), "input") from None
    kept = experiments.threshold_truncate(profile, ds, args.tau)
    out = Path(args.out) if args.out else Path(args.data).with_name(f"{Path(args.data).stem}_tau{args.tau:g}.csv")
    save_dataset(kept, out)
    print(f"kept {len(kept)} of {len(ds)} observations; wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fidsel", description="Bayesian data selection experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a key = value config file")
    r.add_argument("config")
    r.add_argument("--out", help="run directory (default <output_dir>/<experiment>_seed<seed>)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="generate a seeded dataset")
    g.add_argument("experiment", help=", ".join(GENERATORS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.add_argument("--set", action="append", metavar="data.KEY=VALUE", help="generator parameter")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("curves", help="emit fidelity likelihood, prior and path curves")
    c.add_argument("config", nargs="?")
    c.add_argument("--out")
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.set_defaults(func=cmd_curves)

    t = sub.add_parser("threshold", help="truncate a dataset by posterior fidelity means")
    t.add_argument("--profile", required=True, help="fidelity_profile.csv from a run")
    t.add_argument("--data", required=True, help="dataset CSV")
    t.add_argument("--tau", type=float, required=True)
    t.add_argument("--label", help="profile method label (default: first in file)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_threshold)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"fidsel: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FidselError as exc:
        print(f"fidsel: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fidsel: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
