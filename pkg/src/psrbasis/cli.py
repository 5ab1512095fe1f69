"""Command-line entry point: ``psrbasis run | validate | fixtures | presets``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESET_NAMES, ConfigError, ExperimentConfig, load_config, preset_text
from .env import make_builtin, save_pomdp
from .experiment import (RESULT_HEADER, results_csv, round_curves, run_experiment,
                         size_summary, table_csv)
from .hankel import dump_hankel, enumerated_basis, exact_hankel

OUTPUT_ROOT_ENV = "PSRBASIS_OUTPUT_ROOT"

# (builtin name, env seed, longest test, longest history) for `fixtures`
FIXTURES = (
    ("two-state-noisy", 0, 2, 2),
    ("random-pomdp-5-2-3", 7, 2, 2),
    ("ring-world", 0, 2, 2),
    ("mini-grid", 0, 1, 1),
)

log = logging.getLogger("psrbasis")


def output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    path = Path(override or cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _publish(tmp: Path, dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    for src in sorted(tmp.rglob("*")):
        if src.is_file():
            target = dest / src.relative_to(tmp)
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, target)


def write_outputs(cfg: ExperimentConfig, results: list, dest: Path) -> None:
    """Write all result files into a scratch directory, then move them into place."""
    dest.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=dest.parent, prefix=".psrbasis-") as tmp:
        tmp = Path(tmp)
        (tmp / "results.csv").write_text(results_csv(results))
        (tmp / "curve_rounds.csv").write_text(
            table_csv(["strategy", "basis_size", "round", "metric", "mean", "stderr"],
                      round_curves(results)))
        (tmp / "curve_sizes.csv").write_text(
            table_csv(["strategy", "basis_size", "metric", "mean", "stderr"],
                      size_summary(results)))
        (tmp / "traces").mkdir()
        for res in results:
            for (strategy, k), trace in sorted(res.traces.items()):
                with open(tmp / "traces" / f"trial{res.trial}_{strategy}_k{k}.csv", "w") as fh:
                    trace.write_csv(fh)
        manifest = {
            "psrbasis_version": __version__,
            "numpy_version": np.__version__,
            "config": cfg.to_text(),
            "seeds": [res.seeds for res in results],
            "result_columns": RESULT_HEADER,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        (tmp / "config.cfg").write_text(cfg.to_text())
        _publish(tmp, dest)


def cmd_run(args) -> int:
    cfg = load_config(args.config, _parse_overrides(args.set))
    dest = output_dir(cfg, args.output)
    results = run_experiment(cfg)
    write_outputs(cfg, results, dest)
    print(f"wrote {dest}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config, _parse_overrides(args.set))
    print(f"ok: {cfg.name} ({cfg.env}, strategies {', '.join(cfg.strategies)})")
    return 0


def write_fixtures(dest: Path) -> list:
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for name, seed, tl, hl in FIXTURES:
        model = make_builtin(name, seed)
        save_pomdp(model, dest / f"{name}.json")
        dump_hankel(exact_hankel(model, enumerated_basis(model, tl, hl)), dest / f"{name}.hankel.txt")
        written += [dest / f"{name}.json", dest / f"{name}.hankel.txt"]
    return written


def cmd_fixtures(args) -> int:
    for path in write_fixtures(Path(args.out)):
        print(path)
    return 0


def cmd_presets(args) -> int:
    if args.name:
        sys.stdout.write(preset_text(args.name))
    else:
        print("\n".join(PRESET_NAMES))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psrbasis",
                                     description="Basis selection for spectral PSR learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a config file or preset name")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fixtures", help="write built-in POMDPs and their exact Hankel dumps")
    p.add_argument("--out", default="fixtures")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("presets", help="list presets, or print one")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
