"""Command-line entry point.

    bsgal init [--out PATH]
    bsgal train {bsgal,baseline,random-dropout,offline} [--config PATH] [--set K=V ...]
    bsgal distribution --params PATH [--samples-per-tier N]
    bsgal ablate AXIS V1,V2,...
    bsgal report

Exit codes: 0 ok, 2 usage, 3 config, 4 runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiments as ex
from . import io
from .trainer import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("bsgal")


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment config (defaults if omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. run.K=0 (repeatable)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="override the seed (a single-seed list for sweeps)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsgal", description="Batched streaming generative active learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write the default config as TOML")
    p.add_argument("--out", type=Path, help="destination file (stdout if omitted)")

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("mode", choices=ex.TRAIN_MODES)
    _add_common(p)
    p.add_argument("--rate-from", type=Path, help="summary.json whose acceptance_rate random-dropout should match")
    p.add_argument("--rate", type=float, help="explicit random-dropout acceptance rate")
    p.add_argument("--keep-fraction", type=float, default=0.5, help="offline mode: fraction of the pool kept")
    p.add_argument("--params", type=Path, help="offline mode: pretrained parameter file")

    p = sub.add_parser("distribution", help="per-tier offline contribution histograms")
    _add_common(p)
    p.add_argument("--params", type=Path, help="parameter file from a K=0 train run")
    p.add_argument("--samples-per-tier", type=int, default=1000)
    p.add_argument("--bins", type=int, default=40)

    p = sub.add_parser("ablate", help="sweep one axis over the configured seeds")
    p.add_argument("axis", choices=ex.ABLATION_AXES)
    p.add_argument("values", help="comma-separated values (at least two)")
    _add_common(p)

    p = sub.add_parser("report", help="real-only / all-generated / selected / random-dropout comparison")
    _add_common(p)
    return parser


def load_config(args) -> cfgmod.ExperimentConfig:
    if args.config is None:
        data = {}
    else:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            with open(args.config, "rb") as fh:
                data = cfgmod.tomllib.load(fh)
        except cfgmod.tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    cfg = cfgmod.from_dict(cfgmod.apply_overrides(data, args.overrides))
    return cfg


def output_root(cfg: cfgmod.ExperimentConfig) -> Path:
    return Path(os.environ.get("GAL_OUT_DIR") or cfg.output_dir)


def resolve_out(args, cfg, *parts: str) -> Path:
    return args.out if args.out is not None else output_root(cfg).joinpath(cfg.name, *parts)


def _read_rate(path: Path) -> float:
    try:
        summary = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read rate source {path}: {exc}") from exc
    rate = summary.get("acceptance_rate")
    if not isinstance(rate, (int, float)):
        raise ConfigError(f"{path} has no numeric acceptance_rate")
    return float(rate)


def _load_params(path: Path | None, cfg, what: str):
    if path is None:
        raise ConfigError(f"{what} needs a pretrained parameter file (--params)")
    if not path.is_file():
        raise ConfigError(f"parameter file not found: {path}")
    try:
        return io.load_params(path, cfg.setup.model.architecture_hash())
    except (io.CorruptionError, io.IncompatibleParamsError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_init(args) -> int:
    text = cfgmod.default_toml()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rate = None
    if args.mode == "random-dropout":
        if args.rate_from is None and args.rate is None:
            raise UsageError("random-dropout needs --rate-from PATH or --rate R")
        rate = _read_rate(args.rate_from) if args.rate_from is not None else args.rate
    pretrained = None
    if args.mode == "offline" and args.params is not None:
        pretrained = _load_params(args.params, cfg, "offline")
    out = resolve_out(args, cfg, f"{ex.summary_mode(args.mode, cfg)}-seed{cfg.setup.run.seed}")
    world = ex.build_world(cfg.setup)
    report = ex.run_train(args.mode, cfg, dropout_rate=rate, keep_fraction=args.keep_fraction,
                          pretrained=pretrained, world=world)
    summary = ex.write_train_artifacts(out, args.mode, cfg, report, world)
    rate_txt = "" if summary["acceptance_rate"] is None else f" acceptance_rate={summary['acceptance_rate']:.4f}"
    print(f"{summary['mode']}: final_accuracy={summary['final_accuracy']:.4f}{rate_txt} -> {out}")
    return EXIT_OK


def cmd_distribution(args) -> int:
    cfg = load_config(args)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.samples_per_tier < 1:
        raise ConfigError("--samples-per-tier must be >= 1")
    params = _load_params(args.params, cfg, "distribution")
    out = resolve_out(args, cfg, f"distribution-seed{cfg.setup.run.seed}")
    scores = ex.contribution_distribution(cfg, params, args.samples_per_tier)
    summary = ex.write_distribution(out, scores, bins=args.bins)
    for row in summary:
        print(f"tier {row['tier']:>4}: mean={row['mean']:+.6g} std={row['std']:.6g} n={row['n']}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    out = resolve_out(args, cfg, "ablate")
    rows = ex.run_ablation(cfg, args.axis, values)
    ex.write_ablation(out, args.axis, rows)
    for r in rows:
        print(f"{args.axis}={r['value']}: acc={r['mean_accuracy']:.4f}±{r['std_accuracy']:.4f} "
              f"rate={r['acceptance_rate']:.3f}")
    if args.axis == "sampling":
        best = max(rows, key=lambda r: r["mean_accuracy"])["value"]
        log.warning("sampling ablation: best strategy observed is %s (pasted_classes best: %s)",
                    best, best == "pasted_classes")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    out = resolve_out(args, cfg, "report")
    results = ex.run_comparison(cfg)
    ex.write_comparison(out, results)
    for key in ("real_only", "all_generated", "bsgal", "random_dropout"):
        m, s = ex.mean_std(results[key])
        print(f"{key:>15}: {m:.4f} ± {s:.4f}")
    return EXIT_OK


COMMANDS = {
    "init": cmd_init,
    "train": cmd_train,
    "distribution": cmd_distribution,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bsgal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bsgal: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"bsgal: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
