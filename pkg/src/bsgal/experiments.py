"""Experiment drivers behind the CLI.

Each driver writes plain files into an output directory. Apart from
``timing.json``, every file is a deterministic function of the config.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import estimator as est
from . import io
from .config import ExperimentConfig
from .datastream import Batch, World
from .model import LossSelector, MLPClassifier
from .trainer import (
    ConfigError,
    TrainReport,
    build_world,
    run_baseline,
    run_bsgal,
    run_offline_filter,
    run_random_dropout,
)

log = logging.getLogger(__name__)

TRAIN_MODES = ("bsgal", "baseline", "random-dropout", "offline")
ABLATION_AXES = ("beta", "tau", "sampling", "normalize", "estimator", "selector")


def summary_mode(mode: str, cfg: ExperimentConfig) -> str:
    if mode == "baseline" and cfg.setup.run.K == 0:
        return "real-only"
    return mode


def run_train(mode: str, cfg: ExperimentConfig, *, dropout_rate: float | None = None,
              keep_fraction: float = 0.5, pretrained=None, world: World | None = None) -> TrainReport:
    setup = cfg.setup
    world = world or build_world(setup)
    if mode == "bsgal":
        return run_bsgal(setup, world)
    if mode == "baseline":
        return run_baseline(setup, world)
    if mode == "random-dropout":
        if dropout_rate is None:
            raise ConfigError("random-dropout needs an acceptance rate")
        return run_random_dropout(setup, dropout_rate, world)
    if mode == "offline":
        return run_offline_filter(setup, keep_fraction, world, pretrained=pretrained)
    raise ConfigError(f"unknown training mode {mode!r}")


def write_train_artifacts(out: Path, mode: str, cfg: ExperimentConfig, report: TrainReport,
                          world: World) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    config_json = cfg.canonical_json()
    (out / "config.json").write_text(config_json + "\n")
    io.write_jsonl(out / "run.jsonl", report.records)
    model = MLPClassifier(cfg.setup.model)
    io.save_params(out / "params.galp", report.final_params, cfg.setup.model.architecture_hash())
    world.eval_set.to_csv(out / "eval.csv")
    accs = [a for _, a in report.accuracy_trajectory]
    summary = {
        "name": cfg.name,
        "mode": summary_mode(mode, cfg),
        "iterations": cfg.setup.run.iterations,
        "seed": cfg.setup.run.seed,
        "final_accuracy": report.final_accuracy,
        "mean_accuracy": float(np.mean(accs)),
        "acceptance_rate": report.acceptance_rate,
        "config_hash": cfg.config_hash(),
        "num_params": model.num_params,
        "accuracy_trajectory": [[it, a] for it, a in report.accuracy_trajectory],
        "acceptance_trajectory": [[it, r] for it, r in report.acceptance_trajectory],
        **report.extras,
    }
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "timing.json", {"wall_time_s": report.wall_time})
    return summary


# --- offline contribution distribution ------------------------------------

def tier_samples(world: World, tier: float, n: int, rng: np.random.Generator) -> Batch:
    """Samples for one noise tier. Tier 0 is the real training data itself."""
    if tier == 0.0:
        replace = n > len(world.real)
        return world.real.samples.take(rng.choice(len(world.real), size=n, replace=replace))
    return world.stream.sample_at_tier(n, tier)


def contribution_distribution(cfg: ExperimentConfig, params, samples_per_tier: int,
                              seed: int | None = None) -> dict:
    """Offline scores per noise tier against the full real-data gradient."""
    if samples_per_tier < 1:
        raise ConfigError("samples_per_tier must be >= 1")
    setup = cfg.setup
    world = build_world(setup)
    model = MLPClassifier(setup.model)
    sel = LossSelector.of(*setup.estimator.selector)
    alpha = setup.estimator.alpha or setup.run.lr
    ref = est.reference_gradient(model, params, world.real.samples, sel)
    rng = np.random.default_rng(setup.run.seed if seed is None else seed)
    scores = {}
    for tier in world.config.noise_tiers:
        batch = tier_samples(world, float(tier), samples_per_tier, rng)
        scores[float(tier)] = (batch, est.offline_scores(model, params, batch, ref, alpha, sel))
    return scores


def histogram_rows(scores: dict, bins: int = 40) -> list[list]:
    allv = np.concatenate([s for _, s in scores.values()])
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for tier, (_, s) in scores.items():
        counts, _ = np.histogram(s, bins=edges)
        rows.extend([tier, float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins))
    return rows


def write_distribution(out: Path, scores: dict, bins: int = 40) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "histogram.csv", ["tier", "bin_left", "bin_right", "count"], histogram_rows(scores, bins))
    summary = []
    for tier, (_, s) in scores.items():
        summary.append({"tier": tier, "n": int(s.size), "mean": float(s.mean()),
                        "std": float(s.std(ddof=1)) if s.size > 1 else 0.0})
    io.write_csv(out / "tier_summary.csv", ["tier", "n", "mean", "std"],
                 [[r["tier"], r["n"], r["mean"], r["std"]] for r in summary])
    io.write_csv(out / "scores.csv", ["tier", "sample_id", "label", "score"],
                 [[tier, int(b.ids[i]), int(b.labels[i]), float(s[i])]
                  for tier, (b, s) in scores.items() for i in range(len(b))])
    return summary


def offline_ranking(cfg: ExperimentConfig, params, n_samples: int = 1000) -> dict:
    """Spearman correlation between offline scores of a mixed-tier generated
    pool and the negated noise scale of each sample."""
    setup = cfg.setup
    world = build_world(setup)
    model = MLPClassifier(setup.model)
    sel = LossSelector.of(*setup.estimator.selector)
    alpha = setup.estimator.alpha or setup.run.lr
    ref = est.reference_gradient(model, params, world.real.samples, sel)
    pool = world.stream.sample(n_samples)
    scores = est.offline_scores(model, params, pool, ref, alpha, sel)
    rho = spearmanr(scores, -pool.noise_scales).statistic
    return {"spearman": float(rho), "n": n_samples, "scores": scores, "noise_scales": pool.noise_scales}


# --- ablations -------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def apply_axis(cfg: ExperimentConfig, axis: str, raw: str) -> ExperimentConfig:
    """Copy of ``cfg`` with one ablation axis set to ``raw``."""
    s = cfg.setup
    rp = dataclasses.replace
    try:
        if axis == "beta":
            setup = rp(s, estimator=rp(s.estimator, beta=float(raw)))
        elif axis == "tau":
            setup = rp(s, gate=rp(s.gate, kind="fixed", tau=float(raw)))
        elif axis == "sampling":
            setup = rp(s, run=rp(s.run, sampling=raw))
        elif axis == "normalize":
            setup = rp(s, estimator=rp(s.estimator, normalized=_parse_bool(raw)))
        elif axis == "estimator":
            setup = rp(s, estimator=rp(s.estimator, kind=raw))
        elif axis == "selector":
            names = ["cls", "aux"] if raw == "all" else raw.split("+")
            setup = rp(s, estimator=rp(s.estimator, selector=names))
        else:
            raise ConfigError(f"unknown ablation axis {axis!r}")
    except ValueError as exc:
        raise ConfigError(f"invalid value {raw!r} for axis {axis}: {exc}") from exc
    setup.validate()
    return dataclasses.replace(cfg, setup=setup)


def run_ablation(cfg: ExperimentConfig, axis: str, values: list[str]) -> list[dict]:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")
    if len(values) < 2:
        raise ConfigError("an ablation needs at least two values")
    variants = [(v, apply_axis(cfg, axis, v)) for v in values]  # validate all before running
    rows = []
    for value, vcfg in variants:
        accs, rates = [], []
        for seed in cfg.seeds:
            scfg = vcfg.with_seed(seed)
            report = run_bsgal(scfg.setup)
            accs.append(report.final_accuracy)
            rates.append(report.acceptance_rate)
            log.info("ablate %s=%s seed=%d acc=%.4f rate=%.3f", axis, value, seed,
                     report.final_accuracy, report.acceptance_rate)
        rows.append({
            "value": value,
            "mean_accuracy": float(np.mean(accs)),
            "std_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
            "acceptance_rate": float(np.mean(rates)),
            "n_seeds": len(accs),
            "accuracies": accs,
        })
    return rows


def write_ablation(out: Path, axis: str, rows: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / f"ablate_{axis}.csv", ["value", "mean_accuracy", "std_accuracy", "acceptance_rate", "n_seeds"],
                 [[r["value"], r["mean_accuracy"], r["std_accuracy"], r["acceptance_rate"], r["n_seeds"]]
                  for r in rows])
    best = max(rows, key=lambda r: r["mean_accuracy"])
    note = {"axis": axis, "best_value": best["value"], "rows": rows}
    if axis == "sampling":
        note["pasted_classes_best"] = best["value"] == "pasted_classes"
    io.write_json(out / f"ablate_{axis}.json", note)


# --- selection and dropout comparison -------------------------------------

def run_comparison(cfg: ExperimentConfig) -> dict:
    """Real-only, all-generated, BSGAL-selected and rate-matched random dropout
    over every seed in ``cfg.seeds``."""
    rp = dataclasses.replace
    out = {"real_only": [], "all_generated": [], "bsgal": [], "random_dropout": [], "bsgal_rate": []}
    for seed in cfg.seeds:
        setup = cfg.with_seed(seed).setup
        world = build_world(setup)
        out["real_only"].append(run_baseline(rp(setup, run=rp(setup.run, K=0)), world).final_accuracy)
        out["all_generated"].append(run_baseline(setup, world).final_accuracy)
        bs = run_bsgal(setup, world)
        out["bsgal"].append(bs.final_accuracy)
        out["bsgal_rate"].append(bs.acceptance_rate)
        out["random_dropout"].append(run_random_dropout(setup, bs.acceptance_rate, world).final_accuracy)
        log.info("seed %d: real-only %.4f all %.4f bsgal %.4f (rate %.3f) dropout %.4f", seed,
                 out["real_only"][-1], out["all_generated"][-1], out["bsgal"][-1], bs.acceptance_rate,
                 out["random_dropout"][-1])
    return out


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), (float(v.std(ddof=1)) if v.size > 1 else 0.0)


def write_comparison(out: Path, results: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    t1 = [("only R", "real_only"), ("R + all G", "all_generated"), ("R + selected G", "bsgal")]
    io.write_csv(out / "selection_comparison.csv", ["training_set", "mean_accuracy", "std_accuracy"],
                 [[label, *mean_std(results[key])] for label, key in t1])
    rate = float(np.mean(results["bsgal_rate"]))
    io.write_csv(out / "dropout_comparison.csv", ["method", "mean_accuracy", "std_accuracy", "acceptance_rate"],
                 [["random dropout", *mean_std(results["random_dropout"]), rate],
                  ["bsgal", *mean_std(results["bsgal"]), rate]])
    io.write_json(out / "comparison.json", results)
