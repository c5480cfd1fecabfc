"""Training runners: BSGAL streaming selection, the unconditional
copy-paste baseline, random batch-level dropout, and offline
filter-then-train.

All runners share one loop. Each logical worker owns its RNG streams,
gradient cache and gate; per iteration every worker draws a real batch
and a generated batch, decides whether to keep the generated part, and
hands back the gradient it wants to train on. The gradients are summed in
ascending worker order and applied in a single SGD step, so running the
workers on a thread pool gives the same bits as running them in turn.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import estimator as est
from .datastream import (
    GENERATED_ID_BASE,
    TEST_STRATEGIES,
    Batch,
    GeneratedStream,
    PoolStream,
    World,
    WorldConfig,
    augment,
    long_tail_counts,
    make_world,
    sample_real_batch,
    sample_test_batch,
)
from .gate import GatePolicy, acceptance_rate
from .model import ClassifierConfig, LossSelector, MLPClassifier, sgd_step

log = logging.getLogger(__name__)

MODES = ("bsgal", "baseline", "random_dropout", "offline")


class ConfigError(ValueError):
    """A run configuration violates one of its invariants."""


@dataclass
class EstimatorConfig:
    kind: str = "grad_cache"
    beta: float = 0.1
    normalized: bool = True
    selector: list[str] = field(default_factory=lambda: ["cls"])
    alpha: float | None = None  # None: use the current learning rate
    forward_once: bool = False


@dataclass
class GateConfig:
    kind: str = "auto"  # auto: dynamic for cosine scores, fixed otherwise
    tau: float = -0.05
    target_rate: float = 0.5
    window: int = 512
    warmup: int = 64

    def resolved_kind(self, normalized: bool) -> str:
        if self.kind == "auto":
            return "dynamic" if normalized else "fixed"
        return self.kind

    def build(self, normalized: bool) -> GatePolicy:
        return GatePolicy(self.resolved_kind(normalized), self.tau, self.target_rate, self.window, self.warmup)


@dataclass
class RunConfig:
    iterations: int = 10000
    b_accept: int = 16
    b_test: int = 32
    b_train: int | None = None
    num_workers: int = 4
    lr: float = 0.05
    lr_min: float = 0.005
    K: int = 8
    sampling: str = "pasted_classes"
    train_selector: list[str] = field(default_factory=lambda: ["cls", "aux"])
    seed: int = 0
    worker_seeds: list[int] | None = None
    eval_every: int | None = None  # None: iterations // 50
    parallel: bool = False
    pool_size: int = 4000  # offline mode candidate pool


@dataclass
class TrainSetup:
    """Everything a runner needs, grouped by subsystem."""

    world: WorldConfig = field(default_factory=WorldConfig)
    model: ClassifierConfig = field(default_factory=ClassifierConfig)
    run: RunConfig = field(default_factory=RunConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def validate(self) -> None:
        r = self.run
        try:
            self.world.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if r.iterations < 1:
            raise ConfigError("run.iterations must be >= 1")
        if r.b_accept < 1 or r.b_test < 1 or r.num_workers < 1:
            raise ConfigError("batch sizes and num_workers must be >= 1")
        if r.b_train is not None and r.b_train != r.b_accept * r.num_workers:
            raise ConfigError(
                f"b_train ({r.b_train}) must equal b_accept * num_workers ({r.b_accept * r.num_workers})")
        if r.lr <= 0 or r.lr_min <= 0 or r.lr_min > r.lr:
            raise ConfigError("need 0 < lr_min <= lr")
        if r.K < 0:
            raise ConfigError("run.K must be >= 0")
        if r.sampling not in TEST_STRATEGIES:
            raise ConfigError(f"unknown sampling strategy {r.sampling!r}")
        if r.worker_seeds is not None and len(r.worker_seeds) != r.num_workers:
            raise ConfigError("worker_seeds must have one entry per worker")
        if r.eval_every is not None and r.eval_every < 1:
            raise ConfigError("run.eval_every must be >= 1")
        if self.model.input_dim != self.world.input_dim or self.model.num_classes != self.world.num_classes:
            raise ConfigError("model input_dim/num_classes must match the world")
        e = self.estimator
        if e.kind not in est.ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator kind {e.kind!r}")
        if not 0.0 <= e.beta <= 1.0:
            raise ConfigError("estimator.beta must lie in [0, 1]")
        if e.alpha is not None and e.alpha <= 0:
            raise ConfigError("estimator.alpha must be positive")
        try:
            LossSelector.of(*e.selector)
            LossSelector.of(*r.train_selector)
            self.gate.build(e.normalized)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.gate.kind not in ("auto", "fixed", "dynamic"):
            raise ConfigError(f"unknown gate kind {self.gate.kind!r}")
        n_real = int(long_tail_counts(self.world.num_classes, self.world.max_class_count,
                                      self.world.tail_exponent).sum())
        if r.b_accept > n_real:
            raise ConfigError(f"b_accept ({r.b_accept}) exceeds the real dataset size ({n_real})")

    def to_dict(self) -> dict:
        return {
            "world": asdict(self.world),
            "model": asdict(self.model),
            "run": asdict(self.run),
            "gate": asdict(self.gate),
            "estimator": asdict(self.estimator),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    """Cosine annealing from ``lr`` at step 0 towards ``lr_min``."""
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / total))


@dataclass
class TrainReport:
    mode: str
    records: list[dict]
    accuracy_trajectory: list[tuple[int, float]]
    acceptance_trajectory: list[tuple[int, float]]
    final_accuracy: float
    acceptance_rate: float | None
    final_params: np.ndarray
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    def decisions(self) -> list[bool]:
        return [w["accepted"] for r in self.records for w in r["workers"]]

    def trajectory_digest(self) -> str:
        """Hash of what training did: losses, accuracy curve, final weights."""
        h = hashlib.sha256()
        for r in self.records:
            h.update(np.float64(r["train_loss"]).tobytes())
        for it, acc in self.accuracy_trajectory:
            h.update(np.array([it, acc], dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.final_params).tobytes())
        return h.hexdigest()

    def digest(self) -> str:
        """Hash of the full report except wall time."""
        blob = json.dumps(
            {"mode": self.mode, "records": self.records, "acc": self.accuracy_trajectory,
             "rate": self.acceptance_trajectory, "extras": self.extras},
            sort_keys=True, default=float,
        )
        h = hashlib.sha256(blob.encode())
        h.update(np.ascontiguousarray(self.final_params).tobytes())
        return h.hexdigest()


class Worker:
    """One logical device: its own RNGs, gradient cache and gate."""

    def __init__(self, index: int, seed: int, setup: TrainSetup, stream_factory):
        self.index = index
        real_ss, gen_ss, test_ss, drop_ss = np.random.SeedSequence(seed).spawn(4)
        self.real_rng = np.random.default_rng(real_ss)
        self.test_rng = np.random.default_rng(test_ss)
        self.dropout_rng = np.random.default_rng(drop_ss)
        self.stream = stream_factory(index, gen_ss)
        e = setup.estimator
        mode = "global_average" if e.kind == "grad_cache_global" else "momentum"
        self.cache = est.GradCache(beta=e.beta, mode=mode)
        self.gate = setup.gate.build(e.normalized)


def default_worker_seeds(seed: int, num_workers: int) -> list[int]:
    return [int(np.random.SeedSequence((seed, w)).generate_state(1)[0]) for w in range(num_workers)]


class WorkerGroup:
    def __init__(self, setup: TrainSetup, stream_factory):
        r = setup.run
        seeds = r.worker_seeds if r.worker_seeds is not None else default_worker_seeds(r.seed, r.num_workers)
        self.workers = [Worker(i, s, setup, stream_factory) for i, s in enumerate(seeds)]
        self.parallel = r.parallel and len(self.workers) > 1
        self._pool = ThreadPoolExecutor(len(self.workers)) if self.parallel else None

    def map(self, fn):
        if self._pool is None:
            return [fn(w) for w in self.workers]
        return list(self._pool.map(fn, self.workers))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def _fork_stream(base: GeneratedStream):
    def factory(index: int, seed):
        s = GeneratedStream(base.means, base.class_std, base.noise_tiers, base.tier_probs,
                            base.corruption_rate, seed)
        s._next_id = GENERATED_ID_BASE + index * 10**8
        return s

    return factory


def _pool_stream(pool: Batch):
    return lambda index, seed: PoolStream(pool, seed)


class _Loop:
    """Shared iteration machinery for every runner."""

    def __init__(self, setup: TrainSetup, world: World, mode: str, stream_factory,
                 dropout_rate: float | None = None, init_params=None):
        setup.validate()
        self.setup = setup
        self.world = world
        self.mode = mode
        self.dropout_rate = dropout_rate
        self.model = MLPClassifier(setup.model)
        self.params = self.model.init_params() if init_params is None else np.array(init_params, dtype=np.float64)
        self.train_sel = LossSelector.of(*setup.run.train_selector)
        self.est_sel = LossSelector.of(*setup.estimator.selector)
        self.group = WorkerGroup(setup, stream_factory)

    def _worker_step(self, w: Worker, it: int, lr: float) -> dict:
        run, e = self.setup.run, self.setup.estimator
        model, params = self.model, self.params
        real_b = sample_real_batch(self.world.real, run.b_accept, w.real_rng)
        k = int(w.stream.rng.integers(0, run.K + 1))
        gen_b = w.stream.sample(k)
        aug_b = augment(real_b, gen_b)
        loss_real, g_real = model.loss_and_grad(params, real_b, self.train_sel)
        if k:
            loss_aug, g_aug = model.loss_and_grad(params, aug_b, self.train_sel)
        else:
            loss_aug, g_aug = loss_real, g_real

        score = None
        if self.mode == "bsgal":
            score = self._score(w, it, lr, real_b, gen_b, aug_b, g_real, g_aug)
            decision = w.gate.decide(score, it)
            accepted, tau = decision.accepted, decision.effective_tau
        elif self.mode == "random_dropout":
            accepted, tau = bool(w.dropout_rng.random() < self.dropout_rate), None
        else:
            accepted, tau = True, None

        out = {
            "worker": w.index,
            "k": k,
            "score": score,
            "accepted": accepted,
            "effective_tau": tau,
            "gen_noise_mean": float(gen_b.noise_scales.mean()) if k else None,
        }
        grad, loss = (g_aug, loss_aug) if accepted else (g_real, loss_real)
        return {"log": out, "grad": grad, "loss": loss}

    def _score(self, w: Worker, it: int, lr: float, real_b, gen_b, aug_b, g_real, g_aug) -> float:
        run, e = self.setup.run, self.setup.estimator
        model, params = self.model, self.params
        alpha = lr if e.alpha is None else e.alpha
        k = len(gen_b)
        strategy = run.sampling
        if strategy == "pasted_classes" and k == 0:
            strategy = "all_classes"
        test_b = sample_test_batch(self.world.real, strategy, gen_b.labels, run.b_test, w.test_rng)

        if e.kind == "loss_diff":
            return est.contribution_loss_diff(model, params, real_b, aug_b, test_b, alpha, self.est_sel, it).value

        if k == 0:
            delta = None
        elif e.forward_once:
            delta = est.generated_only_gradient(model, params, gen_b, self.est_sel)
        elif self.est_sel == self.train_sel:
            delta = g_aug - g_real
        else:
            delta = est.gradient_difference(model, params, real_b, aug_b, self.est_sel)

        test_grad = model.backward(params, test_b, self.est_sel)
        if e.kind == "grad_dot":
            ref = test_grad
        else:
            w.cache = w.cache.updated(test_grad)
            ref = w.cache.C
        if delta is None:
            return 0.0
        return est.score_from_gradients(delta, ref, alpha, e.normalized)

    def run(self) -> TrainReport:
        run = self.setup.run
        T = run.iterations
        eval_every = run.eval_every or max(1, T // 50)
        records: list[dict] = []
        acc_traj: list[tuple[int, float]] = []
        rate_traj: list[tuple[int, float]] = []
        decisions: list[bool] = []
        start = time.perf_counter()
        try:
            for it in range(T):
                lr = cosine_lr(it, T, run.lr, run.lr_min)
                results = self.group.map(lambda w: self._worker_step(w, it, lr))
                total = results[0]["grad"].copy()
                loss = results[0]["loss"]
                for res in results[1:]:
                    total += res["grad"]
                    loss += res["loss"]
                self.params = sgd_step(self.params, total, lr)
                logs = [res["log"] for res in results]
                decisions.extend(l["accepted"] for l in logs)
                records.append({"iteration": it, "lr": lr, "train_loss": float(loss), "workers": logs})
                if (it + 1) % eval_every == 0 or it + 1 == T:
                    acc_traj.append((it + 1, self.model.accuracy(self.params, self.world.eval_set)))
                    rate_traj.append((it + 1, acceptance_rate(decisions)))
        finally:
            self.group.close()
        wall = time.perf_counter() - start
        rate = acceptance_rate(decisions) if self.mode in ("bsgal", "random_dropout") else None
        return TrainReport(self.mode, records, acc_traj, rate_traj, acc_traj[-1][1], rate,
                           self.params.copy(), wall)


def build_world(setup: TrainSetup) -> World:
    return make_world(setup.world)


def run_baseline(setup: TrainSetup, world: World | None = None) -> TrainReport:
    """Train on every augmented batch (copy-paste baseline; K=0 is real-only)."""
    world = world or build_world(setup)
    loop = _Loop(setup, world, "baseline", _fork_stream(world.stream))
    report = loop.run()
    report.extras["variant"] = "real-only" if setup.run.K == 0 else "all-generated"
    return report


def run_bsgal(setup: TrainSetup, world: World | None = None) -> TrainReport:
    world = world or build_world(setup)
    return _Loop(setup, world, "bsgal", _fork_stream(world.stream)).run()


def run_random_dropout(setup: TrainSetup, measured_rate: float, world: World | None = None) -> TrainReport:
    """BSGAL's loop with the gate replaced by a coin of bias ``measured_rate``."""
    if not 0.0 <= measured_rate <= 1.0:
        raise ConfigError("measured_rate must lie in [0, 1]")
    world = world or build_world(setup)
    report = _Loop(setup, world, "random_dropout", _fork_stream(world.stream), dropout_rate=measured_rate).run()
    report.extras["dropout_rate"] = measured_rate
    return report


def pretrain_real_only(setup: TrainSetup, world: World | None = None) -> np.ndarray:
    real_only = replace(setup, run=replace(setup.run, K=0))
    return run_baseline(real_only, world).final_params


def draw_candidate_pool(setup: TrainSetup, world: World) -> Batch:
    seed = np.random.SeedSequence((setup.run.seed, 0x9001))
    factory = _fork_stream(world.stream)
    return factory(0, seed).sample(setup.run.pool_size)


def run_offline_filter(setup: TrainSetup, keep_fraction: float, world: World | None = None,
                       pretrained=None, pool: Batch | None = None) -> TrainReport:
    """Score a finite candidate pool once against a frozen model, keep the
    best ``keep_fraction`` and train the baseline on the kept samples."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError("keep_fraction must lie in (0, 1]")
    setup.validate()
    world = world or build_world(setup)
    model = MLPClassifier(setup.model)
    if pretrained is None:
        pretrained = pretrain_real_only(setup, world)
    if pool is None:
        pool = draw_candidate_pool(setup, world)
    sel = LossSelector.of(*setup.estimator.selector)
    alpha = setup.estimator.alpha or setup.run.lr
    ref = est.reference_gradient(model, pretrained, world.real.samples, sel)
    scores = est.offline_scores(model, pretrained, pool, ref, alpha, sel)
    n_keep = max(1, int(round(keep_fraction * len(pool))))
    order = np.argsort(-scores, kind="stable")
    kept, dropped = pool.take(order[:n_keep]), pool.take(order[n_keep:])

    report = _Loop(setup, world, "offline", _pool_stream(kept)).run()
    report.extras.update({
        "keep_fraction": keep_fraction,
        "pool_size": len(pool),
        "kept": n_keep,
        "kept_noise_mean": float(kept.noise_scales.mean()),
        "dropped_noise_mean": float(dropped.noise_scales.mean()) if len(dropped) else None,
    })
    return report


def evaluate(model: MLPClassifier, params, eval_set: Batch) -> float:
    return model.accuracy(params, eval_set)
