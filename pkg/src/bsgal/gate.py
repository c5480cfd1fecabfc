"""Accept/reject policies over contribution scores."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

GATE_KINDS = ("fixed", "dynamic")


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    effective_tau: float
    score: float
    iteration: int


class GatePolicy:
    """Threshold gate.

    ``fixed`` accepts when ``score > tau``. ``dynamic`` keeps the last
    ``window`` scores (all of them, accepted or not) and, once ``warmup``
    scores are stored, uses their ``1 - target_rate`` quantile as the
    threshold. During warmup every score is accepted.
    """

    def __init__(self, kind: str = "fixed", tau: float = -0.05, target_rate: float = 0.5,
                 window: int = 512, warmup: int = 64):
        if kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {kind!r}")
        if kind == "dynamic" and not 0.0 < target_rate < 1.0:
            raise ValueError("target_rate must lie in (0, 1)")
        if window < 1 or warmup < 0 or warmup > window:
            raise ValueError("need window >= 1 and 0 <= warmup <= window")
        self.kind = kind
        self.tau = float(tau)
        self.target_rate = float(target_rate)
        self.capacity = int(window)
        self.warmup = int(warmup)
        self.window: deque[float] = deque(maxlen=self.capacity)

    def threshold(self) -> float:
        if self.kind == "fixed":
            return self.tau
        if len(self.window) < self.warmup:
            return -math.inf
        # numpy's default "linear" method is the type-7 quantile
        return float(np.quantile(np.fromiter(self.window, dtype=np.float64), 1.0 - self.target_rate))

    def decide(self, score: float, iteration: int = 0) -> GateDecision:
        score = float(score)
        if not math.isfinite(score):
            raise ValueError("score must be finite")
        tau = self.threshold()
        decision = GateDecision(score > tau, tau, score, iteration)
        if self.kind == "dynamic":
            self.window.append(score)
        return decision


def decide(policy: GatePolicy, score: float, iteration: int = 0) -> tuple[GateDecision, GatePolicy]:
    return policy.decide(score, iteration), policy


def acceptance_rate(decisions: Sequence, tail_fraction: float = 1.0) -> float:
    """Accepted fraction over the last ``ceil(tail_fraction * n)`` decisions.

    Accepts ``GateDecision`` objects or plain booleans.
    """
    n = len(decisions)
    if n == 0:
        raise ValueError("no decisions to summarise")
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    m = math.ceil(tail_fraction * n)
    tail = decisions[n - m:]
    return sum(1 for d in tail if getattr(d, "accepted", d)) / m
