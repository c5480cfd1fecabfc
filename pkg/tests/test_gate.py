import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsgal.gate import GateDecision, GatePolicy, acceptance_rate, decide

scores = st.floats(-1e6, 1e6, allow_nan=False)


class TestFixed:
    def test_default_tau(self):
        assert GatePolicy().tau == -0.05

    def test_zero_accepted(self):
        d, _ = decide(GatePolicy("fixed", -0.05), 0.0, 3)
        assert d == GateDecision(True, -0.05, 0.0, 3)

    def test_tie_rejected(self):
        assert not GatePolicy("fixed", -0.05).decide(-0.05).accepted

    def test_non_finite_score(self):
        with pytest.raises(ValueError):
            GatePolicy().decide(math.nan)

    @given(scores, scores, st.floats(-10, 10))
    def test_monotone(self, a, b, tau):
        p = GatePolicy("fixed", tau)
        hi, lo = max(a, b), min(a, b)
        if p.decide(lo).accepted:
            assert p.decide(hi).accepted

    @given(scores, st.floats(-10, 10))
    def test_accept_iff_above(self, s, tau):
        d = GatePolicy("fixed", tau).decide(s)
        assert d.accepted == (d.score > d.effective_tau)


class TestDynamic:
    def test_hand_quantile(self):
        p = GatePolicy("dynamic", target_rate=0.5, window=100, warmup=10)
        for s in range(1, 101):
            p.decide(float(s))
        assert p.threshold() == 50.5
        d = p.decide(60.0)
        assert d.accepted and d.effective_tau == 50.5

    def test_warmup_accepts_everything(self):
        p = GatePolicy("dynamic", target_rate=0.1, window=20, warmup=5)
        decisions = [p.decide(-1000.0 + i) for i in range(5)]
        assert all(d.accepted for d in decisions)
        assert all(d.effective_tau == -math.inf for d in decisions)
        assert p.threshold() > -math.inf

    def test_window_capacity(self):
        p = GatePolicy("dynamic", window=8, warmup=2)
        for s in range(50):
            p.decide(float(s))
        assert list(p.window) == [float(s) for s in range(42, 50)]

    def test_rejected_scores_recorded(self):
        p = GatePolicy("dynamic", target_rate=0.5, window=10, warmup=2)
        for s in (5.0, 6.0, -100.0):
            p.decide(s)
        assert -100.0 in p.window

    @pytest.mark.parametrize("kw", [
        {"kind": "adaptive"}, {"kind": "dynamic", "target_rate": 1.0}, {"kind": "dynamic", "target_rate": 0.0},
        {"window": 0}, {"window": 4, "warmup": 5},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GatePolicy(**kw)

    @pytest.mark.parametrize("target", [0.3, 0.5, 0.7])
    def test_iid_normal_tracks_target(self, target):
        p = GatePolicy("dynamic", target_rate=target, window=500, warmup=64)
        rng = np.random.default_rng(int(target * 100))
        ds = [p.decide(float(s)) for s in rng.normal(size=20_000)]
        assert acceptance_rate(ds[564:]) == pytest.approx(target, abs=0.02)

    @given(st.floats(1e-3, 1e3))
    def test_rescaling_invariant(self, c):
        stream = np.random.default_rng(4).normal(size=300)
        a = GatePolicy("dynamic", target_rate=0.3, window=64, warmup=16)
        b = GatePolicy("dynamic", target_rate=0.3, window=64, warmup=16)
        assert [a.decide(s).accepted for s in stream] == [b.decide(c * s).accepted for s in stream]


class TestAcceptanceRate:
    def test_all_accepted(self):
        assert acceptance_rate([True] * 5) == 1.0

    def test_alternating(self):
        assert acceptance_rate([True, False] * 10) == 0.5

    def test_tail(self):
        assert acceptance_rate([False] * 5 + [True] * 5, tail_fraction=0.5) == 1.0
        # ceil(0.3 * 10) = 3 decisions
        assert acceptance_rate([True] * 8 + [False, False], tail_fraction=0.3) == pytest.approx(1 / 3)

    def test_decision_objects(self):
        ds = [GateDecision(a, 0.0, 0.0, i) for i, a in enumerate([True, False, False, True])]
        assert acceptance_rate(ds) == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            acceptance_rate([])
        with pytest.raises(ValueError):
            acceptance_rate([True], tail_fraction=0.0)
