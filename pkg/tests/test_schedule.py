"""Warm-up ramps, the era-boundary semantics of gamma/alpha, the freeze rule,
and filter reinitialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patternconv import netcore
from patternconv.errors import DataError
from patternconv.schedule import (ConstraintSchedule, RampSpec, era_reset,
                                  value_at, weights_at)


# ------------------------------------------------------------------ value_at

def test_value_at_piecewise():
    ramp = RampSpec(start_epoch=10, growth_rate=0.1, target=1.0)
    assert value_at(ramp, 5) == 0.0
    assert value_at(ramp, 15) == pytest.approx(0.5)
    assert value_at(ramp, 200) == 1.0


@settings(max_examples=30, deadline=None)
@given(e1=st.integers(0, 300), e2=st.integers(0, 300))
def test_value_at_monotone(e1, e2):
    ramp = RampSpec(start_epoch=7, growth_rate=0.03, target=0.8)
    lo, hi = sorted((e1, e2))
    assert value_at(ramp, lo) <= value_at(ramp, hi)


def test_ramp_spec_validation():
    with pytest.raises(DataError):
        RampSpec(start_epoch=-1, growth_rate=0.1, target=1.0)
    with pytest.raises(DataError):
        RampSpec(start_epoch=0, growth_rate=0.0, target=1.0)


# ------------------------------------------------------------------ schedule

def test_default_schedule_stagger_order():
    s = ConstraintSchedule.default(eras=5, epochs_per_era=50)
    starts = [s.alpha.start_epoch, s.poss.start_epoch, s.sub.start_epoch,
              s.min.start_epoch, s.bin.start_epoch]
    assert starts == sorted(starts)
    assert starts[0] == 0


def test_schedule_rejects_out_of_order_starts():
    mk = lambda start: RampSpec(start_epoch=start, growth_rate=0.1, target=1.0)
    with pytest.raises(DataError):
        ConstraintSchedule(alpha=mk(5), poss=mk(0), sub=mk(10), min=mk(20), bin=mk(30))


def test_default_targets_reached_within_era():
    s = ConstraintSchedule.default(eras=5, epochs_per_era=50)
    w, alpha, _ = weights_at(s, 49, 0)
    assert w.poss == pytest.approx(1.0)
    assert w.sub == pytest.approx(1.0)
    assert w.min == pytest.approx(0.5)
    assert w.bin == pytest.approx(2.0)
    assert alpha == pytest.approx(1.0)


def test_weights_at_initial_state():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    w, alpha, freeze = weights_at(s, 0, 0)
    assert (w.bin, w.min, w.sub, w.poss) == (0, 0, 0, 0)
    assert alpha == 0.0 and freeze is False


def test_gamma_resets_but_alpha_persists():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    w_end, alpha_end, _ = weights_at(s, 49, 0)
    w0, alpha0, freeze0 = weights_at(s, 0, 1)
    assert (w0.bin, w0.min, w0.sub, w0.poss) == (0, 0, 0, 0)
    assert alpha0 >= alpha_end > 0
    assert freeze0  # alpha past the freeze threshold stays frozen


def test_ramp_order_prefix_property():
    """At any epoch, constraints with nonzero gamma form a prefix of the order."""
    s = ConstraintSchedule.default(eras=1, epochs_per_era=50)
    for epoch in range(50):
        w, _, _ = weights_at(s, epoch, 0)
        flags = [w.poss > 0, w.sub > 0, w.min > 0, w.bin > 0]
        assert flags == sorted(flags, reverse=True)


def test_freeze_threshold():
    s = ConstraintSchedule.default(eras=1, epochs_per_era=50)
    # alpha ramps to 1 over 45 epochs; it passes 0.1 strictly after epoch 4
    _, alpha4, freeze4 = weights_at(s, 4, 0)
    _, alpha5, freeze5 = weights_at(s, 5, 0)
    assert alpha4 <= 0.1 and not freeze4
    assert alpha5 > 0.1 and freeze5


# ----------------------------------------------------------------- era_reset

def _state(M=4, seed=0):
    return netcore.init_state(M, 3, 13, rng=np.random.default_rng(seed))


def test_era_reset_keeps_good_filters():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    st_ = _state()
    out = era_reset(st_, np.full(4, 0.9), s, np.random.default_rng(1))
    assert (out.W == st_.W).all()
    assert (out.fc_trad == st_.fc_trad).all()


def test_era_reset_redraws_empty_filter():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    st_ = _state()
    st_.W[2] = 0.0
    out = era_reset(st_, np.full(4, 0.9), s, np.random.default_rng(1))
    changed = [m for m in range(4) if not (out.W[m] == st_.W[m]).all()]
    assert changed == [2]
    assert (out.W[2] > 0).any()


def test_era_reset_threshold_is_strict():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    st_ = _state(M=3)
    prec = np.array([0.29, 0.30, 0.31])
    out = era_reset(st_, prec, s, np.random.default_rng(2))
    changed = [m for m in range(3) if not (out.W[m] == st_.W[m]).all()]
    assert changed == [0]


def test_era_reset_redraws_nan_precision():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    st_ = _state(M=3)
    out = era_reset(st_, np.array([0.9, np.nan, 0.9]), s, np.random.default_rng(3))
    changed = [m for m in range(3) if not (out.W[m] == st_.W[m]).all()]
    assert changed == [1]


def test_era_reset_idempotent_on_carried_filters():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    st_ = _state()
    prec = np.array([0.9, 0.2, 0.9, np.nan])
    once = era_reset(st_, prec, s, np.random.default_rng(4))
    carried = [0, 2]
    again = era_reset(once, np.full(4, 0.9), s, np.random.default_rng(5))
    for m in carried:
        assert (again.W[m] == st_.W[m]).all()


def test_era_reset_length_mismatch():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    with pytest.raises(DataError):
        era_reset(_state(), np.ones(3), s, 0)


def test_weights_at_rejects_negative_epoch():
    s = ConstraintSchedule.default(eras=2, epochs_per_era=50)
    with pytest.raises(DataError):
        weights_at(s, -1, 0)
