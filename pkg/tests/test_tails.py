"""Survival curves, Hill recovery on synthetic laws, flatness verdicts."""

import math

import numpy as np
import pytest

from conftest import BETA_D1
from smoothtail.errors import SpecError, WindowError
from smoothtail.rng import substream
from smoothtail.tails import (directional_profile, empirical_survival, hill,
                              scaled_tail_flatness, tail_report)


def _pareto(theta, n, seed, xm=1.0):
    return xm * substream(seed, "pareto").random(n) ** (-1.0 / theta)


# ---------------------------------------------------------------------------
# survival
# ---------------------------------------------------------------------------

def test_survival_basics():
    pool = np.array([[1.0], [2.0], [3.0], [4.0]])
    out = empirical_survival(pool, [1.0], [2.5, 0.5, 9.0])
    assert list(out) == [0.5, 1.0, 0.0]


def test_survival_monotone():
    pool = _pareto(2.0, 5000, 1)[:, None]
    ts = np.linspace(1.0, 20.0, 50)
    surv = empirical_survival(pool, [1.0], ts)
    assert (np.diff(surv) <= 0).all()
    assert ((0 <= surv) & (surv <= 1)).all()


# ---------------------------------------------------------------------------
# Hill
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("theta", [1.0, 2.5, 4.0])
def test_hill_recovers_pareto_index(theta):
    x = _pareto(theta, 100_000, int(theta * 10))
    est = hill(x, 0.01, rng=substream(2, "boot"))
    assert est.ci_low <= theta <= est.ci_high
    assert est.index == pytest.approx(theta, rel=0.15)


def test_hill_constant_samples_error():
    with pytest.raises(SpecError):
        hill(np.full(100_000, 3.0), 0.01)


def test_hill_insufficient_exceedances():
    with pytest.raises(SpecError):
        hill(_pareto(2.0, 500, 3), 0.01)


# ---------------------------------------------------------------------------
# flatness
# ---------------------------------------------------------------------------

def test_flatness_pareto_supported():
    theta, xm = 2.5, 1.0
    x = _pareto(theta, 1_000_000, 4, xm)
    t_lo, t_hi = np.quantile(x, 0.99), np.quantile(x, 0.9999)
    out = scaled_tail_flatness(x[:, None], [1.0], theta, t_lo, t_hi,
                               rng=substream(5, "b"))
    assert out.supported
    assert out.min_lower_95 > 0
    # scaled values sit near the exact constant x_m^theta
    assert out.scaled_min == pytest.approx(xm ** theta, rel=0.3)
    assert out.ratio < 2.0


def test_flatness_exponential_not_supported():
    x = -np.log(substream(6, "e").random(1_000_000))
    t_lo, t_hi = np.quantile(x, 0.99), np.quantile(x, 0.9999)
    out = scaled_tail_flatness(x[:, None], [1.0], 3.0, t_lo, t_hi,
                               rng=substream(7, "b"))
    assert not out.supported
    assert out.ratio > out.ratio_max_allowed


def test_flatness_unresolvable_window():
    x = _pareto(2.0, 2000, 8)
    with pytest.raises(WindowError) as exc:
        scaled_tail_flatness(x[:, None], [1.0], 2.0, 1.5, x.max() * 2)
    assert exc.value.max_usable_t is not None


# ---------------------------------------------------------------------------
# directional profile
# ---------------------------------------------------------------------------

def test_profile_symmetric_d1():
    z = substream(9, "sym").standard_t(df=3, size=400_000)
    pool = z[:, None]
    t = float(np.quantile(np.abs(z), 0.995))
    entries = directional_profile(pool, [[1.0], [-1.0]], t, 3.0)
    a, b = entries
    assert a.resolvable and b.resolvable
    assert abs(a.scaled - b.scaled) < 3 * math.hypot(a.se, b.se)


def test_profile_unresolvable_direction_flagged():
    pool = np.abs(substream(10, "p").random((10_000, 2)))
    entries = directional_profile(pool, [[1.0, 0.0], [-1.0, 0.0]], 0.9, 2.0)
    assert entries[0].resolvable
    assert not entries[1].resolvable      # nonnegative pool never points at -e1


# ---------------------------------------------------------------------------
# full report on the reference pool
# ---------------------------------------------------------------------------

def test_tail_report_reference_pool(d1_pool):
    report = tail_report(d1_pool.vectors, np.array([1.0]), BETA_D1,
                         rng=substream(11, "r"),
                         window_quantiles=(0.99, 0.9995))
    assert report.flatness.min_lower_95 > 0
    assert (np.diff(report.survival) <= 0).all()
    # Hill and the spectral root agree loosely (within 0.4)
    best = min(report.hill_by_fraction.values(),
               key=lambda h: abs(h.index - BETA_D1))
    assert abs(best.index - BETA_D1) <= 0.4
    # log-log slope near -beta
    assert report.loglog_slope == pytest.approx(-BETA_D1, abs=0.6)


def test_profile_constant_under_model_symmetry():
    # scaled rotations with Q uniform on the four signed axes: the model law
    # is invariant under the dihedral subgroup, so the profile must agree
    # across the four axis directions at every depth (the full rotation
    # invariance of the tail only emerges far deeper than a 4e5 pool)
    from smoothtail.branching import sample_fixed_point_replicated
    from smoothtail.model import (Branching, LognormalRotation, ModelSpec,
                                  QLaw)
    qv = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=LognormalRotation(mu=-1.0, sigma2=0.25, d=2),
                     q_law=QLaw(kind="finite_support", vectors=qv,
                                probs=np.full(4, 0.25)),
                     geom_class="invertible-ipo")
    rngs = [substream(6602, "pool", i) for i in range(4)]
    pool = sample_fixed_point_replicated(spec, 50, 200_000, np.zeros(2), rngs)
    x = pool.vectors
    us = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
          np.array([-1.0, 0.0]), np.array([0.0, -1.0])]
    t = float(np.quantile(x @ us[0], 0.995))
    entries = directional_profile(x, us, t, 7.0)
    assert all(e.resolvable for e in entries)
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            a, b = entries[i], entries[j]
            assert abs(a.scaled - b.scaled) < 3 * math.hypot(a.se, b.se)
