"""Empirical tail analysis of fixed-point pools.

Survival curves, Hill estimates with bootstrap intervals, the scaled-tail
flatness diagnostic (is t^beta * P(<u,X> > t) bounded away from zero and
roughly flat over a resolvable window?), and the directional profile.
The exponent beta is always an input from the spectral side, never re-fit
here: hypothesis and evidence stay separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SpecError, WindowError

BOOTSTRAP_DEFAULT = 200
FLATNESS_RATIO_MAX = 4.0
MIN_EXCEEDANCES = 50


def _projections(pool_vectors: np.ndarray, u: np.ndarray) -> np.ndarray:
    pool_vectors = np.atleast_2d(np.asarray(pool_vectors, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return pool_vectors @ u


def empirical_survival(pool_vectors: np.ndarray, u: np.ndarray,
                       t_grid: np.ndarray) -> np.ndarray:
    """P_hat(<u, X> > t) for each t in t_grid."""
    proj = np.sort(_projections(pool_vectors, u))
    n = len(proj)
    if n == 0:
        raise SpecError("pool must be nonempty")
    t_grid = np.asarray(t_grid, dtype=float)
    counts = n - np.searchsorted(proj, t_grid, side="right")
    return counts / n


# ---------------------------------------------------------------------------
# Hill estimator
# ---------------------------------------------------------------------------

@dataclass
class HillEstimate:
    index: float
    ci_low: float
    ci_high: float
    k: int                      # number of order statistics used
    threshold: float
    n_boot: int


def _hill_from_sorted(xs: np.ndarray, k: int) -> float:
    # xs ascending, uses top k above xs[-k-1]
    top = xs[-k:]
    x_k = xs[-k - 1]
    h = np.mean(np.log(top) - math.log(x_k))
    return 1.0 / h


def hill(samples: np.ndarray, k_frac: float,
         rng: Optional[np.random.Generator] = None,
         n_boot: int = BOOTSTRAP_DEFAULT) -> HillEstimate:
    """Hill tail-index estimate on the top k_frac order statistics.

    Bootstrap CI (percentile, 95%) from n_boot resamples of the full
    sample, computed via multinomial counts over the sorted data so each
    resample costs O(n).
    """
    x = np.asarray(samples, dtype=float)
    x = x[x > 0]
    n = len(x)
    k = int(n * k_frac)
    if k < 100:
        raise SpecError(f"only {k} exceedances at k_frac={k_frac}; need >= 100")
    xs = np.sort(x)
    if xs[-k - 1] <= 0 or xs[-k - 1] == xs[-1]:
        raise SpecError("degenerate upper order statistics (no positive log spacings)")
    est = _hill_from_sorted(xs, k)
    if rng is None:
        rng = np.random.default_rng(0)
    logs = np.log(xs)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        # multinomial resample counts via index draws (fast for large n)
        counts = np.bincount(rng.integers(0, n, n), minlength=n)
        # walk down from the top to find the resampled k-th order statistic
        csum = np.cumsum(counts[::-1])
        m = np.searchsorted(csum, k + 1)           # index from the top
        top_idx = n - 1 - np.arange(m + 1)
        cnt = counts[top_idx].astype(float)
        take = min(float(k), csum[m])
        cnt[-1] -= csum[m] - take
        x_k_log = logs[top_idx[-1]]
        h = float((cnt * (logs[top_idx] - x_k_log)).sum() / k)
        boots[b] = 1.0 / h if h > 0 else np.inf
    lo, hi = np.percentile(boots[np.isfinite(boots)], [2.5, 97.5])
    return HillEstimate(index=float(est), ci_low=float(lo), ci_high=float(hi),
                        k=k, threshold=float(xs[-k - 1]), n_boot=n_boot)


# ---------------------------------------------------------------------------
# scaled-tail flatness
# ---------------------------------------------------------------------------

@dataclass
class FlatnessSummary:
    t_grid: np.ndarray
    survival: np.ndarray
    scaled: np.ndarray          # t^beta * survival
    scaled_min: float
    scaled_max: float
    ratio: float
    min_lower_95: float         # one-sided bootstrap lower bound for the min
    supported: bool
    ratio_max_allowed: float
    beta: float


def _bootstrap_scaled_mins(proj_sorted: np.ndarray, t_grid: np.ndarray,
                           beta: float, rng: np.random.Generator,
                           n_boot: int) -> np.ndarray:
    """Pool-level bootstrap of min_t t^beta * survival, preserving cross-t
    dependence, via per-element multinomial weights and suffix sums."""
    n = len(proj_sorted)
    pos = np.searchsorted(proj_sorted, t_grid, side="right")
    tb = t_grid ** beta
    mins = np.empty(n_boot)
    for b in range(n_boot):
        w = np.bincount(rng.integers(0, n, n), minlength=n)
        suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0]])
        surv = suffix[pos] / n
        mins[b] = (tb * surv).min()
    return mins


def scaled_tail_flatness(pool_vectors: np.ndarray, u: np.ndarray, beta: float,
                         t_lo: float, t_hi: float,
                         rng: Optional[np.random.Generator] = None,
                         n_points: int = 25, n_boot: int = BOOTSTRAP_DEFAULT,
                         ratio_max: float = FLATNESS_RATIO_MAX) -> FlatnessSummary:
    """t^beta-scaled survival over a log-spaced window, with verdict.

    Positivity is supported when the bootstrap 95% lower bound of the
    window minimum is strictly positive and the max/min ratio stays under
    ratio_max.  The window must keep at least 50 exceedances at t_hi.
    """
    if not (0 < t_lo < t_hi):
        raise SpecError("need 0 < t_lo < t_hi")
    proj = np.sort(_projections(pool_vectors, u))
    n = len(proj)
    n_above = n - np.searchsorted(proj, t_hi, side="right")
    if n_above < MIN_EXCEEDANCES:
        usable = proj[-(MIN_EXCEEDANCES + 1)] if n > MIN_EXCEEDANCES else None
        raise WindowError(
            f"only {n_above} exceedances at t_hi={t_hi:.6g}; "
            f"largest usable t_hi is {usable:.6g}" if usable is not None else
            f"pool of {n} cannot resolve any window",
            max_usable_t=usable)
    t_grid = np.exp(np.linspace(math.log(t_lo), math.log(t_hi), n_points))
    counts = n - np.searchsorted(proj, t_grid, side="right")
    surv = counts / n
    scaled = t_grid ** beta * surv
    if rng is None:
        rng = np.random.default_rng(0)
    mins = _bootstrap_scaled_mins(proj, t_grid, beta, rng, n_boot)
    min_lb = float(np.percentile(mins, 5.0))
    s_min, s_max = float(scaled.min()), float(scaled.max())
    ratio = s_max / s_min if s_min > 0 else math.inf
    supported = bool(min_lb > 0 and ratio < ratio_max)
    return FlatnessSummary(t_grid=t_grid, survival=surv, scaled=scaled,
                           scaled_min=s_min, scaled_max=s_max, ratio=ratio,
                           min_lower_95=min_lb, supported=supported,
                           ratio_max_allowed=ratio_max, beta=beta)


# ---------------------------------------------------------------------------
# directional profile
# ---------------------------------------------------------------------------

@dataclass
class DirectionEntry:
    u: np.ndarray
    scaled: float               # t^beta * survival
    se: float
    exceedances: int
    resolvable: bool


def directional_profile(pool_vectors: np.ndarray, u_list, t: float,
                        beta: float,
                        min_exceedances: int = MIN_EXCEEDANCES) -> list[DirectionEntry]:
    """t^beta * P_hat(<u,X> > t) per direction (K r(u) up to common scale).

    Directions whose exceedance count falls under the floor are flagged,
    not fatal.
    """
    out = []
    n = np.atleast_2d(pool_vectors).shape[0]
    for u in u_list:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        proj = _projections(pool_vectors, u)
        cnt = int((proj > t).sum())
        p = cnt / n
        se = math.sqrt(max(p * (1 - p), 0.0) / n)
        out.append(DirectionEntry(u=u, scaled=t ** beta * p,
                                  se=t ** beta * se, exceedances=cnt,
                                  resolvable=cnt >= min_exceedances))
    return out


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

@dataclass
class TailReport:
    """Everything the tails command emits for one direction."""

    u: np.ndarray
    beta: float
    t_grid: np.ndarray
    survival: np.ndarray
    scaled: np.ndarray
    survival_se: np.ndarray
    hill_by_fraction: dict          # k_frac -> HillEstimate
    flatness: FlatnessSummary
    loglog_slope: float
    window: tuple[float, float] = (0.0, 0.0)

    def to_jsonable(self) -> dict:
        return {
            "u": self.u.tolist(),
            "beta": self.beta,
            "window": list(self.window),
            "loglog_slope": self.loglog_slope,
            "hill": {str(kf): {"index": h.index, "ci_low": h.ci_low,
                               "ci_high": h.ci_high, "k": h.k}
                     for kf, h in self.hill_by_fraction.items()},
            "flatness": {
                "scaled_min": self.flatness.scaled_min,
                "scaled_max": self.flatness.scaled_max,
                "ratio": self.flatness.ratio,
                "min_lower_95": self.flatness.min_lower_95,
                "supported": self.flatness.supported,
                "ratio_max_allowed": self.flatness.ratio_max_allowed,
            },
        }


def tail_report(pool_vectors: np.ndarray, u: np.ndarray, beta: float,
                rng: Optional[np.random.Generator] = None,
                window_quantiles: tuple[float, float] = (0.99, 0.9999),
                k_fracs=(0.01, 0.005, 0.002),
                n_points: int = 25, n_boot: int = BOOTSTRAP_DEFAULT,
                ratio_max: float = FLATNESS_RATIO_MAX) -> TailReport:
    """Assemble the survival/Hill/flatness report over a quantile window."""
    proj = _projections(pool_vectors, u)
    pos = proj[proj > 0]
    if len(pos) < 10 * MIN_EXCEEDANCES:
        raise WindowError("too few positive projections for a tail report")
    t_lo, t_hi = np.quantile(proj, window_quantiles[0]), np.quantile(
        proj, window_quantiles[1])
    n_above = int((proj > t_hi).sum())
    if n_above < MIN_EXCEEDANCES and len(proj) > MIN_EXCEEDANCES:
        t_hi = float(np.sort(proj)[-(MIN_EXCEEDANCES + 1)])
    if not (t_lo > 0 and t_hi > t_lo):
        raise WindowError("window quantiles are not resolvable or not positive")
    flat = scaled_tail_flatness(pool_vectors, u, beta, float(t_lo), float(t_hi),
                                rng=rng, n_points=n_points, n_boot=n_boot,
                                ratio_max=ratio_max)
    n = len(proj)
    surv_se = np.sqrt(np.maximum(flat.survival * (1 - flat.survival), 0.0) / n)
    hills = {}
    for kf in k_fracs:
        try:
            hills[kf] = hill(pos, kf, rng=rng, n_boot=n_boot)
        except SpecError:
            continue
    good = flat.survival > 0
    slope = float(np.polyfit(np.log(flat.t_grid[good]),
                             np.log(flat.survival[good]), 1)[0])
    return TailReport(u=np.atleast_1d(np.asarray(u, dtype=float)), beta=beta,
                      t_grid=flat.t_grid, survival=flat.survival,
                      scaled=flat.scaled, survival_se=surv_se,
                      hill_by_fraction=hills, flatness=flat,
                      loglog_slope=slope, window=(float(t_lo), float(t_hi)))
