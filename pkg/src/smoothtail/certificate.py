"""Monte Carlo tail-positivity certificate.

Estimates every ingredient of the union lower bound for P(<u, X> > t):
cone mass kappa, one-path event probabilities P(V_{n,t}) over the level
window around n_t = ceil(log t / rho), two-path overlap probabilities
P(W) grouped by (p, q, m) geometry, and expected node counts of the sparse
all-ones-suffix subtree.  The assembled statistic

    kappa * sum_{i in W} P(V_{i,t})  -  sum_{pairs} P(W_{i,i',t})

is a statistical lower bound: a negative value is a valid outcome, and
every low-confidence ingredient flags the report rather than stopping it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CoverageError, NondegeneracyError, SpecError
from .model import CLASS_NONNEG, ModelSpec
from .rng import parallel_map, spawn
from .walks import (StepSampler, effective_sample_size, run_walks,
                    tilted_batch, vec_norm, weighted_mean)

MIN_NT_HARD = 4
MIN_NT_RECOMMENDED = 16
ESS_FLOOR = 100            # effective contributing samples per estimate


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class EventParams:
    """Scale t with the event constants (C0, delta) and the level window."""

    t: float
    C0: float
    delta: float
    rho: float
    min_recommended_nt: int = MIN_NT_RECOMMENDED
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if min(self.t, self.C0, self.delta, self.rho) <= 0:
            raise SpecError("t, C0, delta, rho must all be positive")
        if self.n_t < self.min_recommended_nt:
            self.flags.append(
                f"n_t = {self.n_t} below recommended {self.min_recommended_nt}")

    @property
    def n_t(self) -> int:
        # clamp keeps n_t >= 1 for sub-scale t (window may then be empty)
        return max(1, int(math.ceil(math.log(self.t) / self.rho)))

    @property
    def window(self) -> tuple[float, float]:
        r = math.sqrt(self.n_t)
        return self.n_t - r, self.n_t - r / 2

    def window_levels(self) -> list[int]:
        lo, hi = self.window
        return [n for n in range(int(math.ceil(lo)), int(math.floor(hi)) + 1)]

    @property
    def D(self) -> float:
        return 1.0 + self.C0 / (1.0 - math.exp(-self.delta))


@dataclass
class SubtreeParams:
    """Sparsity constant C1 and the level set L_t it induces."""

    C1: int

    def __post_init__(self):
        if self.C1 < 1 or self.C1 != int(self.C1):
            raise SpecError("C1 must be a positive integer")

    def levels(self, eparams: EventParams) -> list[int]:
        lo, hi = eparams.window
        first = int(math.ceil(lo / self.C1))
        out = []
        k = first
        while k * self.C1 < hi:
            if k * self.C1 >= lo:
                out.append(k * self.C1)
            k += 1
        return out


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

def indicator_V(opnorm_log: np.ndarray, pi_u_final: float, z_marks: np.ndarray,
                params: EventParams, n: int) -> bool:
    """One-path event: |Pi*_n u| >= t and
    ||Pi*_k|| (|Z_{k+1}| v 1) <= e^{-(n-k) delta} C0 t for all k < n."""
    opnorm_log = np.asarray(opnorm_log, dtype=float)
    z_marks = np.asarray(z_marks, dtype=float)
    if len(opnorm_log) < n or len(z_marks) < n:
        raise SpecError("need ||Pi*_k|| for k < n and n Z-marks")
    if pi_u_final < params.t:
        return False
    ks = np.arange(n)
    rhs = math.log(params.C0 * params.t) - (n - ks) * params.delta
    lhs = opnorm_log[:n] + np.log(np.maximum(z_marks[:n], 1.0))
    return bool((lhs <= rhs).all())


def _indicator_V_batch(opnorm_log_hist: np.ndarray, S_final: np.ndarray,
                       z_log: np.ndarray, params: EventParams,
                       n: int) -> np.ndarray:
    """Vectorized V indicator over a batch (z_log = log(|Z| v 1), shape (R, n))."""
    ks = np.arange(n)
    rhs = math.log(params.C0 * params.t) - (n - ks) * params.delta
    ok_scale = S_final >= math.log(params.t)
    lhs = opnorm_log_hist[:, :n] + z_log
    return ok_scale & (lhs <= rhs[None, :]).all(axis=1)


def draw_z_marks(spec: ModelSpec, pool_vectors: np.ndarray, count: int,
                 rng: np.random.Generator) -> np.ndarray:
    """|Z| draws for Z = sum_{i=2}^N A_i X_i + Q, with X_i resampled from a
    converged pool (the only available sampler for the fixed-point law)."""
    d = spec.d
    pool_vectors = np.atleast_2d(pool_vectors)
    npool = pool_vectors.shape[0]
    nvals = spec.branching.sample(rng, count)
    slots = int(max(nvals.max() - 1, 0))
    out = spec.q_law.draw(rng, count, d).astype(float)
    if slots > 0:
        mats = spec.ensemble.draw(rng, count * slots).reshape(count, slots, d, d)
        idx = rng.integers(0, npool, size=(count, slots))
        xs = pool_vectors[idx]
        mask = (np.arange(slots)[None, :] < (nvals - 1)[:, None])
        out += np.einsum("csij,csj->ci", mats * mask[:, :, None, None], xs)
    return vec_norm(out, spec.norm)


@dataclass
class ProbEstimate:
    value: float
    se: float
    hits: int
    ess: float
    method: str
    flagged: bool = False
    upper_95: Optional[float] = None   # one-sided bound when hits == 0


def estimate_PV(spec: ModelSpec, n: int, params: EventParams, reps: int,
                rng: np.random.Generator, method: str = "tilted",
                spectral=None, pool_vectors: Optional[np.ndarray] = None,
                u: Optional[np.ndarray] = None,
                beta: Optional[float] = None) -> ProbEstimate:
    """P(V_{n,t}) by naive or beta-tilted Monte Carlo with Z-marks from a pool."""
    if pool_vectors is None:
        raise SpecError("estimate_PV needs pool vectors for the Z-marks")
    if u is None:
        u = np.zeros(spec.d)
        u[0] = 1.0
    if method == "tilted":
        if beta is None:
            raise SpecError("tilted estimate needs the tilt parameter beta")
        batch = tilted_batch(spec, u, n, beta, spectral, reps, rng,
                             record_hist=True)
    elif method == "naive":
        batch = run_walks(spec, u, n, reps, rng, record_hist=True)
    else:
        raise SpecError(f"unknown method {method!r}")
    z = draw_z_marks(spec, pool_vectors, reps * n, rng).reshape(reps, n)
    z_log = np.log(np.maximum(z, 1.0))
    ind = _indicator_V_batch(batch.opnorm_log_hist, batch.S, z_log, params, n)
    hits = int(ind.sum())
    est, se = weighted_mean(ind.astype(float), batch.log_weight)
    ess = effective_sample_size(batch.log_weight[ind]) if hits else 0.0
    flagged = ess < ESS_FLOOR
    upper = None
    if hits == 0:
        mx = float(np.exp(batch.log_weight.max()))
        upper = 3.0 * mx / reps
        flagged = True
    return ProbEstimate(value=float(est), se=float(se), hits=hits, ess=float(ess),
                        method=method, flagged=flagged, upper_95=upper)


def estimate_tail_prob(spec: ModelSpec, n: int, t: float, reps: int,
                       rng: np.random.Generator, method: str = "tilted",
                       spectral=None, u: Optional[np.ndarray] = None,
                       beta: Optional[float] = None) -> ProbEstimate:
    """P(|Pi*_n u| > t), the one-path scale exceedance alone."""
    if u is None:
        u = np.zeros(spec.d)
        u[0] = 1.0
    if method == "tilted":
        if beta is None:
            raise SpecError("tilted estimate needs beta")
        batch = tilted_batch(spec, u, n, beta, spectral, reps, rng)
    else:
        batch = run_walks(spec, u, n, reps, rng)
    ind = batch.S > math.log(t)
    hits = int(ind.sum())
    est, se = weighted_mean(ind.astype(float), batch.log_weight)
    ess = effective_sample_size(batch.log_weight[ind]) if hits else 0.0
    upper = None
    flagged = ess < ESS_FLOOR
    if hits == 0:
        upper = 3.0 * float(np.exp(batch.log_weight.max())) / reps
        flagged = True
    return ProbEstimate(value=float(est), se=float(se), hits=hits,
                        ess=float(ess), method=method, flagged=flagged,
                        upper_95=upper)


def estimate_PW(spec: ModelSpec, p: int, q: int, m: int, params: EventParams,
                reps: int, rng: np.random.Generator, method: str = "tilted",
                spectral=None, u: Optional[np.ndarray] = None,
                beta: Optional[float] = None) -> ProbEstimate:
    """P(W) for the two-path overlap event at geometry (p, q, m).

    A shared tilted prefix of length m, then two conditionally independent
    tilted continuations of lengths p - m and q - m; the meet-product norm
    constraint uses the prefix's own operator norm.
    """
    if not (0 <= m <= q <= p):
        raise SpecError("need 0 <= m <= q <= p")
    if m == p:
        raise SpecError("the pair must split strictly below p")
    if u is None:
        u = np.zeros(spec.d)
        u[0] = 1.0
    tilt = beta if method == "tilted" else 0.0
    if method == "tilted" and beta is None:
        raise SpecError("tilted estimate needs beta")
    sampler = StepSampler(spec, s=tilt,
                          e_interp=None if spectral is None else spectral.e_interp)
    pre = run_walks(spec, u, m, reps, rng, sampler=sampler,
                    tilted=method == "tilted", record_hist=True)
    log_t = math.log(params.t)
    meet_ok = pre.opnorm_log_hist[:, m] <= math.log(params.C0 * params.t) \
        - params.delta * (p - m)
    br1 = run_walks(spec, pre.U, p - m, reps, rng, sampler=sampler,
                    tilted=method == "tilted")
    ok1 = pre.S + br1.S > log_t
    if q > m:
        br2 = run_walks(spec, pre.U, q - m, reps, rng, sampler=sampler,
                        tilted=method == "tilted")
        ok2 = pre.S + br2.S > log_t
        logw = pre.log_weight + br1.log_weight + br2.log_weight
    else:
        # the shorter path is the meet itself: its exceedance uses the prefix
        ok2 = pre.S > log_t
        logw = pre.log_weight + br1.log_weight
    ind = ok1 & ok2 & meet_ok
    hits = int(ind.sum())
    est, se = weighted_mean(ind.astype(float), logw)
    ess = effective_sample_size(logw[ind]) if hits else 0.0
    flagged = ess < ESS_FLOOR
    upper = None
    if hits == 0:
        upper = 3.0 * float(np.exp(logw.max())) / reps
        flagged = True
    return ProbEstimate(value=float(est), se=float(se), hits=hits,
                        ess=float(ess), method=method, flagged=flagged,
                        upper_95=upper)


# ---------------------------------------------------------------------------
# sparse subtree
# ---------------------------------------------------------------------------

def build_sparse_subtree(tree, sparams: SubtreeParams,
                         eparams: EventParams) -> list:
    """All tree nodes whose level lies in L_t and whose last C1 coordinates
    are all 1."""
    levels = set(sparams.levels(eparams))
    if levels and max(levels) > tree.depth:
        raise SpecError("tree too shallow for the requested level set")
    c1 = sparams.C1
    ones = (1,) * c1
    out = []
    for i in tree.nodes:
        if len(i) in levels and len(i) >= c1 and i[-c1:] == ones:
            out.append(i)
    return sorted(out)


def expected_count_check(spec: ModelSpec, C1: int, level: int, reps: int,
                         rng: np.random.Generator):
    """(empirical mean count, se, predicted (E N)^{level - C1}).

    Simulates the exact marginal law of the sparse-subtree count at one
    level: a branching population to level - C1, then C1 thinning steps
    with the probability that the 1-child exists.
    """
    if level < C1:
        raise SpecError("level must be >= C1")
    br = spec.branching
    if br.mode == "fixed":
        support = np.array([br.n])
        probs = np.array([1.0])
    else:
        support = np.asarray(br.support, dtype=np.int64)
        probs = np.asarray(br.probs, dtype=float)
    p_child1 = float(probs[support >= 1].sum())
    counts = np.ones(reps, dtype=np.int64)
    for _ in range(level - C1):
        total = int(counts.sum())
        if total == 0:
            break
        draws = support[rng.choice(len(support), size=total, p=probs)]
        bounds = np.concatenate([[0], np.cumsum(counts)])
        sums = np.add.reduceat(draws, bounds[:-1])
        sums[counts == 0] = 0
        counts = sums
    for _ in range(C1):
        if p_child1 >= 1.0:
            break
        counts = rng.binomial(counts, p_child1)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    predicted = spec.mean_children() ** (level - C1)
    return mean, se, predicted


# ---------------------------------------------------------------------------
# cone family
# ---------------------------------------------------------------------------

@dataclass
class ConeFamily:
    """Caps with a common inner-product constant and the mass floor kappa."""

    centers: np.ndarray            # (J, d) unit directions (l2)
    retained: np.ndarray           # (J,) bool
    eps: float                     # inner-product constant for the model norm
    D: float
    masses: np.ndarray             # (J,) exceedance mass per cap
    masses_se: np.ndarray
    kappa: float
    kappa_se: float
    coverage_angle: float


def _cap_centers(spec: ModelSpec, J: int) -> np.ndarray:
    d = spec.d
    if d == 1:
        if spec.geom_class == CLASS_NONNEG:
            return np.array([[1.0]])
        return np.array([[1.0], [-1.0]])
    if d == 2:
        if spec.geom_class == CLASS_NONNEG:
            theta = (np.arange(J) + 0.5) * (math.pi / 2) / J
        else:
            theta = (np.arange(J) + 0.5) * (2 * math.pi) / J
        return np.column_stack([np.cos(theta), np.sin(theta)])
    from .spectral import build_grid
    grid = build_grid(spec, size=J)
    pts = grid.points
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _test_directions(spec: ModelSpec, size: int = 720) -> np.ndarray:
    from .spectral import build_grid
    grid = build_grid(spec, size=size if spec.d > 1 else 2)
    pts = grid.points
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _angles_to(centers: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    cosangle = np.clip(dirs @ centers.T, -1.0, 1.0)
    return np.arccos(cosangle)          # (n_dirs, J)


def cone_family(pool_vectors: np.ndarray, J: int, eparams: EventParams,
                spec: ModelSpec) -> ConeFamily:
    """Directional caps with per-cap exceedance mass and the floor kappa.

    Pool directions are assigned to their nearest cap center; caps without
    exceedance mass are dropped greedily while the retained set still covers
    every test direction within a quarter turn.  The inner-product constant
    eps = cos(r + phi) / c uses the assignment radius r, the coverage radius
    phi of the retained centers, and the norm-equivalence factor c (= d for
    the l1 cone, 1 for l2).
    """
    pool_vectors = np.atleast_2d(np.asarray(pool_vectors, dtype=float))
    n, d = pool_vectors.shape
    if d != spec.d:
        raise SpecError("pool dimension mismatch")
    centers = _cap_centers(spec, J)
    Jfull = len(centers)
    norms_model = vec_norm(pool_vectors, spec.norm)
    norms_l2 = np.linalg.norm(pool_vectors, axis=1)
    ok = norms_l2 > 0
    dirs = np.zeros_like(pool_vectors)
    dirs[ok] = pool_vectors[ok] / norms_l2[ok, None]
    assign = np.argmax(dirs @ centers.T, axis=1)
    assign[~ok] = -1
    test_dirs = _test_directions(spec)
    test_angles = _angles_to(centers, test_dirs)
    r_assign = float(test_angles.min(axis=1).max())
    norm_factor = float(d) if spec.norm == "l1" else 1.0

    def eps_for(retained_mask):
        phi = float(test_angles[:, retained_mask].min(axis=1).max())
        ang = r_assign + phi
        if ang >= math.pi / 2 - 1e-9:
            return None, phi
        return math.cos(ang) / norm_factor, phi

    retained = np.ones(Jfull, dtype=bool)
    eps, phi = eps_for(retained)
    if eps is None:
        raise CoverageError(
            "cap geometry cannot cover the sphere; increase J or widen apertures")

    def masses_for(eps_val):
        thresh = eparams.D / eps_val
        exceed = ok & (norms_model > thresh)
        mass = np.zeros(Jfull)
        se = np.zeros(Jfull)
        for j in range(Jfull):
            sel = exceed & (assign == j)
            pj = sel.mean()
            mass[j] = pj
            se[j] = math.sqrt(max(pj * (1 - pj), 0.0) / n)
        return mass, se

    masses, masses_se = masses_for(eps)
    retained = masses > 0
    if not retained.any():
        raise NondegeneracyError(
            f"no pool mass beyond D/eps = {eparams.D / eps:.6g}: pool degenerate "
            "or D too large")
    eps2, phi = eps_for(retained)
    if eps2 is None:
        raise CoverageError(
            "caps with positive mass cannot cover all directions; increase J "
            "or enlarge the pool")
    eps = eps2
    masses, masses_se = masses_for(eps)
    retained = masses > 0
    if not retained.any():
        raise NondegeneracyError("mass vanished after coverage adjustment")
    # drop unneeded low-mass caps greedily to raise the floor
    order = np.argsort(masses)
    for j in order:
        if not retained[j]:
            continue
        trial = retained.copy()
        trial[j] = False
        if not trial.any():
            break
        eps_t, phi_t = eps_for(trial)
        if eps_t is None:
            continue
        m_t, se_t = masses_for(eps_t)
        if (m_t[trial] > 0).all():
            retained = trial
            eps, phi = eps_t, phi_t
            masses, masses_se = m_t, se_t
    kappa = float(masses[retained].min())
    kappa_se = float(masses_se[retained][np.argmin(masses[retained])])
    return ConeFamily(centers=centers, retained=retained, eps=eps,
                      D=eparams.D, masses=masses, masses_se=masses_se,
                      kappa=kappa, kappa_se=kappa_se, coverage_angle=phi)


# ---------------------------------------------------------------------------
# parameter search and assembly
# ---------------------------------------------------------------------------

def choose_event_params(spec: ModelSpec, t: float, rho: float, k_beta: float,
                        rng: np.random.Generator,
                        pool_vectors: np.ndarray, beta: float,
                        spectral=None, u: Optional[np.ndarray] = None,
                        C0_grid=(1.0, 3.0, 10.0, 30.0),
                        delta_grid=(0.05, 0.1, 0.2, 0.4),
                        reps: int = 20_000,
                        min_recommended_nt: int = MIN_NT_RECOMMENDED) -> EventParams:
    """Grid search for (C0, delta) maximizing P(V) stability over the window.

    Score: all window levels must have hits; among those, minimize the range
    of log P(V_n) - n log k(beta) (the rate-shape residual), tie-breaking
    toward larger mean mass.  The chosen values travel inside EventParams
    and are recorded in every report.
    """
    best = None
    for C0 in C0_grid:
        for delta in delta_grid:
            params = EventParams(t=t, C0=C0, delta=delta, rho=rho,
                                 min_recommended_nt=min_recommended_nt)
            centered = []
            ok = True
            for n in params.window_levels():
                est = estimate_PV(spec, n, params, reps, rng, method="tilted",
                                  spectral=spectral, pool_vectors=pool_vectors,
                                  u=u, beta=beta)
                if est.hits == 0 or est.value <= 0:
                    ok = False
                    break
                centered.append(math.log(est.value) - n * math.log(k_beta))
            if not ok:
                continue
            spread = max(centered) - min(centered)
            mean_level = sum(centered) / len(centered)
            key = (spread, -mean_level)
            if best is None or key < best[0]:
                best = (key, params)
    if best is None:
        raise SpecError(
            "no (C0, delta) combination produced positive V estimates at all "
            "window levels; enlarge the grids or the budget")
    return best[1]


@dataclass
class CertificateReport:
    """Assembled lower bound with all chosen parameters and diagnostics."""

    t: float
    u: np.ndarray
    C0: float
    delta: float
    C1: int
    rho: float
    beta: float
    n_t: int
    levels: list
    kappa: float
    kappa_se: float
    v_sum: float              # sum over the sparse subtree of P(V)
    v_sum_se: float
    w_sum: float
    w_sum_se: float
    bound: float
    bound_se: float
    verdict: str              # "positive" | "not positive at these parameters"
    t_beta_v_term: float      # t^beta * kappa * v_sum
    shape_actual: float       # #L_t k(beta)^C1 / sqrt(n_t)
    shape_idealized: float    # k(beta)^C1 / (2 C1)
    fitted_D1: float
    per_level_V: list = field(default_factory=list)
    per_geometry_W: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_jsonable(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("t", "C0", "delta", "C1", "rho", "beta", "n_t", "levels",
                "kappa", "kappa_se", "v_sum", "v_sum_se", "w_sum", "w_sum_se",
                "bound", "bound_se", "verdict", "t_beta_v_term",
                "shape_actual", "shape_idealized", "fitted_D1", "flags")}
        out["u"] = self.u.tolist()
        out["per_level_V"] = self.per_level_V
        out["per_geometry_W"] = self.per_geometry_W
        return out


def lower_bound(spec: ModelSpec, u: np.ndarray, t: float, rho: float,
                beta: float, k_beta: float, C1: int,
                pool_vectors: np.ndarray, rng: np.random.Generator,
                spectral=None, C0: Optional[float] = None,
                delta: Optional[float] = None, J: int = 8,
                reps_v: int = 100_000, reps_w: int = 10_000,
                reps_search: int = 20_000,
                min_recommended_nt: int = MIN_NT_RECOMMENDED,
                m_stride: int = 1, threads: int = 1) -> CertificateReport:
    """Evaluate kappa * sum P(V) - sum P(W) over the sparse subtree.

    The sum over the subtree uses expected node counts times per-level
    probabilities (P(V_i) depends only on |i| by exchangeability); pair
    sums are grouped by (p, q, m) with expected ordered-pair counts
    (E N)^{p+q-m-2 C1}.  Every estimate draws from its own pre-derived
    substream, so results do not depend on the worker count.
    """
    from .rng import parallel_map, spawn

    u = np.atleast_1d(np.asarray(u, dtype=float))
    if C0 is None or delta is None:
        eparams = choose_event_params(spec, t, rho, k_beta, rng, pool_vectors,
                                      beta, spectral=spectral, u=u,
                                      reps=reps_search,
                                      min_recommended_nt=min_recommended_nt)
    else:
        eparams = EventParams(t=t, C0=C0, delta=delta, rho=rho,
                              min_recommended_nt=min_recommended_nt)
    if eparams.n_t < MIN_NT_HARD:
        raise SpecError(
            f"n_t = {eparams.n_t} < {MIN_NT_HARD}: no usable level window at t={t}")
    sparams = SubtreeParams(C1=C1)
    levels = sparams.levels(eparams)
    flags = list(eparams.flags)
    if not levels:
        flags.append(f"L_t empty for C1={C1} in window {eparams.window}")
    en = spec.mean_children()
    cones = cone_family(pool_vectors, J, eparams, spec)
    geoms = [(p, q, m)
             for p in levels for q in levels if q <= p
             for m in range(0, (q - 1 if q == p else q) + 1, m_stride)]
    v_streams = spawn(rng, len(levels))
    w_streams = spawn(rng, len(geoms))

    def v_task(i: int) -> ProbEstimate:
        return estimate_PV(spec, levels[i], eparams, reps_v, v_streams[i],
                           method="tilted", spectral=spectral,
                           pool_vectors=pool_vectors, u=u, beta=beta)

    def w_task(i: int) -> ProbEstimate:
        p, q, m = geoms[i]
        return estimate_PW(spec, p, q, m, eparams, reps_w, w_streams[i],
                           method="tilted", spectral=spectral, u=u, beta=beta)

    v_results = parallel_map(v_task, len(levels), threads)
    w_results = parallel_map(w_task, len(geoms), threads)

    per_level = []
    v_sum = 0.0
    v_var = 0.0
    for ell, est in zip(levels, v_results):
        coef = en ** (ell - C1)
        v_sum += coef * est.value
        v_var += (coef * est.se) ** 2
        if est.flagged:
            flags.append(f"V estimate at level {ell} flagged (ess={est.ess:.1f})")
        per_level.append({"level": ell, "count": coef, "p": est.value,
                          "se": est.se, "hits": est.hits, "ess": est.ess,
                          "method": est.method})
    per_geom = []
    w_sum = 0.0
    w_var = 0.0
    for (p, q, m), est in zip(geoms, w_results):
        coef = en ** (p + q - m - 2 * C1)
        w_sum += coef * est.value
        w_var += (coef * est.se) ** 2
        if est.hits == 0:
            flags.append(f"W at (p,q,m)=({p},{q},{m}) had no hits; "
                         f"heuristic upper {coef * (est.upper_95 or 0):.3g}")
        per_geom.append({"p": p, "q": q, "m": m, "count": coef,
                         "prob": est.value, "se": est.se,
                         "hits": est.hits, "ess": est.ess,
                         "method": est.method,
                         "upper_95": est.upper_95})
    kappa = cones.kappa
    v_term = kappa * v_sum
    bound = v_term - w_sum
    bound_se = math.sqrt(kappa ** 2 * v_var + w_var
                         + (v_sum * cones.kappa_se) ** 2)
    n_t = eparams.n_t
    shape_actual = (len(levels) * k_beta ** C1 / math.sqrt(n_t)) if levels else 0.0
    shape_ideal = k_beta ** C1 / (2 * C1)
    t_beta_v = t ** beta * v_term if beta * math.log(t) < 700 else math.inf
    fitted = t_beta_v / (kappa * shape_actual) if kappa > 0 and shape_actual > 0 \
        else float("nan")
    verdict = "positive" if bound > 0 else "not positive at these parameters"
    return CertificateReport(
        t=t, u=u, C0=eparams.C0, delta=eparams.delta, C1=C1, rho=rho,
        beta=beta, n_t=n_t, levels=levels, kappa=kappa,
        kappa_se=cones.kappa_se, v_sum=v_sum, v_sum_se=math.sqrt(v_var),
        w_sum=w_sum, w_sum_se=math.sqrt(w_var), bound=bound,
        bound_se=bound_se, verdict=verdict, t_beta_v_term=t_beta_v,
        shape_actual=shape_actual, shape_idealized=shape_ideal,
        fitted_D1=fitted, per_level_V=per_level, per_geometry_W=per_geom,
        flags=flags)
