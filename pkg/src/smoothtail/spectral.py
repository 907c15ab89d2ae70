"""Transfer-operator numerics: k(s), the eigenpair (e_s, nu_s), and tail roots.

The operator P_s f(x) = E[|M x|^s f(M . x)] (M the transposed edge matrix)
is discretized on a sphere grid.  Its spectral radius k(s) times the mean
offspring count gives m(s); the roots alpha < beta of m(s) = 1 carry the
tail index, and rho = m'(beta) sets the level scale n_t = ceil(log t / rho)
used downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AssemblyError, ConvergenceError, NoRootError, NoSecondRootError, SpecError
from .model import CLASS_NONNEG, ModelSpec
from .walks import StepSampler, UNDERFLOW, run_walks, vec_norm, weighted_mean

DEFAULT_GRID_D2 = 256
DEFAULT_GRID_HIGH = 512
POWER_TOL = 1e-10
RESIDUAL_TOL = 1e-8


# ---------------------------------------------------------------------------
# sphere grids
# ---------------------------------------------------------------------------

@dataclass
class SphereGrid:
    """Unit vectors (under the model norm) with positive weights summing to 1."""

    points: np.ndarray          # (G, d)
    weights: np.ndarray         # (G,)
    resolution: int
    geometry: str               # halfline | pm1 | quarter_circle | circle | sphere | orthant
    norm: str

    def __len__(self) -> int:
        return len(self.points)

    # -- interpolation --------------------------------------------------------

    def _angles(self, dirs: np.ndarray) -> np.ndarray:
        return np.arctan2(dirs[:, 1], dirs[:, 0])

    def interp_rows(self, dirs: np.ndarray):
        """(idx (n,2), w (n,2)): sparse interpolation rows for directions.

        Linear in angle for d = 2 (clamped on the quarter circle, periodic on
        the full circle), nearest neighbor otherwise.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n = dirs.shape[0]
        G = len(self.points)
        if self.geometry == "halfline":
            return np.zeros((n, 2), dtype=np.int64), np.column_stack(
                [np.ones(n), np.zeros(n)])
        if self.geometry == "pm1":
            idx0 = (dirs[:, 0] < 0).astype(np.int64)
            return np.column_stack([idx0, idx0]), np.column_stack(
                [np.ones(n), np.zeros(n)])
        if self.geometry == "quarter_circle":
            step = (math.pi / 2) / G
            t = self._angles(np.abs(dirs)) / step - 0.5
            t = np.clip(t, 0.0, G - 1.0)
            j0 = np.floor(t).astype(np.int64)
            j0 = np.minimum(j0, G - 2)
            frac = t - j0
            idx = np.column_stack([j0, j0 + 1])
            w = np.column_stack([1.0 - frac, frac])
            return idx, w
        if self.geometry == "circle":
            step = 2 * math.pi / G
            t = np.mod(self._angles(dirs), 2 * math.pi) / step
            j0 = np.floor(t).astype(np.int64) % G
            frac = t - np.floor(t)
            idx = np.column_stack([j0, (j0 + 1) % G])
            w = np.column_stack([1.0 - frac, frac])
            return idx, w
        # nearest neighbor on high-dimensional grids
        j = self.cell_index(dirs)
        return np.column_stack([j, j]), np.column_stack([np.ones(n), np.zeros(n)])

    def interp_values(self, values: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        idx, w = self.interp_rows(dirs)
        return (values[idx] * w).sum(axis=1)

    def cell_index(self, dirs: np.ndarray) -> np.ndarray:
        """Nearest grid cell per direction (used for orbit coverage counts)."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        G = len(self.points)
        if self.geometry == "halfline":
            return np.zeros(dirs.shape[0], dtype=np.int64)
        if self.geometry == "pm1":
            return (dirs[:, 0] < 0).astype(np.int64)
        if self.geometry == "quarter_circle":
            step = (math.pi / 2) / G
            t = self._angles(np.abs(dirs)) / step - 0.5
            return np.clip(np.rint(t), 0, G - 1).astype(np.int64)
        if self.geometry == "circle":
            step = 2 * math.pi / G
            t = np.mod(self._angles(dirs), 2 * math.pi) / step
            return np.rint(t).astype(np.int64) % G
        # chunked max-inner-product search
        out = np.empty(dirs.shape[0], dtype=np.int64)
        unit = dirs / np.maximum(
            np.linalg.norm(dirs, axis=1, keepdims=True), UNDERFLOW)
        pts = self.points / np.maximum(
            np.linalg.norm(self.points, axis=1, keepdims=True), UNDERFLOW)
        chunk = max(1, 2_000_000 // max(len(self.points), 1))
        for a in range(0, dirs.shape[0], chunk):
            b = min(a + chunk, dirs.shape[0])
            out[a:b] = np.argmax(unit[a:b] @ pts.T, axis=1)
        return out


def build_grid(spec_or_params, size: Optional[int] = None) -> SphereGrid:
    """Deterministic grid on the sphere of the model norm.

    d = 2 uses equally spaced angles (quarter circle for the nonnegative
    class); d >= 3 a fixed-seed scrambled Sobol point set pushed through the
    normal quantile map.
    """
    spec = spec_or_params
    d, norm, geom_class = spec.d, spec.norm, spec.geom_class
    nonneg = geom_class == CLASS_NONNEG
    if d == 1:
        if nonneg:
            return SphereGrid(np.array([[1.0]]), np.array([1.0]), 1, "halfline", norm)
        return SphereGrid(np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]), 2,
                          "pm1", norm)
    if d == 2:
        G = size or DEFAULT_GRID_D2
        if nonneg:
            theta = (np.arange(G) + 0.5) * (math.pi / 2) / G
        else:
            theta = np.arange(G) * 2 * math.pi / G
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
        pts /= vec_norm(pts, norm)[:, None]
        geometry = "quarter_circle" if nonneg else "circle"
        return SphereGrid(pts, np.full(G, 1.0 / G), G, geometry, norm)
    from scipy.special import ndtri
    from scipy.stats import qmc
    G = size or DEFAULT_GRID_HIGH
    sob = qmc.Sobol(d, scramble=True, seed=20240 + d)
    u = sob.random(G)
    z = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    if nonneg:
        z = np.abs(z)
    pts = z / np.maximum(vec_norm(z, norm)[:, None], UNDERFLOW)
    geometry = "orthant" if nonneg else "sphere"
    return SphereGrid(pts, np.full(G, 1.0 / G), G, geometry, norm)


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

class OperatorAssembler:
    """Assembles the grid operator at any tilt s from one cached draw set.

    Common random numbers across rows and across s values: bisection and
    finite differences then act on a smooth deterministic surrogate of m(s).
    Three strategies, picked from family structure:

    * exact enumeration for finite-support ensembles,
    * scalar moment x deterministic direction rows when the family is a
      lognormal scalar times a fixed matrix: the scalar moment E W^s is
      estimated by importance-stratified sampling (proposal normal shifted
      by half the exponential tilt, systematic strata over ``groups``
      independent uniform offsets), which keeps the integrand's growth
      bounded so the top stratum cannot dominate,
    * generic Monte Carlo with cached matrices otherwise.
    """

    def __init__(self, spec: ModelSpec, grid: SphereGrid, mc_reps: int,
                 rng: np.random.Generator, groups: int = 8):
        self.spec = spec
        self.grid = grid
        self.groups = groups
        self.rejected_fraction = 0.0
        atoms = spec.ensemble.atoms()
        fact = spec.ensemble.scalar_factorization()
        G = len(grid)
        if atoms is not None:
            self.mode = "exact"
            mats, probs = atoms
            self.mc_reps = 0
            self._rows = self._direction_rows(np.swapaxes(mats, -1, -2))
            if (self._rows[0] <= UNDERFLOW).any():
                raise AssemblyError(
                    "an ensemble atom annihilates part of the sphere grid "
                    "(zero row/column); the operator is not defined there")
            self._probs = probs
        elif fact is not None:
            self.mode = "scalar"
            P = fact
            self.mc_reps = mc_reps
            per = max(2, mc_reps // groups)
            # cached uniforms; the s-dependent quantile map is applied per call
            self._strata = [(np.arange(per) + rng.random()) / per
                            for _ in range(groups)]
            self._lognormal = spec.ensemble.lognormal_params()
            self._rows = self._direction_rows(P.T[None, :, :])
        else:
            self.mode = "mc"
            self.mc_reps = mc_reps
            mats = np.swapaxes(spec.ensemble.draw(rng, mc_reps), -1, -2)
            # reject singular-action draws in chunks, then decide whether the
            # per-draw interpolation rows fit in memory or get recomputed
            keep = np.ones(mc_reps, dtype=bool)
            for a in range(0, mc_reps, self._chunk()):
                b = min(a + self._chunk(), mc_reps)
                norms, _, _ = self._direction_rows(mats[a:b])
                keep[a:b] = (norms > UNDERFLOW).all(axis=1)
            self.rejected_fraction = 1.0 - float(keep.mean())
            if self.rejected_fraction > 0.01:
                raise AssemblyError(
                    f"{self.rejected_fraction:.1%} of draws rejected for singular action")
            self._mats = mats[keep]
            if len(self._mats) * G <= 4_000_000:
                self._rows = self._direction_rows(self._mats)
            else:
                self._rows = None

    def _chunk(self) -> int:
        return max(1, 4_000_000 // max(len(self.grid), 1))

    def _direction_rows(self, mats: np.ndarray):
        """Per (draw, grid point): |M x_i|, interp indices, interp weights."""
        X = self.grid.points                       # (G, d)
        Y = np.einsum("kij,gj->kgi", mats, X)      # (K, G, d)
        norms = vec_norm(Y, self.spec.norm)        # (K, G)
        safe = np.maximum(norms, UNDERFLOW)
        dirs = Y / safe[:, :, None]
        K, G = norms.shape
        idx, w = self.grid.interp_rows(dirs.reshape(K * G, -1))
        return norms, idx.reshape(K, G, 2), w.reshape(K, G, 2)

    def _scatter(self, norms_s: np.ndarray, idx: np.ndarray, w: np.ndarray,
                 coefs: np.ndarray) -> np.ndarray:
        """op[i, j] = sum_k coefs[k] * norms_s[k, i] * w[k, i, :] at idx[k, i, :]."""
        K, G = norms_s.shape
        vals = (coefs[:, None, None] * norms_s[:, :, None] * w)     # (K, G, 2)
        cols = idx                                                  # (K, G, 2)
        rows = np.broadcast_to(np.arange(G)[None, :, None], cols.shape)
        flat = (rows * G + cols).ravel()
        return np.bincount(flat, weights=vals.ravel(), minlength=G * G).reshape(G, G)

    def assemble(self, s: float) -> np.ndarray:
        ops = self.assemble_groups(s)
        return sum(ops) / len(ops)

    def _scalar_moment(self, s: float, u: np.ndarray) -> float:
        """Unbiased E W^s from stratified uniforms u via half-tilt importance
        sampling: z ~ N(tau, 1) with tau = s*sigma/2, weight e^{(t-tau)z+tau^2/2}."""
        from scipy.special import ndtri
        mu, sigma = self._lognormal
        t = s * sigma
        tau = 0.5 * t
        z = tau + ndtri(u)
        return float(math.exp(s * mu + 0.5 * tau * tau)
                     * np.exp((t - tau) * z).mean())

    def assemble_groups(self, s: float) -> list[np.ndarray]:
        """Independent-group operators (group spread feeds the k standard error)."""
        G = len(self.grid)
        if self.mode == "exact":
            norms, idx, w = self._rows
            op = self._scatter(norms ** s, idx, w, self._probs)
            return [op]
        if self.mode == "scalar":
            norms, idx, w = self._rows
            base = self._scatter(norms ** s, idx, w, np.ones(1))
            return [self._scalar_moment(s, u) * base for u in self._strata]
        K = len(self._mats)
        bounds = np.linspace(0, K, self.groups + 1).astype(int)
        out = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            if b == a:
                continue
            coefs = np.full(b - a, 1.0 / (b - a))
            if self._rows is not None:
                norms, idx, w = self._rows
                out.append(self._scatter(norms[a:b] ** s, idx[a:b], w[a:b],
                                         coefs))
                continue
            op = np.zeros((G, G))
            for c in range(a, b, self._chunk()):
                e = min(c + self._chunk(), b)
                norms, idx, w = self._direction_rows(self._mats[c:e])
                op += self._scatter(norms ** s, idx, w, coefs[:e - c])
            out.append(op)
        return out


def build_operator(spec: ModelSpec, s: float, grid: SphereGrid, mc_reps: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Grid operator at tilt s (row i approximates f -> E|M x_i|^s f(M . x_i))."""
    if s < 0:
        raise SpecError("tilt s must be >= 0")
    if not spec.ensemble.moment_finite(s):
        raise AssemblyError(f"family declares E||M||^s infinite at s={s}")
    return OperatorAssembler(spec, grid, mc_reps, rng).assemble(s)


# ---------------------------------------------------------------------------
# power iteration
# ---------------------------------------------------------------------------

def _dominant_pair(op: np.ndarray, tol: float, max_iter: int):
    G = op.shape[0]
    v = np.full(G, 1.0 / G)
    lam_prev = None
    lam_hist = []
    for it in range(1, max_iter + 1):
        w = op @ v
        lam = float(w.sum() / v.sum())
        if lam <= 0 or not np.isfinite(lam):
            raise ConvergenceError(f"nonpositive eigenvalue iterate {lam}")
        v = w / w.sum()
        lam_hist.append(lam)
        if lam_prev is not None and abs(lam - lam_prev) <= tol * abs(lam):
            return lam, v, it
        if (it > 20 and len(lam_hist) > 4
                and abs(lam - lam_hist[-3]) <= 1e-3 * tol * abs(lam)
                and abs(lam - lam_prev) > 100 * tol * abs(lam)):
            raise ConvergenceError("period-2 oscillation in power iteration")
        lam_prev = lam
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def power_iteration(op: np.ndarray, tol: float = POWER_TOL,
                    max_iter: int = 20000):
    """(k, e, nu, iterations, residual) for a nonnegative grid operator.

    e is the right eigenvector (strictly positive for primitive operators),
    nu the left probability eigenvector, normalized so sum(nu * e) = 1.
    """
    op = np.asarray(op, dtype=float)
    if op.shape == (1, 1):
        k = float(op[0, 0])
        return k, np.array([1.0]), np.array([1.0]), 1, 0.0
    if (op < -1e-14 * max(1.0, np.abs(op).max())).any():
        raise ConvergenceError("operator has negative entries")
    k, e, it_e = _dominant_pair(op, tol, max_iter)
    k2, nu, it_n = _dominant_pair(op.T, tol, max_iter)
    k = 0.5 * (k + k2)
    nu = nu / nu.sum()
    inner = float(nu @ e)
    if inner <= 0:
        raise ConvergenceError("left/right eigenvector normalization failed")
    e = e / inner
    residual = float(np.max(np.abs(op @ e - k * e)) / k)
    return k, e, nu, it_e + it_n, residual


@dataclass
class SpectralResult:
    """k(s) with the grid eigenpair and assembly diagnostics."""

    s: float
    k: float
    e: np.ndarray
    nu: np.ndarray
    grid: SphereGrid
    residual: float
    iterations: int
    mc_reps: int
    k_se: float = 0.0

    def e_interp(self, dirs: np.ndarray) -> np.ndarray:
        return self.grid.interp_values(self.e, dirs)

    def to_jsonable(self) -> dict:
        return {
            "s": self.s, "k": self.k, "k_se": self.k_se,
            "residual": self.residual, "iterations": self.iterations,
            "mc_reps": self.mc_reps,
            "grid_geometry": self.grid.geometry,
            "grid_size": len(self.grid),
            "e": self.e.tolist(), "nu": self.nu.tolist(),
            "points": self.grid.points.tolist(),
        }


def k_grid(spec: ModelSpec, s: float, grid: Optional[SphereGrid] = None,
           mc_reps: int = 200_000, rng: Optional[np.random.Generator] = None,
           assembler: Optional[OperatorAssembler] = None) -> SpectralResult:
    """Spectral radius at tilt s by operator discretization plus power iteration."""
    if assembler is None:
        if rng is None:
            raise SpecError("k_grid needs an rng when no assembler is supplied")
        grid = grid or build_grid(spec)
        assembler = OperatorAssembler(spec, grid, mc_reps, rng)
    if not spec.ensemble.moment_finite(s):
        raise AssemblyError(f"family declares E||M||^s infinite at s={s}")
    group_ops = assembler.assemble_groups(s)
    op = sum(group_ops) / len(group_ops)
    k, e, nu, iters, residual = power_iteration(op)
    if len(group_ops) > 1:
        ks = [power_iteration(g)[0] for g in group_ops]
        k_se = float(np.std(ks, ddof=1) / math.sqrt(len(ks)))
    else:
        k_se = 0.0
    return SpectralResult(s=s, k=k, e=e, nu=nu, grid=assembler.grid,
                          residual=residual, iterations=iters,
                          mc_reps=assembler.mc_reps, k_se=k_se)


# ---------------------------------------------------------------------------
# product-regression estimate of k(s)
# ---------------------------------------------------------------------------

@dataclass
class ProductsEstimate:
    """k(s) from the growth rate of E||Pi_n||^s over n."""

    k: float
    c_s: float                 # exp(intercept), the prefactor of the moment bound
    slope: float
    per_n: list                # rows (n, log_mean, se_of_log)
    low_confidence: bool
    method: str


def k_by_products(spec: ModelSpec, s: float, n_list, reps: int,
                  rng: np.random.Generator, method: str = "naive",
                  spectral: Optional[SpectralResult] = None) -> ProductsEstimate:
    """Fit log E||Pi_n||^s against n; the slope exponentiates to k(s).

    The naive estimator collapses for heavy-tailed summands (relative SE
    grows like a power of k(2s)/k(s)^2 per step); the tilted method keeps
    the same expectation with exponential variance reduction.
    """
    n_list = sorted(set(int(n) for n in n_list))
    if len(n_list) < 2:
        raise SpecError("need at least two distinct path lengths")
    n_max = max(n_list)
    u0 = np.zeros(spec.d)
    u0[0] = 1.0
    if method == "naive":
        batch = run_walks(spec, u0, n_max, reps, rng, sampler=StepSampler(spec),
                          record_hist=True)
    elif method == "tilted":
        sampler = StepSampler(spec, s=s,
                              e_interp=None if spectral is None else spectral.e_interp)
        batch = run_walks(spec, u0, n_max, reps, rng, sampler=sampler,
                          tilted=True, record_hist=True)
    else:
        raise SpecError(f"unknown method {method!r}")
    rows = []
    low_conf = False
    for n in n_list:
        logvals = s * batch.opnorm_log_hist[:, n]
        if method == "tilted":
            logvals = logvals + batch.log_weight_hist[:, n]
        mean, se = weighted_mean(np.ones(reps), logvals)
        if not (mean > 0) or not np.isfinite(mean):
            raise AssemblyError(f"empirical moment vanished at n={n}")
        rel = se / mean
        if rel > 0.5:
            low_conf = True
        rows.append((n, math.log(mean), rel))
    ns = np.array([r[0] for r in rows], dtype=float)
    ys = np.array([r[1] for r in rows])
    slope, intercept = np.polyfit(ns, ys, 1)
    return ProductsEstimate(k=float(math.exp(slope)), c_s=float(math.exp(intercept)),
                            slope=float(slope), per_n=rows,
                            low_confidence=low_conf, method=method)


# ---------------------------------------------------------------------------
# m(s) and the tail roots
# ---------------------------------------------------------------------------

def m_of_s(spec: ModelSpec, s: float, method: str = "grid",
           rng: Optional[np.random.Generator] = None,
           assembler: Optional[OperatorAssembler] = None,
           mc_reps: int = 200_000, n_list=(2, 4, 6, 8), reps: int = 50_000,
           spectral: Optional[SpectralResult] = None) -> float:
    """(E N) * k(s), with E N exact from the branching law."""
    en = spec.mean_children()
    if method == "grid":
        return en * k_grid(spec, s, mc_reps=mc_reps, rng=rng,
                           assembler=assembler).k
    if method == "products":
        if rng is None:
            raise SpecError("products method needs an rng")
        return en * k_by_products(spec, s, n_list, reps, rng,
                                  spectral=spectral).k
    raise SpecError(f"unknown method {method!r}")


@dataclass
class TailIndexSolution:
    """Roots alpha < beta of m(s) = 1 with the drift rho = m'(beta)."""

    alpha: float
    beta: float
    s_star: float
    m_alpha: float
    m_beta: float
    m_star: float
    rho: float
    k_beta: float
    k_drift: float             # k'(beta)/k(beta)
    tol: float
    bracket_history: list = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {k: getattr(self, k) for k in
                ("alpha", "beta", "s_star", "m_alpha", "m_beta", "m_star",
                 "rho", "k_beta", "k_drift", "tol", "bracket_history")}


def _golden_min(f: Callable[[float], float], lo: float, hi: float,
                tol: float, history: list) -> float:
    invphi = (math.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        history.append(("golden", a, b))
    return 0.5 * (a + b)


def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float,
            history: list) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise NoRootError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
        history.append(("bisect", lo, hi))
    return 0.5 * (lo + hi)


def solve_alpha_beta(spec: ModelSpec, s_max: float, tol: float = 1e-6,
                     rng: Optional[np.random.Generator] = None,
                     grid: Optional[SphereGrid] = None,
                     mc_reps: int = 1_000_000,
                     h: float = 1e-2) -> TailIndexSolution:
    """Locate the two roots of m(s) = 1 on [0, s_max].

    Golden-section finds the minimizer s* of log m (m is log-convex), then
    bisection brackets alpha on (0, s*) and beta on (s*, s_max).  All m
    evaluations reuse one cached draw set, so the solver sees a smooth
    deterministic function.  Raises NoRootError when m(s*) >= 1 and
    NoSecondRootError when the minimizer sits on the s_max boundary.
    """
    if s_max <= 0:
        raise SpecError("s_max must be positive")
    if rng is None:
        raise SpecError("solve_alpha_beta needs an rng")
    grid = grid or build_grid(spec)
    assembler = OperatorAssembler(spec, grid, mc_reps, rng)
    en = spec.mean_children()
    cache: dict[float, float] = {}

    def m(s: float) -> float:
        if s not in cache:
            op = assembler.assemble(s)
            cache[s] = en * power_iteration(op)[0]
        return cache[s]

    history: list = []
    gs_tol = min(tol, 1e-6) * max(1.0, s_max)
    s_star = _golden_min(lambda s: math.log(m(s)), 0.0, s_max, gs_tol, history)
    m_star = m(s_star)
    if s_star >= s_max - 10 * gs_tol:
        raise NoSecondRootError(
            f"m is still decreasing at s_max={s_max} (m={m(s_max):.6g}); widen s_max",
            m_at_s_max=m(s_max))
    if m_star >= 1.0:
        raise NoRootError(f"min m = {m_star:.6g} >= 1 at s* = {s_star:.6g}: no roots")
    if m(s_max) <= 1.0:
        raise NoSecondRootError(
            f"m(s_max) = {m(s_max):.6g} <= 1: no second root below s_max",
            m_at_s_max=m(s_max))

    g = lambda s: m(s) - 1.0
    lo_alpha = max(1e-12, 1e-9 * s_max)
    alpha = _bisect(g, lo_alpha, s_star, tol, history)
    beta = _bisect(g, s_star, s_max, tol, history)
    k_beta = m(beta) / en
    # centered differences on the cached smooth surrogate
    m_plus, m_minus = m(beta + h), m(beta - h)
    rho = (m_plus - m_minus) / (2 * h)
    k_drift = (math.log(m_plus) - math.log(m_minus)) / (2 * h)
    return TailIndexSolution(alpha=alpha, beta=beta, s_star=s_star,
                             m_alpha=m(alpha), m_beta=m(beta), m_star=m_star,
                             rho=rho, k_beta=k_beta, k_drift=k_drift, tol=tol,
                             bracket_history=history[-20:])


@dataclass
class DriftResult:
    k_drift: float      # k'(s)/k(s)
    m_deriv: float      # m'(s)
    low_confidence: bool


def drift(spec: ModelSpec, s: float, h: float = 1e-2,
          rng: Optional[np.random.Generator] = None,
          assembler: Optional[OperatorAssembler] = None,
          grid: Optional[SphereGrid] = None,
          mc_reps: int = 1_000_000) -> DriftResult:
    """Centered finite differences of log k and of m at s (common draws).

    The per-group differences (same strata on both sides) estimate the MC
    noise of the derivative; a spread that makes the sign indefinite flags
    the result as low confidence.
    """
    if assembler is None:
        if rng is None:
            raise SpecError("drift needs an rng or an assembler")
        grid = grid or build_grid(spec)
        assembler = OperatorAssembler(spec, grid, mc_reps, rng)
    en = spec.mean_children()
    lo = max(s - h, 0.0)
    denom = (s + h) - lo
    plus_groups = assembler.assemble_groups(s + h)
    minus_groups = assembler.assemble_groups(lo)
    k_plus = power_iteration(sum(plus_groups) / len(plus_groups))[0]
    k_minus = power_iteration(sum(minus_groups) / len(minus_groups))[0]
    k_drift = (math.log(k_plus) - math.log(k_minus)) / denom
    m_deriv = en * (k_plus - k_minus) / denom
    low_conf = not np.isfinite(k_drift)
    if len(plus_groups) > 1 and np.isfinite(k_drift):
        per_group = [(power_iteration(p)[0] - power_iteration(q)[0]) / denom
                     for p, q in zip(plus_groups, minus_groups)]
        se = float(np.std(per_group, ddof=1) / math.sqrt(len(per_group)))
        if abs(m_deriv / en) < 3 * se:
            low_conf = True
    return DriftResult(k_drift=k_drift, m_deriv=m_deriv, low_confidence=low_conf)
