"""Model specification and validation for the random input (Q, (A_i), N).

A model describes one smoothing transform: the branching law N, the matrix
ensemble generating the A_i, the law of the additive term Q, and the
geometric class of the ensemble (nonnegative with a positive product, or
invertible).  Ensembles are restricted to parametric families with
oracle-checkable spectral behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ClassViolationError, EigenDiagnosticError, SpecError

CLASS_NONNEG = "nonnegative-C"
CLASS_IPO = "invertible-ipo"
CLASS_ID = "invertible-id"
GEOM_CLASSES = (CLASS_NONNEG, CLASS_IPO, CLASS_ID)

ZERO_TOL = 1e-12        # entries below this count as structural zeros
DET_TOL = 1e-10         # invertibility margin for declared invertible classes


# ---------------------------------------------------------------------------
# branching law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Branching:
    """Number of children per node: fixed N >= 2 or a finite integer law."""

    mode: str                                   # "fixed" | "random"
    n: Optional[int] = None                     # fixed mode
    support: Optional[tuple[int, ...]] = None   # random mode
    probs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.mode == "fixed":
            if self.n is None or self.n < 2:
                raise SpecError("fixed-N branching requires integer N >= 2")
        elif self.mode == "random":
            if not self.support or self.probs is None:
                raise SpecError("random-N branching requires support and probs")
            if len(self.support) != len(self.probs):
                raise SpecError("branching support/probs length mismatch")
            if any(k < 0 or k != int(k) for k in self.support):
                raise SpecError("branching support must be nonnegative integers")
            if any(p < 0 for p in self.probs):
                raise SpecError("branching probabilities must be nonnegative")
            total = sum(self.probs)
            if abs(total - 1.0) > 1e-9:
                raise SpecError(f"branching probabilities sum to {total}, not 1")
            if self.mean() <= 1.0:
                raise SpecError("random-N branching requires mean > 1")
        else:
            raise SpecError(f"unknown branching mode {self.mode!r}")

    def mean(self) -> float:
        if self.mode == "fixed":
            return float(self.n)
        return float(sum(k * p for k, p in zip(self.support, self.probs)))

    def max_children(self) -> int:
        if self.mode == "fixed":
            return self.n
        return max(self.support)

    def min_children(self) -> int:
        if self.mode == "fixed":
            return self.n
        return min(k for k, p in zip(self.support, self.probs) if p > 0)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.mode == "fixed":
            if size is None:
                return self.n
            return np.full(size, self.n, dtype=np.int64)
        ks = np.asarray(self.support, dtype=np.int64)
        out = ks[rng.choice(len(ks), size=size if size is not None else 1,
                            p=np.asarray(self.probs))]
        return out if size is not None else int(out[0])


# ---------------------------------------------------------------------------
# matrix ensembles
# ---------------------------------------------------------------------------

class MatrixEnsemble:
    """Common interface of the parametric matrix families."""

    d: int
    family: str
    bounded_support: bool = True

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """i.i.d. draws, shape (size, d, d)."""
        raise NotImplementedError

    def atoms(self):
        """(matrices, probs) for finite-support families, else None."""
        return None

    def scalar_factorization(self):
        """The fixed matrix P when the family is a positive lognormal scalar
        times P (so the projective move is deterministic), else None."""
        return None

    def lognormal_params(self):
        """(mu, sigma) of the scalar factor for lognormal families, else None."""
        return None

    def log_scalar_moment(self, s: float) -> float | None:
        """log E W^s for the scalar factor, when one exists."""
        return None

    def support_nonnegative(self) -> bool:
        raise NotImplementedError

    def support_invertible(self) -> bool:
        raise NotImplementedError

    def moment_finite(self, s: float) -> bool:
        """Whether E ||M||^s is finite (all named families: yes below cap)."""
        cap = getattr(self, "finite_moment_s_max", None)
        return cap is None or s <= cap


@dataclass(frozen=True)
class FiniteSupport(MatrixEnsemble):
    """Finitely many matrices with probabilities."""

    matrices: np.ndarray          # (K, d, d)
    probs: np.ndarray             # (K,)
    family: str = "finite_support"
    finite_moment_s_max: Optional[float] = None

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise SpecError("finite-support matrices must be a (K, d, d) array")
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (mats.shape[0],) or (p < 0).any():
            raise SpecError("finite-support probs must be nonnegative, one per matrix")
        if abs(p.sum() - 1.0) > 1e-9:
            raise SpecError("finite-support probs must sum to 1")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "d", mats.shape[1])

    def draw(self, rng, size):
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.matrices[idx]

    def atoms(self):
        return self.matrices, self.probs

    def support_nonnegative(self):
        return bool((self.matrices >= -ZERO_TOL).all())

    def support_invertible(self):
        dets = np.abs(np.linalg.det(self.matrices))
        scale = np.abs(self.matrices).sum(axis=(1, 2)) + 1.0
        return bool((dets > DET_TOL * scale ** self.d).all())


@dataclass(frozen=True)
class LognormalScalarMatrix(MatrixEnsemble):
    """W * P for W ~ LogNormal(mu, sigma2) and a fixed matrix P.

    With P the 1x1 identity this is the plain scalar-lognormal family.
    """

    mu: float
    sigma2: float
    matrix: np.ndarray
    family: str = "lognormal_fixed_matrix"
    bounded_support: bool = False
    finite_moment_s_max: Optional[float] = None

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise SpecError("lognormal family requires sigma2 > 0")
        P = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise SpecError("fixed matrix must be square")
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "d", P.shape[0])

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def draw(self, rng, size):
        w = np.exp(self.mu + self.sigma * rng.standard_normal(size))
        return w[:, None, None] * self.matrix[None, :, :]

    def scalar_factorization(self):
        return self.matrix

    def lognormal_params(self):
        return self.mu, self.sigma

    def log_scalar_moment(self, s):
        return self.mu * s + 0.5 * self.sigma2 * s * s

    def support_nonnegative(self):
        return bool((self.matrix >= -ZERO_TOL).all())

    def support_invertible(self):
        det = abs(np.linalg.det(self.matrix))
        scale = np.abs(self.matrix).sum() + 1.0
        return det > DET_TOL * scale ** self.d


@dataclass(frozen=True)
class LognormalRotation(MatrixEnsemble):
    """c * R for c ~ LogNormal(mu, sigma2) and R a Haar rotation of R^d."""

    mu: float
    sigma2: float
    d: int = 2
    family: str = "lognormal_rotation"
    bounded_support: bool = False
    finite_moment_s_max: Optional[float] = None

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise SpecError("lognormal family requires sigma2 > 0")
        if self.d < 2:
            raise SpecError("rotation family requires d >= 2")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def _rotations(self, rng, size):
        if self.d == 2:
            theta = rng.uniform(0.0, 2.0 * np.pi, size)
            c, s = np.cos(theta), np.sin(theta)
            return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        g = rng.standard_normal((size, self.d, self.d))
        q, r = np.linalg.qr(g)
        sign = np.sign(np.einsum("nii->ni", r))
        sign[sign == 0] = 1.0
        q = q * sign[:, None, :]
        det = np.linalg.det(q)
        q[det < 0, :, 0] *= -1.0
        return q

    def draw(self, rng, size):
        c = np.exp(self.mu + self.sigma * rng.standard_normal(size))
        return c[:, None, None] * self._rotations(rng, size)

    def lognormal_params(self):
        return self.mu, self.sigma

    def log_scalar_moment(self, s):
        return self.mu * s + 0.5 * self.sigma2 * s * s

    def support_nonnegative(self):
        return False

    def support_invertible(self):
        return True


# ---------------------------------------------------------------------------
# Q laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QLaw:
    """Law of the additive innovation Q: zero, a point, or finite support."""

    kind: str                                   # "zero" | "deterministic" | "finite_support"
    vector: Optional[np.ndarray] = None
    vectors: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "zero":
            return
        if self.kind == "deterministic":
            v = np.atleast_1d(np.asarray(self.vector, dtype=float))
            object.__setattr__(self, "vector", v)
        elif self.kind == "finite_support":
            vs = np.atleast_2d(np.asarray(self.vectors, dtype=float))
            p = np.asarray(self.probs, dtype=float)
            if p.shape != (vs.shape[0],) or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
                raise SpecError("finite-support Q needs probs summing to 1")
            object.__setattr__(self, "vectors", vs)
            object.__setattr__(self, "probs", p)
        else:
            raise SpecError(f"unknown Q law {self.kind!r}")

    def dim(self) -> Optional[int]:
        if self.kind == "deterministic":
            return self.vector.shape[0]
        if self.kind == "finite_support":
            return self.vectors.shape[1]
        return None

    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "deterministic":
            return bool((self.vector == 0).all())
        return bool((self.vectors == 0).all())

    def mean(self, d: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(d)
        if self.kind == "deterministic":
            return self.vector.copy()
        return self.probs @ self.vectors

    def draw(self, rng: np.random.Generator, size: int, d: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((size, d))
        if self.kind == "deterministic":
            return np.broadcast_to(self.vector, (size, d)).copy()
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.vectors[idx]

    def support_nonnegative(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "deterministic":
            return bool((self.vector >= -ZERO_TOL).all())
        return bool((self.vectors >= -ZERO_TOL).all())


# ---------------------------------------------------------------------------
# the full model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Full description of the law of (Q, (A_i), N) plus geometric class.

    The norm convention is tied to the class: l1 on the positive cone for
    nonnegative ensembles, l2 for the invertible classes.
    """

    dimension: int
    branching: Branching
    ensemble: MatrixEnsemble
    q_law: QLaw
    geom_class: str
    norm: str = field(default="")

    def __post_init__(self):
        if self.dimension < 1:
            raise SpecError("dimension must be a positive integer")
        if self.geom_class not in GEOM_CLASSES:
            raise SpecError(f"unknown geometric class {self.geom_class!r}")
        expected_norm = "l1" if self.geom_class == CLASS_NONNEG else "l2"
        if not self.norm:
            object.__setattr__(self, "norm", expected_norm)
        elif self.norm != expected_norm:
            raise SpecError(
                f"class {self.geom_class} uses norm {expected_norm!r}, got {self.norm!r}")
        if self.ensemble.d != self.dimension:
            raise SpecError("ensemble dimension does not match model dimension")
        qd = self.q_law.dim()
        if qd is not None and qd != self.dimension:
            raise SpecError("Q dimension does not match model dimension")
        if self.geom_class == CLASS_NONNEG:
            if not self.ensemble.support_nonnegative():
                raise SpecError("nonnegative class requires nonnegative ensemble support")
        else:
            if not self.ensemble.support_invertible():
                raise SpecError("invertible class requires invertible ensemble support")

    @property
    def d(self) -> int:
        return self.dimension

    def mean_children(self) -> float:
        return self.branching.mean()


def check_class(spec: ModelSpec, mats: np.ndarray) -> None:
    """Abort if sampled matrices contradict the declared class."""
    mats = np.asarray(mats, dtype=float).reshape(-1, spec.d, spec.d)
    if spec.geom_class == CLASS_NONNEG:
        if (mats < -ZERO_TOL).any():
            raise ClassViolationError("negative entry sampled under nonnegative class")
    else:
        dets = np.abs(np.linalg.det(mats))
        if (dets <= 0).any():
            raise ClassViolationError("singular matrix sampled under invertible class")


def exchangeify(mats: list[np.ndarray], q: np.ndarray,
                rng: np.random.Generator) -> tuple[list[np.ndarray], np.ndarray]:
    """Apply a uniform random permutation to the matrix tuple.

    The multiset of matrices is unchanged; this enforces exchangeability of
    fixed-N joint samplers.
    """
    n = len(mats)
    if n <= 1:
        return mats, q
    perm = rng.permutation(n)
    return [mats[i] for i in perm], q


def sample_family(spec: ModelSpec, rng: np.random.Generator):
    """One node innovation: (Q, [A_1..A_N], N)."""
    n = spec.branching.sample(rng)
    if n > 0:
        mats = spec.ensemble.draw(rng, n)
        check_class(spec, mats)
        a_list = [mats[i] for i in range(n)]
    else:
        a_list = []
    q = spec.q_law.draw(rng, 1, spec.d)[0]
    if spec.branching.mode == "fixed":
        a_list, q = exchangeify(a_list, q, rng)
    return q, a_list, int(n)


# ---------------------------------------------------------------------------
# geometric condition checks
# ---------------------------------------------------------------------------

def check_allowable(m: np.ndarray, tol: float = ZERO_TOL) -> bool:
    """No zero row and no zero column, entries below tol counting as zero."""
    m = np.atleast_2d(np.abs(np.asarray(m, dtype=float)))
    nz = m > tol
    return bool(nz.any(axis=1).all() and nz.any(axis=0).all())


def check_proximal(m: np.ndarray, tol: float = 1e-8) -> bool:
    """Dominant eigenvalue real, algebraically simple, separated by margin tol."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape == (1, 1):
        return m[0, 0] != 0.0
    try:
        eig = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigenDiagnosticError(f"eigenvalue solver failed: {exc}") from exc
    mods = np.abs(eig)
    order = np.argsort(mods)[::-1]
    lam = eig[order[0]]
    if mods[order[0]] == 0.0:
        return False
    if abs(lam.imag) > tol * mods[order[0]]:
        return False
    gap = (mods[order[0]] - mods[order[1]]) / mods[order[0]]
    return bool(gap >= tol)


def perron_data(m: np.ndarray):
    """(lambda, v) for a matrix with a real dominant eigenvalue, v normalized l1."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    eig, vecs = np.linalg.eig(m)
    i = int(np.argmax(np.abs(eig)))
    lam = float(eig[i].real)
    v = vecs[:, i].real
    v = v / np.abs(v).sum()
    if v.sum() < 0:
        v = -v
    return lam, v


def find_positive_product(spec: ModelSpec, budget: int,
                          rng: np.random.Generator):
    """Search for a strictly positive product of sampled ensemble matrices.

    Multiplies fresh draws (renormalized in transit to dodge overflow),
    restarting when the word gets long.  Returns (witness, word_length) or
    None if the budget is exhausted.  Absence is a value, not an error.
    """
    if spec.geom_class != CLASS_NONNEG:
        raise SpecError("positive-product search applies to the nonnegative class")
    max_word = 64
    word = 0
    prod = np.eye(spec.d)
    log_scale = 0.0
    for _ in range(budget):
        m = spec.ensemble.draw(rng, 1)[0]
        prod = m @ prod
        word += 1
        nrm = np.abs(prod).max()
        if nrm == 0.0 or not np.isfinite(nrm):
            prod, word, log_scale = np.eye(spec.d), 0, 0.0
            continue
        prod = prod / nrm
        log_scale += math.log(nrm)
        if (prod > ZERO_TOL).all():
            if abs(log_scale) < 600.0:
                return prod * math.exp(log_scale), word
            return prod, word
        if word >= max_word:
            prod, word, log_scale = np.eye(spec.d), 0, 0.0
    return None


def _rational_margin(r: float, qmax: int = 50) -> float:
    """min over q <= qmax of q^2 * |r - p/q| (irrationality margin)."""
    best = math.inf
    for q in range(1, qmax + 1):
        p = round(r * q)
        best = min(best, q * q * abs(r - p / q))
    return best


def heuristic_nonarithmetic(spec: ModelSpec, budget: int,
                            rng: np.random.Generator):
    """Evidence for non-arithmeticity of log spectral radii of positive products.

    Samples positive products, collects log(lambda), and reports pairwise
    ratios with their irrationality margins against rationals p/q, q <= 50.
    Verdict: "heuristic-pass" if some margin >= 1e-3, "inconclusive" if all
    sampled ratios sit essentially on rationals, "inapplicable" when no
    positive product is found.  Never a definite fail.
    """
    if spec.geom_class != CLASS_NONNEG:
        raise SpecError("non-arithmeticity heuristic applies to the nonnegative class")
    logs: list[float] = []
    seen = 0
    while seen < budget and len(logs) < 24:
        found = find_positive_product(spec, budget=min(64, budget - seen), rng=rng)
        seen += min(64, budget - seen)
        if found is None:
            continue
        witness, _ = found
        lam, _v = perron_data(witness)
        if lam > 0:
            logs.append(math.log(lam))
    if len(logs) < 2:
        return {"verdict": "inapplicable", "pairs": []}
    pairs = []
    passed = False
    for i in range(len(logs)):
        for j in range(i + 1, len(logs)):
            if logs[j] == 0.0:
                continue
            r = logs[i] / logs[j]
            margin = _rational_margin(abs(r))
            pairs.append({"log_a": logs[i], "log_b": logs[j],
                          "ratio": r, "margin": margin})
            if margin >= 1e-3:
                passed = True
    verdict = "heuristic-pass" if passed else "inconclusive"
    return {"verdict": verdict, "pairs": pairs}


# ---------------------------------------------------------------------------
# validation report
# ---------------------------------------------------------------------------

@dataclass
class ConditionVerdict:
    verdict: str                  # pass | fail | heuristic-pass | inapplicable | declared
    evidence: dict = field(default_factory=dict)


@dataclass
class ValidationReport:
    """Per-condition verdicts with witnesses and empirical moment estimates."""

    conditions: dict[str, ConditionVerdict]
    positive_product_witness: Optional[np.ndarray]
    positive_product_word_length: Optional[int]
    proximality_witness: Optional[np.ndarray]
    nonarithmetic_pairs: list
    moment_estimates: dict
    notes: list[str]

    def hard_fail(self) -> bool:
        return any(c.verdict == "fail" for c in self.conditions.values())

    def to_jsonable(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "conditions": {k: {"verdict": v.verdict, "evidence": v.evidence}
                           for k, v in self.conditions.items()},
            "positive_product_witness": arr(self.positive_product_witness),
            "positive_product_word_length": self.positive_product_word_length,
            "proximality_witness": arr(self.proximality_witness),
            "nonarithmetic_pairs": self.nonarithmetic_pairs,
            "moment_estimates": self.moment_estimates,
            "notes": self.notes,
        }


def _support_matrices(spec: ModelSpec, rng: np.random.Generator, reps: int) -> np.ndarray:
    atoms = spec.ensemble.atoms()
    if atoms is not None:
        return atoms[0]
    return spec.ensemble.draw(rng, reps)


def _orbit_coverage(spec: ModelSpec, rng: np.random.Generator, steps: int) -> float:
    """Fraction of sphere-grid cells visited by the projective orbit."""
    from .spectral import build_grid
    from .walks import act, vec_norm

    grid = build_grid(spec, size=64 if spec.d > 1 else 2)
    x = np.zeros(spec.d)
    x[0] = 1.0
    x = x / vec_norm(x, spec.norm)
    visited = np.zeros(len(grid.points), dtype=bool)
    mats = spec.ensemble.draw(rng, steps)
    for m in mats:
        try:
            x = act(m.T, x, spec.norm)
        except Exception:
            continue
        visited[grid.cell_index(x[None, :])[0]] = True
    return float(visited.mean())


def validate(spec: ModelSpec, beta_hat: float, eps: float, reps: int,
             rng: np.random.Generator) -> ValidationReport:
    """Run every class-applicable condition check and estimate the moment bounds.

    Strong irreducibility, cone absence, and the density condition cannot be
    decided from samples; they are reported as declared-by-user with orbit
    coverage evidence.  Moment conditions are Monte Carlo estimates with
    standard errors.
    """
    if beta_hat <= 0:
        raise SpecError("validate requires beta_hat > 0")
    from .walks import iotas, operator_norms

    conditions: dict[str, ConditionVerdict] = {}
    notes: list[str] = []
    pos_witness = None
    pos_len = None
    prox_witness = None
    na_pairs: list = []

    if spec.geom_class == CLASS_NONNEG:
        mats = _support_matrices(spec, rng, min(reps, 256))
        allow_ok = all(check_allowable(m) for m in mats)
        conditions["allowable"] = ConditionVerdict(
            "pass" if allow_ok else "fail",
            {"checked": int(len(mats))})
        found = find_positive_product(spec, budget=max(reps, 256), rng=rng)
        if found is not None:
            pos_witness, pos_len = found
            conditions["positive_product"] = ConditionVerdict(
                "pass", {"word_length": pos_len})
        else:
            conditions["positive_product"] = ConditionVerdict(
                "fail", {"budget": max(reps, 256)})
        na = heuristic_nonarithmetic(spec, budget=max(reps, 256), rng=rng)
        na_pairs = na["pairs"]
        conditions["nonarithmetic"] = ConditionVerdict(
            na["verdict"], {"n_pairs": len(na_pairs)})
    else:
        mats = _support_matrices(spec, rng, min(reps, 256))
        inv_ok = spec.ensemble.support_invertible()
        conditions["invertible"] = ConditionVerdict("pass" if inv_ok else "fail")
        for m in mats:
            try:
                if check_proximal(m):
                    prox_witness = m
                    break
            except EigenDiagnosticError:
                continue
        if prox_witness is None:
            # products may be proximal even if single draws are not
            prod = np.eye(spec.d)
            for m in mats[:64]:
                prod = m @ prod
                prod = prod / max(np.abs(prod).max(), 1e-300)
                try:
                    if check_proximal(prod):
                        prox_witness = prod
                        break
                except EigenDiagnosticError:
                    continue
        conditions["proximal"] = ConditionVerdict(
            "pass" if prox_witness is not None else "inconclusive",
            {"witness_found": prox_witness is not None})
        cov = _orbit_coverage(spec, rng, steps=max(512, reps))
        ev = {"orbit_coverage": cov, "threshold": 0.9}
        verdict = "declared" if cov >= 0.9 else "inconclusive"
        conditions["strong_irreducibility"] = ConditionVerdict(verdict, ev)
        if spec.geom_class == CLASS_IPO:
            conditions["no_invariant_cone"] = ConditionVerdict(verdict, ev)
        else:
            conditions["density"] = ConditionVerdict("declared", ev)

    if spec.branching.mode == "fixed" and not spec.ensemble.bounded_support:
        notes.append(
            "fixed-N with unbounded ensemble support: boundedness caveat, "
            "results rely on random-N-style independence of the innovations")

    # empirical moment estimates E|Q|^(b+e), E||A*||^(b+e) iota(A*)^(-e)
    s = beta_hat + eps
    q = spec.q_law.draw(rng, max(reps, 2), spec.d)
    qn = np.abs(q).sum(axis=1) if spec.norm == "l1" else np.sqrt((q * q).sum(axis=1))
    qs = qn ** s
    mats_T = np.swapaxes(spec.ensemble.draw(rng, max(reps, 2)), -1, -2)
    io = iotas(mats_T, spec.norm)
    with np.errstate(divide="ignore"):
        vals = operator_norms(mats_T, spec.norm) ** s * io ** (-eps)
    vals[io <= 0] = np.inf          # non-allowable draw: the moment diverges
    moment_estimates = {
        "s": s, "eps": eps,
        "E|Q|^s": float(qs.mean()),
        "E|Q|^s_se": float(qs.std(ddof=1) / math.sqrt(len(qs))),
        "E||A*||^s iota^-eps": float(vals.mean()),
        "E||A*||^s iota^-eps_se": float(vals.std(ddof=1) / math.sqrt(len(vals))),
    }
    return ValidationReport(conditions, pos_witness, pos_len, prox_witness,
                            na_pairs, moment_estimates, notes)
