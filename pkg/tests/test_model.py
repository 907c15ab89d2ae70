"""Model sampling, geometric condition checks, and validation verdicts."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from conftest import BETA_D1, d1_lognormal_spec, d2_rotation_spec
from smoothtail.errors import SpecError
from smoothtail.model import (Branching, FiniteSupport, LognormalScalarMatrix,
                              ModelSpec, QLaw, check_allowable, check_proximal,
                              exchangeify, find_positive_product,
                              heuristic_nonarithmetic, perron_data,
                              sample_family, validate)
from smoothtail.rng import substream


def _const_spec(value=0.25, n=2):
    return ModelSpec(dimension=1, branching=Branching(mode="fixed", n=n),
                     ensemble=FiniteSupport(matrices=np.array([[[value]]]),
                                            probs=np.array([1.0])),
                     q_law=QLaw(kind="deterministic", vector=[1.0]),
                     geom_class="nonnegative-C")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_family_deterministic_ensemble():
    q, a_list, n = sample_family(_const_spec(), substream(1, "s"))
    assert n == 2
    assert q == pytest.approx([1.0])
    assert [a[0, 0] for a in a_list] == [0.25, 0.25]


def test_sample_family_lognormal_positive():
    spec = d1_lognormal_spec()
    rng = substream(2, "s")
    for _ in range(50):
        q, a_list, n = sample_family(spec, rng)
        assert n == 2
        assert all(a[0, 0] > 0 for a in a_list)


def test_sample_family_random_n_mean():
    spec = ModelSpec(dimension=1,
                     branching=Branching(mode="random", support=(1, 3),
                                         probs=(0.5, 0.5)),
                     ensemble=FiniteSupport(matrices=np.array([[[0.25]]]),
                                            probs=np.array([1.0])),
                     q_law=QLaw(kind="zero"),
                     geom_class="nonnegative-C")
    rng = substream(3, "s")
    ns = spec.branching.sample(rng, 100_000)
    se = ns.std(ddof=1) / math.sqrt(len(ns))
    assert abs(ns.mean() - 2.0) < 3 * se


def test_sampler_determinism():
    spec = d1_lognormal_spec()
    a = [sample_family(spec, substream(9, "det"))[1][0] for _ in range(1)]
    b = [sample_family(spec, substream(9, "det"))[1][0] for _ in range(1)]
    assert np.array_equal(a, b)
    draws1 = spec.ensemble.draw(substream(9, "det"), 1000)
    draws2 = spec.ensemble.draw(substream(9, "det"), 1000)
    assert np.array_equal(draws1, draws2)


# ---------------------------------------------------------------------------
# exchangeify
# ---------------------------------------------------------------------------

def test_exchangeify_preserves_multiset():
    rng = substream(4, "x")
    mats = [np.array([[float(i)]]) for i in range(5)]
    for _ in range(25):
        out, _q = exchangeify(list(mats), np.zeros(1), rng)
        assert sorted(m[0, 0] for m in out) == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_exchangeify_single_element():
    out, _ = exchangeify([np.array([[2.0]])], np.zeros(1), substream(5, "x"))
    assert out[0][0, 0] == 2.0


def test_exchangeify_uniform_permutations():
    rng = substream(6, "x")
    mats = [np.array([[0.0]]), np.array([[1.0]]), np.array([[2.0]])]
    counts = {}
    for _ in range(10_000):
        out, _ = exchangeify(list(mats), np.zeros(1), rng)
        key = tuple(int(m[0, 0]) for m in out)
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    chi = stats.chisquare(list(counts.values()))
    assert chi.pvalue > 0.01


# ---------------------------------------------------------------------------
# allowability
# ---------------------------------------------------------------------------

def test_allowable_basics():
    assert check_allowable(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert not check_allowable(np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert check_allowable(np.eye(3))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_allowable_matches_bruteforce_on_all_patterns(d):
    for bits in itertools.product([0.0, 1.0], repeat=d * d):
        m = np.array(bits).reshape(d, d)
        brute = all(m[i, :].any() for i in range(d)) and \
            all(m[:, j].any() for j in range(d))
        assert check_allowable(m) == brute


# ---------------------------------------------------------------------------
# positive products
# ---------------------------------------------------------------------------

def test_positive_product_immediate():
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(
                         matrices=np.array([[[1.0, 1.0], [1.0, 2.0]]]),
                         probs=np.array([1.0])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    witness, length = find_positive_product(spec, 50, substream(7, "p"))
    assert length == 1
    assert witness.min() > 0


def test_positive_product_permutation_only_fails():
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(
                         matrices=np.array([[[0.0, 1.0], [1.0, 0.0]]]),
                         probs=np.array([1.0])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    assert find_positive_product(spec, 500, substream(8, "p")) is None


def test_positive_product_word_length_two():
    mats = np.array([[[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(matrices=mats,
                                            probs=np.array([0.5, 0.5])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    # the two generators are triangular; any mixed word of length 2 is positive
    found = find_positive_product(spec, 2000, substream(10, "p"))
    assert found is not None
    witness, length = found
    assert witness.min() > 0
    assert length == 2


# ---------------------------------------------------------------------------
# proximality
# ---------------------------------------------------------------------------

def test_proximal_diagonal():
    assert check_proximal(np.diag([2.0, 1.0]))


def test_proximal_rotation_false():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert not check_proximal(rot)


def test_proximal_positive_matrix():
    m = np.array([[1.0, 1.0], [1.0, 2.0]])
    assert check_proximal(m)
    lam, v = perron_data(m)
    assert lam == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-12)
    assert v.min() > 0


# ---------------------------------------------------------------------------
# non-arithmeticity heuristic
# ---------------------------------------------------------------------------

def test_nonarithmetic_lattice_inconclusive():
    spec = _const_spec(value=2.0)
    out = heuristic_nonarithmetic(spec, 400, substream(11, "na"))
    assert out["verdict"] == "inconclusive"
    assert all(p["margin"] < 1e-3 for p in out["pairs"])


def test_nonarithmetic_two_scales_pass():
    mats = np.array([[[2.0]], [[3.0]]])
    spec = ModelSpec(dimension=1, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(matrices=mats,
                                            probs=np.array([0.5, 0.5])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    out = heuristic_nonarithmetic(spec, 400, substream(12, "na"))
    assert out["verdict"] == "heuristic-pass"


def test_nonarithmetic_inapplicable_without_witness():
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(
                         matrices=np.array([[[0.0, 1.0], [1.0, 0.0]]]),
                         probs=np.array([1.0])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    out = heuristic_nonarithmetic(spec, 200, substream(13, "na"))
    assert out["verdict"] == "inapplicable"


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def test_validate_d1_lognormal():
    spec = d1_lognormal_spec()
    report = validate(spec, beta_hat=BETA_D1, eps=0.1, reps=4000,
                      rng=substream(14, "v"))
    assert report.conditions["allowable"].verdict == "pass"
    assert report.conditions["positive_product"].verdict == "pass"
    assert report.conditions["nonarithmetic"].verdict == "heuristic-pass"
    assert not report.hard_fail()
    # closed form: E A^(beta + eps) = exp(-(s) + s^2/4), s = beta + 0.1
    s = BETA_D1 + 0.1
    exact = math.exp(-s + 0.25 * s * s)
    est = report.moment_estimates["E||A*||^s iota^-eps"]
    # heavy-tailed summand: just demand the right order of magnitude
    assert 0.2 * exact < est < 5 * exact
    assert report.notes  # boundedness caveat for fixed-N lognormal


def test_validate_permutation_ensemble_hard_fail():
    spec = ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                     ensemble=FiniteSupport(
                         matrices=np.array([[[0.0, 1.0], [1.0, 0.0]]]),
                         probs=np.array([1.0])),
                     q_law=QLaw(kind="zero"), geom_class="nonnegative-C")
    report = validate(spec, beta_hat=1.0, eps=0.1, reps=500,
                      rng=substream(15, "v"))
    assert report.conditions["positive_product"].verdict == "fail"
    assert report.hard_fail()


def test_validate_rotation_orbit_coverage():
    spec = d2_rotation_spec()
    report = validate(spec, beta_hat=1.0, eps=0.1, reps=2000,
                      rng=substream(16, "v"))
    cov = report.conditions["strong_irreducibility"].evidence["orbit_coverage"]
    assert cov >= 0.9
    assert report.conditions["strong_irreducibility"].verdict == "declared"
    # scaled rotations are never proximal
    assert report.conditions["proximal"].verdict == "inconclusive"


def test_validate_requires_positive_beta():
    with pytest.raises(SpecError):
        validate(d1_lognormal_spec(), beta_hat=0.0, eps=0.1, reps=10,
                 rng=substream(17, "v"))


# ---------------------------------------------------------------------------
# spec invariants
# ---------------------------------------------------------------------------

def test_class_mismatch_rejected():
    with pytest.raises(SpecError):
        ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                  ensemble=FiniteSupport(
                      matrices=np.array([[[1.0, -1.0], [0.0, 1.0]]]),
                      probs=np.array([1.0])),
                  q_law=QLaw(kind="zero"), geom_class="nonnegative-C")


def test_singular_matrix_rejected_for_invertible_class():
    with pytest.raises(SpecError):
        ModelSpec(dimension=2, branching=Branching(mode="fixed", n=2),
                  ensemble=FiniteSupport(
                      matrices=np.array([[[1.0, 0.0], [0.0, 0.0]]]),
                      probs=np.array([1.0])),
                  q_law=QLaw(kind="zero"), geom_class="invertible-ipo")


def test_branching_invariants():
    with pytest.raises(SpecError):
        Branching(mode="fixed", n=1)
    with pytest.raises(SpecError):
        Branching(mode="random", support=(0, 1), probs=(0.5, 0.5))  # mean 0.5
    with pytest.raises(SpecError):
        Branching(mode="random", support=(2, 3), probs=(0.7, 0.7))


def test_norm_tied_to_class():
    spec = d1_lognormal_spec()
    assert spec.norm == "l1"
    assert d2_rotation_spec().norm == "l2"
    with pytest.raises(SpecError):
        ModelSpec(dimension=1, branching=Branching(mode="fixed", n=2),
                  ensemble=LognormalScalarMatrix(mu=0.0, sigma2=1.0,
                                                 matrix=[[1.0]],
                                                 family="scalar_lognormal"),
                  q_law=QLaw(kind="zero"), geom_class="nonnegative-C",
                  norm="l2")
