"""Shared reference models and session-scoped pools.

The d=1 lognormal binary model has closed forms for everything the suite
checks: E A^s = exp(-s + s^2/4), m(s) = 2 E A^s, roots
alpha/beta = 2 -/+ 2 sqrt(1 - ln 2), fixed-point mean 1/(1 - 2 e^{-3/4}).
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from smoothtail.branching import sample_fixed_point_replicated
from smoothtail.model import (Branching, FiniteSupport, LognormalRotation,
                              LognormalScalarMatrix, ModelSpec, QLaw)
from smoothtail.rng import substream

SQ = math.sqrt(1.0 - math.log(2.0))
ALPHA_D1 = 2.0 - 2.0 * SQ
BETA_D1 = 2.0 + 2.0 * SQ
RHO_D1 = SQ
MEAN_D1 = 1.0 / (1.0 - 2.0 * math.exp(-0.75))
K_BETA_D1 = 0.5
LAMBDA_P = (3.0 + math.sqrt(5.0)) / 2.0
K1_D2 = math.exp(-0.875) * LAMBDA_P


def d1_lognormal_spec() -> ModelSpec:
    return ModelSpec(
        dimension=1,
        branching=Branching(mode="fixed", n=2),
        ensemble=LognormalScalarMatrix(mu=-1.0, sigma2=0.5, matrix=[[1.0]],
                                       family="scalar_lognormal"),
        q_law=QLaw(kind="deterministic", vector=[1.0]),
        geom_class="nonnegative-C")


def d2_lognormal_matrix_spec() -> ModelSpec:
    return ModelSpec(
        dimension=2,
        branching=Branching(mode="fixed", n=2),
        ensemble=LognormalScalarMatrix(mu=-1.0, sigma2=0.25,
                                       matrix=[[1.0, 1.0], [1.0, 2.0]]),
        q_law=QLaw(kind="deterministic", vector=[1.0, 1.0]),
        geom_class="nonnegative-C")


def d2_finite_pair_spec() -> ModelSpec:
    mats = np.array([[[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])
    return ModelSpec(
        dimension=2,
        branching=Branching(mode="fixed", n=2),
        ensemble=FiniteSupport(matrices=mats, probs=np.array([0.5, 0.5])),
        q_law=QLaw(kind="deterministic", vector=[1.0, 1.0]),
        geom_class="nonnegative-C")


def d2_rotation_spec() -> ModelSpec:
    return ModelSpec(
        dimension=2,
        branching=Branching(mode="fixed", n=2),
        ensemble=LognormalRotation(mu=-1.0, sigma2=0.25, d=2),
        q_law=QLaw(kind="deterministic", vector=[1.0, 0.0]),
        geom_class="invertible-ipo")


def d1_quarter_spec() -> ModelSpec:
    return ModelSpec(
        dimension=1,
        branching=Branching(mode="fixed", n=2),
        ensemble=FiniteSupport(matrices=np.array([[[0.25]]]),
                               probs=np.array([1.0])),
        q_law=QLaw(kind="deterministic", vector=[1.0]),
        geom_class="nonnegative-C")


def random13_spec() -> ModelSpec:
    # random N in {1, 3} with mean 2, and every node keeps its 1-child
    return ModelSpec(
        dimension=1,
        branching=Branching(mode="random", support=(1, 3), probs=(0.5, 0.5)),
        ensemble=FiniteSupport(matrices=np.array([[[0.25]]]),
                               probs=np.array([1.0])),
        q_law=QLaw(kind="deterministic", vector=[1.0]),
        geom_class="nonnegative-C")


@pytest.fixture(scope="session")
def d1_model():
    return d1_lognormal_spec()


@pytest.fixture(scope="session")
def d2_matrix_model():
    return d2_lognormal_matrix_spec()


@pytest.fixture(scope="session")
def d2_pair_model():
    return d2_finite_pair_spec()


@pytest.fixture(scope="session")
def d2_rotation_model():
    return d2_rotation_spec()


@pytest.fixture(scope="session")
def d1_pool():
    """Converged d=1 pool (2e5 samples, 8 replicates), reused across modules."""
    spec = d1_lognormal_spec()
    rngs = [substream(7100, "pool", i) for i in range(8)]
    return sample_fixed_point_replicated(spec, 60, 200_000,
                                         np.array([MEAN_D1]), rngs)
