"""Property-based checks of the invariants the library promises."""

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mmrselect.decision import (
    DecisionRuleSpec,
    SupportPrior,
    bayes_scores,
    hard_rule,
    regret_loss,
    softmax_weights,
)
from mmrselect.gradient import objective_and_gradient
from mmrselect.mvn import build_model, sample_batch
from mmrselect.raster import rasterize
from mmrselect.solver import SolveReport, scale_solution

from oracles import random_prior, random_spd

seeds = st.integers(0, 2**32 - 1)
arms = st.integers(2, 4)


def random_rule(seed, j):
    rng = np.random.default_rng(seed)
    theta, pi = random_prior(rng, j)
    return DecisionRuleSpec(SupportPrior(theta, pi), build_model(random_spd(rng, j))), rng


def clear_margin(h, tol=1e-9):
    top = np.sort(h)[-2:]
    return top[1] - top[0] > tol * max(1.0, np.abs(h).max())


@given(seeds, arms, st.floats(-50, 50))
def test_hard_rule_location_invariance(seed, j, c):
    # shifting the prior and the data by the same amount leaves the choice unchanged
    spec, rng = random_rule(seed, j)
    x = rng.normal(size=j) * 2
    h = bayes_scores(spec, x)
    assume(clear_margin(h, 1e-7))
    moved = DecisionRuleSpec(spec.prior.shifted(c), spec.model)
    assert hard_rule(moved, x + c).arm == hard_rule(spec, x).arm
    np.testing.assert_allclose(bayes_scores(moved, x + c), h + c, atol=1e-9 * (1 + abs(c)))


@given(seeds, arms)
def test_scores_are_convex_combinations(seed, j):
    spec, rng = random_rule(seed, j)
    h = bayes_scores(spec, rng.normal(size=(16, j)) * 5)
    theta = spec.prior.theta
    assert np.all(h >= theta.min(axis=0) - 1e-12)
    assert np.all(h <= theta.max(axis=0) + 1e-12)


@given(seeds, st.integers(2, 6), st.floats(1e-3, 1e6))
def test_softmax_normalization(seed, j, tau):
    h = np.random.default_rng(seed).normal(size=(8, j)) * 10
    d = softmax_weights(h, tau)
    assert np.all(d >= 0)
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-12)


@given(seeds, st.integers(2, 6))
def test_regret_loss_lipschitz(seed, j):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(j))
    t, u = rng.normal(size=(2, j)) * 3
    lt, lu = regret_loss(a, t), regret_loss(a, u)
    assert lt >= 0 and lu >= 0
    assert abs(lt - lu) <= 2 * np.max(np.abs(t - u)) + 1e-12


@given(seeds, st.integers(2, 6), st.integers(10, 14))
def test_qmc_batch_determinism(seed, j, log_n):
    a = sample_batch(j, 2**log_n, seed)
    b = sample_batch(j, 2**log_n, seed)
    assert np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, sample_batch(j, 2**log_n, seed + 1).z)


@given(seeds, st.integers(2, 4), st.integers(16, 40), st.floats(0.5, 6))
def test_raster_byte_determinism(seed, j, res, half):
    spec, rng = random_rule(seed, j)
    axes = tuple(int(a) for a in rng.choice(j, size=2, replace=False))
    fixed = rng.normal(size=j)
    a = rasterize(spec, axes, fixed, -half, half, res).to_csv().encode()
    b = rasterize(spec, axes, fixed, -half, half, res).to_csv().encode()
    assert a == b


@given(seeds, st.integers(2, 3))
def test_gradient_flat_along_common_shift(seed, j):
    spec, _ = random_rule(seed, j)
    g = objective_and_gradient(spec.prior, spec.model, 30.0, sample_batch(spec.model, 2**10, 0))
    assert abs(g.d_theta.sum()) <= 1e-8 * max(1.0, np.abs(g.d_theta).max())


@given(seeds, arms, st.integers(1, 400))
def test_scaling_identity_of_the_rule(seed, j, n):
    # the rule for sigma / n at x / sqrt(n) is the rule for sigma at x
    spec, rng = random_rule(seed, j)
    report = SolveReport(
        sigma=spec.model.sigma, prior=spec.prior, value=0.0, point_risks=np.zeros(j),
        equalization_residual=0.0,
    )
    small = scale_solution(report, n).rule()
    for x in rng.normal(size=(10, j)) * 2:
        h = bayes_scores(spec, x)
        if not clear_margin(h, 1e-7):
            continue
        assert hard_rule(small, x / math.sqrt(n)).arm == hard_rule(spec, x).arm
