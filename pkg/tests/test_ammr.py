import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmrselect import ammr
from mmrselect.ammr import (
    EstimateInput,
    LfpCache,
    cache_key,
    canonical_covariance,
    select_arm,
    solve_key,
)
from mmrselect.decision import empirical_success
from mmrselect.errors import BadScaleFlag, ConfigError, NotPositiveDefinite
from mmrselect.solver import SolveConfig

from helpers import canonical_seed, disagreement_points
from oracles import CASES, SIGMA_ASYM3, random_spd

QUICK = SolveConfig(n_starts=4, n_draws=2**14, screen_draws=2**10, refine_draws=2**16, check_sup_risk=False)


class TestEstimateInput:
    @pytest.mark.parametrize("scale", [None, "", "per_obs", "unscaled"])
    def test_scale_flag_required(self, scale):
        with pytest.raises(BadScaleFlag):
            EstimateInput([0.1, 0.2], np.eye(2), n=10, scale=scale)

    @pytest.mark.parametrize("n", [0, -3, 2.5, True])
    def test_bad_n(self, n):
        with pytest.raises(ConfigError):
            EstimateInput([0.1, 0.2], np.eye(2), n=n, scale="per-obs")

    def test_theta_length(self):
        with pytest.raises(ConfigError):
            EstimateInput([0.1, 0.2, 0.3], np.eye(2), n=10, scale="per-obs")

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            EstimateInput([0.1, 0.2], [[1.0, 2.0], [2.0, 1.0]], n=10, scale="per-obs")

    def test_conventions_give_same_root_n_covariance(self):
        s = np.array(CASES[2])
        a = EstimateInput([0.1, 0.2], s, n=25, scale="per-obs")
        b = EstimateInput([0.1, 0.2], s / 25, n=25, scale="estimator")
        np.testing.assert_allclose(a.root_n_covariance, b.root_n_covariance, rtol=1e-15)


class TestCacheKey:
    def test_deterministic(self):
        assert cache_key(SIGMA_ASYM3, 2**16, 0) == cache_key(np.array(SIGMA_ASYM3), 2**16, 0)

    def test_scaled_matrix_differs(self):
        assert cache_key(SIGMA_ASYM3, 2**16, 0) != cache_key(2 * np.array(SIGMA_ASYM3), 2**16, 0)

    def test_permuted_arms_differ(self):
        s = np.array(SIGMA_ASYM3)
        p = [2, 0, 1]
        assert cache_key(s, 2**16, 0) != cache_key(s[np.ix_(p, p)], 2**16, 0)

    def test_settings_enter_the_key(self):
        keys = {cache_key(SIGMA_ASYM3, 2**16, 0), cache_key(SIGMA_ASYM3, 2**17, 0), cache_key(SIGMA_ASYM3, 2**16, 1)}
        assert len(keys) == 3

    def test_scan_settings_do_not(self):
        a = dataclasses.replace(QUICK, scan_starts=8)
        assert solve_key(np.eye(2), a) == solve_key(np.eye(2), QUICK)
        assert solve_key(np.eye(2), dataclasses.replace(QUICK, n_starts=5)) != solve_key(np.eye(2), QUICK)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_canonical_matrix_ignores_overall_scale(seed, c):
    sigma = random_spd(np.random.default_rng(seed), 3)
    a, sa = canonical_covariance(sigma)
    b, sb = canonical_covariance(c * sigma)
    assert np.array_equal(a, b)
    assert sb == pytest.approx(c * sa, rel=1e-12)
    assert np.trace(a) == pytest.approx(3.0, rel=1e-11)


class TestLfpCache:
    def test_round_trip_and_atomic_store(self, tmp_path, solved_quick):
        cache = LfpCache(tmp_path / "c")
        path = cache.store("k", solved_quick)
        assert path.exists()
        assert [p.name for p in path.parent.iterdir()] == ["k.json"]  # no temp files left
        back = cache.load("k")
        assert np.array_equal(back.prior.theta, solved_quick.prior.theta)
        assert back.value == solved_quick.value

    def test_missing_entry(self, tmp_path):
        assert LfpCache(tmp_path).load("nope") is None

    def test_corrupt_entry_ignored(self, tmp_path, caplog):
        (tmp_path / "bad.json").write_text("{not json")
        assert LfpCache(tmp_path).load("bad") is None
        assert "unreadable" in caplog.text

    def test_default_dir_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv(ammr.CACHE_ENV, str(tmp_path))
        assert ammr.default_cache_dir() == tmp_path


@pytest.fixture(scope="module")
def solved_quick():
    from mmrselect.mvn import build_model
    from mmrselect.solver import solve_lfp

    return solve_lfp(build_model(CASES[1]), QUICK)


class TestSelectTwoArms:
    def test_clear_winner(self, tmp_path):
        # [TRIVIAL] two-arm minimax regret equals empirical success
        sigma = random_spd(np.random.default_rng(11), 2)
        d = select_arm(EstimateInput([0.2, 0.1], sigma, n=100, scale="per-obs"), QUICK, tmp_path)
        assert d.arm == 1 and d.agrees_with_es
        assert d.margin > 0 and d.cache_key

    def test_second_call_uses_cache(self, tmp_path, monkeypatch):
        est = EstimateInput([0.2, 0.1], CASES[2], n=100, scale="per-obs")
        first = select_arm(est, QUICK, tmp_path)

        def boom(*args, **kwargs):
            raise AssertionError("solver called despite a cached entry")

        monkeypatch.setattr(ammr, "solve_lfp", boom)
        again = select_arm(est, QUICK, tmp_path)
        assert again.cache_key == first.cache_key
        np.testing.assert_array_equal(again.scores, first.scores)

    def test_scale_conventions_agree_exactly(self, tmp_path):
        # [TRIVIAL] per-observation covariance at n equals estimator covariance sigma / n
        sigma = np.array(CASES[2])
        theta = np.array([0.013, -0.02])
        n = 16
        a = select_arm(EstimateInput(theta, sigma, n=n, scale="per-obs"), QUICK, tmp_path)
        b = select_arm(EstimateInput(theta, sigma / n, n=1, scale="estimator"), QUICK, tmp_path)
        assert a.arm == b.arm and a.cache_key == b.cache_key
        np.testing.assert_allclose(a.scores, b.scores, rtol=1e-12, atol=1e-15)

    def test_overall_scale_shares_one_solve(self, tmp_path):
        a = select_arm(EstimateInput([0.0, 0.1], CASES[2], n=1, scale="per-obs"), QUICK, tmp_path)
        b = select_arm(EstimateInput([0.0, 0.1], 3.0 * np.array(CASES[2]), n=1, scale="per-obs"), QUICK, tmp_path)
        assert a.cache_key == b.cache_key
        assert len(list(tmp_path.glob("*.json"))) == 1

    def test_scores_in_reward_units(self, tmp_path):
        # scores are posterior means, so they scale with theta_hat and sigma together
        a = select_arm(EstimateInput([0.2, 0.1], CASES[1], n=4, scale="per-obs"), QUICK, tmp_path)
        b = select_arm(EstimateInput([0.6, 0.3], 9 * np.array(CASES[1]), n=4, scale="per-obs"), QUICK, tmp_path)
        np.testing.assert_allclose(b.scores, 3 * a.scores, rtol=1e-10)
        assert b.margin == pytest.approx(3 * a.margin, rel=1e-10)


@pytest.mark.slow
def test_asymmetric_three_arm_disagreement(solved, tmp_path):
    # [DERIVED] disagreement region located by scanning the rasterized boundary
    report = solved.get(4)
    cfg = SolveConfig()
    canonical_seed(report, SIGMA_ASYM3, cfg, tmp_path)
    points = disagreement_points(report)
    assert points, "no disagreement cell found on the (x1, x3) slice"
    x = points[len(points) // 2]
    d = select_arm(EstimateInput(x, SIGMA_ASYM3, n=1, scale="per-obs"), cfg, tmp_path)
    assert empirical_success(x) == 3
    assert d.arm != 3 and not d.agrees_with_es


@pytest.mark.slow
def test_homoskedastic_three_arms_match_es(solved, tmp_path):
    # [PAPER] boundaries are linear for an identity-proportional covariance
    report = solved.get(3)
    cfg = SolveConfig()
    canonical_seed(report, CASES[3], cfg, tmp_path)
    rng = np.random.default_rng(0)
    disagreements = 0
    for _ in range(200):
        theta = rng.normal(size=3) * 0.1
        gap = np.sort(theta)[-1] - np.sort(theta)[-2]
        if gap < 0.02:
            continue
        d = select_arm(EstimateInput(theta, 0.01 * np.eye(3), n=1, scale="estimator"), cfg, tmp_path)
        disagreements += not d.agrees_with_es
    assert disagreements == 0
