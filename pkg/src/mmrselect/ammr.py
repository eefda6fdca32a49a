"""Asymptotic minimax-regret selection from estimated means and covariance.

The estimated means are treated as one Gaussian draw: ``sqrt(n) * theta_hat``
is approximately ``N(sqrt(n) * theta, S)`` where ``S`` is the covariance of
the root-n scaled estimator. The least-favorable prior is solved for ``S``
(or loaded from an on-disk cache) and its hard Bayes rule is evaluated at
the scaled estimate.

To make repeated covariances cheap and the two covariance conventions agree
exactly, every solve happens at the trace-normalized matrix
``C = S / s`` with ``s = trace(S) / J``, and the rule is evaluated at
``sqrt(n) * theta_hat / sqrt(s)``. This is exact by the value and support
scaling of the Gaussian problem.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .decision import DecisionRuleSpec, SelectionDecision, bayes_scores, empirical_success
from .errors import BadScaleFlag, ConfigError, MMRError
from .mvn import build_model
from .solver import SolveConfig, SolveReport, solve_lfp

log = logging.getLogger(__name__)

SCALE_FLAGS = ("per-obs", "estimator")
CANONICAL_DIGITS = 12
CACHE_ENV = "MMRSELECT_CACHE_DIR"


@dataclass(frozen=True, eq=False)
class EstimateInput:
    """Estimated mean rewards, their covariance and the sample size.

    Parameters
    ----------
    theta_hat : array_like, shape (J,)
        Estimated mean reward of each arm.
    sigma_hat : array_like, shape (J, J)
        With ``scale="per-obs"``, the covariance of ``sqrt(n) * (theta_hat - theta)``
        (per-observation scale). With ``scale="estimator"``, the covariance of
        ``theta_hat`` itself.
    n : int
        Sample size used for the root-n scaling.
    scale : {"per-obs", "estimator"}
        Which convention ``sigma_hat`` follows. There is no default because a
        silent mix-up changes the decision scale by ``sqrt(n)``.
    """

    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int
    scale: str | None = None

    def __post_init__(self):
        if self.scale not in SCALE_FLAGS:
            raise BadScaleFlag(f"scale must be one of {SCALE_FLAGS}, got {self.scale!r}")
        theta = np.array(self.theta_hat, dtype=float)
        sigma = np.array(self.sigma_hat, dtype=float)
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        build_model(sigma)  # validates shape, symmetry and definiteness
        if theta.shape != (sigma.shape[0],) or not np.all(np.isfinite(theta)):
            raise ConfigError("theta_hat must be a finite vector with one entry per arm")
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "sigma_hat", sigma)
        object.__setattr__(self, "n", int(self.n))

    @property
    def root_n_covariance(self) -> np.ndarray:
        """Covariance of ``sqrt(n) * theta_hat``."""
        if self.scale == "per-obs":
            return self.sigma_hat
        return self.n * self.sigma_hat

    @property
    def scaled_point(self) -> np.ndarray:
        return math.sqrt(self.n) * self.theta_hat


def canonical_covariance(sigma) -> tuple[np.ndarray, float]:
    """Trace-normalized covariance (rounded to 12 significant digits) and its scale."""
    sigma = np.asarray(sigma, dtype=float)
    s = float(np.trace(sigma)) / sigma.shape[0]
    canon = np.array([[float(f"{v:.{CANONICAL_DIGITS}g}") for v in row] for row in sigma / s])
    return 0.5 * (canon + canon.T), s


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def cache_key(sigma, n_draws: int, seed: int, settings: dict | None = None) -> str:
    """Content hash of a covariance matrix plus the settings that shape a solve.

    The matrix is hashed exactly as given (17 significant digits), so scaled
    or permuted matrices get different keys.
    """
    sigma = np.asarray(sigma, dtype=float)
    payload = {
        "sigma": [[format(float(v), ".17g") for v in row] for row in sigma],
        "n_draws": int(n_draws),
        "seed": int(seed),
    }
    if settings:
        payload["settings"] = settings
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def solve_key(sigma, config: SolveConfig) -> str:
    """Cache key for solving ``sigma`` under ``config``.

    Diagnostic-only settings (the sup-risk scan) do not change the prior and
    are left out.
    """
    d = config.to_dict()
    for name in ("n_draws", "seed", "check_sup_risk", "scan_starts"):
        d.pop(name)
    return cache_key(sigma, config.n_draws, config.seed, d)


class LfpCache:
    """One JSON report per key; writes go through a temp file and ``os.replace``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def load(self, key: str) -> SolveReport | None:
        p = self.path(key)
        if not p.exists():
            return None
        try:
            with open(p, encoding="utf-8") as fh:
                return SolveReport.from_dict(json.load(fh))
        except (OSError, ValueError, MMRError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", p, exc)
            return None

    def store(self, key: str, report: SolveReport) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        target = self.path(key)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{key}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target


def solve_canonical(sigma_canon, config: SolveConfig, cache_dir=None) -> tuple[SolveReport, str]:
    """Solve (or load) the least-favorable prior for an already canonical matrix."""
    key = solve_key(sigma_canon, config)
    cache = LfpCache(cache_dir) if cache_dir is not None else None
    report = cache.load(key) if cache else None
    if report is None:
        report = solve_lfp(build_model(sigma_canon), config)
        if cache:
            cache.store(key, report)
    return report, key


def select_arm(
    estimate: EstimateInput, config: SolveConfig | None = None, cache_dir=None
) -> SelectionDecision:
    """Minimax-regret arm choice at the plug-in estimate.

    Scores and margin are posterior-mean rewards under the least-favorable
    prior rescaled to the estimator's covariance, so they are in the same
    units as ``theta_hat``. Solver errors propagate unchanged.
    """
    cfg = config or SolveConfig()
    canon, s = canonical_covariance(estimate.root_n_covariance)
    if cfg.bound is not None:
        cfg = replace(cfg, bound=cfg.bound / math.sqrt(s))
    report, key = solve_canonical(canon, cfg, cache_dir)
    spec = DecisionRuleSpec(report.prior, report.model)
    point = estimate.scaled_point / math.sqrt(s)
    h = bayes_scores(spec, point)
    i = int(np.argmax(h))
    unit = math.sqrt(s / estimate.n)
    scores = h * unit
    es = empirical_success(estimate.theta_hat)
    return SelectionDecision(
        arm=i + 1,
        scores=scores,
        margin=float(unit * (h[i] - np.max(np.delete(h, i)))),
        empirical_success_arm=es,
        agrees_with_es=(i + 1 == es),
        cache_key=key,
    )


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "mmrselect"
