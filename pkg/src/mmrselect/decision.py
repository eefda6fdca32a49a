"""Regret loss, Bayes scores and the hard / softmax selection rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .errors import InvalidPrior
from .mvn import MvnModel

PI_SUM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SupportPrior:
    """Nature's discrete prior: one support point per arm region.

    Row ``k`` of ``theta`` is the support point in the region where arm ``k``
    is best (ties resolved toward the smallest index).
    """

    theta: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        pi = np.array(self.pi, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise InvalidPrior(f"theta must be J x J, got shape {theta.shape}")
        if pi.shape != (theta.shape[0],):
            raise InvalidPrior("pi must have one entry per support point")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(pi))):
            raise InvalidPrior("prior has non-finite entries")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > PI_SUM_TOL:
            raise InvalidPrior("pi must be strictly positive and sum to one")
        for k, row in enumerate(theta):
            if np.any(row[:k] >= row[k]) or np.any(row[k + 1 :] > row[k]):
                raise InvalidPrior(f"support point {k + 1} is not in arm {k + 1}'s region")
        theta.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "pi", pi)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def check_bound(self, bound: float) -> None:
        if np.any(np.abs(self.theta) > bound):
            raise InvalidPrior(f"support point coordinates exceed the bound {bound}")

    def shifted(self, t: float) -> "SupportPrior":
        return SupportPrior(self.theta + t, self.pi)

    def scaled(self, c: float) -> "SupportPrior":
        return SupportPrior(self.theta * c, self.pi)

    def diagonal_distances(self) -> np.ndarray:
        """Euclidean distance of each support point from the line ``t * 1``."""
        centered = self.theta - self.theta.mean(axis=1, keepdims=True)
        return np.linalg.norm(centered, axis=1)

    def normalized(self) -> "SupportPrior":
        """Shift so that the last coordinate of the last support point is zero."""
        return self.shifted(-self.theta[-1, -1])


@dataclass(frozen=True, eq=False)
class DecisionRuleSpec:
    """A Bayes rule induced by ``prior`` under Gaussian noise ``model``.

    ``tau = inf`` gives the deterministic argmax rule; a finite ``tau`` gives
    the softmax relaxation over posterior-mean scores. ``tau`` is measured per
    noise unit: scores are divided by the model's largest marginal standard
    deviation before the softmax, so rescaling the covariance leaves the
    relaxation's sharpness unchanged.
    """

    prior: SupportPrior
    model: MvnModel
    tau: float = math.inf
    log_pi: np.ndarray = field(init=False, repr=False)
    white_support: np.ndarray = field(init=False, repr=False)
    half_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.prior.dim != self.model.dim:
            raise ValueError("prior and model dimensions differ")
        b = self.model.whiten(self.prior.theta)
        object.__setattr__(self, "log_pi", np.log(self.prior.pi))
        object.__setattr__(self, "white_support", b)
        object.__setattr__(self, "half_sq", 0.5 * np.sum(b * b, axis=1))

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def rate(self) -> float:
        """Softmax inverse temperature in reward units."""
        return self.tau / self.model.noise_scale

    @property
    def is_hard(self) -> bool:
        return math.isinf(self.tau)

    def posterior_weights(self, white_x: np.ndarray) -> np.ndarray:
        """Posterior probabilities of each support point given whitened data."""
        logw = white_x @ self.white_support.T - self.half_sq + self.log_pi
        return softmax(logw, axis=-1)

    def scores_whitened(self, white_x: np.ndarray) -> np.ndarray:
        return self.posterior_weights(white_x) @ self.prior.theta

    def scores(self, x) -> np.ndarray:
        return self.scores_whitened(self.model.whiten(np.asarray(x, dtype=float)))

    def actions_from_scores(self, h: np.ndarray) -> np.ndarray:
        """Action probabilities (rows on the simplex) from score rows."""
        if self.is_hard:
            out = np.zeros_like(h)
            np.put_along_axis(out, np.argmax(h, axis=-1)[..., None], 1.0, axis=-1)
            return out
        return softmax_weights(h, self.rate)


@dataclass
class SelectionDecision:
    """Chosen arm (1-based) with the scores that justify it."""

    arm: int
    scores: np.ndarray
    margin: float
    empirical_success_arm: int | None = None
    agrees_with_es: bool | None = None
    cache_key: str | None = None

    def to_dict(self) -> dict:
        out = {"arm": self.arm, "scores": [float(v) for v in self.scores], "margin": self.margin}
        if self.empirical_success_arm is not None:
            out["empirical_success_arm"] = self.empirical_success_arm
            out["agrees_with_es"] = self.agrees_with_es
        if self.cache_key is not None:
            out["cache_key"] = self.cache_key
        return out


def regret_loss(action, theta) -> float:
    """Best mean minus the action-weighted mean."""
    theta = np.asarray(theta, dtype=float)
    action = np.asarray(action, dtype=float)
    return float(np.max(theta) - theta @ action)


def bayes_scores(spec: DecisionRuleSpec, x) -> np.ndarray:
    """Prior-weighted payoff scores ``sum_k pi_k p_k(x) theta^k_i``.

    Returned divided by the mixture density ``sum_k pi_k p_k(x)``, i.e. as the
    posterior mean of each arm's reward. The common positive factor leaves
    the argmax and every pairwise sign unchanged, and keeps the values in
    reward units far into the tails where raw densities underflow.
    """
    return spec.scores(x)


def hard_rule(spec: DecisionRuleSpec, x) -> SelectionDecision:
    h = bayes_scores(spec, x)
    i = int(np.argmax(h))
    others = np.delete(h, i)
    return SelectionDecision(arm=i + 1, scores=h, margin=float(h[i] - np.max(others)))


def softmax_weights(h, tau: float) -> np.ndarray:
    return softmax(tau * np.asarray(h, dtype=float), axis=-1)


def softmax_rule(spec: DecisionRuleSpec, x) -> np.ndarray:
    if spec.is_hard:
        raise ValueError("softmax_rule needs a finite tau")
    return softmax_weights(bayes_scores(spec, x), spec.rate)


def softmax_jacobian(delta: np.ndarray, tau: float) -> np.ndarray:
    """``d delta_i / d h_m = tau * delta_i * (1{i=m} - delta_m)``."""
    delta = np.asarray(delta, dtype=float)
    return tau * (np.diag(delta) - np.outer(delta, delta))


def empirical_success(x) -> int:
    """Pick-the-winner arm (1-based, smallest index on ties)."""
    return int(np.argmax(np.asarray(x, dtype=float))) + 1
