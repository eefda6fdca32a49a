"""Quasi-Monte-Carlo estimates of regret risk, Bayes risk and sup-risk."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .decision import DecisionRuleSpec, SupportPrior
from .mvn import MvnModel, QmcBatch


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    n_draws: int

    def to_dict(self) -> dict:
        return {"risk": self.value, "std_error": self.std_error, "n_draws": self.n_draws}


def _replicate_action_means(spec: DecisionRuleSpec, batch: QmcBatch, shift: np.ndarray) -> np.ndarray:
    """Per-replicate mean action vectors at data ``x = L (z + shift)``.

    Returns an ``(n_rep, J)`` array. Works in a (J, N) layout so that all
    reductions run across rows.
    """
    b = spec.white_support
    offset = b @ shift - spec.half_sq + spec.log_pi
    logw = b @ batch.zt
    logw += offset[:, None]
    logw -= logw.max(axis=0)
    np.exp(logw, out=logw)
    # unnormalized scores: same argmax and softmax-free ordering as the posterior mean
    h = spec.prior.theta.T @ logw
    slices = batch.replicate_slices()
    j = spec.dim
    if spec.is_hard:
        pick = np.argmax(h, axis=0)
        return np.stack(
            [np.bincount(pick[sl], minlength=j) / (sl.stop - sl.start) for sl in slices]
        )
    h /= logw.sum(axis=0)
    acts = spec.actions_from_scores(h.T)
    return np.stack([acts[sl].mean(axis=0) for sl in slices])


def _risk_replicates(spec: DecisionRuleSpec, theta: np.ndarray, batch: QmcBatch, shift=None) -> np.ndarray:
    if shift is None:
        shift = spec.model.whiten(theta)
    means = _replicate_action_means(spec, batch, shift)
    return np.max(theta) - means @ theta


def _estimate(reps: np.ndarray, n: int) -> RiskEstimate:
    return RiskEstimate(
        value=float(reps.mean()),
        std_error=float(reps.std(ddof=1) / math.sqrt(len(reps))),
        n_draws=n,
    )


def pointwise_risk(spec: DecisionRuleSpec, theta, batch: QmcBatch) -> RiskEstimate:
    """Expected regret of the rule when the true mean vector is ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.dim,) or batch.dim != spec.dim:
        raise ValueError("dimension mismatch between theta, rule and batch")
    return _estimate(_risk_replicates(spec, theta, batch), batch.count)


def support_risks(spec: DecisionRuleSpec, batch: QmcBatch) -> np.ndarray:
    """Replicate risks at every support point, shape ``(J, n_rep)``."""
    th = spec.prior.theta
    return np.stack(
        [_risk_replicates(spec, th[k], batch, spec.white_support[k]) for k in range(spec.dim)]
    )


def bayes_risk(prior: SupportPrior, model: MvnModel, tau: float, batch: QmcBatch) -> RiskEstimate:
    """Bayes risk of the prior's own Bayes rule (nature's objective)."""
    spec = DecisionRuleSpec(prior, model, tau)
    reps = prior.pi @ support_risks(spec, batch)
    return _estimate(reps, batch.count)


def hard_bayes_objective(prior: SupportPrior, model: MvnModel, batch: QmcBatch) -> tuple[float, np.ndarray]:
    """Bayes risk under the hard rule plus the per-support-point risks."""
    spec = DecisionRuleSpec(prior, model)
    risks = support_risks(spec, batch).mean(axis=1)
    return float(prior.pi @ risks), risks


def sup_risk_scan(
    spec: DecisionRuleSpec,
    bound: float,
    batch: QmcBatch,
    n_starts: int = 64,
    seed: int = 0,
) -> tuple[np.ndarray, RiskEstimate]:
    """Multistart Nelder-Mead search for the worst-case mean vector.

    The rule is held fixed. Starts are the prior's support points plus a
    Latin hypercube over the noise-scale box where risk is non-negligible;
    each local search is confined to ``[-bound, bound]^J``. Returns the worst
    point found; no global guarantee.
    """
    if not bound > 0:
        raise ValueError("bound must be positive")
    j = spec.dim
    half = min(bound, 3.0 * spec.model.noise_scale)
    n_lhs = max(n_starts - j, 0)
    starts = [np.array(p) for p in spec.prior.theta[: min(j, n_starts)]]
    if n_lhs:
        lhs = qmc.LatinHypercube(d=j, seed=seed).random(n_lhs)
        starts.extend(-half + 2.0 * half * lhs)

    def neg_risk(t):
        return -float(_risk_replicates(spec, t, batch).mean())

    box = [(-bound, bound)] * j
    step = 0.25 * spec.model.noise_scale
    best_t, best_v = None, -np.inf
    for s in starts:
        s = np.clip(s, -bound, bound)
        simplex = np.vstack([s] + [np.clip(s + step * e, -bound, bound) for e in np.eye(j)])
        res = minimize(
            neg_risk,
            s,
            method="Nelder-Mead",
            bounds=box,
            options={"initial_simplex": simplex, "xatol": 1e-3, "fatol": 1e-6, "maxfev": 150 * j},
        )
        if -res.fun > best_v:
            best_v, best_t = -res.fun, np.asarray(res.x)
    return best_t, pointwise_risk(spec, best_t, batch)
