"""Analytic gradient of the softmax-smoothed Bayes risk.

With ``G_ik`` the average softmax action for arm ``i`` over draws centred at
support point ``k`` and ``R_k = theta^k_k - sum_i theta^k_i G_ik``, the
objective is ``f = sum_k pi_k R_k``. Each ``G_ik`` depends on the prior
twice: through the scores ``h`` and through the draws ``x = theta^k + L z``
themselves. Both paths are accumulated here as vector-Jacobian products so
the cost is O(N J^2) per support point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .decision import DecisionRuleSpec, SupportPrior
from .mvn import MvnModel, QmcBatch


@dataclass(frozen=True)
class ObjectiveGradient:
    f: float
    d_theta: np.ndarray
    d_pi: np.ndarray
    point_risks: np.ndarray

    def projected_norm(self) -> float:
        """Norm of the gradient on the feasible manifold.

        Removes the pinned last coordinate of the last support point and the
        simplex normal direction of ``pi``.
        """
        dt = self.d_theta.copy()
        dt[-1, -1] = 0.0
        dp = self.d_pi - self.d_pi.mean()
        return float(np.sqrt(np.sum(dt * dt) + np.sum(dp * dp)))


def objective_and_gradient(
    prior: SupportPrior, model: MvnModel, tau: float, batch: QmcBatch
) -> ObjectiveGradient:
    """Smoothed Bayes risk ``f`` and its partials in every ``theta^r_u`` and ``pi^r``.

    ``d_theta[r, u]`` is ``df / d theta^r_u`` and ``d_pi[r]`` is ``df / d pi^r``
    with the other masses held fixed. ``f`` is the quantity nature maximizes;
    minimizing callers negate it themselves.
    """
    if not np.isfinite(tau):
        raise ValueError("gradients need a finite tau")
    spec = DecisionRuleSpec(prior, model, tau)
    rate = spec.rate
    theta, pi = prior.theta, prior.pi
    j = prior.dim
    z = batch.z
    n = batch.count
    b = spec.white_support
    chol_inv_t = np.linalg.inv(model.chol).T  # J x J; maps whitened residuals to Sigma^{-1}(x - theta)

    d_theta = np.zeros((j, j))
    d_pi = np.zeros(j)
    risks = np.zeros(j)

    for k in range(j):
        wx = z + b[k]  # whitened draws
        logw = wx @ b.T - spec.half_sq + spec.log_pi
        w = softmax(logw, axis=1)  # posterior weights, N x J (index r)
        h = w @ theta  # N x J (index i)
        delta = softmax(rate * h, axis=1)
        g_mean = delta.mean(axis=0)
        risks[k] = theta[k, k] - theta[k] @ g_mean

        # explicit dependence of R_k on theta^k
        d_theta[k, k] += pi[k]
        d_theta[k] -= pi[k] * g_mean

        # adjoint of R_k w.r.t. the scores: coefficient c_i = -theta^k_i on G_ik
        c = -theta[k]
        v = rate * delta * (c[None, :] - (delta @ c)[:, None])  # N x J (index m)
        # q_r = sum_m v_m (theta^r_m - h_m)
        q = v @ theta.T - np.sum(v * h, axis=1, keepdims=True)  # N x J (index r)
        # sum_n w_r q_r Sigma^{-1}(x - theta^r), reduced before the J x J map
        wq = w * q
        wq_sum = wq.sum(axis=0)
        weighted = (wq.T @ wx - wq_sum[:, None] * b) @ chol_inv_t.T  # J(r) x J(u)
        # score path: w_r (v_u + q_r d_{r,u})
        score_theta = (w.T @ v) + weighted
        # sample-point path (only theta^k moves the draws): sum_r w_r q_r (-d_{r,u})
        sample_theta = -weighted.sum(axis=0)
        d_theta += pi[k] * score_theta / n
        d_theta[k] += pi[k] * sample_theta / n
        # pi path: dh_i/dpi^r = (w_r / pi_r)(theta^r_i - h_i)
        d_pi += pi[k] * (wq_sum / n) / pi

    d_pi += risks
    f = float(pi @ risks)
    return ObjectiveGradient(f=f, d_theta=d_theta, d_pi=d_pi, point_risks=risks)


def smoothed_objective(prior: SupportPrior, model: MvnModel, tau: float, batch: QmcBatch) -> float:
    """Value-only counterpart of :func:`objective_and_gradient`."""
    spec = DecisionRuleSpec(prior, model, tau)
    total = 0.0
    for k in range(prior.dim):
        wx = batch.z + spec.white_support[k]
        h = spec.scores_whitened(wx)
        g_mean = softmax(spec.rate * h, axis=1).mean(axis=0)
        total += prior.pi[k] * (prior.theta[k, k] - prior.theta[k] @ g_mean)
    return float(total)
