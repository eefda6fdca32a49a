"""Least-favorable prior search: maximize nature's Bayes risk.

The prior is parameterized so every candidate is feasible by construction:

* ``pi = softmax(logits, 0)`` with the last logit anchored at zero;
* support point ``k`` has top coordinate ``c_k`` (``c_J = 0`` pins the
  location) and the other coordinates sit ``softplus(g) (+ floor for j < k)``
  below it, so arm ``k`` is best at its own support point and ties resolve
  toward the smallest index.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

from .decision import DecisionRuleSpec, SupportPrior
from .errors import BadCount, ConfigError, DegenerateResult, SolveFailed
from .gradient import objective_and_gradient
from .mvn import DEFAULT_DRAWS, MvnModel, QmcBatch, build_model, check_count, sample_batch
from .risk import hard_bayes_objective, support_risks, sup_risk_scan

log = logging.getLogger(__name__)

GAP_FLOOR = 1e-6
EQUALIZATION_TOL = 0.01
BACKENDS = ("derivative-free", "gradient-based", "both")


@dataclass
class SolveConfig:
    n_starts: int = 32
    n_draws: int = DEFAULT_DRAWS
    tau_schedule: tuple = (10.0, 40.0)  # per noise unit
    backend: str = "both"
    bound: float | None = None  # None -> 10 * largest marginal sd
    seed: int = 0
    tol_obj: float = 1e-5
    screen_draws: int = 2**12
    n_polish: int = 3
    max_restarts: int = 6
    refine_draws: int | None = 2**20
    scan_starts: int = 64
    check_sup_risk: bool = True

    def __post_init__(self):
        self.tau_schedule = tuple(float(t) for t in self.tau_schedule)
        if self.n_starts < 1:
            raise ConfigError("n_starts must be >= 1")
        for name in ("n_draws", "screen_draws") + (("refine_draws",) if self.refine_draws else ()):
            try:
                check_count(getattr(self, name))
            except BadCount as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        if self.bound is not None and not self.bound > 0:
            raise ConfigError("bound must be positive")
        if not self.tau_schedule or any(t <= 0 for t in self.tau_schedule):
            raise ConfigError("tau_schedule must be a nonempty list of positive values")
        if list(self.tau_schedule) != sorted(self.tau_schedule):
            raise ConfigError("tau_schedule must be ascending")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")

    def bound_for(self, model: MvnModel) -> float:
        return self.bound if self.bound is not None else 10.0 * model.noise_scale

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau_schedule"] = list(self.tau_schedule)
        return d


@dataclass
class SolveReport:
    sigma: np.ndarray
    prior: SupportPrior
    value: float
    point_risks: np.ndarray
    equalization_residual: float
    sup_risk_check: float | None = None
    sup_risk_theta: np.ndarray | None = None
    trace: list = field(default_factory=list)
    wall_time: float = 0.0
    settings: dict = field(default_factory=dict)

    @property
    def model(self) -> MvnModel:
        return build_model(self.sigma)

    @property
    def seed(self) -> int:
        return int(self.settings.get("seed", 0))

    def rule(self, tau: float = math.inf) -> DecisionRuleSpec:
        return DecisionRuleSpec(self.prior, self.model, tau)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "value": self.value,
            "pi": self.prior.pi.tolist(),
            "theta": self.prior.theta.tolist(),
            "point_risks": [float(r) for r in self.point_risks],
            "equalization_residual": self.equalization_residual,
            "sup_risk_check": self.sup_risk_check,
            "sup_risk_theta": None if self.sup_risk_theta is None else self.sup_risk_theta.tolist(),
            "diagonal_distances": self.prior.diagonal_distances().tolist(),
            "wall_time": self.wall_time,
            "settings": self.settings,
            "seed": self.seed,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        try:
            sigma = np.array(d["sigma"], dtype=float)
            prior = SupportPrior(np.array(d["theta"], dtype=float), np.array(d["pi"], dtype=float))
            theta_worst = d.get("sup_risk_theta")
            return cls(
                sigma=sigma,
                prior=prior,
                value=float(d["value"]),
                point_risks=np.array(d["point_risks"], dtype=float),
                equalization_residual=float(d["equalization_residual"]),
                sup_risk_check=d.get("sup_risk_check"),
                sup_risk_theta=None if theta_worst is None else np.array(theta_worst, dtype=float),
                trace=d.get("trace", []),
                wall_time=float(d.get("wall_time", 0.0)),
                settings=d.get("settings", {}),
            )
        except KeyError as exc:
            raise ConfigError(f"report is missing field {exc.args[0]!r}") from exc


# --- parameterization -------------------------------------------------------


def _softplus(v):
    return np.logaddexp(0.0, v)


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def n_free(j: int) -> int:
    return (j - 1) + (j - 1) + j * (j - 1)


def _off_diagonal_mask(j: int) -> np.ndarray:
    return ~np.eye(j, dtype=bool)


def unpack(v: np.ndarray, j: int) -> SupportPrior:
    logits = np.append(v[: j - 1], 0.0)
    tops = np.append(v[j - 1 : 2 * (j - 1)], 0.0)
    gvars = v[2 * (j - 1) :]
    gaps = np.zeros((j, j))
    gaps[_off_diagonal_mask(j)] = _softplus(gvars)
    gaps += GAP_FLOOR * np.tril(np.ones((j, j)), -1)  # strict for j < k
    theta = tops[:, None] - gaps
    return SupportPrior(theta, softmax(logits))


def pack(prior: SupportPrior) -> np.ndarray:
    """Inverse of :func:`unpack` for a prior normalized so that ``theta[J, J] = 0``."""
    j = prior.dim
    th = prior.normalized().theta
    logits = np.log(prior.pi) - np.log(prior.pi[-1])
    tops = np.diag(th)
    gaps = tops[:, None] - th - GAP_FLOOR * np.tril(np.ones((j, j)), -1)
    gvars = _softplus_inv(np.maximum(gaps[_off_diagonal_mask(j)], 1e-12))
    return np.concatenate([logits[:-1], tops[:-1], gvars])


def free_gradient(v: np.ndarray, j: int, d_theta: np.ndarray, d_pi: np.ndarray) -> np.ndarray:
    """Chain ``(df/dtheta, df/dpi)`` through :func:`unpack`."""
    pi = softmax(np.append(v[: j - 1], 0.0))
    d_logits = pi * (d_pi - pi @ d_pi)
    d_tops = d_theta.sum(axis=1)
    d_g = -d_theta[_off_diagonal_mask(j)] * expit(v[2 * (j - 1) :])
    return np.concatenate([d_logits[:-1], d_tops[:-1], d_g])


def free_bounds(j: int, bound: float) -> list[tuple[float, float]]:
    """Box on the free vector that keeps every coordinate inside ``[-bound, bound]``."""
    half = 0.5 * bound
    gmax = float(_softplus_inv(half - GAP_FLOOR))
    return [(-20.0, 20.0)] * (j - 1) + [(-half, half)] * (j - 1) + [(None, gmax)] * (j * (j - 1))


def random_start(j: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Start with each support point's top near 0 and the rest 0.3-2.5 noise units below."""
    logits = rng.normal(0.0, 0.1, j - 1)
    tops = rng.uniform(-0.1, 0.1, j - 1) * scale
    gaps = rng.uniform(0.3, 2.5, j * (j - 1)) * scale
    return np.concatenate([logits, tops, _softplus_inv(gaps)])


# --- backends -------------------------------------------------------------


def _initial_simplex(v: np.ndarray, j: int, scale: float) -> np.ndarray:
    steps = np.concatenate(
        [np.full(j - 1, 0.3), np.full(j - 1, 0.2 * scale), np.full(j * (j - 1), 0.3)]
    )
    return np.vstack([v] + [v + steps[i] * e for i, e in enumerate(np.eye(len(v)))])


def _nelder_mead(v0, j, model, batch, scale, bounds, maxfev, xatol):
    def neg(v):
        return -hard_bayes_objective(unpack(v, j), model, batch)[0]

    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    simplex = np.clip(_initial_simplex(v0, j, scale), lo, hi)
    res = minimize(
        neg,
        np.clip(v0, lo, hi),
        method="Nelder-Mead",
        bounds=bounds,
        options={"initial_simplex": simplex, "maxfev": maxfev, "xatol": xatol, "fatol": 1e-7, "adaptive": True},
    )
    return np.asarray(res.x), -float(res.fun), int(res.nfev)


def _polish_derivative_free(v0, j, model, batch, scale, bounds, cfg):
    """Restarted Nelder-Mead until a restart improves by less than ``tol_obj``."""
    v, best = v0, -np.inf
    history = []
    stable = False
    for _ in range(cfg.max_restarts):
        v, val, _ = _nelder_mead(v, j, model, batch, scale, bounds, 300 * len(v), 1e-4)
        history.append(val)
        if val - best < cfg.tol_obj:
            stable = True
            best = max(best, val)
            break
        best = val
    return v, best, history, stable


def _lbfgs(v0, j, model, batch, bounds, tau):
    def fun(x):
        g = objective_and_gradient(unpack(x, j), model, tau, batch)
        return -g.f, -free_gradient(x, j, g.d_theta, g.d_pi)

    res = minimize(fun, v0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-7})
    return np.asarray(res.x), -float(res.fun), bool(res.success)


def _gradient_based(v0, j, model, batch, bounds, cfg):
    """L-BFGS-B on the softmax objective along the temperature schedule."""
    v = v0
    history = []
    for tau in cfg.tau_schedule:
        v, f, _ = _lbfgs(v, j, model, batch, bounds, tau)
        history.append(f)
    hard = hard_bayes_objective(unpack(v, j), model, batch)[0]
    return v, hard, history


# --- public API ------------------------------------------------------------


def solve_lfp(model: MvnModel, config: SolveConfig | None = None) -> SolveReport:
    """Find the least-favorable prior and the value of the selection game.

    Stages: every start is screened by Nelder-Mead on a small batch; the best
    ``n_polish`` are polished on the main batch by the chosen backend(s); the
    winner (largest hard-rule Bayes risk, ties to the lower start index) is
    refined by L-BFGS at the last temperature on ``refine_draws`` points.
    Value and point risks come from the hard rule on the final batch.

    Raises
    ------
    SolveFailed
        No polished start reached a stable objective.
    DegenerateResult
        Risks at the support points differ from the value by more than ten
        times the equalization tolerance; the report is attached.
    """
    cfg = config or SolveConfig()
    t0 = time.perf_counter()
    j = model.dim
    scale = model.noise_scale
    bound = cfg.bound_for(model)
    bounds = free_bounds(j, bound)
    rng = np.random.default_rng(cfg.seed)
    batch = sample_batch(model, cfg.n_draws, cfg.seed)
    screen = sample_batch(model, min(cfg.screen_draws, cfg.n_draws), cfg.seed + 1)
    trace = []

    starts = [random_start(j, scale, rng) for _ in range(cfg.n_starts)]
    screened = []
    for i, v0 in enumerate(starts):
        v, val, nfev = _nelder_mead(v0, j, model, screen, scale, bounds, 150 * len(v0), 1e-3)
        screened.append((val, i, v))
        trace.append({"start": i, "stage": "screen", "objective": val, "nfev": nfev})
    screened.sort(key=lambda t: (-t[0], t[1]))
    finalists = screened[: max(1, min(cfg.n_polish, len(screened)))]

    candidates = []
    if cfg.backend in ("derivative-free", "both"):
        for _, i, v in finalists:
            vp, val, hist, stable = _polish_derivative_free(v, j, model, batch, scale, bounds, cfg)
            trace.append({"start": i, "stage": "derivative-free", "history": hist, "stable": stable})
            candidates.append((val, i, vp, stable, "derivative-free"))
    if cfg.backend in ("gradient-based", "both"):
        for _, i, v in finalists:
            vp, val, hist = _gradient_based(v, j, model, batch, bounds, cfg)
            trace.append({"start": i, "stage": "gradient-based", "smoothed": hist, "objective": val})
            candidates.append((val, i, vp, True, "gradient-based"))

    stable = [c for c in candidates if c[3]]
    if not stable:
        raise SolveFailed("no start reached a stable objective; raise max_restarts or n_starts")
    val, idx, v, _, which = max(stable, key=lambda c: (c[0], -c[1]))

    final_batch = batch
    if cfg.refine_draws:
        # The hard objective is nearly flat along directions that tilt the
        # far-field boundaries, so a value-based search leaves them at the
        # QMC noise level. A first-order polish on a larger batch pins them.
        final_batch = sample_batch(model, cfg.refine_draws, cfg.seed)
        v, f, ok = _lbfgs(v, j, model, final_batch, bounds, cfg.tau_schedule[-1])
        trace.append({"start": idx, "stage": "refine", "smoothed": f, "converged": ok})

    prior = unpack(v, j)
    value, risks = hard_bayes_objective(prior, model, final_batch)
    report = SolveReport(
        sigma=np.array(model.sigma),
        prior=prior,
        value=value,
        point_risks=risks,
        equalization_residual=float(np.max(np.abs(risks - value))),
        trace=trace,
        settings={**cfg.to_dict(), "bound": bound, "chosen_backend": which, "chosen_start": idx},
    )
    if cfg.check_sup_risk:
        worst, est = sup_risk_scan(report.rule(), bound, batch, cfg.scan_starts, cfg.seed)
        report.sup_risk_check = est.value
        report.sup_risk_theta = worst
    report.wall_time = time.perf_counter() - t0
    log.info("solved J=%d: V=%.4f residual=%.4f in %.1fs", j, value, report.equalization_residual, report.wall_time)
    if report.equalization_residual > 10 * EQUALIZATION_TOL:
        raise DegenerateResult(
            f"equalization residual {report.equalization_residual:.4f} exceeds {10 * EQUALIZATION_TOL}",
            report,
        )
    return report


def equalization_certificate(report: SolveReport, model: MvnModel, batch: QmcBatch) -> float:
    """Max gap between support-point risks and the reported value on ``batch``.

    Pass a batch with a seed different from the one used to solve.
    """
    spec = DecisionRuleSpec(report.prior, model)
    risks = support_risks(spec, batch).mean(axis=1)
    return float(np.max(np.abs(risks - report.value)))


def scale_solution(report: SolveReport, n: int) -> SolveReport:
    """Least-favorable prior for covariance ``sigma / n`` without re-solving.

    Support points and all risk quantities shrink by ``sqrt(n)``; prior
    masses are unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return replace(report)
    c = 1.0 / math.sqrt(n)
    return replace(
        report,
        sigma=report.sigma / n,
        prior=report.prior.scaled(c),
        value=report.value * c,
        point_risks=report.point_risks * c,
        equalization_residual=report.equalization_residual * c,
        sup_risk_check=None if report.sup_risk_check is None else report.sup_risk_check * c,
        sup_risk_theta=None if report.sup_risk_theta is None else report.sup_risk_theta * c,
        settings={**report.settings, "scaled_by_n": n * report.settings.get("scaled_by_n", 1)},
    )
