"""Command-line entry point: solve, select, boundary, risk and verify."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .ammr import CACHE_ENV, EstimateInput, LfpCache, default_cache_dir, select_arm
from .errors import ConfigError, DegenerateResult, MMRError
from .mvn import build_model, sample_batch
from .raster import DEFAULT_RANGE, DEFAULT_RESOLUTION, rasterize
from .risk import bayes_risk, pointwise_risk, sup_risk_scan
from .solver import EQUALIZATION_TOL, SolveConfig, SolveReport, equalization_certificate, solve_lfp

log = logging.getLogger("mmrselect")

EXIT_OK, EXIT_ERROR, EXIT_DEGENERATE = 0, 1, 2

# config-file field -> SolveConfig attribute
CONFIG_FIELDS = {
    "draws": "n_draws",
    "starts": "n_starts",
    "seed": "seed",
    "tau_schedule": "tau_schedule",
    "backend": "backend",
    "bound": "bound",
    "refine_draws": "refine_draws",
}


class CliError(MMRError):
    pass


# --- parsing helpers --------------------------------------------------------


def _load_json_text(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _json_or_file(value: str, what: str):
    """A path to a JSON file, or inline JSON."""
    path = Path(value)
    if path.is_file():
        return _load_json_text(path.read_text(encoding="utf-8"), str(path))
    try:
        return json.loads(value)
    except json.JSONDecodeError as exc:
        raise CliError(f"{what}: {value!r} is neither an existing file nor valid JSON") from exc


def _matrix(value, field: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CliError(f"field {field!r} must be a numeric matrix") from exc
    if m.ndim != 2:
        raise CliError(f"field {field!r} must be a square matrix (list of rows)")
    return m


def _vector(value, field: str) -> np.ndarray:
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CliError(f"field {field!r} must be a numeric vector") from exc
    if v.ndim != 1:
        raise CliError(f"field {field!r} must be a flat list of numbers")
    return v


def _tau_list(text: str):
    text = text.strip()
    if text.startswith("["):
        return _load_json_text(text, "--tau-schedule")
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CliError("--tau-schedule must be a comma-separated list of numbers") from exc


def _typed(field: str, value):
    if field in ("draws", "starts", "seed", "refine_draws"):
        if field == "refine_draws" and value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise CliError(f"field {field!r} must be an integer")
        return value
    if field == "bound":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CliError(f"field {field!r} must be a number")
        return float(value)
    if field == "tau_schedule":
        if not isinstance(value, list) or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in value
        ):
            raise CliError(f"field {field!r} must be a list of numbers")
        return tuple(float(t) for t in value)
    if field == "backend":
        if not isinstance(value, str):
            raise CliError(f"field {field!r} must be a string")
        return value
    return value


def _solve_config(fields: dict, args) -> SolveConfig:
    kwargs = {}
    for name, attr in CONFIG_FIELDS.items():
        if name in fields:
            kwargs[attr] = _typed(name, fields[name])
    overrides = {
        "n_draws": args.draws,
        "n_starts": args.starts,
        "seed": args.seed,
        "tau_schedule": None if args.tau_schedule is None else tuple(_tau_list(args.tau_schedule)),
        "backend": args.backend,
    }
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SolveConfig(**kwargs)
    except TypeError as exc:
        raise CliError(f"bad solver setting: {exc}") from exc


def _read_config(path: str) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = _load_json_text(text, str(p))
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - set(CONFIG_FIELDS) - {"sigma"})
    if unknown:
        raise CliError(f"{path}: unknown field {unknown[0]!r}")
    return cfg


def _cache_dir(args) -> Path:
    if args.cache_dir:
        return Path(args.cache_dir)
    return default_cache_dir()


def _load_report(source: str, args) -> SolveReport:
    """A report file path, or a cache key looked up in the cache directory."""
    p = Path(source)
    if p.exists():
        data = _load_json_text(p.read_text(encoding="utf-8"), str(p))
        if not isinstance(data, dict):
            raise CliError(f"{source}: report must be a JSON object")
        return SolveReport.from_dict(data)
    report = LfpCache(_cache_dir(args)).load(source)
    if report is None:
        raise CliError(f"{source!r} is neither a report file nor a cached key")
    return report


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# --- commands ---------------------------------------------------------------


def cmd_solve(args) -> int:
    fields = _read_config(args.config) if args.config else {}
    if args.sigma is not None:
        fields["sigma"] = _json_or_file(args.sigma, "--sigma")
    if "sigma" not in fields:
        raise CliError("missing required field 'sigma'")
    sigma = _matrix(fields["sigma"], "sigma")
    cfg = _solve_config(fields, args)
    model = build_model(sigma)
    try:
        report = solve_lfp(model, cfg)
    except DegenerateResult as exc:
        log.error("%s", exc)
        if exc.report is not None:
            _emit(_dump(exc.report.to_dict()), args.out)
        return EXIT_DEGENERATE
    _emit(_dump(report.to_dict()), args.out)
    return EXIT_OK


def _read_trials(path: str):
    """Long-format CSV ``arm,reward`` with 1-based arm labels."""
    obs: dict[int, list[float]] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"arm", "reward"} <= set(reader.fieldnames):
            raise CliError(f"{path}: header must contain 'arm' and 'reward'")
        for lineno, row in enumerate(reader, start=2):
            try:
                arm = int(row["arm"])
                value = float(row["reward"])
            except (TypeError, ValueError) as exc:
                raise CliError(f"{path}: line {lineno}: bad arm or reward value") from exc
            if arm < 1:
                raise CliError(f"{path}: line {lineno}: arms are numbered from 1")
            obs.setdefault(arm, []).append(value)
    if not obs:
        raise CliError(f"{path}: no observations")
    j = max(obs)
    missing = [a for a in range(1, j + 1) if a not in obs]
    if missing:
        raise CliError(f"{path}: arm {missing[0]} has no observations")
    short = [a for a in range(1, j + 1) if len(obs[a]) < 2]
    if short:
        raise CliError(f"{path}: arm {short[0]} has fewer than 2 observations")
    return [np.asarray(obs[a]) for a in range(1, j + 1)]


def estimate_from_trials(samples) -> EstimateInput:
    """Per-arm sample means with the diagonal covariance of those means."""
    means = np.array([s.mean() for s in samples])
    var_of_mean = np.array([s.var(ddof=1) / len(s) for s in samples])
    if np.any(var_of_mean <= 0):
        raise CliError("an arm has zero sample variance; its covariance is not positive definite")
    return EstimateInput(means, np.diag(var_of_mean), n=1, scale="estimator")


def cmd_select(args) -> int:
    flag_inputs = [args.theta_hat, args.sigma, args.n]
    if args.csv:
        if any(v is not None for v in flag_inputs):
            raise CliError("give either --csv or --theta-hat/--sigma/--n, not both")
        estimate = estimate_from_trials(_read_trials(args.csv))
    else:
        if args.theta_hat is None or args.sigma is None:
            raise CliError("select needs --theta-hat and --sigma (or --csv)")
        theta = _vector(_json_or_file(args.theta_hat, "--theta-hat"), "theta_hat")
        sigma = _matrix(_json_or_file(args.sigma, "--sigma"), "sigma")
        estimate = EstimateInput(theta, sigma, n=args.n if args.n is not None else 1, scale=args.scale)
    cfg = _solve_config({}, args)
    decision = select_arm(estimate, cfg, cache_dir=None if args.no_cache else _cache_dir(args))
    _emit(_dump(decision.to_dict()), args.out)
    return EXIT_OK


def _axes(text: str, dim: int) -> tuple[int, int]:
    try:
        i, j = (int(t) for t in text.split(","))
    except ValueError as exc:
        raise CliError("--axes must be two 1-based coordinate indices like 1,2") from exc
    if not (1 <= i <= dim and 1 <= j <= dim) or i == j:
        raise CliError(f"--axes must name two distinct coordinates in 1..{dim}")
    return i - 1, j - 1


def cmd_boundary(args) -> int:
    report = _load_report(args.report, args)
    dim = report.prior.dim
    axes = _axes(args.axes, dim)
    fixed = None
    if args.fixed is not None:
        fixed = _vector(_json_or_file(args.fixed, "--fixed"), "fixed")
        if fixed.shape != (dim,):
            raise CliError(f"--fixed needs {dim} values (entries on the slice axes are ignored)")
    try:
        lo, hi = (float(t) for t in args.range.split(","))
    except ValueError as exc:
        raise CliError("--range must be two numbers like -4,4") from exc
    try:
        raster = rasterize(report.rule(), axes, fixed, lo, hi, args.resolution)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _emit(raster.to_csv(), args.out)
    return EXIT_OK


def cmd_risk(args) -> int:
    report = _load_report(args.report, args)
    theta = _vector(_json_or_file(args.theta, "--theta"), "theta")
    if theta.shape != (report.prior.dim,):
        raise CliError(f"theta has {theta.size} entries but the rule has {report.prior.dim} arms")
    bound = report.settings.get("bound") or 10.0 * report.model.noise_scale
    if np.any(np.abs(theta) > bound):
        log.warning("theta lies outside the solve box [-%g, %g]^J; evaluating anyway", bound, bound)
    seed = report.seed if args.seed is None else args.seed
    batch = sample_batch(report.model, args.draws or 2**16, seed)
    est = pointwise_risk(report.rule(), theta, batch)
    _emit(_dump({"theta": theta.tolist(), **est.to_dict()}), args.out)
    return EXIT_OK


def verify_report(report: SolveReport, seed: int, draws: int = 2**16, scan_starts: int = 64) -> dict:
    """Equalization, value and sup-risk checks on a fresh batch."""
    model = report.model
    batch = sample_batch(model, draws, seed)
    spec = report.rule()
    residual = equalization_certificate(report, model, batch)
    fresh_value = bayes_risk(report.prior, model, math.inf, batch)
    bound = report.settings.get("bound") or 10.0 * model.noise_scale
    worst, sup = sup_risk_scan(spec, bound, batch, scan_starts, seed)
    checks = {
        "equalization": {
            "residual": residual,
            "tolerance": EQUALIZATION_TOL,
            "pass": residual <= EQUALIZATION_TOL,
        },
        "value": {
            "reported": report.value,
            "recomputed": fresh_value.value,
            "std_error": fresh_value.std_error,
            "tolerance": EQUALIZATION_TOL,
            "pass": abs(fresh_value.value - report.value) <= EQUALIZATION_TOL,
        },
        "sup_risk": {
            "sup_risk": sup.value,
            "theta": worst.tolist(),
            "limit": report.value + EQUALIZATION_TOL,
            "pass": sup.value <= report.value + EQUALIZATION_TOL,
        },
    }
    return {"seed": seed, "n_draws": draws, "checks": checks, "pass": all(c["pass"] for c in checks.values())}


def cmd_verify(args) -> int:
    report = _load_report(args.report, args)
    seed = args.seed if args.seed is not None else report.seed + 1
    out = verify_report(report, seed, args.draws or 2**16, args.scan_starts)
    _emit(_dump(out), args.out)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser, solver: bool = True) -> None:
    p.add_argument("--cache-dir", help=f"LFP cache directory (env {CACHE_ENV} overrides the default)")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--seed", type=int, help="QMC seed")
    p.add_argument("--draws", type=int, help="QMC draws (power of two)")
    if solver:
        p.add_argument("--starts", type=int, help="multistart count")
        p.add_argument("--tau-schedule", help="softmax temperatures, e.g. 10,40")
        p.add_argument("--backend", choices=("derivative-free", "gradient-based", "both"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmrselect", description="Minimax-regret best-arm selection under Gaussian noise.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve for the least-favorable prior")
    p.add_argument("config", nargs="?", help="JSON config file")
    p.add_argument("--sigma", help="covariance as inline JSON or a file")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("select", help="choose an arm from estimates or raw trial data")
    p.add_argument("--theta-hat", help="estimated means (inline JSON or file)")
    p.add_argument("--sigma", help="estimated covariance (inline JSON or file)")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--scale", choices=("per-obs", "estimator"), help="covariance convention of --sigma")
    p.add_argument("--csv", help="long-format CSV with columns arm,reward")
    p.add_argument("--no-cache", action="store_true", help="do not read or write the LFP cache")
    _common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("boundary", help="rasterize decision regions on a 2-D slice")
    p.add_argument("report", help="solve report JSON or cache key")
    p.add_argument("--axes", default="1,2", help="1-based slice coordinates (default 1,2)")
    p.add_argument("--fixed", help="values for all coordinates (slice axes ignored); default zeros")
    p.add_argument("--range", default=f"{DEFAULT_RANGE[0]:g},{DEFAULT_RANGE[1]:g}", help="grid range lo,hi")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION, help="cells per axis")
    p.add_argument("--cache-dir", help="LFP cache directory")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("risk", help="expected regret of a solved rule at one mean vector")
    p.add_argument("report", help="solve report JSON or cache key")
    p.add_argument("--theta", required=True, help="mean vector (inline JSON or file)")
    _common(p, solver=False)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("verify", help="re-check a solve report on a fresh QMC batch")
    p.add_argument("report", help="solve report JSON or cache key")
    p.add_argument("--scan-starts", type=int, default=64, help="starts for the sup-risk scan")
    _common(p, solver=False)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, ConfigError) as exc:
        log.error("%s", exc)
    except MMRError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
    except OSError as exc:
        log.error("%s", exc)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
