"""Multivariate-normal density and scrambled-Sobol Gaussian draws.

Every risk evaluation in the package reuses a single block of standard-normal
quasi-random points ``z`` and maps them through ``x = theta + L z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import BadCount, DimensionTooSmall, NotPositiveDefinite, NotSymmetric

SYMMETRY_RTOL = 1e-12
MAX_QMC_DIM = 32
MIN_COUNT = 2**10
MAX_COUNT = 2**22
DEFAULT_DRAWS = 2**16
N_REPLICATES = 8


@dataclass(frozen=True, eq=False)
class MvnModel:
    """Gaussian reward noise with known positive-definite covariance."""

    sigma: np.ndarray
    chol: np.ndarray
    log_norm_const: float

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def noise_scale(self) -> float:
        """Largest marginal standard deviation."""
        return float(np.sqrt(np.max(np.diag(self.sigma))))

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} v`` for vectors stored along the last axis."""
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.dim).T
        out = solve_triangular(self.chol, flat, lower=True)
        return out.T.reshape(v.shape)

    def precision_times(self, v: np.ndarray) -> np.ndarray:
        """Return ``Sigma^{-1} v`` (last axis) via two triangular solves."""
        w = self.whiten(v)
        flat = w.reshape(-1, self.dim).T
        out = solve_triangular(self.chol.T, flat, lower=False)
        return out.T.reshape(w.shape)

    def scaled(self, factor: float) -> "MvnModel":
        """Model with covariance ``factor * sigma``."""
        return build_model(self.sigma * factor)


def build_model(sigma) -> MvnModel:
    """Validate a covariance matrix and cache its Cholesky factor.

    Raises
    ------
    DimensionTooSmall
        If the matrix is not square or has fewer than two arms.
    NotSymmetric
        If ``sigma`` differs from its transpose beyond a 1e-12 relative tolerance.
    NotPositiveDefinite
        If the Cholesky factorization fails.
    """
    s = np.array(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionTooSmall(f"covariance must be a square matrix, got shape {s.shape}")
    if s.shape[0] < 2:
        raise DimensionTooSmall("at least two arms are required")
    if not np.all(np.isfinite(s)):
        raise NotPositiveDefinite("covariance has non-finite entries")
    scale = max(np.max(np.abs(s)), np.finfo(float).tiny)
    if np.max(np.abs(s - s.T)) > SYMMETRY_RTOL * scale:
        raise NotSymmetric("covariance matrix is not symmetric")
    s = 0.5 * (s + s.T)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from exc
    diag = np.diag(chol)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefinite("covariance matrix is not positive definite")
    j = s.shape[0]
    log_det = 2.0 * float(np.sum(np.log(diag)))
    log_norm_const = -0.5 * j * math.log(2.0 * math.pi) - 0.5 * log_det
    s.setflags(write=False)
    chol.setflags(write=False)
    return MvnModel(sigma=s, chol=chol, log_norm_const=log_norm_const)


def log_density(model: MvnModel, x, theta) -> np.ndarray | float:
    """Log of the N(theta, Sigma) density at ``x`` (broadcast over leading axes)."""
    diff = np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)
    w = model.whiten(diff)
    out = model.log_norm_const - 0.5 * np.sum(w * w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def norm_ppf(u):
    """Standard-normal quantile function."""
    return ndtri(u)


# --- scrambled Sobol -------------------------------------------------------

_REV8 = np.array([int(f"{i:08b}"[::-1], 2) for i in range(256)], dtype=np.uint32)


def _reverse_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint32)
    return (
        (_REV8[v & 0xFF] << 24)
        | (_REV8[(v >> 8) & 0xFF] << 16)
        | (_REV8[(v >> 16) & 0xFF] << 8)
        | _REV8[(v >> 24) & 0xFF]
    ).astype(np.uint32)


def _lk_permute(v: np.ndarray, key: np.uint32) -> np.ndarray:
    # Laine-Karras style hash: each bit only depends on lower bits, so after
    # bit reversal this is a nested (Owen) permutation of the binary digits.
    v = (v + key).astype(np.uint32)
    v ^= v * np.uint32(0x6C50B47C)
    v ^= v * np.uint32(0xB82F1E52)
    v ^= v * np.uint32(0xC7AFE638)
    v ^= v * np.uint32(0x8D22F6E6)
    return v


def owen_scramble(points: np.ndarray, seed: int) -> np.ndarray:
    """Hash-based nested uniform scrambling of 32-bit digital-net points.

    ``points`` is an ``(n, d)`` uint32 array; each column gets its own key
    drawn from ``SeedSequence(seed)``.
    """
    keys = np.random.SeedSequence(seed).generate_state(points.shape[1], dtype=np.uint32)
    out = np.empty_like(points, dtype=np.uint32)
    with np.errstate(over="ignore"):
        for d in range(points.shape[1]):
            rev = _reverse_bits(points[:, d])
            out[:, d] = _reverse_bits(_lk_permute(rev, keys[d]))
    return out


def sobol_uniform(count: int, dim: int, seed: int) -> np.ndarray:
    """Owen-scrambled Sobol points strictly inside the unit cube."""
    m = int(round(math.log2(count)))
    raw = qmc.Sobol(d=dim, scramble=False, bits=32).random_base2(m)
    ints = np.rint(raw * 2.0**32).astype(np.uint64).astype(np.uint32)
    scrambled = owen_scramble(ints, seed)
    # midpoint of the finest dyadic cell: never 0 or 1
    return (scrambled.astype(np.float64) + 0.5) / 2.0**32


@dataclass(frozen=True, eq=False)
class QmcBatch:
    """Fixed block of standard-normal quasi-random draws."""

    z: np.ndarray
    seed: int
    zt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.z.setflags(write=False)
        zt = np.ascontiguousarray(self.z.T)
        zt.setflags(write=False)
        object.__setattr__(self, "zt", zt)

    @property
    def count(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def replicate_slices(self, n_rep: int = N_REPLICATES) -> list[slice]:
        """Contiguous leading-index blocks; each is itself a Sobol net."""
        size = self.count // n_rep
        return [slice(i * size, (i + 1) * size) for i in range(n_rep)]


def check_count(count: int) -> None:
    if (
        not isinstance(count, (int, np.integer))
        or count < MIN_COUNT
        or count > MAX_COUNT
        or count & (count - 1)
    ):
        raise BadCount(f"draw count must be a power of two in [2^10, 2^22], got {count!r}")


def sample_batch(model_or_dim, count: int = DEFAULT_DRAWS, seed: int = 0) -> QmcBatch:
    """Draw ``count`` standard-normal points in dimension J.

    Accepts either an :class:`MvnModel` or a bare dimension. The result is a
    pure function of ``(count, dim, seed)``.
    """
    check_count(count)
    dim = model_or_dim.dim if isinstance(model_or_dim, MvnModel) else int(model_or_dim)
    if dim < 2:
        raise DimensionTooSmall("at least two arms are required")
    if dim > MAX_QMC_DIM:
        raise DimensionTooSmall(f"at most {MAX_QMC_DIM} arms are supported")
    u = sobol_uniform(int(count), dim, int(seed))
    return QmcBatch(z=norm_ppf(u), seed=int(seed))
