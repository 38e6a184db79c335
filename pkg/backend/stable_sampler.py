"""
Symmetric alpha-stable (SaS) laws: parameters, exact sampling and diagnostics.

Draws use the Chambers-Mallows-Stuck transform of two open-interval uniforms,
with closed forms at alpha=1 (Cauchy, tan V) and alpha=2 (2 sin V sqrt(W),
the Box-Muller form of N(0, 2)). Every draw is made at unit scale and then
multiplied by sigma, so scale equivariance holds bit for bit.

Random numbers come from numpy's PCG64 bit generator seeded with the caller's
64-bit seed, which gives identical streams on every platform numpy supports.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from errors import EmptyRequestError, ParameterDomainError, SampleRangeError, require

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StableParams:
    """Tail index alpha in (0, 2] and scale sigma > 0 of SaS(sigma)"""

    alpha: float
    sigma: float = 1.0

    def __post_init__(self):
        require(isinstance(self.alpha, (int, float)) and math.isfinite(self.alpha)
                and 0.0 < self.alpha <= 2.0, 'alpha', f"must lie in (0, 2], got {self.alpha!r}")
        require(isinstance(self.sigma, (int, float)) and math.isfinite(self.sigma)
                and self.sigma > 0.0, 'sigma', f"must be positive, got {self.sigma!r}")

    @property
    def is_gaussian(self):
        return self.alpha == 2.0

    @property
    def gaussian_variance(self):
        """Variance 2 sigma^2 of the alpha=2 member; None otherwise"""
        return 2.0 * self.sigma ** 2 if self.is_gaussian else None


@dataclass(frozen=True)
class SampleBatch:
    values: np.ndarray
    params: StableParams
    seed: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise SampleRangeError("sample batch contains non-finite values")
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)


def validate_params(alpha, sigma=1.0):
    """Return StableParams, raising ParameterDomainError naming the bad field"""
    return StableParams(float(alpha), float(sigma))


def make_rng(seed):
    require(isinstance(seed, (int, np.integer)) and 0 <= int(seed) < 2 ** 64,
            'seed', f"must be a 64-bit unsigned integer, got {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def open_uniform(rng, size):
    """Uniforms on the open interval (0, 1) with 53-bit resolution"""
    return rng.integers(1, 2 ** 53, size=size) * 2.0 ** -53


def _angles(rng, size):
    v = np.pi * (open_uniform(rng, size) - 0.5)
    w = -np.log(open_uniform(rng, size))
    return v, w


def unit_draws(alpha, size, rng):
    """SaS(1) draws of the given shape; entries may be inf for alpha near 0"""
    v, w = _angles(rng, size)
    with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
        if alpha == 1.0:
            x = np.tan(v)
        elif alpha == 2.0:
            x = 2.0 * np.sin(v) * np.sqrt(w)
        else:
            x = (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
                 * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))

    bad = ~np.isfinite(x)
    if np.any(bad):
        # intermediate overflow; redo those entries in log space
        sign, logabs = _log_form(alpha, v[bad], w[bad])
        with np.errstate(over='ignore'):
            x[bad] = sign * np.exp(logabs)
    return x


def unit_log_draws(alpha, size, rng):
    """SaS(1) draws as (sign, log|x|); never overflows"""
    v, w = _angles(rng, size)
    return _log_form(alpha, v, w)


def _log_form(alpha, v, w):
    with np.errstate(divide='ignore'):
        if alpha == 1.0:
            logabs = np.log(np.abs(np.tan(v)))
        elif alpha == 2.0:
            logabs = math.log(2.0) + np.log(np.abs(np.sin(v))) + 0.5 * np.log(w)
        else:
            logabs = (np.log(np.abs(np.sin(alpha * v)))
                      - np.log(np.cos(v)) / alpha
                      + (1.0 - alpha) / alpha * (np.log(np.cos((1.0 - alpha) * v)) - np.log(w)))
    return np.sign(v), logabs


def sample(params, n, seed):
    """n i.i.d. SaS(sigma) draws with tail index alpha, deterministic in seed"""
    if n < 1:
        raise EmptyRequestError(f"sample size must be at least 1, got {n}")
    rng = make_rng(seed)
    unit = unit_draws(params.alpha, int(n), rng)
    if not np.all(np.isfinite(unit)):
        raise SampleRangeError(
            f"alpha={params.alpha}: {int(np.sum(~np.isfinite(unit)))} draws exceed the float64 range; "
            "use sample_log_abs for tail indices this small")
    values = params.sigma * unit
    if not np.all(np.isfinite(values)):
        raise SampleRangeError(f"sigma={params.sigma} pushes draws beyond the float64 range")
    return SampleBatch(values=values, params=params, seed=int(seed))


def sample_log_abs(params, n, seed):
    """Same draws as `sample`, returned as (sign, log|x|) arrays"""
    if n < 1:
        raise EmptyRequestError(f"sample size must be at least 1, got {n}")
    sign, logabs = unit_log_draws(params.alpha, int(n), make_rng(seed))
    return sign, logabs + math.log(params.sigma)


def char_fn(params, omega):
    """exp(-|sigma omega|^alpha)"""
    return math.exp(-abs(params.sigma * omega) ** params.alpha)


def empirical_char_fn(batch, omega):
    """Sample mean of cos(omega X); the imaginary part vanishes by symmetry"""
    values = _batch_values(batch)
    return float(np.mean(np.cos(omega * values)))


def char_fn_standard_error(batch, omega):
    values = _batch_values(batch)
    return float(np.std(np.cos(omega * values)) / math.sqrt(len(values)))


def _batch_values(batch):
    values = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=np.float64)
    if len(values) == 0:
        raise EmptyRequestError("empirical characteristic function of an empty batch")
    return values


def moment_exists(params, r):
    """E|X|^r < inf iff r < alpha; every finite moment exists at alpha=2"""
    if not math.isfinite(r) or r < 0:
        raise ParameterDomainError('r', f"moment order must be finite and nonnegative, got {r!r}")
    if params.is_gaussian:
        return True
    return r < params.alpha


def levy_measure_constant(alpha):
    """
    C_alpha with Levy density C_alpha |y|^(-1-alpha) for SaS(1).

    Zero at alpha=2, where the law has no jumps.
    """
    StableParams(alpha)
    if alpha == 2.0:
        return 0.0
    return float(gamma(1.0 + alpha)) * math.sin(math.pi * alpha / 2.0) / math.pi


def tail_slope(values, top_fraction=0.01):
    """
    Tail exponent from a log-log fit of the empirical survival function.

    Uses the top `top_fraction` of |x|; returns the negated slope.
    """
    magnitudes = np.sort(np.abs(np.asarray(values, dtype=np.float64)))[::-1]
    n = len(magnitudes)
    k = max(2, int(n * top_fraction))
    if k > n or magnitudes[k - 1] <= 0:
        raise EmptyRequestError(f"need at least {k} nonzero values for a tail fit")
    survival = np.arange(1, k + 1) / n
    slope, _ = np.polyfit(np.log(magnitudes[:k]), np.log(survival), 1)
    return float(-slope)
