"""
Tail-index estimation for SaS data.

The main estimator sums the sample in K2 consecutive blocks of K1 values and
compares the average log-magnitude of the block sums with that of the raw
values; for SaS data the difference grows like log(K1) / alpha. A Hill
estimator is kept as a baseline, and `calibrate` reruns the accuracy
experiment over a grid of tail indices.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import (DegenerateInputError, InsufficientDataError, ParameterDomainError,
                    require)
from stable_sampler import StableParams, sample_log_abs
from workers import cell_seed, fan_out

logger = logging.getLogger(__name__)

# magnitudes below this count as exact zeros
ZERO_GUARD = 1e-300

# largest accepted ratio between the chosen divisor and sqrt(K)
GROUPING_SPREAD = 4.0


@dataclass(frozen=True)
class Grouping:
    K: int
    K1: int
    K2: int
    dropped: int = 0

    def __post_init__(self):
        require(self.K1 >= 2, 'K1', f"group size must be at least 2, got {self.K1}")
        require(self.K2 >= 1, 'K2', f"group count must be at least 1, got {self.K2}")
        require(self.K == self.K1 * self.K2, 'K', f"{self.K} != {self.K1} x {self.K2}")
        require(self.dropped >= 0, 'dropped', "cannot be negative")


@dataclass(frozen=True)
class TailEstimate:
    alpha_hat: float
    inv_alpha_hat: float
    grouping: Grouping
    dropped: int = 0

    @property
    def in_range(self):
        """False when estimation noise pushed alpha_hat outside (0, 2]"""
        return 0.0 < self.alpha_hat <= 2.0

    def to_dict(self):
        return {
            'alpha_hat': self.alpha_hat,
            'inv_alpha_hat': self.inv_alpha_hat,
            'in_range': self.in_range,
            'K': self.grouping.K,
            'K1': self.grouping.K1,
            'K2': self.grouping.K2,
            'dropped': self.dropped,
        }


def _closest_divisor(k):
    """Divisor of k in [2, k-1] closest to sqrt(k), ties to the smaller; None if prime"""
    root = math.sqrt(k)
    best = None
    for small in range(2, math.isqrt(k) + 1):
        if k % small:
            continue
        for d in (small, k // small):
            if d >= k:
                continue
            if best is None or abs(d - root) < abs(best - root) or (
                    abs(d - root) == abs(best - root) and d < best):
                best = d
    return best


def choose_grouping(K):
    """
    Pick K1 as the divisor of K closest to sqrt(K).

    When K has no divisor within a factor GROUPING_SPREAD of sqrt(K) (primes
    and similar), trailing samples are dropped until such a K' is reached.
    """
    if K < 4:
        raise InsufficientDataError(f"need at least 4 samples to form groups, got {K}")

    for k in range(K, 3, -1):
        d = _closest_divisor(k)
        if d is None:
            continue
        root = math.sqrt(k)
        if max(d / root, root / d) <= GROUPING_SPREAD:
            if k != K:
                logger.info("grouping: dropped %d trailing samples (K=%d -> %d)", K - k, K, k)
            return Grouping(K=k, K1=d, K2=k // d, dropped=K - k)

    # K=4 always qualifies, so the loop returns
    raise InsufficientDataError(f"no admissible grouping for K={K}")


def _inverse_alpha(mean_log_y, mean_log_x, grouping):
    inv = (mean_log_y - mean_log_x) / math.log(grouping.K1)
    alpha_hat = 1.0 / inv if inv != 0.0 else math.inf
    return alpha_hat, inv


def estimate_alpha(x, grouping):
    """
    Block-sum estimator of the tail index.

    Y_i = sum of the i-th block of K1 values, then
    1/alpha = (mean log|Y| - mean log|X|) / log K1.
    Only the first K values are used.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < grouping.K:
        raise InsufficientDataError(f"need {grouping.K} samples, got {len(x)}")

    head = x[:grouping.K]
    magnitudes = np.abs(head)
    if np.any(magnitudes < ZERO_GUARD):
        raise DegenerateInputError(
            f"{int(np.sum(magnitudes < ZERO_GUARD))} samples are zero within the guard {ZERO_GUARD}")
    if not np.all(np.isfinite(head)):
        raise DegenerateInputError("samples contain non-finite values")

    blocks = np.abs(head.reshape(grouping.K2, grouping.K1).sum(axis=1))
    if np.any(blocks < ZERO_GUARD):
        raise DegenerateInputError("a block sum is zero within the guard")

    alpha_hat, inv = _inverse_alpha(np.mean(np.log(blocks)), np.mean(np.log(magnitudes)), grouping)
    return TailEstimate(alpha_hat=alpha_hat, inv_alpha_hat=inv, grouping=grouping,
                        dropped=len(x) - grouping.K)


def estimate_alpha_from_logs(sign, logabs, grouping):
    """
    Same estimator on draws given as (sign, log|x|).

    Block sums are formed with a signed log-sum-exp, so magnitudes far outside
    the float64 range are handled exactly.
    """
    sign = np.asarray(sign, dtype=np.float64)
    logabs = np.asarray(logabs, dtype=np.float64)
    total = len(logabs)
    if total < grouping.K:
        raise InsufficientDataError(f"need {grouping.K} samples, got {len(logabs)}")

    sign = sign[:grouping.K].reshape(grouping.K2, grouping.K1)
    logabs = logabs[:grouping.K].reshape(grouping.K2, grouping.K1)
    if np.any(np.isneginf(logabs)) or np.any(sign == 0):
        raise DegenerateInputError("samples contain exact zeros")

    peak = logabs.max(axis=1, keepdims=True)
    partial = np.sum(sign * np.exp(logabs - peak), axis=1)
    if np.any(partial == 0.0):
        raise DegenerateInputError("a block sum cancels to zero")
    log_blocks = peak[:, 0] + np.log(np.abs(partial))

    alpha_hat, inv = _inverse_alpha(np.mean(log_blocks), np.mean(logabs), grouping)
    return TailEstimate(alpha_hat=alpha_hat, inv_alpha_hat=inv, grouping=grouping,
                        dropped=total - grouping.K)


def hill_estimate(x, k=None):
    """
    Classical Hill estimate from the k largest |x|.

    alpha_H = 1 / mean_j log(|X|_(n-j+1) / |X|_(n-k)), order statistics ascending.
    """
    magnitudes = np.sort(np.abs(np.asarray(x, dtype=np.float64)))
    n = len(magnitudes)
    if k is None:
        k = n // 10
    if not (2 <= k < n):
        raise ParameterDomainError('k', f"must satisfy 2 <= k < n={n}, got {k}")

    threshold = magnitudes[n - k - 1]
    if threshold <= 0.0:
        raise DegenerateInputError("Hill threshold order statistic is not positive")

    mean_excess = float(np.mean(np.log(magnitudes[n - k:] / threshold)))
    if mean_excess <= 0.0:
        raise DegenerateInputError("all upper order statistics equal the threshold")
    return 1.0 / mean_excess


@dataclass(frozen=True)
class CalibrationRow:
    alpha: float
    mean_alpha_hat: float
    std_alpha_hat: float
    mae: float
    estimates: tuple = ()

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'mean_alpha_hat': self.mean_alpha_hat,
            'std_alpha_hat': self.std_alpha_hat,
            'mae': self.mae,
        }


@dataclass(frozen=True)
class CalibrationTable:
    rows: tuple
    K1: int
    K2: int
    reps: int
    seed: int

    @property
    def max_mae(self):
        return max(row.mae for row in self.rows)

    def is_monotone(self, tie_tolerance=0.01):
        """Rep-mean estimates nondecreasing in alpha up to tie_tolerance"""
        means = [row.mean_alpha_hat for row in self.rows]
        return all(b >= a - tie_tolerance for a, b in zip(means, means[1:]))

    def to_records(self):
        return [row.to_dict() for row in self.rows]


def _calibration_cell(task):
    alpha, alpha_index, K1, K2, reps, seed = task
    params = StableParams(alpha, 1.0)
    grouping = Grouping(K=K1 * K2, K1=K1, K2=K2)
    estimates = []
    for rep in range(reps):
        sign, logabs = sample_log_abs(params, grouping.K, cell_seed(seed, alpha_index, rep))
        estimates.append(estimate_alpha_from_logs(sign, logabs, grouping).alpha_hat)
    logger.info("calibration: alpha=%.4f done (%d reps)", alpha, reps)
    return estimates


def calibrate(alpha_grid, K1=100, K2=1000, reps=100, seed=0, workers=1):
    """
    Accuracy of the estimator on SaS(1) data over a grid of tail indices.

    Rep r of grid point i uses the derived seed (seed, i, r), so the table does
    not depend on how cells are scheduled over workers.
    """
    alpha_grid = [float(a) for a in alpha_grid]
    for alpha in alpha_grid:
        StableParams(alpha)
    require(K1 >= 2, 'K1', f"must be at least 2, got {K1}")
    require(K2 >= 1, 'K2', f"must be at least 1, got {K2}")
    require(reps >= 1, 'reps', f"must be at least 1, got {reps}")

    tasks = [(alpha, index, K1, K2, reps, seed) for index, alpha in enumerate(alpha_grid)]
    results = fan_out(_calibration_cell, tasks, workers)

    rows = []
    for alpha, estimates in zip(alpha_grid, results):
        values = np.asarray(estimates)
        rows.append(CalibrationRow(
            alpha=alpha,
            mean_alpha_hat=float(np.mean(values)),
            std_alpha_hat=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
            mae=float(np.mean(np.abs(values - alpha))),
            estimates=tuple(float(v) for v in values),
        ))
    return CalibrationTable(rows=tuple(rows), K1=K1, K2=K2, reps=reps, seed=seed)
