"""
Metastability analytics for 1-D Levy-driven gradient dynamics.

In the small-noise limit, with time sped up by epsilon^-alpha, the dynamics
reduce to a continuous-time Markov chain on the local minima whose generator
depends only on the distances between each minimum and the saddles:

    q_ij = (1/alpha) | |s_{j-1} - m_i|^-alpha - |s_j - m_i|^-alpha |,
    q_ii = -sum_{j != i} q_ij,     s_0 = -inf, s_r = +inf.

The rates assume the Levy density |y|^(-1-alpha). The simulated driver is
SaS(1), whose density is C_alpha |y|^(-1-alpha), so comparisons against
simulation rescale the rates by C_alpha (see `levy_measure_constant`).
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scistats

from errors import (IllPosedLandscapeError, InsufficientDataError, ParameterDomainError,
                    require)
from sde_simulator import (NOISE_CHUNK, NoiseStream, SdeConfig, drift_step_batch,
                           make_polynomial_wells, simulate)
from stable_sampler import StableParams, levy_measure_constant, make_rng
from workers import cell_seed, fan_out, split

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1e-3
DEFAULT_MAX_STEPS = 10 ** 8
DELTA_FRACTION = 0.1


@dataclass(frozen=True)
class Landscape1D:
    """Minima m_1 < ... < m_r and the r-1 saddles between them"""

    minima: tuple
    saddles: tuple

    def __post_init__(self):
        minima = tuple(float(m) for m in self.minima)
        saddles = tuple(float(s) for s in self.saddles)
        require(len(minima) >= 2, 'minima', f"need at least two minima, got {len(minima)}")
        require(len(saddles) == len(minima) - 1, 'saddles',
                f"need {len(minima) - 1} saddles for {len(minima)} minima, got {len(saddles)}")
        bounds = (-math.inf,) + saddles + (math.inf,)
        for i, m in enumerate(minima):
            require(bounds[i] < m < bounds[i + 1], 'minima',
                    f"m_{i + 1}={m} does not lie strictly between saddles {bounds[i]} and {bounds[i + 1]}")
        object.__setattr__(self, 'minima', minima)
        object.__setattr__(self, 'saddles', saddles)

    @property
    def r(self):
        return len(self.minima)

    @property
    def bounds(self):
        return (-math.inf,) + self.saddles + (math.inf,)

    def widths(self):
        """Valley lengths L_i; the two outer valleys are unbounded"""
        b = self.bounds
        return [b[i + 1] - b[i] for i in range(self.r)]

    def half_widths(self):
        """Finite distances from each minimum to its adjacent saddles"""
        b = self.bounds
        return [[abs(s - m) for s in (b[i], b[i + 1]) if math.isfinite(s)]
                for i, m in enumerate(self.minima)]

    def potential(self):
        return make_polynomial_wells(self.minima, self.saddles)

    @classmethod
    def double_well(cls, m1, m2):
        if not (m1 < 0.0 < m2):
            raise ParameterDomainError('m1', f"double well needs m1 < 0 < m2, got ({m1}, {m2})")
        return cls((m1, m2), (0.0,))

    def scaled(self, c):
        return Landscape1D(tuple(c * m for m in self.minima), tuple(c * s for s in self.saddles))


@dataclass(frozen=True)
class GeneratorMatrix:
    Q: np.ndarray
    alpha: float

    def __post_init__(self):
        Q = np.array(self.Q, dtype=np.float64)
        Q.setflags(write=False)
        object.__setattr__(self, 'Q', Q)

    @property
    def exit_rates(self):
        """q_i = -q_ii"""
        return -np.diag(self.Q)

    def jump_probabilities(self, i):
        """q_ij / q_i for j != i (zero at j = i)"""
        row = self.Q[i].copy()
        row[i] = 0.0
        return row / self.exit_rates[i]


@dataclass(frozen=True)
class StationaryDist:
    pi: np.ndarray
    residual: float = 0.0


def generator(landscape, alpha):
    """Generator Q of the limiting chain over the minima"""
    StableParams(alpha)
    b = landscape.bounds
    r = landscape.r

    def inverse_power(s, m):
        return 0.0 if math.isinf(s) else abs(s - m) ** -alpha

    Q = np.zeros((r, r))
    for i, m in enumerate(landscape.minima):
        for j in range(r):
            if j != i:
                Q[i, j] = abs(inverse_power(b[j], m) - inverse_power(b[j + 1], m)) / alpha
        Q[i, i] = -np.sum(Q[i])
    return GeneratorMatrix(Q=Q, alpha=float(alpha))


def stationary(gen):
    """
    Solve Q^T pi = 0, sum(pi) = 1.

    The last row of Q^T is replaced by the normalization row of ones.
    """
    Q = gen.Q
    r = Q.shape[0]
    if np.linalg.matrix_rank(Q) != r - 1:
        raise IllPosedLandscapeError(
            f"generator has rank {np.linalg.matrix_rank(Q)}; expected a one-dimensional null space")

    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(r)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as e:
        raise IllPosedLandscapeError(f"stationary system is singular: {e}")

    if np.any(pi < -1e-12):
        raise IllPosedLandscapeError(f"stationary solution has negative mass: {pi}")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    residual = float(np.max(np.abs(Q.T @ pi)))
    if residual > 1e-10 * max(1.0, float(np.max(np.abs(Q)))):
        raise IllPosedLandscapeError(f"stationary residual {residual:.3e} too large")
    return StationaryDist(pi=pi, residual=residual)


def double_well_pi(m1, m2, alpha):
    """Closed-form stationary pair (|m1|^a, m2^a) / (|m1|^a + m2^a)"""
    if not (m1 < 0.0 < m2):
        raise ParameterDomainError('m1', f"double well needs m1 < 0 < m2, got ({m1}, {m2})")
    StableParams(alpha)
    left, right = abs(m1) ** alpha, m2 ** alpha
    return left / (left + right), right / (left + right)


def simulate_jump_chain(gen, jumps, seed, start=0):
    """
    Long-run occupation fractions of the chain with generator Q, simulated
    directly: exponential holding times, jumps with probabilities q_ij / q_i.
    """
    rng = make_rng(seed)
    rates = gen.exit_rates
    r = len(rates)
    cumulative = np.cumsum([gen.jump_probabilities(i) for i in range(r)], axis=1)
    occupation = np.zeros(r)
    state = start
    holds = rng.standard_exponential(jumps)
    picks = rng.random(jumps)
    for k in range(jumps):
        occupation[state] += holds[k] / rates[state]
        state = min(int(np.searchsorted(cumulative[state], picks[k], side='right')), r - 1)
    return occupation / occupation.sum()


def default_delta(landscape):
    """DELTA_FRACTION of the smallest distance from a minimum to a neighbouring saddle"""
    return DELTA_FRACTION * min(min(h) for h in landscape.half_widths())


def classify_valleys(landscape, w):
    """Valley index i with w in (s_{i-1}, s_i]"""
    return np.searchsorted(np.asarray(landscape.saddles), np.asarray(w, dtype=np.float64))


@dataclass(frozen=True)
class ExitConfig:
    landscape: Landscape1D
    alpha: float
    epsilon: float
    eta: float = DEFAULT_ETA
    source: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int = 0
    mode: str = 'transition'
    stiff_guard: bool = True

    def __post_init__(self):
        StableParams(self.alpha)
        require(self.epsilon > 0, 'epsilon', f"must be positive, got {self.epsilon}")
        require(self.eta > 0, 'eta', f"must be positive, got {self.eta}")
        require(0 <= self.source < self.landscape.r, 'source',
                f"must index one of {self.landscape.r} valleys, got {self.source}")
        require(self.max_steps >= 1, 'max_steps', f"must be at least 1, got {self.max_steps}")
        require(self.mode in ('transition', 'first_exit'), 'mode',
                f"must be 'transition' or 'first_exit', got {self.mode!r}")
        make_rng(self.seed)


@dataclass(frozen=True)
class ExitSample:
    replica: int
    time: float
    destination: int = None
    censored: bool = False
    reason: str = ''


@dataclass(frozen=True)
class ExitStats:
    alpha: float
    epsilon: float
    source: int
    delta: float
    samples: tuple
    eta: float = DEFAULT_ETA
    mode: str = 'transition'

    @property
    def uncensored(self):
        return [s for s in self.samples if not s.censored]

    @property
    def censored_fraction(self):
        return 1.0 - len(self.uncensored) / len(self.samples) if self.samples else 1.0

    @property
    def times(self):
        return np.array([s.time for s in self.uncensored])

    @property
    def destinations(self):
        return np.array([s.destination for s in self.uncensored], dtype=int)

    def mean_time(self):
        times = self.times
        return float(np.mean(times)) if len(times) else math.nan

    def mean_time_lower_bound(self):
        """Mean over all replicas, censored ones counted at their censoring time"""
        return float(np.mean([s.time for s in self.samples]))

    def to_records(self):
        return [{'replica': s.replica, 'time': s.time,
                 'destination': -1 if s.destination is None else s.destination,
                 'censored': int(s.censored), 'reason': s.reason} for s in self.samples]


def _exit_batch(task):
    """Run a block of replicas in lockstep until each one exits or is censored"""
    config, delta, replicas = task
    landscape = config.landscape
    potential = landscape.potential()
    minima = np.asarray(landscape.minima)
    source = config.source
    others = np.array([j for j in range(landscape.r) if j != source])
    eta, eps = config.eta, config.epsilon

    ids = np.array(replicas, dtype=int)
    x = np.full(len(ids), minima[source])
    streams = {r: NoiseStream(config.alpha, 1, eta, cell_seed(config.seed, r)) for r in replicas}
    results = {}
    exited = np.full(len(ids), np.nan)
    noise, position = None, NOISE_CHUNK
    step = 0

    with np.errstate(over='ignore', invalid='ignore'):
        while len(ids) and step < config.max_steps:
            if position == NOISE_CHUNK:
                noise = np.stack([streams[r].next_chunk()[:, 0] for r in ids], axis=1)
                position = 0
            previous = x
            x = drift_step_batch(potential, x, eta, config.stiff_guard) + eps * noise[position]
            position += 1
            step += 1

            finite = np.isfinite(x)
            if config.mode == 'transition':
                hit = np.abs(x[:, None] - minima[others][None, :]) <= delta
                done = hit.any(axis=1) & finite
                destination = np.where(done, others[np.argmax(hit, axis=1)], -1)
            else:
                # exit time is the first step outside the source ball; the
                # destination is the first valley other than the source entered afterwards
                leaving = np.isnan(exited) & (np.abs(x - minima[source]) > delta) & finite
                exited = np.where(leaving, step * eta, exited)
                valley = classify_valleys(landscape, np.where(finite, x, minima[source]))
                done = ~np.isnan(exited) & (valley != source) & finite
                destination = np.where(done, valley, -1)

            blown = ~finite
            if done.any() or blown.any():
                for k in np.flatnonzero(done):
                    time = step * eta if np.isnan(exited[k]) else float(exited[k])
                    results[int(ids[k])] = ExitSample(int(ids[k]), time, int(destination[k]))
                for k in np.flatnonzero(blown):
                    logger.warning("exit replica %d: non-finite state after %d steps (last %r); censored",
                                   ids[k], step, float(previous[k]))
                    results[int(ids[k])] = ExitSample(int(ids[k]), step * eta, None, True, 'blowup')
                keep = ~(done | blown)
                ids, x, noise, exited = ids[keep], x[keep], noise[:, keep], exited[keep]

    for r in ids:
        results[int(r)] = ExitSample(int(r), step * eta, None, True, 'budget')
    if len(ids):
        logger.warning("exit times: %d replicas hit the %d-step budget", len(ids), config.max_steps)
    return [results[r] for r in replicas]


def exit_times(config, delta=None, reps=200, workers=1):
    """
    Transition times out of valley `config.source`.

    Each replica starts at the source minimum and runs until it first enters
    the delta-ball of another minimum (mode 'transition') or first leaves its
    own delta-ball (mode 'first_exit'; the destination is then the first other
    valley the path enters). Replicas that exceed the step budget
    or blow up are kept as right-censored samples.
    """
    landscape = config.landscape
    if delta is None:
        delta = default_delta(landscape)
    for i, halves in enumerate(landscape.half_widths()):
        require(0 < delta < min(halves), 'delta',
                f"ball of radius {delta} around m_{i + 1} is not inside its valley")
    require(reps >= 1, 'reps', f"must be at least 1, got {reps}")

    tasks = [(config, delta, block) for block in split(range(reps), max(1, workers))]
    samples = [s for block in fan_out(_exit_batch, tasks, workers) for s in block]
    logger.info("exit times: alpha=%.3f eps=%.4g, %d/%d uncensored", config.alpha, config.epsilon,
                sum(not s.censored for s in samples), reps)
    return ExitStats(alpha=config.alpha, epsilon=config.epsilon, source=config.source,
                     delta=float(delta), samples=tuple(samples), eta=config.eta, mode=config.mode)


@dataclass(frozen=True)
class ExitLawReport:
    n: int
    exit_rate: float
    rate_scale: float
    max_excess: float
    dkw_band: float
    survival_grid: np.ndarray = field(repr=False)
    empirical_survival: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)
    expected_destinations: np.ndarray = field(repr=False)
    observed_destinations: np.ndarray = field(repr=False)
    destination_intervals: np.ndarray = field(repr=False)
    chi_square: float = 0.0
    chi_square_pvalue: float = 1.0
    exponential_ks: float = 0.0

    def survival_bound_holds(self, slack=0.05):
        return self.max_excess <= self.dkw_band + slack

    def destinations_within_intervals(self):
        low, high = self.destination_intervals[:, 0], self.destination_intervals[:, 1]
        return bool(np.all((self.observed_destinations >= low) & (self.observed_destinations <= high)))

    def to_dict(self):
        return {
            'n': self.n, 'exit_rate': self.exit_rate, 'rate_scale': self.rate_scale,
            'max_excess': self.max_excess, 'dkw_band': self.dkw_band,
            'expected_destinations': self.expected_destinations.tolist(),
            'observed_destinations': self.observed_destinations.tolist(),
            'destination_intervals': self.destination_intervals.tolist(),
            'chi_square': self.chi_square, 'chi_square_pvalue': self.chi_square_pvalue,
            'exponential_ks': self.exponential_ks,
        }


def exit_law_check(stats, gen, rate_scale=None, confidence=0.95, min_uncensored=0.9):
    """
    Compare exit statistics with the limiting exit law.

    (a) survival of epsilon^alpha T against exp(-c q_i u), reporting the largest
    positive excess and the DKW band; (b) destination frequencies against
    q_ij / q_i with a chi-square statistic and per-destination binomial
    intervals. `c` is `rate_scale`, by default the Levy density constant of the
    SaS(1) driver. Nothing is asserted here.
    """
    if not stats.samples or 1.0 - stats.censored_fraction < min_uncensored:
        raise InsufficientDataError(
            f"{stats.censored_fraction:.1%} of {len(stats.samples)} exit samples are censored")
    if rate_scale is None:
        rate_scale = levy_measure_constant(stats.alpha)

    i = stats.source
    rate = float(gen.exit_rates[i]) * rate_scale
    scaled = np.sort(stats.epsilon ** stats.alpha * stats.times)
    n = len(scaled)

    # the empirical survival is right-continuous: S(u) = #{T > u} / n, largest just before each jump
    just_before = 1.0 - np.arange(n) / n
    bound = np.exp(-rate * scaled)
    max_excess = float(max(0.0, np.max(just_before - bound)))
    dkw = math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))

    expected = gen.jump_probabilities(i)
    counts = np.bincount(stats.destinations, minlength=len(expected)).astype(float)
    mask = np.arange(len(expected)) != i
    observed = counts / n
    intervals = np.zeros((len(expected), 2))
    for j in np.flatnonzero(mask):
        low, high = _binomial_interval(confidence, n, expected[j])
        intervals[j] = (low / n, high / n)

    if np.count_nonzero(expected[mask] > 0) > 1:
        chi = _chisquare(counts[mask], expected[mask] * n)
    else:
        chi = (0.0, 1.0)

    ks = float(_exponential_ks(scaled))
    return ExitLawReport(
        n=n, exit_rate=float(gen.exit_rates[i]), rate_scale=float(rate_scale),
        max_excess=max_excess, dkw_band=dkw, survival_grid=scaled,
        empirical_survival=just_before, bound=bound,
        expected_destinations=expected, observed_destinations=observed,
        destination_intervals=intervals, chi_square=float(chi[0]),
        chi_square_pvalue=float(chi[1]), exponential_ks=ks,
    )


def _binomial_interval(confidence, n, p):
    low, high = scistats.binom.interval(confidence, n, p)
    return float(low), float(high)


def _chisquare(observed, expected):
    keep = expected > 0
    result = scistats.chisquare(observed[keep], expected[keep] * observed[keep].sum() / expected[keep].sum())
    return float(result.statistic), float(result.pvalue)


def _exponential_ks(scaled):
    """KS distance between the scaled times and an exponential law with their mean"""
    if len(scaled) < 2 or np.mean(scaled) <= 0:
        return 0.0
    return scistats.kstest(scaled, 'expon', args=(0.0, float(np.mean(scaled)))).statistic


def fit_exit_scaling(stats_list):
    """Slope of log(mean transition time) against log(epsilon)"""
    require(len(stats_list) >= 2, 'epsilons', "need at least two noise levels")
    eps = np.log([s.epsilon for s in stats_list])
    means = np.log([s.mean_time() for s in stats_list])
    slope, _ = np.polyfit(eps, means, 1)
    return float(slope)


@dataclass(frozen=True)
class OccupationResult:
    fractions: np.ndarray
    counts: np.ndarray
    steps: int
    thinning: int


def occupation(landscape, alpha, epsilon, horizon, seed, eta=DEFAULT_ETA, w0=None, thinning=None,
               stiff_guard=True):
    """
    Time fractions spent in each valley along one trajectory of length `horizon`
    (horizon / eta steps of size eta).

    Each recorded state is assigned to the valley (s_{i-1}, s_i] containing it.
    The drift guard is on unless `stiff_guard` is False.
    """
    require(horizon >= eta, 'horizon', f"must be at least one step of {eta}, got {horizon}")
    steps = int(round(horizon / eta))
    potential = landscape.potential()
    start = landscape.minima[0] if w0 is None else w0
    trajectory = simulate(SdeConfig(potential, alpha, epsilon, eta, steps, (start,), seed=seed,
                                    thinning=thinning, stiff_guard=stiff_guard))
    labels = classify_valleys(landscape, trajectory.states[1:, 0])
    counts = np.bincount(labels, minlength=landscape.r)
    return OccupationResult(fractions=counts / counts.sum(), counts=counts, steps=steps,
                            thinning=trajectory.thinning)
