"""
Potentials and the Euler-type integrator for Levy-driven gradient dynamics.

    w_{k+1} = w_k - eta grad f(w_k) + epsilon eta^(1/alpha) S_k,   S_k ~ SaS(1) i.i.d.

At alpha=2 the SaS(1) increment has variance 2, so the Gaussian case is the
Euler scheme for dw = -grad f dt + sqrt(2) epsilon dB, not the unit-variance
Langevin equation.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from errors import ParameterDomainError, SimulationBlowUpError, require
from stable_sampler import StableParams, make_rng, unit_draws
from workers import cell_seed, fan_out

logger = logging.getLogger(__name__)

NOISE_CHUNK = 4096

# record every step up to this many steps, then thin
MAX_RECORDS = 100_000

# a drift step may move the state by at most this fraction of (1 + |w|)
STIFF_FRACTION = 0.5
MAX_SUBSTEPS = 1_000_000


class Potential(ABC):
    """Objective f with exact gradient; inputs are arrays shaped (..., dim)"""

    name = 'potential'
    dim = 1

    @abstractmethod
    def value(self, w):
        pass

    @abstractmethod
    def grad(self, w):
        pass

    def describe(self):
        return {'name': self.name, 'dim': self.dim}


class Quadratic(Potential):
    """f(w) = curvature |w|^2 / 2"""

    def __init__(self, dim=1, curvature=1.0):
        require(dim >= 1, 'dim', f"must be at least 1, got {dim}")
        require(curvature > 0, 'curvature', f"must be positive, got {curvature}")
        self.dim = int(dim)
        self.curvature = float(curvature)
        self.name = 'quadratic'

    def value(self, w):
        w = np.asarray(w, dtype=np.float64)
        return 0.5 * self.curvature * np.sum(w * w, axis=-1)

    def grad(self, w):
        return self.curvature * np.asarray(w, dtype=np.float64)

    def grad_scalar(self, x):
        return self.curvature * x

    def describe(self):
        return {'name': self.name, 'dim': self.dim, 'curvature': self.curvature}


class PolynomialWells(Potential):
    """
    1-D potential with f'(w) = prod over critical points c of (w - c).

    Critical points are the interleaved minima and saddles; the derivative has
    odd degree with positive leading coefficient, so minima and maxima
    alternate and f grows like w^(2r) far out. f(0) = 0.
    """

    dim = 1

    def __init__(self, minima, saddles, name='wells'):
        minima = tuple(float(m) for m in minima)
        saddles = tuple(float(s) for s in saddles)
        require(len(minima) >= 2, 'minima', "need at least two minima")
        require(len(saddles) == len(minima) - 1, 'saddles',
                f"need exactly {len(minima) - 1} saddles, got {len(saddles)}")
        critical = [None] * (len(minima) + len(saddles))
        critical[::2] = minima
        critical[1::2] = saddles
        require(all(a < b for a, b in zip(critical, critical[1:])), 'minima',
                "minima and saddles must interleave strictly")

        self.minima = minima
        self.saddles = saddles
        self.critical = tuple(critical)
        self.name = name
        self.derivative = Polynomial.fromroots(self.critical)
        self.antiderivative = self.derivative.integ(lbnd=0.0)
        self._coefficients = self.antiderivative.coef

    def value(self, w):
        w = np.asarray(w, dtype=np.float64)
        return np.polynomial.polynomial.polyval(w[..., 0], self._coefficients)

    def grad(self, w):
        w = np.asarray(w, dtype=np.float64)
        x = w[..., 0]
        g = x - self.critical[0]
        for c in self.critical[1:]:
            g = g * (x - c)
        return g[..., None]

    def grad_scalar(self, x):
        g = x - self.critical[0]
        for c in self.critical[1:]:
            g = g * (x - c)
        return g

    def second_derivative(self, x):
        return self.derivative.deriv()(x)

    def barrier_heights(self):
        """Depth H_i of each basin: lowest adjacent saddle value minus f(m_i)"""
        values = self.antiderivative
        heights = []
        for i, m in enumerate(self.minima):
            adjacent = []
            if i > 0:
                adjacent.append(values(self.saddles[i - 1]))
            if i < len(self.saddles):
                adjacent.append(values(self.saddles[i]))
            heights.append(float(min(adjacent) - values(m)))
        return heights

    def describe(self):
        return {'name': self.name, 'dim': 1, 'minima': list(self.minima),
                'saddles': list(self.saddles)}


class ProductValley(Potential):
    """f(w1, w2) = (w1 w2)^2; its zero set is the union of both axes"""

    dim = 2
    name = 'product-valley'

    def value(self, w):
        w = np.asarray(w, dtype=np.float64)
        product = w[..., 0] * w[..., 1]
        return product * product

    def grad(self, w):
        w = np.asarray(w, dtype=np.float64)
        w1, w2 = w[..., 0], w[..., 1]
        return np.stack([2.0 * w1 * w2 * w2, 2.0 * w1 * w1 * w2], axis=-1)

    def hessian(self, w):
        w1, w2 = float(w[0]), float(w[1])
        return np.array([[2.0 * w2 * w2, 4.0 * w1 * w2],
                         [4.0 * w1 * w2, 2.0 * w1 * w1]])

    @staticmethod
    def curvature_proxy(w):
        """2 max(w1^2, w2^2): the nonzero Hessian eigenvalue on the nearest axis"""
        w = np.asarray(w, dtype=np.float64)
        return 2.0 * np.maximum(w[..., 0] ** 2, w[..., 1] ** 2)


def make_quadratic(dim=1, curvature=1.0):
    return Quadratic(dim, curvature)


def make_double_well(m1, m2):
    """Quartic with f'(w) = w (w - m1)(w - m2): minima m1 < 0 < m2, maximum at 0"""
    if not (m1 < 0.0 < m2):
        raise ParameterDomainError('m1', f"double well needs m1 < 0 < m2, got ({m1}, {m2})")
    return PolynomialWells((m1, m2), (0.0,), name='double-well')


def make_polynomial_wells(minima, saddles):
    return PolynomialWells(minima, saddles)


def make_product_valley():
    return ProductValley()


def potential_from_spec(spec):
    """
    Build a potential from its textual form.

    quadratic[:dim] | double-well:m1,m2 | wells:m1,m2,../s1,.. | product-valley
    """
    kind, _, args = spec.partition(':')
    kind = kind.strip().lower()
    try:
        if kind == 'quadratic':
            return make_quadratic(int(args) if args else 1)
        if kind == 'double-well':
            m1, m2 = (float(v) for v in args.split(','))
            return make_double_well(m1, m2)
        if kind == 'wells':
            minima, saddles = args.split('/')
            return make_polynomial_wells([float(v) for v in minima.split(',')],
                                         [float(v) for v in saddles.split(',')])
        if kind == 'product-valley':
            return make_product_valley()
    except ValueError as e:
        if isinstance(e, ParameterDomainError):
            raise
        raise ParameterDomainError('potential', f"cannot parse {spec!r}: {e}")
    raise ParameterDomainError('potential', f"unknown potential {kind!r}")


def gradient_check(potential, directions=100, seed=0, radius=2.0):
    """Largest relative error between grad and central differences of value"""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(directions):
        w = rng.uniform(-radius, radius, size=potential.dim)
        g = np.asarray(potential.grad(w), dtype=np.float64)
        fd = np.empty(potential.dim)
        for i in range(potential.dim):
            h = 1e-6 * max(1.0, abs(w[i]))
            step = np.zeros(potential.dim)
            step[i] = h
            fd[i] = (potential.value(w + step) - potential.value(w - step)) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)))
    return worst


@dataclass(frozen=True)
class SdeConfig:
    potential: Potential
    alpha: float
    epsilon: float
    eta: float
    steps: int
    w0: tuple
    seed: int = 0
    thinning: int = None
    stiff_guard: bool = False

    def __post_init__(self):
        require(isinstance(self.potential, Potential), 'potential', "must be a Potential")
        StableParams(self.alpha)
        require(math.isfinite(self.epsilon) and self.epsilon >= 0, 'epsilon',
                f"must be nonnegative, got {self.epsilon}")
        require(math.isfinite(self.eta) and self.eta > 0, 'eta', f"must be positive, got {self.eta}")
        require(int(self.steps) == self.steps and self.steps >= 1, 'steps',
                f"must be a positive integer, got {self.steps}")
        w0 = tuple(float(v) for v in np.atleast_1d(self.w0))
        require(len(w0) == self.potential.dim, 'w0',
                f"has dimension {len(w0)}, potential has {self.potential.dim}")
        require(all(math.isfinite(v) for v in w0), 'w0', "must be finite")
        require(self.thinning is None or self.thinning >= 1, 'thinning', "must be at least 1")
        make_rng(self.seed)
        object.__setattr__(self, 'w0', w0)
        object.__setattr__(self, 'steps', int(self.steps))

    @property
    def record_every(self):
        return self.thinning or default_thinning(self.steps)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    thinning: int = 1

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'states', states)

    def __len__(self):
        return len(self.times)

    @property
    def final_state(self):
        return self.states[-1]


def default_thinning(steps):
    return 1 if steps <= MAX_RECORDS else math.ceil(steps / MAX_RECORDS)


def noise_scale(alpha, eta):
    """eta^(1/alpha): the SaS scale of a Levy increment over time eta"""
    return eta ** (1.0 / alpha)


def epsilon_from_sigma(sigma, eta, alpha):
    """
    Noise amplitude of the sigma-form recursion.

    eta^(1/alpha) (eta^((alpha-1)/alpha) sigma) S equals the epsilon-form
    increment with epsilon = eta^((alpha-1)/alpha) sigma.
    """
    StableParams(alpha)
    require(sigma >= 0, 'sigma', f"must be nonnegative, got {sigma}")
    return eta ** ((alpha - 1.0) / alpha) * sigma


class NoiseStream:
    """Unit-amplitude Levy increments eta^(1/alpha) S_k, drawn chunk by chunk"""

    def __init__(self, alpha, dim, eta, seed, chunk=NOISE_CHUNK):
        self.alpha = alpha
        self.dim = dim
        self.scale = noise_scale(alpha, eta)
        self.chunk = chunk
        self._rng = make_rng(seed)

    def next_chunk(self):
        return self.scale * unit_draws(self.alpha, (self.chunk, self.dim), self._rng)


def _norm(v):
    return math.sqrt(float(np.dot(v, v)))


def drift_substeps(potential, w, eta):
    """
    Integrate the gradient flow over time eta in adaptive explicit substeps.

    Each substep moves the state by at most STIFF_FRACTION * (1 + |w|).
    """
    remaining = eta
    for _ in range(MAX_SUBSTEPS):
        g = potential.grad(w)
        g_norm = _norm(g)
        if g_norm == 0.0:
            return w
        h = min(remaining, STIFF_FRACTION * (1.0 + _norm(w)) / g_norm)
        w = w - h * g
        remaining -= h
        if remaining <= 0.0:
            return w
        if not np.all(np.isfinite(w)):
            return w
    return w


def drift_step(potential, w, eta, stiff_guard=False):
    g = potential.grad(w)
    d = eta * g
    if stiff_guard and _norm(d) > STIFF_FRACTION * (1.0 + _norm(w)):
        return drift_substeps(potential, w, eta)
    return w - d


def _scalar_substeps(grad, x, eta):
    remaining = eta
    for _ in range(MAX_SUBSTEPS):
        g = grad(x)
        if g == 0.0:
            return x
        h = min(remaining, STIFF_FRACTION * (1.0 + abs(x)) / abs(g))
        x = x - h * g
        remaining -= h
        if remaining <= 0.0 or not math.isfinite(x):
            return x
    return x


def drift_step_batch(potential, x, eta, stiff_guard=False):
    """Drift step for a vector of 1-D replicas (shape (R,))"""
    g = potential.grad(x[:, None])[:, 0]
    d = eta * g
    out = x - d
    if stiff_guard:
        with np.errstate(invalid='ignore'):
            stiff = np.abs(d) > STIFF_FRACTION * (1.0 + np.abs(x))
        for r in np.flatnonzero(stiff):
            out[r] = _scalar_substeps(potential.grad_scalar, float(x[r]), eta)
    return out


def simulate(config):
    """
    Integrate the Levy-driven recursion described by `config`.

    The recursion is applied as written; `stiff_guard` opts into drift
    substeps. With epsilon=0 no random numbers are drawn and, unguarded, the
    result is plain gradient descent step for step. The noise added at step k is epsilon * (eta^(1/alpha) S_k), so
    increments at (alpha, epsilon) are exactly epsilon times those at (alpha, 1).
    """
    if config.potential.dim == 1 and hasattr(config.potential, 'grad_scalar'):
        return _simulate_scalar(config)

    potential, eta, eps = config.potential, config.eta, config.epsilon
    every = config.record_every
    stream = NoiseStream(config.alpha, potential.dim, eta, config.seed) if eps > 0 else None

    w = np.array(config.w0, dtype=np.float64)
    times, states = [0.0], [w.copy()]
    noise, position = None, NOISE_CHUNK

    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(1, config.steps + 1):
            previous = w
            w = drift_step(potential, w, eta, config.stiff_guard)
            if stream is not None:
                if position == NOISE_CHUNK:
                    noise, position = stream.next_chunk(), 0
                w = w + eps * noise[position]
                position += 1
            if not np.all(np.isfinite(w)):
                raise SimulationBlowUpError(k, previous.tolist())
            if k % every == 0 or k == config.steps:
                times.append(k * eta)
                states.append(w.copy())

    return Trajectory(times=np.array(times), states=np.array(states), thinning=every)


def _simulate_scalar(config):
    """1-D fast path on Python floats; same arithmetic as the array path"""
    grad = config.potential.grad_scalar
    eta, eps, guard = config.eta, config.epsilon, config.stiff_guard
    every = config.record_every
    stream = NoiseStream(config.alpha, 1, eta, config.seed) if eps > 0 else None

    x = config.w0[0]
    times, states = [0.0], [x]
    noise, position = [], NOISE_CHUNK

    for k in range(1, config.steps + 1):
        previous = x
        d = eta * grad(x)
        if guard and abs(d) > STIFF_FRACTION * (1.0 + abs(x)):
            x = _scalar_substeps(grad, x, eta)
        else:
            x = x - d
        if stream is not None:
            if position == NOISE_CHUNK:
                noise, position = stream.next_chunk()[:, 0].tolist(), 0
            x = x + eps * noise[position]
            position += 1
        if not math.isfinite(x):
            raise SimulationBlowUpError(k, [previous])
        if k % every == 0 or k == config.steps:
            times.append(k * eta)
            states.append(x)

    return Trajectory(times=np.array(times), states=np.array(states)[:, None], thinning=every)


@dataclass(frozen=True)
class EnsembleResult:
    times: np.ndarray
    states: np.ndarray  # (records, replicas, dim)
    seeds: tuple = field(default=())

    @property
    def final_states(self):
        return self.states[-1]


def simulate_ensemble(potential, alpha, epsilon, eta, steps, w0s, seeds, thinning=None,
                      stiff_guard=False):
    """
    Step many replicas together; replica i uses its own noise stream seeded by
    seeds[i], so it follows the same path `simulate` gives for that seed.
    """
    w = np.array(w0s, dtype=np.float64).reshape(len(seeds), potential.dim)
    SdeConfig(potential, alpha, epsilon, eta, steps, tuple(w[0]), seed=seeds[0], thinning=thinning)
    every = thinning or default_thinning(steps)
    streams = [NoiseStream(alpha, potential.dim, eta, s) for s in seeds] if epsilon > 0 else None

    times, states = [0.0], [w.copy()]
    noise, position = None, NOISE_CHUNK

    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(1, steps + 1):
            previous = w
            d = eta * potential.grad(w)
            w = w - d
            if stiff_guard:
                d_norm = np.sqrt(np.sum(d * d, axis=1))
                w_norm = np.sqrt(np.sum(previous * previous, axis=1))
                for r in np.flatnonzero(d_norm > STIFF_FRACTION * (1.0 + w_norm)):
                    w[r] = drift_substeps(potential, previous[r], eta)
            if streams is not None:
                if position == NOISE_CHUNK:
                    noise = np.stack([s.next_chunk() for s in streams], axis=1)
                    position = 0
                w = w + epsilon * noise[position]
                position += 1
            if not np.all(np.isfinite(w)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(w), axis=1))[0])
                raise SimulationBlowUpError(k, previous[bad].tolist())
            if k % every == 0 or k == steps:
                times.append(k * eta)
                states.append(w.copy())

    return EnsembleResult(times=np.array(times), states=np.stack(states), seeds=tuple(seeds))


def levy_path(alpha, dim, horizon, dt, seed, thinning=1):
    """
    Sample path of d-dimensional alpha-stable Levy motion on [0, horizon].

    L_0 = 0 and increments over dt are i.i.d. SaS(dt^(1/alpha)) across steps
    and coordinates.
    """
    StableParams(alpha)
    require(dim >= 1, 'dim', f"must be at least 1, got {dim}")
    require(dt > 0, 'dt', f"must be positive, got {dt}")
    require(horizon >= dt, 'horizon', f"must be at least dt={dt}, got {horizon}")
    require(int(thinning) == thinning and thinning >= 1, 'thinning',
            f"must be a positive integer, got {thinning}")

    steps = int(math.floor(horizon / dt + 1e-9))
    increments = noise_scale(alpha, dt) * unit_draws(alpha, (steps, dim), make_rng(seed))
    path = np.vstack([np.zeros((1, dim)), np.cumsum(increments, axis=0)])
    times = np.arange(steps + 1) * dt

    keep = np.arange(0, steps + 1, thinning)
    if keep[-1] != steps:
        keep = np.append(keep, steps)
    return Trajectory(times=times[keep], states=path[keep], thinning=thinning)


@dataclass(frozen=True)
class FlatValleyRow:
    alpha: float
    inits: int
    distance: dict
    curvature: dict
    final_loss_mean: float

    def to_dict(self):
        row = {'alpha': self.alpha, 'inits': self.inits}
        row.update({f'distance_{k}': v for k, v in self.distance.items()})
        row.update({f'curvature_{k}': v for k, v in self.curvature.items()})
        row['final_loss_mean'] = self.final_loss_mean
        return row


def _summary(values):
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return {'mean': float(np.mean(values)), 'median': float(median),
            'q25': float(q25), 'q75': float(q75)}


def _flat_valley_cell(task):
    alpha, alpha_index, epsilon, eta, steps, starts, seed, stiff_guard = task
    potential = make_product_valley()
    seeds = [cell_seed(seed, alpha_index + 1, i) for i in range(len(starts))]
    result = simulate_ensemble(potential, alpha, epsilon, eta, steps, starts, seeds, thinning=steps,
                               stiff_guard=stiff_guard)
    final = result.final_states
    logger.info("flat valley: alpha=%.3f done (%d inits)", alpha, len(starts))
    return (np.linalg.norm(final, axis=1), ProductValley.curvature_proxy(final),
            potential.value(final))


def flat_valley_experiment(alpha_grid, epsilon, eta, steps, inits, seed, workers=1, stiff_guard=True):
    """
    Noisy descent on (w1 w2)^2 from random starts for each tail index.

    The same uniform starts on [-2, 2]^2 are reused for every alpha; the final
    iterate's distance from the origin and curvature proxy are summarised.
    The drift guard is on unless `stiff_guard` is False.
    """
    alpha_grid = [float(a) for a in alpha_grid]
    for alpha in alpha_grid:
        StableParams(alpha)
    require(inits >= 1, 'inits', f"must be at least 1, got {inits}")
    require(epsilon >= 0, 'epsilon', f"must be nonnegative, got {epsilon}")
    require(eta > 0, 'eta', f"must be positive, got {eta}")
    require(steps >= 1, 'steps', f"must be at least 1, got {steps}")

    starts = make_rng(cell_seed(seed, 0)).uniform(-2.0, 2.0, size=(inits, 2))
    tasks = [(alpha, i, epsilon, eta, steps, starts, seed, stiff_guard)
             for i, alpha in enumerate(alpha_grid)]
    rows = []
    for alpha, (distance, curvature, loss) in zip(alpha_grid, fan_out(_flat_valley_cell, tasks, workers)):
        rows.append(FlatValleyRow(alpha=alpha, inits=inits, distance=_summary(distance),
                                  curvature=_summary(curvature),
                                  final_loss_mean=float(np.mean(loss))))
    return rows
