"""
Stochastic-gradient noise extraction and tail-index tracking during SGD.

At a fixed w the dataset is shuffled and cut into n // b disjoint minibatches;
the noise of batch i is U_i = grad over batch i minus the full gradient over
the same examples. All U_i are flattened and concatenated into one sequence of
length p * (n // b), whose tail index is estimated with the block-sum rule.
Output-layer coordinates that the model fixes through the others are left
out of the pool.
"""
import logging
from dataclasses import dataclass

import numpy as np

from errors import DegenerateInputError, InsufficientDataError, TrainingDivergedError, require
from models import model_from_spec
from stable_sampler import StableParams, make_rng, sample
from tail_estimator import choose_grouping, estimate_alpha
from workers import cell_seed, fan_out

logger = logging.getLogger(__name__)

# trailing share of a run whose estimates are averaged as the stationary value
TAIL_FRACTION = 0.25


@dataclass(frozen=True)
class NoiseBundle:
    """Per-batch noise vectors stacked row by row, in partition order"""

    matrix: np.ndarray
    n: int
    b: int
    iteration: int = 0
    full_gradient_norm: float = 0.0
    redundant: int = 0

    @property
    def p(self):
        return self.matrix.shape[1]

    @property
    def batches(self):
        return self.matrix.shape[0]

    @property
    def values(self):
        return self.matrix.ravel()

    @property
    def K(self):
        return self.matrix.size

    def active(self):
        """Noise restricted to coordinates that never vanish, and the excluded count"""
        keep = np.all(self.matrix != 0.0, axis=0)
        return self.matrix[:, keep].ravel(), int(self.p - np.count_nonzero(keep))


def partition(n, b, seed):
    """Shuffle range(n) and cut it into n // b disjoint batches of size b"""
    require(1 <= b <= n, 'b', f"batch size must lie in [1, n={n}], got {b}")
    order = make_rng(seed).permutation(n)
    batches = n // b
    if n % b:
        logger.debug("partition: %d remainder examples left out of the measurement", n % b)
    return order[:batches * b].reshape(batches, b)


def _batch_gradient(task):
    model, w, X, y = task
    return model.grad(w, X, y)


class StableNoiseInjector:
    """
    Replaces minibatch gradients by full gradient + sigma * SaS(alpha) noise,
    coordinate-wise i.i.d. Batch i draws from the derived seed (seed, i).
    """

    def __init__(self, alpha, seed, sigma=1.0):
        self.params = StableParams(alpha, sigma)
        self.seed = seed

    def __call__(self, index, full_gradient):
        xi = sample(self.params, len(full_gradient), cell_seed(self.seed, index)).values
        return full_gradient + xi


def noise_bundle(model, w, dataset, b, seed, iteration=0, batch_gradient=None, workers=1):
    """
    Gradient noise of `model` at `w` from a seeded disjoint partition.

    When b does not divide n the remainder is left out and the full gradient is
    taken over the retained examples, so the batch noises sum to zero.
    `batch_gradient(i, full_gradient)`, when given, replaces the model's
    gradient on batch i; otherwise the model's redundant output coordinates
    are dropped from every noise vector.
    """
    batches = partition(dataset.n, b, seed)
    retained = batches.ravel()
    full = model.grad(w, *dataset.subset(retained))

    if batch_gradient is not None:
        grads = [batch_gradient(i, full) for i in range(len(batches))]
    else:
        tasks = [(model, w) + dataset.subset(rows) for rows in batches]
        grads = fan_out(_batch_gradient, tasks, workers)

    matrix = np.stack(grads) - full
    redundant = 0
    if batch_gradient is None:
        mask = model.redundant_coordinates()
        matrix, redundant = matrix[:, ~mask], int(mask.sum())
    return NoiseBundle(matrix=matrix, n=dataset.n, b=b, iteration=iteration,
                       full_gradient_norm=float(np.linalg.norm(full)), redundant=redundant)


def estimate_noise_alpha(bundle, drop_inactive=True):
    """Tail index of the bundle; zero coordinates are dropped first when asked"""
    if drop_inactive:
        values, inactive = bundle.active()
        if not len(values):
            raise DegenerateInputError(f"all {bundle.p} noise coordinates vanish at iteration {bundle.iteration}")
    else:
        values, inactive = bundle.values, 0
    return estimate_alpha(values, choose_grouping(len(values))), inactive


@dataclass(frozen=True)
class MeasurementRecord:
    iteration: int
    loss: float
    accuracy: float
    alpha_hat: float
    K: int
    inactive: int

    def to_dict(self):
        return {'iteration': self.iteration, 'loss': self.loss, 'accuracy': self.accuracy,
                'alpha_hat': self.alpha_hat, 'K': self.K, 'inactive': self.inactive}


def measure_run(model, dataset, b, eta, iterations, log_every, seed, workers=1, stop_at_fit=False):
    """
    Plain minibatch SGD w <- w - eta * grad, logging loss, accuracy and the
    tail index of the gradient noise every `log_every` iterations (and at 0).

    Training batches come from per-epoch reshuffles and the last batch of an
    epoch may be short; the noise measurement uses its own disjoint partition.
    With `stop_at_fit` the run ends at the first logged iteration with 100%
    training accuracy.
    """
    require(1 <= b <= dataset.n, 'b', f"batch size must lie in [1, n={dataset.n}], got {b}")
    require(eta > 0, 'eta', f"must be positive, got {eta}")
    require(iterations >= 0, 'iterations', f"must be nonnegative, got {iterations}")
    require(log_every >= 1, 'log_every', f"must be at least 1, got {log_every}")

    w = model.init(cell_seed(seed, 0))
    shuffler = make_rng(cell_seed(seed, 1))
    X, y = dataset.features, dataset.labels
    records = []
    order, cursor = shuffler.permutation(dataset.n), 0

    for k in range(iterations + 1):
        if k % log_every == 0 or k == iterations:
            loss = model.loss(w, X, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(k, loss)
            bundle = noise_bundle(model, w, dataset, b, cell_seed(seed, 2, k), iteration=k,
                                  workers=workers)
            estimate, inactive = estimate_noise_alpha(bundle)
            accuracy = model.accuracy(w, X, y)
            records.append(MeasurementRecord(k, loss, accuracy, estimate.alpha_hat,
                                             estimate.grouping.K, inactive))
            logger.info("iteration %d: loss=%.4f alpha_hat=%.3f", k, loss, estimate.alpha_hat)
            if stop_at_fit and accuracy >= 1.0:
                logger.info("training set fitted at iteration %d", k)
                break
        if k == iterations:
            break

        if cursor >= dataset.n:
            order, cursor = shuffler.permutation(dataset.n), 0
        rows = order[cursor:cursor + b]
        cursor += b
        w = w - eta * model.grad(w, X[rows], y[rows])
        if not np.all(np.isfinite(w)):
            raise TrainingDivergedError(k + 1, float('nan'))

    return records


@dataclass(frozen=True)
class StationarySummary:
    mean: float
    spread: float
    count: int
    first_iteration: int

    def to_dict(self):
        return {'mean': self.mean, 'spread': self.spread, 'count': self.count,
                'first_iteration': self.first_iteration}


def stationary_alpha(records, fraction=TAIL_FRACTION):
    """
    Mean and standard deviation (`spread`) of alpha_hat over the records in
    the last `fraction` of the run, measured in iterations up to the last record.
    """
    require(0.0 < fraction <= 1.0, 'fraction', f"must lie in (0, 1], got {fraction}")
    if not records:
        raise InsufficientDataError("no measurements to average")
    last = records[-1].iteration
    cutoff = last - fraction * last
    tail = [r for r in records if r.iteration >= cutoff]
    values = np.array([r.alpha_hat for r in tail])
    return StationarySummary(mean=float(np.mean(values)),
                             spread=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                             count=len(values), first_iteration=tail[0].iteration)


@dataclass(frozen=True)
class SweepRow:
    model: str
    param_count: int
    b: int
    iterations_run: int
    final_accuracy: float
    alpha_mean: float
    alpha_spread: float

    def to_dict(self):
        return {'model': self.model, 'param_count': self.param_count, 'b': self.b,
                'iterations_run': self.iterations_run, 'final_accuracy': self.final_accuracy,
                'alpha_mean': self.alpha_mean, 'alpha_spread': self.alpha_spread}


def _sweep_cell(task):
    dataset, spec, loss, b, eta, iterations, log_every, seed, fraction, stop_at_fit = task
    model = model_from_spec(spec, dataset.d, dataset.num_classes, loss=loss)
    records = measure_run(model, dataset, b, eta, iterations, log_every, seed, stop_at_fit=stop_at_fit)
    summary = stationary_alpha(records, fraction)
    logger.info("sweep %s b=%d: alpha=%.3f over %d measurements", spec, b, summary.mean, summary.count)
    return SweepRow(model=spec, param_count=model.param_count, b=b,
                    iterations_run=records[-1].iteration, final_accuracy=records[-1].accuracy,
                    alpha_mean=summary.mean, alpha_spread=summary.spread)


def measure_sweep(dataset, model_specs, batch_sizes, eta, iterations, log_every, seed, loss='nll',
                  fraction=TAIL_FRACTION, stop_at_fit=True, workers=1):
    """
    Stationary tail index over a grid of architectures and batch sizes.

    Every (model, batch size) cell is one `measure_run` with the derived seed
    (seed, i, j); cells run in parallel and come back in grid order.
    """
    model_specs = list(model_specs)
    batch_sizes = [int(b) for b in batch_sizes]
    require(model_specs, 'models', "need at least one model")
    require(batch_sizes, 'batch_sizes', "need at least one batch size")
    require(0.0 < fraction <= 1.0, 'fraction', f"must lie in (0, 1], got {fraction}")
    for spec in model_specs:
        model_from_spec(spec, dataset.d, dataset.num_classes, loss=loss)
    for b in batch_sizes:
        require(1 <= b <= dataset.n, 'b', f"batch size must lie in [1, n={dataset.n}], got {b}")

    tasks = [(dataset, spec, loss, b, eta, iterations, log_every, cell_seed(seed, i, j), fraction,
              stop_at_fit)
             for i, spec in enumerate(model_specs) for j, b in enumerate(batch_sizes)]
    return fan_out(_sweep_cell, tasks, workers)
