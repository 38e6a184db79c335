"""
Small classifiers with exact, hand-written gradients.

Parameters live in one flat float64 vector w; each model knows how to unpack
it into per-layer weight matrices and bias vectors. Losses and gradients are
means over the rows they are given, so the gradient over a subset equals the
mean of the per-example gradients.
"""
import numpy as np
from scipy.special import logsumexp, softmax

from errors import ParameterDomainError, require
from stable_sampler import make_rng

LOSSES = ('nll', 'hinge')
HINGE_MARGIN = 1.0
MAX_PARAMS = 200_000


def relu(z):
    return np.maximum(z, 0.0)


def relu_prime(z):
    return np.where(z > 0.0, 1.0, 0.0)


class FeedForward:
    """
    Fully connected ReLU network with a linear output layer.

    With no hidden layers this is multinomial logistic regression.
    """

    name = 'mlp'

    def __init__(self, input_dim, num_classes, hidden=(), loss='nll'):
        require(input_dim >= 1, 'input_dim', f"must be at least 1, got {input_dim}")
        require(num_classes >= 2, 'num_classes', f"need at least two classes, got {num_classes}")
        require(all(h >= 1 for h in hidden), 'hidden', f"layer widths must be positive, got {hidden}")
        require(loss in LOSSES, 'loss', f"must be one of {LOSSES}, got {loss!r}")

        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.loss_name = loss

        sizes = (self.input_dim,) + self.hidden + (self.num_classes,)
        self.shapes = [(fan_in, fan_out) for fan_in, fan_out in zip(sizes, sizes[1:])]
        self.param_count = sum(i * o + o for i, o in self.shapes)
        require(self.param_count <= MAX_PARAMS, 'hidden',
                f"{self.param_count} parameters exceed the desk-scale cap {MAX_PARAMS}")

    def describe(self):
        return {'model': self.name, 'hidden': list(self.hidden), 'loss': self.loss_name,
                'param_count': self.param_count}

    def unpack(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.param_count,):
            raise ParameterDomainError('w', f"expected {self.param_count} parameters, got shape {w.shape}")
        layers, start = [], 0
        for fan_in, fan_out in self.shapes:
            W = w[start:start + fan_in * fan_out].reshape(fan_in, fan_out)
            start += fan_in * fan_out
            b = w[start:start + fan_out]
            start += fan_out
            layers.append((W, b))
        return layers

    def redundant_coordinates(self):
        """
        Mask of the output-layer coordinates fixed by the others.

        Both losses have score derivatives summing to zero over the classes, so
        the gradient of the last class column (weights and bias) is minus the
        sum of the other columns for every batch.
        """
        mask = np.zeros(self.param_count, dtype=bool)
        fan_in, fan_out = self.shapes[-1]
        start = self.param_count - fan_in * fan_out - fan_out
        mask[start:start + fan_in * fan_out].reshape(fan_in, fan_out)[:, -1] = True
        mask[-1] = True
        return mask

    def init(self, seed):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias"""
        rng = make_rng(seed)
        parts = []
        for fan_in, fan_out in self.shapes:
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            parts.append(rng.uniform(-bound, bound, size=fan_out))
        return np.concatenate(parts)

    def _forward(self, w, X):
        activations, pre = [np.asarray(X, dtype=np.float64)], []
        layers = self.unpack(w)
        for index, (W, b) in enumerate(layers):
            z = activations[-1] @ W + b
            pre.append(z)
            activations.append(relu(z) if index < len(layers) - 1 else z)
        return layers, activations, pre

    def scores(self, w, X):
        return self._forward(w, X)[1][-1]

    def _loss_and_delta(self, scores, y):
        """Mean loss and its derivative with respect to the scores"""
        n = len(y)
        rows = np.arange(n)
        if self.loss_name == 'nll':
            loss = float(np.mean(logsumexp(scores, axis=1) - scores[rows, y]))
            delta = softmax(scores, axis=1)
            delta[rows, y] -= 1.0
            return loss, delta / n

        # multi-class margin loss: sum_{j != y} max(0, margin - s_y + s_j) / C
        margins = HINGE_MARGIN - scores[rows, y][:, None] + scores
        margins[rows, y] = 0.0
        active = (margins > 0.0).astype(np.float64)
        loss = float(np.mean(np.sum(np.maximum(margins, 0.0), axis=1)) / self.num_classes)
        delta = active
        delta[rows, y] = -active.sum(axis=1)
        return loss, delta / (n * self.num_classes)

    def loss(self, w, X, y):
        return self._loss_and_delta(self.scores(w, X), np.asarray(y))[0]

    def loss_and_grad(self, w, X, y):
        layers, activations, pre = self._forward(w, X)
        loss, delta = self._loss_and_delta(activations[-1], np.asarray(y))

        grads = []
        for index in range(len(layers) - 1, -1, -1):
            W, _ = layers[index]
            grads.append(delta.sum(axis=0))
            grads.append((activations[index].T @ delta).ravel())
            if index:
                delta = (delta @ W.T) * relu_prime(pre[index - 1])
        return loss, np.concatenate(grads[::-1])

    def grad(self, w, X, y):
        return self.loss_and_grad(w, X, y)[1]

    def accuracy(self, w, X, y):
        return float(np.mean(np.argmax(self.scores(w, X), axis=1) == np.asarray(y)))


class SoftmaxRegression(FeedForward):
    name = 'linear'

    def __init__(self, input_dim, num_classes, loss='nll'):
        super().__init__(input_dim, num_classes, hidden=(), loss=loss)


class MLP(FeedForward):
    name = 'mlp'

    def __init__(self, input_dim, num_classes, hidden=(128,), loss='nll'):
        require(1 <= len(hidden) <= 2, 'hidden', f"one or two hidden layers, got {len(hidden)}")
        super().__init__(input_dim, num_classes, hidden=hidden, loss=loss)


def model_from_spec(spec, input_dim, num_classes, loss='nll'):
    """linear | mlp:W | mlp:W1,W2"""
    kind, _, args = spec.partition(':')
    kind = kind.strip().lower()
    if kind == 'linear':
        return SoftmaxRegression(input_dim, num_classes, loss=loss)
    if kind == 'mlp':
        try:
            hidden = tuple(int(v) for v in args.split(',')) if args else (128,)
        except ValueError:
            raise ParameterDomainError('model', f"cannot parse layer widths in {spec!r}")
        return MLP(input_dim, num_classes, hidden=hidden, loss=loss)
    raise ParameterDomainError('model', f"unknown model {kind!r}")


def finite_difference_check(model, w, X, y, directions=20, seed=0, h=1e-6):
    """
    Largest error between `grad` and central differences of `loss` along
    random unit directions, relative to the gradient norm.
    """
    rng = make_rng(seed)
    g = model.grad(w, X, y)
    scale = max(float(np.linalg.norm(g)), 1e-8)
    worst = 0.0
    for _ in range(directions):
        direction = rng.standard_normal(model.param_count)
        direction /= np.linalg.norm(direction)
        fd = (model.loss(w + h * direction, X, y) - model.loss(w - h * direction, X, y)) / (2.0 * h)
        exact = float(g @ direction)
        worst = max(worst, abs(fd - exact) / scale)
    return worst
