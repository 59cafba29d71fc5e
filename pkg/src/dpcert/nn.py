"""Feed-forward classifier with exact per-sample backprop.

Tensors are plain float64 numpy arrays. Every function accepts either a
single input of shape ``(d,)`` or a batch ``(B, d)``; batched calls return
per-row results (per-sample gradients, not their sum).
"""

from dataclasses import dataclass

import numpy as np

from dpcert.errors import ConfigError, ValidationError
from dpcert.special import standard_normal

ACTIVATIONS = ("relu", "tanh")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z, h):
    if name == "tanh":
        return 1.0 - h * h
    return (z > 0.0).astype(np.float64)


@dataclass
class MlpModel:
    """Layers are ``(W, b)`` pairs with ``W`` of shape (out, in)."""

    layers: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        for k, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {k}: bias shape {b.shape} does not match weight {w.shape}")
            if k and w.shape[1] != self.layers[k - 1][0].shape[0]:
                raise ConfigError(f"layer {k} input {w.shape[1]} != layer {k - 1} output")

    @classmethod
    def init(cls, input_dim, hidden, classes, activation="tanh", rng=None):
        """Random init: weights N(0, 1/fan_in), zero biases."""
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [input_dim, *hidden, classes]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = standard_normal(rng, (fan_out, fan_in)) / np.sqrt(fan_in)
            layers.append((w, np.zeros(fan_out)))
        return cls(layers, activation)

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def class_count(self):
        return self.layers[-1][0].shape[0]

    @property
    def hidden_widths(self):
        return [w.shape[0] for w, _ in self.layers[:-1]]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in self.layers)

    def flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {theta.shape}")
        layers, pos = [], 0
        for w, b in self.layers:
            nw = theta[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            nb = theta[pos:pos + b.size].copy()
            pos += b.size
            layers.append((nw.copy(), nb))
        return MlpModel(layers, self.activation)

    def predict(self, x):
        """Hard labels (argmax of logits)."""
        return np.argmax(forward(self, x).logits, axis=-1)


@dataclass
class ForwardTrace:
    inputs: list      # input to each layer; inputs[-1] are penultimate features
    pre: list         # pre-activation output of each layer; pre[-1] == logits
    logits: np.ndarray
    log_probs: np.ndarray
    single: bool = False

    @property
    def probs(self):
        return np.exp(self.log_probs)


def log_softmax(z):
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def forward(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ConfigError(f"input of shape {x.shape} does not match model input dim {model.input_dim}")
    inputs, pre = [], []
    last = len(model.layers) - 1
    for k, (w, b) in enumerate(model.layers):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if k < last:
            h = _act(model.activation, z)
    logits = pre[-1]
    trace = ForwardTrace(inputs, pre, logits, log_softmax(logits), single)
    if single:
        trace.logits = logits[0]
        trace.log_probs = trace.log_probs[0]
    return trace


def cross_entropy(trace, y):
    """``-log p_y`` from the log-softmax (never ``log`` of probabilities)."""
    lp = trace.log_probs
    if lp.ndim == 1:
        if not 0 <= int(y) < lp.shape[0]:
            raise ValidationError(f"label {y} outside [0, {lp.shape[0]})")
        return float(-lp[int(y)])
    y = np.asarray(y)
    return -lp[np.arange(lp.shape[0]), y]


def backward(model, trace, dlogits=None, dfeatures=None, params=True):
    """Vector-Jacobian product through the network, one row per sample.

    Seed with the gradient w.r.t. the logits, or with ``dfeatures`` (gradient
    w.r.t. the penultimate features). Returns ``(param_grads, input_grad)``;
    ``param_grads`` is a ``(B, P)`` array in ``MlpModel.flat`` order, or None
    when ``params`` is False.
    """
    act = model.activation
    n = len(model.layers)
    if dlogits is not None:
        delta = np.atleast_2d(dlogits)
        k = n - 1
    else:
        g = np.atleast_2d(dfeatures)
        if n == 1:
            return (None, g[0] if trace.single else g)
        k = n - 2
        delta = g * _act_grad(act, trace.pre[k], trace.inputs[k + 1])
    blocks = [None] * n
    while True:
        if params:
            h = trace.inputs[k]
            dw = delta[:, :, None] * h[:, None, :]
            blocks[k] = np.concatenate([dw.reshape(delta.shape[0], -1), delta], axis=1)
        g = delta @ model.layers[k][0]
        if k == 0:
            break
        k -= 1
        delta = g * _act_grad(act, trace.pre[k], trace.inputs[k + 1])
    grads = None
    if params:
        bsz = g.shape[0]
        for j in range(n):
            if blocks[j] is None:
                w, b = model.layers[j]
                blocks[j] = np.zeros((bsz, w.size + b.size))
        grads = np.concatenate(blocks, axis=1)
    if trace.single:
        return (grads[0] if grads is not None else None, g[0])
    return grads, g


def _ce_dlogits(trace, y):
    p = trace.probs
    d = p.copy()
    if d.ndim == 1:
        d[int(y)] -= 1.0
    else:
        d[np.arange(d.shape[0]), np.asarray(y)] -= 1.0
    return d


def per_sample_gradients(model, inputs, labels):
    """Cross-entropy gradients per sample: ``(param_grads (B, P), input_grads (B, d))``."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels)
    if inputs.shape[0] == 0:
        raise ValidationError("per_sample_gradients needs a nonempty batch")
    if inputs.shape[0] != labels.shape[0]:
        raise ValidationError("row count and label count differ")
    trace = forward(model, inputs)
    return backward(model, trace, dlogits=_ce_dlogits(trace, labels))


def input_gradient(model, x, y):
    """Gradient of the cross-entropy w.r.t. the input."""
    trace = forward(model, x)
    return backward(model, trace, dlogits=_ce_dlogits(trace, y), params=False)[1]


def hvp_input(model, x, y, v):
    """Input-Hessian-vector product by central difference of input gradients."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    vn = np.linalg.norm(v)
    if not vn > 0:
        raise ValidationError("hvp_input needs a nonzero direction")
    u = v / vn
    h = 1e-4 * (1.0 + np.max(np.abs(x)))
    gp = input_gradient(model, x + h * u, y)
    gm = input_gradient(model, x - h * u, y)
    return (gp - gm) * (vn / (2.0 * h))


def penultimate_features(model, x):
    """Output of the last hidden layer; the input itself for a one-layer model."""
    trace = forward(model, x)
    feats = trace.inputs[-1]
    return feats[0] if trace.single else feats


def kl_divergence(p, q):
    """KL(p || q) for probability vectors; ``q`` is floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1.0) > 1e-9 or np.any(v < 0):
            raise ValidationError(f"{name} is not a probability vector")
    q = np.maximum(q, 1e-12)
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))))
