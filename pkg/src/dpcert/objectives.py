"""Training objectives over augmentation sets.

Each sample contributes ``V = K + 1`` views (slot 0 is the clean input).
The loss functions work on per-view logits of shape ``(B, V, Y)`` and return
``(loss (B,), dlogits (B, V, Y))`` so the DP step can backprop all views of a
batch in one pass. The ``*_loss`` wrappers take a model and a single
:class:`AugmentSet` and return the loss and its flat parameter gradient.
"""

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from dpcert.errors import ConfigError
from dpcert.nn import backward, forward, log_softmax
from dpcert.special import inv_norm_cdf, norm_pdf, standard_normal


@dataclass(frozen=True)
class Gaussian:
    kind = "gaussian"


@dataclass(frozen=True)
class Stability:
    gamma: float = 1.0
    kind = "stability"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("stability gamma must be >= 0")


@dataclass(frozen=True)
class Consistency:
    gamma: float = 1.0
    kind = "consistency"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("consistency gamma must be >= 0")


@dataclass(frozen=True)
class Macer:
    margin: float = 8.0
    prob_clamp: float = 0.02
    kind = "macer"

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError("MACER margin must be > 0")
        if not 0 < self.prob_clamp < 0.5:
            raise ConfigError("MACER prob_clamp must lie in (0, 0.5)")


@dataclass(frozen=True)
class SmoothAdv:
    eps: float = 1.0
    steps: int = 4
    step_size: float = 0.25
    kind = "smoothadv"

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("SmoothAdv eps must be > 0")
        if self.steps < 0:
            raise ConfigError("SmoothAdv steps must be >= 0")


ObjectiveKind = Union[Gaussian, Stability, Consistency, Macer, SmoothAdv]
OBJECTIVES = {cls.kind: cls for cls in (Gaussian, Stability, Consistency, Macer, SmoothAdv)}


@dataclass
class AugmentSet:
    original: np.ndarray
    variants: np.ndarray          # (K, d)
    provenance: str = "gaussian_noise"

    @property
    def views(self):
        return np.concatenate([self.original[None, :], self.variants], axis=0)


class LossGrad(NamedTuple):
    loss: float
    grad: np.ndarray


# -- augmentation ----------------------------------------------------------

def gaussian_augment(x, k, sigma, rng):
    """Slot 0 is ``x``; slots 1..K are ``x + N(0, sigma^2 I)``."""
    if k < 0 or sigma < 0:
        raise ConfigError("augmentations need K >= 0 and sigma >= 0")
    x = np.asarray(x, dtype=np.float64)
    noise = standard_normal(rng, (k, x.size)) if k else np.zeros((0, x.size))
    return AugmentSet(x, x[None, :] + sigma * noise, "gaussian_noise")


def smoothadv_objective(model, xprime, y, noise):
    """Value and input gradient of ``-log mean_j F(x' + noise_j)_y``."""
    noise = np.atleast_2d(noise)
    trace = forward(model, xprime[None, :] + noise)
    lp = trace.log_probs
    k = noise.shape[0]
    # log-mean-exp of the target log-probabilities
    m = np.max(lp[:, y])
    s = np.mean(np.exp(lp[:, y] - m))
    value = -(m + np.log(s))
    p = np.exp(lp)
    w = np.exp(lp[:, y] - m) / (k * s)  # p_jy / (K * mean)
    dlogits = p * w[:, None]
    dlogits[:, y] -= w
    _, gx = backward(model, trace, dlogits=dlogits, params=False)
    return float(value), gx.sum(axis=0)


def smoothadv_attack(model, x, y, sigma, k, eps, steps, step_size, rng):
    """l2 PGD on the Monte Carlo cross-entropy of the smoothed classifier."""
    x = np.asarray(x, dtype=np.float64)
    xp = x.copy()
    for _ in range(steps):
        noise = sigma * standard_normal(rng, (max(k, 1), x.size))
        _, g = smoothadv_objective(model, xp, y, noise)
        gn = np.linalg.norm(g)
        if gn > 0:
            xp = xp + step_size * g / gn
        delta = xp - x
        dn = np.linalg.norm(delta)
        if dn > eps:
            xp = x + delta * (eps / dn)
    return xp


def build_augset(objective, model, x, y, k, sigma, rng):
    x = np.asarray(x, dtype=np.float64)
    if isinstance(objective, SmoothAdv):
        xp = smoothadv_attack(model, x, y, sigma, k, objective.eps, objective.steps,
                              objective.step_size, rng)
        noise = standard_normal(rng, (k, x.size)) if k else np.zeros((0, x.size))
        return AugmentSet(x, xp[None, :] + sigma * noise, "adversarial")
    return gaussian_augment(x, k, sigma, rng)


# -- losses on per-view logits --------------------------------------------

def _ce_terms(logits, y):
    lp = log_softmax(logits)
    p = np.exp(lp)
    b = logits.shape[0]
    rows = np.arange(b)
    loss = -lp[rows, :, y].sum(axis=1)
    d = p.copy()
    d[rows, :, y] -= 1.0
    return loss, d, lp, p


def gaussian_terms(logits, y):
    loss, d, _, _ = _ce_terms(logits, y)
    return loss, d


def stability_terms(logits, y, gamma):
    loss, d, lp, p = _ce_terms(logits, y)
    if gamma == 0 or logits.shape[1] == 1:
        return loss, d
    lp0, p0 = lp[:, :1, :], p[:, :1, :]
    a = lp0 - lp[:, 1:, :]                          # (B, K, Y)
    kl = np.sum(p0 * a, axis=-1)                    # (B, K)
    loss = loss + gamma * kl.sum(axis=1)
    d = d.copy()
    d[:, 1:, :] += gamma * (p[:, 1:, :] - p0)
    d[:, 0, :] += gamma * np.sum(p0 * (a - kl[..., None]), axis=1)
    return loss, d


def consistency_terms(logits, y, gamma):
    if logits.shape[1] < 2:
        raise ConfigError("consistency regularization needs K >= 1")
    loss, d, lp, p = _ce_terms(logits, y)
    if gamma == 0:
        return loss, d
    fhat = p[:, 1:, :].mean(axis=1, keepdims=True)   # treated as a constant
    ent = np.sum(np.where(fhat > 0, fhat * np.log(np.maximum(fhat, 1e-300)), 0.0), axis=-1)
    kl = ent - np.sum(fhat * lp, axis=-1)            # (B, V)
    loss = loss + gamma * kl.sum(axis=1)
    return loss, d + gamma * (p - fhat)


def macer_hinge(fhat, y, margin, prob_clamp):
    """Hinge on the Gaussian-quantile margin of an averaged softmax.

    Returns ``(hinge, dhinge/dfhat)``; both are zero when ``fhat`` does not
    predict ``y``.
    """
    fhat = np.asarray(fhat, dtype=np.float64)
    grad = np.zeros_like(fhat)
    if int(np.argmax(fhat)) != int(y):
        return 0.0, grad
    others = fhat.copy()
    others[y] = -np.inf
    o = int(np.argmax(others))
    lo, hi = prob_clamp, 1.0 - prob_clamp
    a, b = np.clip(fhat[y], lo, hi), np.clip(fhat[o], lo, hi)
    za, zb = inv_norm_cdf(a), inv_norm_cdf(b)
    hinge = margin - (za - zb)
    if hinge <= 0:
        return 0.0, grad
    if lo < fhat[y] < hi:
        grad[y] = -1.0 / norm_pdf(za)
    if lo < fhat[o] < hi:
        grad[o] = 1.0 / norm_pdf(zb)
    return float(hinge), grad


def macer_terms(logits, y, margin, prob_clamp):
    if logits.shape[1] < 2:
        raise ConfigError("MACER needs K >= 1")
    loss, d, _, p = _ce_terms(logits, y)
    loss = loss.copy()
    d = d.copy()
    k = logits.shape[1] - 1
    fhat = p[:, 1:, :].mean(axis=1)
    for i in range(logits.shape[0]):
        h, g = macer_hinge(fhat[i], y[i], margin, prob_clamp)
        if h == 0.0:
            continue
        loss[i] += h
        pj = p[i, 1:, :]                            # (K, Y)
        gj = g / k
        d[i, 1:, :] += pj * (gj[None, :] - (pj @ gj)[:, None])
    return loss, d


def objective_terms(objective, logits, y):
    """Dispatch on the objective kind; see module docstring for shapes."""
    y = np.asarray(y)
    if isinstance(objective, Stability):
        return stability_terms(logits, y, objective.gamma)
    if isinstance(objective, Consistency):
        return consistency_terms(logits, y, objective.gamma)
    if isinstance(objective, Macer):
        return macer_terms(logits, y, objective.margin, objective.prob_clamp)
    return gaussian_terms(logits, y)


# -- single-sample wrappers -----------------------------------------------

def objective_loss(objective, model, augset, y):
    """Total loss of one sample and its flat parameter gradient."""
    views = augset.views
    trace = forward(model, views)
    logits = trace.logits[None, :, :]
    loss, d = objective_terms(objective, logits, np.array([y]))
    grads, _ = backward(model, trace, dlogits=d[0])
    return LossGrad(float(loss[0]), grads.sum(axis=0))


def gaussian_loss(model, augset, y):
    return objective_loss(Gaussian(), model, augset, y)


def stability_loss(model, augset, y, gamma):
    return objective_loss(Stability(gamma), model, augset, y)


def consistency_loss(model, augset, y, gamma):
    return objective_loss(Consistency(gamma), model, augset, y)


def macer_loss(model, augset, y, margin, prob_clamp=0.02):
    return objective_loss(Macer(margin, prob_clamp), model, augset, y)
