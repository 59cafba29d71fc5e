"""Randomized-smoothing certification (Monte Carlo CERTIFY) and its summaries."""

from dataclasses import dataclass

import numpy as np

from dpcert.errors import ConfigError, ValidationError
from dpcert.nn import MlpModel
from dpcert.special import beta_quantile, inv_norm_cdf, standard_normal

ABSTAIN = -1


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.25
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001
    batch_size: int = 2_000

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("smoothing sigma must be > 0")
        if self.n0 < 1 or self.n < 1 or self.batch_size < 1:
            raise ConfigError("n0, n and batch_size must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class CertificationOutcome:
    predicted: int          # ABSTAIN (-1) when no certificate was issued
    radius: float = 0.0
    pA_lower: float = 0.0

    @property
    def abstained(self):
        return self.predicted == ABSTAIN


def _predictor(model):
    if isinstance(model, MlpModel):
        return model.predict
    return model


def clopper_pearson_lower(k, n, alpha):
    """One-sided (1 - alpha) lower confidence bound on a binomial proportion."""
    if not 0 <= k <= n:
        raise ValidationError(f"need 0 <= k <= n, got k={k}, n={n}")
    if k == 0:
        return 0.0
    return beta_quantile(alpha, k, n - k + 1)


def radius_two_sided(p_a, p_b, sigma):
    """l2 radius ``sigma/2 * (Phi^-1(pA) - Phi^-1(pB))`` of the smoothed classifier."""
    return 0.5 * sigma * (inv_norm_cdf(p_a) - inv_norm_cdf(p_b))


def sample_counts(model, x, sigma, count, rng, num_classes, batch_size=2_000):
    """Class histogram of ``f(x + eta)`` over ``count`` Gaussian draws.

    ``model`` is an :class:`MlpModel` or any callable mapping an ``(m, d)``
    batch to ``m`` integer labels.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    predict = _predictor(model)
    x = np.asarray(x, dtype=np.float64)
    counts = np.zeros(num_classes, dtype=np.int64)
    remaining = count
    while remaining:
        m = min(batch_size, remaining)
        batch = x[None, :] + sigma * standard_normal(rng, (m, x.size))
        counts += np.bincount(predict(batch), minlength=num_classes)[:num_classes]
        remaining -= m
    return counts


def certify(model, x, cfg, rng, num_classes=None):
    """Guess a class from ``n0`` draws, bound its probability from ``n`` fresh draws."""
    if num_classes is None:
        num_classes = model.class_count
    guess = sample_counts(model, x, cfg.sigma, cfg.n0, rng, num_classes, cfg.batch_size)
    c_hat = int(np.argmax(guess))
    counts = sample_counts(model, x, cfg.sigma, cfg.n, rng, num_classes, cfg.batch_size)
    p_lower = clopper_pearson_lower(int(counts[c_hat]), cfg.n, cfg.alpha)
    if p_lower <= 0.5:
        return CertificationOutcome(ABSTAIN, 0.0, p_lower)
    return CertificationOutcome(c_hat, cfg.sigma * inv_norm_cdf(p_lower), p_lower)


def acr(outcomes, labels):
    """Average certified radius; abstentions and wrong classes count as zero."""
    if len(outcomes) != len(labels):
        raise ValidationError("outcomes and labels differ in length")
    if not outcomes:
        return 0.0
    return float(np.mean([o.radius if o.predicted == int(y) else 0.0
                          for o, y in zip(outcomes, labels)]))


def certified_accuracy_at(outcomes, labels, r_grid):
    if len(outcomes) != len(labels):
        raise ValidationError("outcomes and labels differ in length")
    r_grid = np.asarray(r_grid, dtype=np.float64)
    if np.any(r_grid < 0) or np.any(np.diff(r_grid) < 0):
        raise ValidationError("radius grid must be nonnegative and ascending")
    radii = np.array([o.radius if o.predicted == int(y) else -np.inf
                      for o, y in zip(outcomes, labels)])
    if radii.size == 0:
        return np.zeros_like(r_grid)
    return np.array([float(np.mean(radii >= r)) for r in r_grid])
