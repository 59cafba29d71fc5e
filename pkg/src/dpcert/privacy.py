"""Differentially private optimisation and Renyi-DP accounting.

The update implemented by :func:`private_step` is

    theta <- theta - lr * [ (1/B) sum_i clip( mean_j grad L(x_i^j, y_i) )
                            + (rho * C / B) * xi ],   xi ~ N(0, I)

with ``B`` the *expected* batch size under Poisson sampling and slot
``j = 0`` the clean sample. Averaging the views before clipping keeps the
per-sample sensitivity at ``C`` for any number of augmentations.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from dpcert.errors import ConfigError
from dpcert.nn import backward, forward
from dpcert.objectives import Gaussian, ObjectiveKind, SmoothAdv, build_augset, objective_terms
from dpcert.special import standard_normal

DEFAULT_ORDERS = (1.25, 1.5, 1.75) + tuple(float(a) for a in range(2, 65))


@dataclass(frozen=True)
class ClipRule:
    kind: str = "standard"      # "standard" | "psac"
    bound: float = 1.0          # C
    r: float = 0.01             # PSAC stabiliser, unused for standard

    def __post_init__(self):
        if self.kind not in ("standard", "psac"):
            raise ConfigError(f"unknown clip rule {self.kind!r}")
        if not self.bound > 0:
            raise ConfigError("clip bound C must be > 0")
        if self.kind == "psac" and not (self.r > 0 and math.isfinite(self.bound)):
            raise ConfigError("PSAC needs r > 0 and a finite C")


@dataclass(frozen=True)
class PrivacySpec:
    noise_multiplier: float
    sampling_rate: float
    target_delta: float = 1e-5
    clip: ClipRule = field(default_factory=ClipRule)

    def __post_init__(self):
        if self.noise_multiplier < 0:
            raise ConfigError("noise multiplier must be >= 0")
        if not 0 < self.sampling_rate <= 1:
            raise ConfigError("sampling rate must lie in (0, 1]")
        if not 0 < self.target_delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.noise_multiplier > 0 and not math.isfinite(self.clip.bound):
            raise ConfigError("noise needs a finite clip bound")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.5
    expected_batch: int = 64
    steps: int = 300
    augmentations: int = 2
    smoothing_sigma: float = 0.25
    objective: ObjectiveKind = field(default_factory=Gaussian)
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if self.expected_batch < 1:
            raise ConfigError("expected batch size must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.augmentations < 0:
            raise ConfigError("augmentations K must be >= 0")
        if self.smoothing_sigma < 0:
            raise ConfigError("smoothing sigma must be >= 0")


# -- clipping / sampling --------------------------------------------------

def clip_gradient(g, rule):
    """Clip one flat gradient (or each row of a 2-D stack)."""
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    c = rule.bound
    if rule.kind == "standard":
        if not math.isfinite(c):
            return g.copy()
        scale = np.minimum(1.0, c / np.maximum(norm, 1e-300))
    else:
        denom = norm + rule.r / (norm + rule.r)
        scale = c / denom
    return g * scale


def poisson_sample(n, q, rng):
    """Indices included independently with probability ``q``."""
    if not 0 < q <= 1:
        raise ConfigError("sampling rate must lie in (0, 1]")
    return np.flatnonzero(rng.random(n) < q)


# -- private step ---------------------------------------------------------

def clipped_sample_gradients(model, inputs, labels, cfg, spec, rng):
    """Per-sample clipped, view-averaged gradients, shape ``(b, P)``."""
    b = inputs.shape[0]
    if b == 0:
        return np.zeros((0, model.n_params))
    k = cfg.augmentations
    if isinstance(cfg.objective, SmoothAdv):
        views = np.stack([
            build_augset(cfg.objective, model, inputs[i], int(labels[i]), k, cfg.smoothing_sigma, rng).views
            for i in range(b)
        ])                                           # (b, K+1, d)
    else:
        # one draw for the batch consumes the stream exactly like per-sample draws
        noise = standard_normal(rng, (b, k, inputs.shape[1])) if k else np.zeros((b, 0, inputs.shape[1]))
        views = np.concatenate([inputs[:, None, :], inputs[:, None, :] + cfg.smoothing_sigma * noise], axis=1)
    v = k + 1
    trace = forward(model, views.reshape(b * v, -1))
    logits = trace.logits.reshape(b, v, -1)
    _, dlogits = objective_terms(cfg.objective, logits, labels)
    grads, _ = backward(model, trace, dlogits=dlogits.reshape(b * v, -1))
    per_sample = grads.reshape(b, v, -1).sum(axis=1) / v
    return clip_gradient(per_sample, spec.clip)


def private_step(model, batch_idx, inputs, labels, cfg, spec, rng, hook=None):
    """One DP step on the Poisson batch ``batch_idx``; returns the new model.

    ``hook``, when given, receives the per-sample pre-noise contributions
    (clipped gradient / B) before they are summed.
    """
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    clipped = clipped_sample_gradients(model, inputs[batch_idx], labels[batch_idx], cfg, spec, rng)
    contrib = clipped / cfg.expected_batch
    if hook is not None:
        hook(contrib)
    update = contrib.sum(axis=0)
    if spec.noise_multiplier > 0:
        xi = standard_normal(rng, model.n_params)
        update = update + (spec.noise_multiplier * spec.clip.bound / cfg.expected_batch) * xi
    return model.with_flat(model.flat() - cfg.learning_rate * update)


# -- Renyi DP accountant --------------------------------------------------

@dataclass(frozen=True)
class AccountantState:
    orders: tuple = DEFAULT_ORDERS
    rdp: tuple = tuple(0.0 for _ in DEFAULT_ORDERS)
    steps: int = 0


def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_comb(n, k):
    # log |C(n, k)|; lgamma returns log|Gamma| for negative non-integers
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log_erfc(x):
    if x < 25.0:
        return math.log(math.erfc(x))
    # asymptotic expansion; math.erfc underflows past ~26
    x2 = x * x
    return -x2 - math.log(x) - 0.5 * math.log(math.pi) + math.log1p(-0.5 / x2 + 0.75 / (x2 * x2))


def _log_a_int(q, sigma, alpha):
    log_a = -math.inf
    for i in range(alpha + 1):
        term = (_log_comb(alpha, i) + i * math.log(q) + (alpha - i) * math.log1p(-q)
                + (i * i - i) / (2.0 * sigma * sigma))
        log_a = _log_add(log_a, term)
    return log_a


def _log_a_frac(q, sigma, alpha, max_terms=2000):
    # split the integral at z0 where the mixture ratio crosses 1; each side is
    # a convergent binomial series (term magnitudes summed: an upper bound)
    log_a0 = log_a1 = -math.inf
    z0 = sigma * sigma * math.log(1.0 / q - 1.0) + 0.5
    last0 = last1 = -math.inf
    for i in range(max_terms):
        j = alpha - i
        coef = _log_comb(alpha, i)
        t0 = coef + i * math.log(q) + j * math.log1p(-q)
        t1 = coef + j * math.log(q) + i * math.log1p(-q)
        e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * sigma))
        e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * sigma))
        s0 = t0 + (i * i - i) / (2.0 * sigma * sigma) + e0
        s1 = t1 + (j * j - j) / (2.0 * sigma * sigma) + e1
        log_a0 = _log_add(log_a0, s0)
        log_a1 = _log_add(log_a1, s1)
        total = _log_add(log_a0, log_a1)
        if s0 < last0 and s1 < last1 and max(s0, s1) < total - 30:
            return total
        last0, last1 = s0, s1
    return math.inf


def sgm_rdp(q, sigma, alpha):
    """RDP of one Sampled Gaussian Mechanism step at order ``alpha``."""
    if sigma == 0:
        return math.inf
    if q == 1.0:
        return alpha / (2.0 * sigma * sigma)
    if q == 0.0:
        return 0.0
    if float(alpha).is_integer():
        return _log_a_int(q, sigma, int(alpha)) / (alpha - 1.0)
    frac = _log_a_frac(q, sigma, alpha) / (alpha - 1.0)
    if math.isfinite(frac):
        return frac
    # series too slow (q near 1/2): RDP is nondecreasing in the order
    return sgm_rdp(q, sigma, float(math.ceil(alpha)))


def rdp_accumulate(acc, q, rho, steps=1):
    if not 0 < q <= 1:
        raise ConfigError("sampling rate must lie in (0, 1]")
    if rho < 0:
        raise ConfigError("noise multiplier must be >= 0")
    inc = [sgm_rdp(q, rho, a) for a in acc.orders]
    rdp = tuple(r + steps * d for r, d in zip(acc.rdp, inc))
    return AccountantState(acc.orders, rdp, acc.steps + steps)


def epsilon_at(acc, delta):
    """Best ``(epsilon, order)`` from ``rdp + log(1/delta)/(alpha - 1)``."""
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if acc.steps == 0:
        return 0.0, None
    eps = [r + math.log(1.0 / delta) / (a - 1.0) for r, a in zip(acc.rdp, acc.orders)]
    best = int(np.argmin(eps))
    if not math.isfinite(eps[best]):
        return math.inf, None
    return float(eps[best]), acc.orders[best]


def calibrate_noise(q, steps, delta, target_epsilon, lo=0.3, hi=64.0, iters=50):
    """Smallest noise multiplier (to bisection precision) giving eps <= target."""
    def eps(rho):
        return epsilon_at(rdp_accumulate(AccountantState(), q, rho, steps), delta)[0]

    if eps(hi) > target_epsilon:
        raise ConfigError(f"cannot reach epsilon {target_epsilon} with noise <= {hi}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if eps(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi
