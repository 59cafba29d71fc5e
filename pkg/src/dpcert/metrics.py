"""Per-sample robustness diagnostics and radius-stratified analyses."""

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import spearmanr

from dpcert.errors import ConfigError, ValidationError
from dpcert.nn import MlpModel, _ce_dlogits, backward, forward, hvp_input, input_gradient
from dpcert.special import standard_normal, uniform_open

METRIC_NAMES = ("grad_norm", "hessian_spec_norm", "local_lipschitz")
DEFAULT_THRESHOLDS = (0.5, 1.0, 1.5)
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class SampleMetrics:
    index: int
    label: int
    grad_norm: float
    hessian_spec_norm: float
    hessian_converged: bool
    local_lipschitz: float
    certified_radius: float
    certified_correct: bool

    def __post_init__(self):
        for name in METRIC_NAMES + ("certified_radius",):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class AttackConfig:
    zeta: float = 0.1
    pgd_steps: int = 10
    pgd_step_size: Optional[float] = None     # None -> zeta / 4
    fgsm_strengths: tuple = (0.0005, 0.01, 0.1, 0.5, 1.0)

    def __post_init__(self):
        if not self.zeta > 0:
            raise ConfigError("zeta must be > 0")
        if self.pgd_steps < 1:
            raise ConfigError("pgd_steps must be >= 1")
        if self.pgd_step_size is None:
            object.__setattr__(self, "pgd_step_size", self.zeta / 4)
        if not 0 < self.pgd_step_size <= self.zeta:
            raise ConfigError("pgd_step_size must lie in (0, zeta]")
        s = tuple(float(v) for v in self.fgsm_strengths)
        if any(v < 0 for v in s) or any(b < a for a, b in zip(s, s[1:])):
            raise ConfigError("fgsm strengths must be nonnegative and ascending")
        object.__setattr__(self, "fgsm_strengths", s)


# -- gradient and curvature ------------------------------------------------

def input_grad_norm(model, x, y):
    return float(np.linalg.norm(input_gradient(model, x, y)))


def power_iteration(hvp: Callable, dim, rng, tol=1e-6, max_iter=100):
    """Largest-magnitude eigenvalue of a symmetric operator; returns ``(|lambda|, converged)``."""
    v = standard_normal(rng, dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        hv = hvp(v)
        new = float(v @ hv)
        norm = np.linalg.norm(hv)
        if norm < 1e-300:
            return 0.0, True
        v = hv / norm
        if abs(abs(new) - abs(lam)) <= tol * abs(new):
            return abs(new), True
        lam = new
    return abs(lam), False


def input_hessian_spectral_norm(model, x, y, rng, tol=1e-6, max_iter=100):
    """Spectral norm of the cross-entropy input Hessian (finite-difference HVPs)."""
    x = np.asarray(x, dtype=np.float64)
    return power_iteration(lambda v: hvp_input(model, x, y, v), x.size, rng, tol, max_iter)


# -- local Lipschitz -------------------------------------------------------

class ModelFeatures:
    """Penultimate features of an MLP with their vector-Jacobian product."""

    def __init__(self, model):
        self.model = model

    def value(self, x):
        return forward(self.model, x).inputs[-1][0]

    def vjp(self, x, u):
        trace = forward(self.model, x)
        return backward(self.model, trace, dfeatures=u, params=False)[1]


class LinearFeatures:
    def __init__(self, w):
        self.w = np.atleast_2d(np.asarray(w, dtype=np.float64))

    def value(self, x):
        return self.w @ x

    def vjp(self, x, u):
        return u @ self.w


def local_lipschitz(features, x, attack, rng):
    """Max of ``||f(x) - f(x')||_1 / ||x - x'||_inf`` along an l_inf PGD path."""
    if isinstance(features, MlpModel):
        features = ModelFeatures(features)
    x = np.asarray(x, dtype=np.float64)
    z = attack.zeta
    fx = features.value(x)
    xp = x + z * (uniform_open(rng, x.size) - 0.5)
    best = 0.0
    for step in range(attack.pgd_steps + 1):
        diff = features.value(xp) - fx
        dist = max(float(np.max(np.abs(xp - x))), 1e-12)
        best = max(best, float(np.sum(np.abs(diff))) / dist)
        if step == attack.pgd_steps:
            break
        grad = features.vjp(xp, np.sign(diff))
        xp = np.clip(xp + attack.pgd_step_size * np.sign(grad), x - z, x + z)
    return best


# -- FGSM ----------------------------------------------------------------

def fgsm_delta(model, x, y, strength):
    """Sign perturbation ``s * sign(grad_x L)``, one row per sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    trace = forward(model, x)
    g = backward(model, trace, dlogits=_ce_dlogits(trace, np.asarray(y)), params=False)[1]
    return strength * np.sign(g)


def fgsm_perturb(model, x, y, strength):
    return np.atleast_2d(np.asarray(x, dtype=np.float64)) + fgsm_delta(model, x, y, strength)


def fgsm_accuracy(model, x, y, strengths):
    y = np.asarray(y)
    if y.size == 0:
        raise ValidationError("fgsm_accuracy needs a nonempty dataset")
    if any(b < a for a, b in zip(strengths, strengths[1:])):
        raise ValidationError("strengths must be ascending")
    return [float(np.mean(model.predict(fgsm_perturb(model, x, y, s)) == y)) for s in strengths]


# -- analyses ------------------------------------------------------------

def log_metric(v):
    return math.log10(v + LOG_FLOOR)


@dataclass
class RadiusGroupReport:
    bin_width: float
    edges: list
    counts: list
    means: dict           # metric name -> per-bin log10(mean) or None

    def to_dict(self):
        return asdict(self)


def group_by_radius(samples, bin_width):
    """Bin by certified radius; per bin, log10 of the mean of each metric."""
    if not bin_width > 0:
        raise ValidationError("bin_width must be > 0")
    if not samples:
        raise ValidationError("no samples to group")
    radii = np.array([s.certified_radius for s in samples])
    nbins = max(1, math.ceil(radii.max() / bin_width))
    edges = [i * bin_width for i in range(nbins + 1)]
    idx = np.minimum((radii / bin_width).astype(np.int64), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    means = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(s, name) for s in samples])
        means[name] = [log_metric(float(vals[idx == b].mean())) if counts[b] else None
                       for b in range(nbins)]
    return RadiusGroupReport(bin_width, edges, counts.tolist(), means)


@dataclass(frozen=True)
class BinSpec:
    lo: float = -6.0
    hi: float = 4.0
    count: int = 40

    def edges(self):
        return np.linspace(self.lo, self.hi, self.count + 1)


@dataclass
class ThresholdSplitReport:
    threshold: float
    metric: str
    edges: list
    above: list
    below: list

    @property
    def n_above(self):
        return sum(self.above)

    @property
    def n_below(self):
        return sum(self.below)

    def to_dict(self):
        d = asdict(self)
        d["n_above"], d["n_below"] = self.n_above, self.n_below
        return d


def threshold_split(samples, tau, metric, bins=BinSpec()):
    """Histograms of log10 metric values for radius >= tau versus radius < tau."""
    if tau < 0:
        raise ValidationError("threshold must be >= 0")
    if metric not in METRIC_NAMES:
        raise ValidationError(f"unknown metric {metric!r}")
    edges = bins.edges()
    logs = np.clip([log_metric(getattr(s, metric)) for s in samples], bins.lo, bins.hi)
    up = np.array([s.certified_radius >= tau for s in samples], dtype=bool)
    above = np.histogram(logs[up], edges)[0] if up.any() else np.zeros(bins.count, dtype=np.int64)
    below = np.histogram(logs[~up], edges)[0] if (~up).any() else np.zeros(bins.count, dtype=np.int64)
    return ThresholdSplitReport(float(tau), metric, edges.tolist(), above.tolist(), below.tolist())


def radius_correlations(samples):
    """Spearman rank correlation of certified radius with each metric (None if undefined)."""
    radii = np.array([s.certified_radius for s in samples])
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(s, name) for s in samples])
        if len(samples) < 2 or np.ptp(radii) == 0 or np.ptp(vals) == 0:
            out[name] = None
        else:
            out[name] = float(spearmanr(radii, vals)[0])
    return out
