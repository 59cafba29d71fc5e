"""Statistical special functions: normal quantile, erfc, incomplete beta.

Everything here is self-contained (stdlib + numpy) so the certification
radius and the Gaussian sampler share one audited code path.
"""

import math

import numpy as np

from dpcert.errors import DomainError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_INV_SQRTPI = 1.0 / math.sqrt(math.pi)

# Wichura (1988), algorithm AS241 / PPND16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    out = np.full_like(x, coef[-1])
    for c in coef[-2::-1]:
        out = out * x + c
    return out


def _erfc_series(t):
    # erfc(t) = 1 - erf(t), Maclaurin series of erf; used for 0 <= t < 2
    t2 = -(t * t)
    term = t.copy()
    total = t.copy()
    scratch = np.empty_like(t)
    for n in range(1, 80):
        term *= t2
        term /= n
        np.divide(term, 2 * n + 1, out=scratch)
        total += scratch
        if n % 4 == 0 and np.max(np.abs(scratch), initial=0.0) < 1e-17:
            break
    return 1.0 - 2.0 * _INV_SQRTPI * total


def _erfc_cf(t):
    # Laplace continued fraction, evaluated bottom-up; used for t >= 2
    frac = np.zeros_like(t)
    for k in range(120, 0, -1):
        frac = (k / 2.0) / (t + frac)
    return np.exp(-t * t) * _INV_SQRTPI / (t + frac)


def erfc(x):
    """Complementary error function, vectorised, accurate to a few ulp."""
    x = np.asarray(x, dtype=np.float64)
    t = np.abs(x)
    out = np.empty_like(t)
    # bands keep the series short where it converges fast
    for band in (t < 1.0, (t >= 1.0) & (t < 2.0)):
        if band.any():
            out[band] = _erfc_series(t[band])
    far = t >= 2.0
    if far.any():
        out[far] = _erfc_cf(t[far])
    out = np.where(x < 0, 2.0 - out, out)
    return out if out.ndim else float(out)


def norm_cdf(z):
    """Standard normal CDF, computed through erfc for tail accuracy."""
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * erfc(-z / _SQRT2)


def norm_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-0.5 * z * z) / _SQRT2PI


def _ppnd16(p):
    q = p - 0.5
    z = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        z[central] = qc * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    if tail.any():
        pt = p[tail]
        r = np.sqrt(-np.log(np.minimum(pt, 1.0 - pt)))
        zt = np.empty_like(r)
        near = r <= 5.0
        rn = r[near] - 1.6
        zt[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        zt[~near] = _poly(_E, rf) / _poly(_F, rf)
        z[tail] = np.where(q[tail] < 0, -zt, zt)
    return z


def inv_norm_cdf(p):
    """Quantile function of the standard normal distribution.

    Rational approximation followed by one Newton step against the
    erfc-based CDF. The polish is done on the lower half only (``p <= 0.5``)
    where ``Phi(z)`` is computed without cancellation; the upper half uses
    ``-Phi^-1(1 - p)``, which is exact in floating point for ``p >= 0.5``.

    Raises :class:`DomainError` unless every ``p`` lies strictly in (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("inv_norm_cdf requires 0 < p < 1")
    upper = arr > 0.5
    lo = np.where(upper, 1.0 - arr, arr)
    z = _ppnd16(lo)
    z = z - (norm_cdf(z) - lo) / norm_pdf(z)
    z = np.where(upper, -z, z)
    return z if z.ndim else float(z)


def uniform_open(rng, size):
    """Uniform draws strictly inside (0, 1) on a 2**-53 grid."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) * 2.0**-53


def standard_normal(rng, size):
    """N(0, 1) draws by inverse-CDF transform of an open-interval uniform stream.

    Every Gaussian in the package (training noise, augmentations, smoothing)
    goes through here.
    """
    return inv_norm_cdf(uniform_open(rng, size))


# -- incomplete beta -------------------------------------------------------

def _betacf(a, b, x, max_iter=20000, eps=1e-16):
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise DomainError("betainc requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def beta_quantile(q, a, b, tol=1e-12):
    """Inverse of ``betainc`` in x by bracketed bisection on [0, 1]."""
    if not 0.0 <= q <= 1.0:
        raise DomainError("beta_quantile requires 0 <= q <= 1")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
