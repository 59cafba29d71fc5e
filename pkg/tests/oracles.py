"""Independent numerical oracles (mpmath), kept apart from dpcert code paths."""

import math
from functools import lru_cache

import mpmath


@lru_cache(maxsize=None)
def sgm_log_moment(q, sigma, alpha, dps=30):
    """log E_{z~N(0,s^2)}[((1-q) + q exp((2z-1)/(2s^2)))^alpha] by quadrature."""
    with mpmath.workdps(dps):
        q, s, a = mpmath.mpf(q), mpmath.mpf(sigma), mpmath.mpf(alpha)

        def integrand(z):
            dens = mpmath.exp(-z * z / (2 * s * s)) / (s * mpmath.sqrt(2 * mpmath.pi))
            ratio = (1 - q) + q * mpmath.exp((2 * z - 1) / (2 * s * s))
            return dens * ratio ** a

        z0 = s * s * mpmath.log(1 / q - 1) + mpmath.mpf(0.5)
        # mass concentrates near 0 and near alpha (the tilted mean)
        pts = sorted({-mpmath.inf, mpmath.mpf(-10) * s, mpmath.mpf(0), z0, a, a + 10 * s, mpmath.inf})
        val = mpmath.quad(integrand, pts)
        return float(mpmath.log(val))


def sgm_epsilon(q, sigma, steps, delta, orders):
    best = math.inf
    for a in orders:
        rdp = steps * sgm_log_moment(q, sigma, a) / (a - 1)
        best = min(best, rdp + math.log(1 / delta) / (a - 1))
    return best


def normal_quantile(p, dps=40):
    """Normal quantile by Newton iteration on mpmath's high-precision CDF."""
    with mpmath.workdps(dps):
        p = mpmath.mpf(p)
        z = mpmath.sqrt(2) * mpmath.erfinv(2 * p - 1) if 1e-300 < p < 1 else mpmath.mpf(0)
        for _ in range(6):
            z -= (mpmath.ncdf(z) - p) / mpmath.npdf(z)
        return float(z)


def normal_quantile_by_quadrature(p, dps=30, newton_steps=3):
    """Same quantity, but the CDF is integrated from the density.

    The root is that of the quadrature CDF whatever the seed; one Newton step
    already suffices from a seed accurate to double precision.
    """
    with mpmath.workdps(dps):
        p = mpmath.mpf(p)

        def cdf(z):
            return mpmath.quad(lambda t: mpmath.exp(-t * t / 2), [-mpmath.inf, z]) / mpmath.sqrt(2 * mpmath.pi)

        z = mpmath.mpf(normal_quantile(float(p)))
        for _ in range(newton_steps):
            z -= (cdf(z) - p) / mpmath.npdf(z)
        return float(z)


def binomial_upper_tail(k, n, p):
    """P(Bin(n, p) >= k) = I_p(k, n - k + 1), summed exactly over the shorter side."""
    if n - k + 1 <= k:
        return mpmath.fsum(mpmath.binomial(n, j) * p ** j * (1 - p) ** (n - j) for j in range(k, n + 1))
    return 1 - mpmath.fsum(mpmath.binomial(n, j) * p ** j * (1 - p) ** (n - j) for j in range(0, k))


def beta_lower_bound_bisection(k, n, alpha, dps=40):
    """Clopper-Pearson lower bound by bisection on the regularized incomplete beta.

    For integer arguments the incomplete beta is a binomial tail, which stays
    accurate where mpmath's hypergeometric betainc fails (e.g. a=9000, b=1001).
    """
    if k == 0:
        return 0.0
    with mpmath.workdps(dps):
        lo, hi = mpmath.mpf(0), mpmath.mpf(1)
        for _ in range(60):
            mid = (lo + hi) / 2
            if binomial_upper_tail(k, n, mid) < alpha:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)
