"""Occupancy analysis of the rough estimator.

A host with ``card`` distinct peers feeds each peer into the estimator with
probability ``2**-tau``; sampled peers land uniformly in ``eta`` boxes. These
functions give the exact distribution of the number of occupied boxes.
Surjection counts are exact Python integers; probabilities are formed by
correctly rounded big-integer division or in log space.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache

from .errors import ParameterError

_fn_lock = threading.Lock()

# binomial masses below this are dropped from the mixture; their total
# contribution is far beneath double precision
_LOG_MASS_FLOOR = math.log(1e-300)


@lru_cache(maxsize=1 << 16)
def _fn(alpha: int, eta: int) -> int:
    if eta == 1:
        return 1
    total = eta ** alpha
    for i in range(1, eta):
        total -= math.comb(eta, i) * _fn(alpha, i)
    return total


def fn_count(alpha: int, eta: int) -> int:
    """Surjections of ``alpha`` labelled balls onto ``eta`` labelled boxes.

    Uses ``FN(a, n) = n**a - sum_{i=1}^{n-1} C(n, i) FN(a, i)`` with
    ``FN(a, 1) = 1``.
    """
    if alpha < 0 or eta < 1:
        raise ParameterError("need alpha >= 0 and eta >= 1")
    if alpha < eta:
        return 0
    with _fn_lock:
        for i in range(1, eta + 1):
            _fn(alpha, i)
        return _fn(alpha, eta)


def prob_occupancy(alpha: int, eta: int, eta1: int) -> float:
    """P(exactly ``eta1`` of ``eta`` boxes non-empty after throwing ``alpha`` balls)."""
    if not 0 <= eta1 <= eta:
        raise ParameterError(f"need 0 <= eta1 <= eta, got eta1={eta1}, eta={eta}")
    if alpha < 0:
        raise ParameterError("alpha must be >= 0")
    if alpha == 0:
        return 1.0 if eta1 == 0 else 0.0
    if eta1 == 0:
        return 0.0
    return math.comb(eta, eta1) * fn_count(alpha, eta1) / eta ** alpha


def _log_binom_pmf(n: int, p: float, k: int) -> float:
    if p == 1.0:
        return 0.0 if k == n else -math.inf
    if p == 0.0:
        return 0.0 if k == 0 else -math.inf
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * math.log(p) + (n - k) * math.log1p(-p))


def prob_sampled(card: int, tau: int, alpha: int) -> float:
    """Binomial(card, 2**-tau) mass at ``alpha``."""
    if not 0 <= alpha <= card:
        raise ParameterError(f"need 0 <= alpha <= card, got alpha={alpha}, card={card}")
    if tau < 0:
        raise ParameterError("tau must be >= 0")
    return math.exp(_log_binom_pmf(card, 2.0 ** -tau, alpha))


def _alpha_range(card: int, tau: int) -> range:
    """Alphas whose binomial mass is above the floor (a contiguous range around the mode)."""
    p = 2.0 ** -tau
    mode = min(card, int((card + 1) * p))
    lo = mode
    while lo > 0 and _log_binom_pmf(card, p, lo - 1) > _LOG_MASS_FLOOR:
        lo -= 1
    hi = mode
    while hi < card and _log_binom_pmf(card, p, hi + 1) > _LOG_MASS_FLOOR:
        hi += 1
    return range(lo, hi + 1)


def prob_weight_eq(card: int, eta: int, tau: int, eta1: int) -> float:
    """P(the rough estimator of a host with ``card`` peers has exactly ``eta1`` set slots)."""
    if card < 0:
        raise ParameterError("card must be >= 0")
    if not 0 <= eta1 <= eta:
        raise ParameterError(f"need 0 <= eta1 <= eta, got eta1={eta1}, eta={eta}")
    total = 0.0
    for alpha in _alpha_range(card, tau):
        if alpha < eta1:
            continue
        total += prob_sampled(card, tau, alpha) * prob_occupancy(alpha, eta, eta1)
    return min(max(total, 0.0), 1.0)


def prob_weight_ge(card: int, eta: int, tau: int, n: int) -> float:
    """P(at least ``n`` set slots), the detection probability when ``n = ceil(eta * rho)``."""
    if not 0 <= n <= eta:
        raise ParameterError(f"need 0 <= n <= eta, got n={n}")
    if n == 0:
        return 1.0
    total = sum(prob_weight_eq(card, eta, tau, e) for e in range(n, eta + 1))
    return min(total, 1.0)


def weight_distribution(card: int, eta: int, tau: int) -> list[float]:
    return [prob_weight_eq(card, eta, tau, e) for e in range(eta + 1)]
