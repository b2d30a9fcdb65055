"""Two-sample significance tests used to compare accuracy distributions."""
from __future__ import annotations

import math
from fractions import Fraction
from typing import NamedTuple, Sequence

__all__ = ["TestResult", "welch_t", "mann_whitney_u", "mann_whitney_exact_p", "betainc", "t_sf_two_sided"]

EXACT_MAX_N = 8


class TestResult(NamedTuple):
    statistic: float
    pvalue: float

    __test__ = False  # keep pytest from collecting it


# ---------------------------------------------------------------------------
# regularized incomplete beta


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
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
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


# ---------------------------------------------------------------------------
# Welch


def _mean_var(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    m = math.fsum(xs) / n
    return m, math.fsum((x - m) ** 2 for x in xs) / (n - 1)


def welch_t(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Welch's unequal-variance t-test, two-sided."""
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("welch_t needs at least two observations per sample")
    ma, va = _mean_var(a)
    mb, vb = _mean_var(b)
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    if se2 == 0.0:
        raise ValueError("welch_t is undefined when both samples have zero variance")
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    return TestResult(t, t_sf_two_sided(t, df))


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _doubled_midranks(values: Sequence[float]) -> list[int]:
    """Twice the 1-based midranks (ties share the average rank), as integers."""
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = i + j + 2
        i = j + 1
    return ranks


def _prepare(a, b):
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if not a or not b:
        raise ValueError("mann_whitney_u needs two non-empty samples")
    r2 = _doubled_midranks(a + b)
    na, nb = len(a), len(b)
    # 2 * U_a = 2 * R_a - na (na + 1)
    u2 = sum(r2[:na]) - na * (na + 1)
    return na, nb, r2, u2


def mann_whitney_exact_p(a: Sequence[float], b: Sequence[float]) -> Fraction:
    """Exact two-sided p-value over every assignment of the pooled midranks.

    Counts, by dynamic programming over the pooled sample, how many of the
    ``C(n, n_a)`` subsets have a rank sum at least as far from its mean as the
    observed one.
    """
    na, nb, r2, u2 = _prepare(a, b)
    centre = na * nb  # 2 * mean of U
    observed = abs(u2 - centre)
    # ways[k][s]: subsets of size k with doubled rank sum s
    ways = [dict() for _ in range(na + 1)]
    ways[0][0] = 1
    for r in r2:
        for k in range(na - 1, -1, -1):
            row = ways[k]
            if not row:
                continue
            nxt = ways[k + 1]
            for s, c in row.items():
                nxt[s + r] = nxt.get(s + r, 0) + c
    offset = na * (na + 1)
    extreme = sum(c for s, c in ways[na].items() if abs(s - offset - centre) >= observed)
    return Fraction(extreme, math.comb(na + nb, na))


def _normal_p(na: int, nb: int, r2: list[int], u2: int) -> float:
    n = na + nb
    counts: dict[int, int] = {}
    for r in r2:
        counts[r] = counts.get(r, 0) + 1
    tie_term = sum(t**3 - t for t in counts.values())
    var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return 1.0
    dev = max(abs(u2 / 2.0 - na * nb / 2.0) - 0.5, 0.0)
    return min(1.0, math.erfc(dev / math.sqrt(2.0 * var)))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], method: str = "auto") -> TestResult:
    """Mann-Whitney U for sample ``a`` with a two-sided p-value.

    ``method='auto'`` enumerates exactly when both samples have at most 8
    observations and otherwise uses the tie-corrected normal approximation
    with continuity correction.
    """
    na, nb, r2, u2 = _prepare(a, b)
    if method == "auto":
        method = "exact" if max(na, nb) <= EXACT_MAX_N else "normal"
    if method == "exact":
        p = float(mann_whitney_exact_p(a, b))
    elif method == "normal":
        p = _normal_p(na, nb, r2, u2)
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestResult(u2 / 2.0, p)
