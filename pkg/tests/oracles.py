"""Slow, loop-based reference implementations used as test oracles.

Each one is written from the textbook definition with plain Python loops and
shares no code with the package.
"""

import math
from collections import Counter
from itertools import combinations


def cox_bruteforce(risks, times, events):
    """Negative partial log-likelihood over the batch size, one risk set per event."""
    n = len(risks)
    total = 0.0
    for i in range(n):
        if not events[i]:
            continue
        denom = sum(math.exp(risks[j]) for j in range(n) if times[j] >= times[i])
        total += risks[i] - math.log(denom)
    return -total / n


def ari_pairs(a, b):
    """Adjusted Rand index from an explicit walk over all unordered pairs."""
    both = only_a = only_b = 0
    pairs = 0
    for i, j in combinations(range(len(a)), 2):
        same_a, same_b = a[i] == a[j], b[i] == b[j]
        both += same_a and same_b
        only_a += same_a and not same_b
        only_b += same_b and not same_a
        pairs += 1
    together_a = both + only_a
    together_b = both + only_b
    expected = together_a * together_b / pairs
    best = 0.5 * (together_a + together_b)
    if best == expected:
        return 1.0
    return (both - expected) / (best - expected)


def nmi_counts(a, b):
    """Mutual information over the geometric mean of the two entropies."""
    n = len(a)
    ca, cb, cab = Counter(a), Counter(b), Counter(zip(a, b))
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    mi = sum(c / n * math.log((c / n) / (ca[x] / n * cb[y] / n)) for (x, y), c in cab.items())
    if ha == 0 or hb == 0:
        return 0.0
    return mi / math.sqrt(ha * hb)


def chi2_sf_series(x, df):
    """Chi-square upper tail via the lower incomplete gamma power series."""
    a, half = df / 2.0, x / 2.0
    if half == 0:
        return 1.0
    term = 1.0 / a
    total = term
    k = 0
    while abs(term) > 1e-18 * abs(total):
        k += 1
        term *= half / (a + k)
        total += term
    lower = total * math.exp(-half + a * math.log(half) - math.lgamma(a))
    return 1.0 - lower


def kaplan_meier_loop(times, events):
    """Product-limit survival at each distinct event time, deaths before censorings."""
    out = []
    s = 1.0
    for t in sorted(set(times)):
        at_risk = sum(1 for u in times if u >= t)
        deaths = sum(1 for u, e in zip(times, events) if u == t and e)
        s *= 1.0 - deaths / at_risk
        out.append((t, s))
    return out
