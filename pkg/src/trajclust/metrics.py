"""Partition agreement scores and survival-curve statistics."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def contingency_table(labels_a, labels_b) -> ContingencyTable:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label arrays differ in shape: {a.shape} vs {b.shape}")
    ra, ia = np.unique(a, return_inverse=True)
    rb, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((ra.size, rb.size), dtype=np.int64)
    np.add.at(counts, (ia, ib), 1)
    return ContingencyTable(counts, ra, rb)


def _comb2(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected Rand index via the pair-counting contingency formula."""
    a = np.asarray(labels_a)
    if a.shape != np.shape(labels_b):
        raise ValueError("label arrays differ in length")
    if a.size < 2:
        raise ValueError("ARI needs at least two samples")
    table = contingency_table(labels_a, labels_b)
    sum_ij = _comb2(table.counts).sum()
    sum_a = _comb2(table.rows).sum()
    sum_b = _comb2(table.cols).sum()
    expected = sum_a * sum_b / _comb2(table.total)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all-one-cluster or all-singletons) and equal
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_information(labels_a, labels_b) -> float:
    """``I(A;B) / sqrt(H(A) H(B))``; 0 (with a warning) if either entropy is 0."""
    table = contingency_table(labels_a, labels_b)
    h_a, h_b = _entropy(table.rows), _entropy(table.cols)
    if h_a == 0.0 or h_b == 0.0:
        warnings.warn("NMI undefined for a single-cluster partition; returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    n = table.total
    nz = table.counts > 0
    pij = table.counts[nz] / n
    outer = np.outer(table.rows, table.cols)[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    return float(min(max(mi / math.sqrt(h_a * h_b), 0.0), 1.0))


def overlap_table(labels_a, labels_b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalized overlap: entry (i, j) is the share of cluster ``a=i`` in ``b=j``.

    Returns ``(fractions, row_labels, col_labels)``.
    """
    table = contingency_table(labels_a, labels_b)
    rows = table.rows.astype(np.float64)
    if np.any(rows == 0):
        warnings.warn("empty source cluster in overlap table", RuntimeWarning,
                      stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(rows[:, None] > 0, table.counts / rows[:, None], 0.0)
    return frac, table.row_labels, table.col_labels


# ------------------------------------------------------------------ survival

@dataclass(frozen=True)
class StepCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def at(self, t) -> np.ndarray:
        """Right-continuous evaluation of the curve at ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]

    @property
    def crude_incidence(self) -> np.ndarray:
        return 1.0 - self.survival


def _validate_survival(times, events) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    if t.size == 0:
        raise ValueError("survival data is empty")
    if t.shape != e.shape:
        raise ValueError("times and events differ in shape")
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise ValueError("times must be positive and finite")
    return t, e


def kaplan_meier(times, events) -> StepCurve:
    """Product-limit estimate evaluated at every distinct observed time.

    At tied times events are counted before censorings, so a subject censored
    at ``t`` is still at risk at ``t``.
    """
    t, e = _validate_survival(times, events)
    uniq, inverse = np.unique(t, return_inverse=True)
    d = np.bincount(inverse, weights=e, minlength=uniq.size).astype(np.int64)
    c = np.bincount(inverse, minlength=uniq.size)
    at_risk = t.size - np.concatenate([[0], np.cumsum(c)[:-1]])
    surv = np.cumprod((at_risk - d) / at_risk)
    return StepCurve(uniq, surv, at_risk.astype(np.int64), d)


def nelson_aalen(times, events) -> float:
    """Cumulative hazard at the largest observed time."""
    t, e = _validate_survival(times, events)
    curve = kaplan_meier(t, e)
    return float((curve.events / curve.at_risk).sum())


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    df: int
    p_value: float


def logrank_test(groups) -> LogRankResult:
    """k-sample log-rank test.

    ``groups`` is a sequence of ``(times, events)`` pairs.  The statistic is
    ``(O - E)' V^- (O - E)`` over the first k-1 groups with the hypergeometric
    covariance, summed over distinct event times.
    """
    groups = list(groups)
    if len(groups) < 2:
        raise ValueError("log-rank test needs at least two groups")
    data = [_validate_survival(t, e) for t, e in groups]
    all_t = np.concatenate([t for t, _ in data])
    all_e = np.concatenate([e for _, e in data])
    event_times = np.unique(all_t[all_e])
    if event_times.size == 0:
        raise ValueError("log-rank test undefined: no events in any group")
    k = len(groups)
    n_gt = np.empty((k, event_times.size))
    d_gt = np.empty((k, event_times.size))
    for g, (t, e) in enumerate(data):
        ts = np.sort(t)
        n_gt[g] = ts.size - np.searchsorted(ts, event_times, side="left")
        te = np.sort(t[e])
        d_gt[g] = (np.searchsorted(te, event_times, side="right")
                   - np.searchsorted(te, event_times, side="left"))
    n_t = n_gt.sum(axis=0)
    d_t = d_gt.sum(axis=0)
    frac = n_gt / n_t
    observed_minus_expected = (d_gt - d_t * frac).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(n_t > 1, d_t * (n_t - d_t) / (n_t - 1.0), 0.0)
    cov = np.einsum("t,it,jt->ij", scale, frac, frac) * -1.0
    cov[np.diag_indices(k)] += (scale * frac).sum(axis=1)
    u = observed_minus_expected[:-1]
    v = cov[:-1, :-1]
    stat = float(u @ np.linalg.pinv(v, hermitian=True) @ u)
    stat = max(stat, 0.0)
    df = k - 1
    return LogRankResult(stat, df, chi2_sf(stat, df))


# ----------------------------------------------------- chi-square upper tail

def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_continued_fraction(a: float, x: float) -> float:
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("gamma_q needs a > 0")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_continued_fraction(a, x)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail probability of a chi-square variable with ``df`` degrees."""
    return gamma_q(df / 2.0, x / 2.0)


# ------------------------------------------------------------------ exports

def km_curves_csv(path: str | Path, labels, times, events) -> None:
    """Write one KM curve per cluster as ``cluster_id,time,survival,at_risk,events``."""
    labels = np.asarray(labels)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "time", "survival", "at_risk", "events"])
        for k in np.unique(labels):
            sel = labels == k
            curve = kaplan_meier(times[sel], events[sel])
            for row in zip(curve.times, curve.survival, curve.at_risk, curve.events):
                w.writerow([int(k), repr(float(row[0])), repr(float(row[1])),
                            int(row[2]), int(row[3])])


def cluster_survival_report(labels, times, events) -> dict:
    """Log-rank comparison across the clusters in ``labels``."""
    labels = np.asarray(labels)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    ks = np.unique(labels)
    if ks.size < 2:
        return {"statistic": 0.0, "df": 0, "p_value": 1.0}
    res = logrank_test([(times[labels == k], events[labels == k]) for k in ks])
    return {"statistic": res.statistic, "df": res.df, "p_value": res.p_value}


def write_metrics_json(path: str | Path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
