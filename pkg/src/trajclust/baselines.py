"""Comparison methods: PCA + k-means and survival-tree risk clustering."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import kaplan_meier, nelson_aalen

LEAF_RISKS = ("mortality", "horizon")


# ----------------------------------------------------------------------- PCA

@dataclass(frozen=True)
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (n_features, n_components), orthonormal columns
    explained_variance: np.ndarray

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, projected) -> np.ndarray:
        return np.asarray(projected) @ self.components.T + self.mean


def pca(data, n_components: int) -> tuple[PCAResult, np.ndarray]:
    """Principal components of mean-centred data via SVD.

    Returns the fitted components and the projected ``(N, n_components)``
    matrix.  Component signs are fixed so the largest-magnitude loading of
    each component is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    n, d = x.shape
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components={n_components} must lie in [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:n_components].T
    flip = np.sign(comps[np.abs(comps).argmax(axis=0), np.arange(n_components)])
    comps = comps * np.where(flip == 0, 1.0, flip)
    var = s[:n_components] ** 2 / max(n - 1, 1)
    result = PCAResult(mean, comps, var)
    return result, result.transform(x)


# ------------------------------------------------------------------- k-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)

    def predict(self, data) -> np.ndarray:
        return _nearest(np.asarray(data, dtype=np.float64), self.centroids)[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d, 0.0)


def _nearest(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = _sq_dists(x, c)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(x.shape[0]), labels]


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[i:i + 1])[:, 0])
    return centers


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations until the assignment stops changing."""
    labels, d = _nearest(x, centers)
    history = [float(d.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        centers = new_centers
        new_labels, d = _nearest(x, centers)
        history.append(float(d.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels, centers, history[-1], it, history)


def kmeans(data, k: int, rng: np.random.Generator, n_init: int = 10,
           max_iter: int = 300) -> KMeansResult:
    """k-means++ seeded Lloyd's algorithm, best of ``n_init`` restarts by inertia."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k or k < 1:
        raise ValueError(f"kmeans needs N >= k >= 1 (N={x.shape[0]}, k={k})")
    best: KMeansResult | None = None
    for _ in range(n_init):
        res = lloyd(x, kmeans_plus_plus(x, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def pca_kmeans(data, k: int, rng: np.random.Generator, n_components: int = 5):
    """Project onto the leading principal components, then run k-means there."""
    x = np.asarray(data, dtype=np.float64)
    fit, projected = pca(x, min(n_components, *x.shape))
    km = kmeans(projected, k, rng)
    return fit, km


# ------------------------------------------------------------- survival tree

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: TreeNode | None = None
    right: TreeNode | None = None
    risk: float = 0.0
    leaf_id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class SurvivalTree:
    root: TreeNode
    max_depth: int
    n_leaves: int
    features: np.ndarray  # column indices of the full feature matrix the tree saw

    def apply(self, features) -> np.ndarray:
        """Leaf index for each row of the full feature matrix."""
        x = np.asarray(features, dtype=np.float64)
        out = np.empty(x.shape[0], dtype=np.int64)
        self._route(self.root, x, np.arange(x.shape[0]), out)
        return out

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        out = np.empty(x.shape[0])
        self._route(self.root, x, np.arange(x.shape[0]), out, risk=True)
        return out

    def _route(self, node, x, rows, out, risk=False):
        if node.is_leaf:
            out[rows] = node.risk if risk else node.leaf_id
            return
        go_left = x[rows, node.feature] <= node.threshold
        self._route(node.left, x, rows[go_left], out, risk)
        self._route(node.right, x, rows[~go_left], out, risk)

    @property
    def depth(self) -> int:
        def walk(n):
            return 0 if n.is_leaf else 1 + max(walk(n.left), walk(n.right))
        return walk(self.root)


def candidate_thresholds(column: np.ndarray, max_candidates: int = 32) -> np.ndarray:
    """Midpoints between sorted unique values, thinned to quantiles if too many."""
    uniq = np.unique(column)
    if uniq.size < 2:
        return np.empty(0)
    mids = 0.5 * (uniq[:-1] + uniq[1:])
    if mids.size > max_candidates:
        pos = np.linspace(0, mids.size - 1, max_candidates).round().astype(int)
        mids = mids[np.unique(pos)]
    return mids


def logrank_two_sample_batch(left, times, events) -> np.ndarray:
    """Two-sample log-rank statistics for many candidate splits at once.

    ``left`` is a (C, N) boolean matrix of group memberships; the result has
    one statistic per row (0 where the variance vanishes).
    """
    order = np.argsort(times, kind="stable")
    t = np.asarray(times, dtype=np.float64)[order]
    e = np.asarray(events, dtype=np.float64)[order]
    member = np.asarray(left, dtype=np.float64)[:, order]
    n = t.size
    starts = np.flatnonzero(np.r_[True, t[1:] != t[:-1]])
    ends = np.r_[starts[1:], n]
    ecs = np.r_[0.0, np.cumsum(e)]
    d = ecs[ends] - ecs[starts]
    keep = d > 0
    starts, ends, d = starts[keep], ends[keep], d[keep]
    at_risk = (n - starts).astype(np.float64)
    left_at_risk = np.cumsum(member[:, ::-1], axis=1)[:, ::-1][:, starts]
    lcs = np.concatenate([np.zeros((member.shape[0], 1)),
                          np.cumsum(member * e, axis=1)], axis=1)
    left_events = lcs[:, ends] - lcs[:, starts]
    frac = left_at_risk / at_risk
    u = (left_events - d * frac).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(at_risk > 1, d * (at_risk - d) / (at_risk - 1.0), 0.0)
    v = (w * frac * (1.0 - frac)).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(v > 0, u * u / v, 0.0)


def _best_split(x, times, events, features, max_candidates, min_leaf):
    best = (0.0, -1, 0.0)
    for f in features:
        col = x[:, f]
        thresholds = candidate_thresholds(col, max_candidates)
        if thresholds.size == 0:
            continue
        left = col[None, :] <= thresholds[:, None]
        # both children need at least one event and min_leaf members; a
        # lone early death otherwise scores a statistic close to N
        ev_left = (left & events[None, :]).any(axis=1)
        ev_right = (~left & events[None, :]).any(axis=1)
        n_left = left.sum(axis=1)
        ok = ev_left & ev_right & (n_left >= min_leaf) & (col.size - n_left >= min_leaf)
        if not ok.any():
            continue
        stats = logrank_two_sample_batch(left[ok], times, events)
        i = int(stats.argmax())
        if stats[i] > best[0]:
            best = (float(stats[i]), int(f), float(thresholds[ok][i]))
    return best


def leaf_mortality(times, events, grid) -> float:
    """Nelson-Aalen cumulative hazard of one leaf summed over ``grid`` times.

    This is the usual survival-forest mortality score: leaves are compared on
    a shared time grid, so a leaf whose members die early scores high.
    """
    curve = kaplan_meier(times, events)
    cum = np.cumsum(curve.events / curve.at_risk)
    idx = np.searchsorted(curve.times, grid, side="right")
    return float(np.concatenate([[0.0], cum])[idx].sum())


def fit_survival_tree(features, times, events, max_depth: int = 4,
                      feature_subset=None, max_candidates: int = 32,
                      min_leaf: int = 20, leaf_risk: str = "mortality") -> SurvivalTree:
    """Greedy log-rank splitting tree scored by Nelson-Aalen hazards.

    ``leaf_risk="mortality"`` scores a leaf by its cumulative hazard summed
    over the distinct event times of the whole training set.
    ``leaf_risk="horizon"`` uses the cumulative hazard at the leaf's own
    largest time instead; without censoring that is roughly the harmonic
    number of the leaf size and barely depends on the hazard.  All-censored
    leaves score 0.  Splits leaving fewer than ``min_leaf`` samples on either
    side are not considered.
    """
    if leaf_risk not in LEAF_RISKS:
        raise ValueError(f"leaf_risk must be one of {LEAF_RISKS}")
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    if x.shape[0] < 2 or not e.any():
        raise ValueError("survival tree needs >= 2 samples and >= 1 event")
    cols = np.arange(x.shape[1]) if feature_subset is None else np.asarray(feature_subset)
    grid = np.unique(t[e])
    counter = [0]

    def score(rows):
        if not e[rows].any():
            return 0.0
        if leaf_risk == "horizon":
            return nelson_aalen(t[rows], e[rows])
        return leaf_mortality(t[rows], e[rows], grid)

    def leaf(rows):
        node = TreeNode(risk=score(rows), leaf_id=counter[0])
        counter[0] += 1
        return node

    def grow(rows, depth):
        if depth >= max_depth:
            return leaf(rows)
        stat, f, thr = _best_split(x[rows], t[rows], e[rows], cols, max_candidates,
                                   min_leaf)
        if f < 0:
            return leaf(rows)
        go_left = x[rows, f] <= thr
        node = TreeNode(feature=f, threshold=thr)
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    root = grow(np.arange(x.shape[0]), 0)
    if root.is_leaf and max_depth > 0:
        warnings.warn("no valid split at the root; tree is a single leaf",
                      RuntimeWarning, stacklevel=2)
    return SurvivalTree(root, max_depth, counter[0], cols)


@dataclass
class RiskClustering:
    trees: list[SurvivalTree]
    kmeans: KMeansResult

    def risk_vectors(self, features) -> np.ndarray:
        return np.column_stack([tree.predict(features) for tree in self.trees])

    def predict(self, features) -> np.ndarray:
        return self.kmeans.predict(self.risk_vectors(features))


def fit_rsf_cluster(features, times, events, k: int, rng: np.random.Generator,
                    n_trees: int = 10, feature_fraction: float = 0.75,
                    max_depth: int = 4, min_leaf: int = 20,
                    leaf_risk: str = "mortality") -> RiskClustering:
    """Ten depth-4 trees on random 75% feature subsets; k-means on their risks."""
    x = np.asarray(features, dtype=np.float64)
    n_feat = x.shape[1]
    take = max(1, int(round(feature_fraction * n_feat)))
    trees = []
    for _ in range(n_trees):
        subset = np.sort(rng.choice(n_feat, size=take, replace=False))
        trees.append(fit_survival_tree(x, times, events, max_depth, subset,
                                       min_leaf=min_leaf, leaf_risk=leaf_risk))
    risks = np.column_stack([tree.predict(x) for tree in trees])
    return RiskClustering(trees, kmeans(risks, k, rng))


def rsf_cluster(features, times, events, k: int, rng: np.random.Generator) -> np.ndarray:
    return fit_rsf_cluster(features, times, events, k, rng).kmeans.labels
