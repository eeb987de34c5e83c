"""Synthetic benchmark with known unsupervised, outcome and combined clusters.

The feature matrix has two blocks.  The *noise* block is drawn around
``k_noise`` random centroids and carries no survival signal.  The *outcome*
block is drawn around ``k_combined = 2 * k_outcome`` centroids, where each
outcome cluster has been split at random into two combined clusters; survival
times depend on the outcome cluster only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


class InvalidConfigError(ValueError):
    """A generator parameter is out of range; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 60000
    k_noise: int = 3
    n_noise_features: int = 200
    noise_std: float = 3.0
    noise_center_range: tuple[float, float] = (-10.0, 10.0)
    k_outcome: int = 3
    tte_min: float = 10.0
    tte_max: float = 10000.0
    censor_prob: float = 0.5
    tte_cap: float = 2000.0
    k_combined: int = 6
    n_outcome_features: int = 200
    combined_std: float = 5.0
    combined_center_range: tuple[float, float] = (-5.0, 5.0)
    binarize: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_center_range", "combined_center_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("n_patients", "k_noise", "n_noise_features", "k_outcome",
                     "k_combined", "n_outcome_features"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(name, "must be a positive count")
        if self.k_combined != 2 * self.k_outcome:
            raise InvalidConfigError("k_combined", "must equal 2 * k_outcome")
        if not 0.0 <= self.censor_prob <= 1.0:
            raise InvalidConfigError("censor_prob", "must lie in [0, 1]")
        if self.tte_min <= 0:
            raise InvalidConfigError("tte_min", "must be positive")
        if self.tte_max < self.tte_min:
            raise InvalidConfigError("tte_max", "must be >= tte_min")
        if self.tte_cap <= 0:
            raise InvalidConfigError("tte_cap", "must be positive")
        if int(self.seed) < 0:
            raise InvalidConfigError("seed", "must be a nonnegative integer")
        for name in ("noise_std", "combined_std"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(name, "must be nonnegative")
        for name in ("noise_center_range", "combined_center_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfigError(name, "lower bound exceeds upper bound")

    @property
    def n_features(self) -> int:
        return self.n_noise_features + self.n_outcome_features

    def to_json(self) -> str:
        d = asdict(self)
        d["noise_center_range"] = list(self.noise_center_range)
        d["combined_center_range"] = list(self.combined_center_range)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(sorted(unknown)[0], "unknown config field")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> SyntheticConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SurvivalOutcome:
    time: float
    event: int


@dataclass
class SyntheticDataset:
    features: np.ndarray
    noise_labels: np.ndarray
    outcome_labels: np.ndarray
    combined_labels: np.ndarray
    times: np.ndarray
    events: np.ndarray
    n_noise_features: int

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def outcomes(self) -> list[SurvivalOutcome]:
        return [SurvivalOutcome(float(t), int(e)) for t, e in zip(self.times, self.events)]

    @property
    def noise_block(self) -> np.ndarray:
        return self.features[:, :self.n_noise_features]

    @property
    def outcome_block(self) -> np.ndarray:
        return self.features[:, self.n_noise_features:]

    def labels(self, kind: str) -> np.ndarray:
        return {"unsupervised": self.noise_labels, "noise": self.noise_labels,
                "outcome": self.outcome_labels,
                "combined": self.combined_labels}[kind]

    def save(self, out_dir: str | Path) -> None:
        """Write ``features.csv`` and ``labels.csv`` (one patient per row)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "features.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(self.features.shape[1])])
            for row in self.features:
                w.writerow([repr(float(v)) for v in row])
        with open(out / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "noise_label", "outcome_label", "combined_label",
                        "time", "event"])
            for i in range(len(self)):
                w.writerow([i, int(self.noise_labels[i]), int(self.outcome_labels[i]),
                            int(self.combined_labels[i]), repr(float(self.times[i])),
                            int(self.events[i])])

    @classmethod
    def load(cls, out_dir: str | Path, n_noise_features: int | None = None
             ) -> SyntheticDataset:
        out = Path(out_dir)
        features = np.loadtxt(out / "features.csv", delimiter=",", skiprows=1, ndmin=2)
        lab = np.loadtxt(out / "labels.csv", delimiter=",", skiprows=1, ndmin=2)
        if n_noise_features is None:
            manifest = out / "config.json"
            n_noise_features = (json.loads(manifest.read_text())["n_noise_features"]
                                if manifest.exists() else features.shape[1] // 2)
        return cls(features, lab[:, 1].astype(int), lab[:, 2].astype(int),
                   lab[:, 3].astype(int), lab[:, 4], lab[:, 5].astype(int),
                   n_noise_features)


def generate_isotropic_clusters(k: int, n_features: int, std: float, center_range,
                                n: int, rng: np.random.Generator,
                                labels: np.ndarray | None = None):
    """Gaussian blobs around centroids drawn uniformly in a box.

    Memberships are multinomial with equal probabilities unless ``labels`` is
    given.  Returns ``(matrix, labels)``.
    """
    if n_features < 1:
        raise InvalidConfigError("n_features", "need at least one feature")
    if n < 1:
        raise InvalidConfigError("n", "need at least one sample")
    if k < 1:
        raise InvalidConfigError("k", "need at least one cluster")
    lo, hi = center_range
    centers = rng.uniform(lo, hi, size=(k, n_features))
    if labels is None:
        labels = rng.integers(0, k, size=n)
    labels = np.asarray(labels, dtype=np.int64)
    x = centers[labels] + std * rng.standard_normal((labels.size, n_features))
    return x, labels


def log_spaced_scales(k: int, tte_min: float, tte_max: float) -> np.ndarray:
    if tte_min <= 0:
        raise InvalidConfigError("tte_min", "must be positive")
    return np.logspace(np.log10(tte_min), np.log10(tte_max), k)


def generate_outcome_times(labels, k: int, tte_min: float, tte_max: float,
                           censor_prob: float, tte_cap: float,
                           rng: np.random.Generator, return_raw: bool = False):
    """Exponential event times with a log-spaced scale per outcome cluster.

    Each patient is censored with probability ``censor_prob``; times beyond
    ``tte_cap`` are set to the cap and censored.  Returns ``(times, events)``
    and, with ``return_raw``, the uncapped draws as a third element.
    """
    scales = log_spaced_scales(k, tte_min, tte_max)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidConfigError("labels", f"must lie in [0, {k})")
    raw = rng.exponential(scales[labels])
    censored = rng.random(labels.size) < censor_prob
    times = np.minimum(raw, tte_cap)
    events = (~censored & (raw <= tte_cap)).astype(np.int64)
    # exponential draws can underflow to exactly 0
    times = np.maximum(times, np.finfo(float).tiny)
    return (times, events, raw) if return_raw else (times, events)


def split_combined_clusters(outcome_labels, rng: np.random.Generator) -> np.ndarray:
    """Randomly halve each outcome cluster: combined label ``2 * o + half``."""
    outcome_labels = np.asarray(outcome_labels, dtype=np.int64)
    combined = np.empty_like(outcome_labels)
    for o in np.unique(outcome_labels):
        members = np.flatnonzero(outcome_labels == o)
        if members.size < 2:
            raise InvalidConfigError("outcome_labels",
                                     f"outcome cluster {o} has fewer than 2 members")
        members = rng.permutation(members)
        half = members.size // 2
        combined[members[:half]] = 2 * o
        combined[members[half:]] = 2 * o + 1
    return combined


def binarize_features(matrix) -> np.ndarray:
    """Per-column min-max scaling then rounding; ties at 0.5 round up."""
    x = np.asarray(matrix, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    const = np.flatnonzero(hi <= lo)
    if const.size:
        raise ValueError(f"column {int(const[0])} is constant; cannot min-max scale")
    scaled = (x - lo) / (hi - lo)
    return np.floor(scaled + 0.5)


def generate_dataset(config: SyntheticConfig) -> SyntheticDataset:
    rng = np.random.default_rng(config.seed)
    n = config.n_patients
    noise_x, noise_labels = generate_isotropic_clusters(
        config.k_noise, config.n_noise_features, config.noise_std,
        config.noise_center_range, n, rng)
    outcome_labels = rng.integers(0, config.k_outcome, size=n)
    times, events = generate_outcome_times(
        outcome_labels, config.k_outcome, config.tte_min, config.tte_max,
        config.censor_prob, config.tte_cap, rng)
    combined = split_combined_clusters(outcome_labels, rng)
    comb_x, _ = generate_isotropic_clusters(
        config.k_combined, config.n_outcome_features, config.combined_std,
        config.combined_center_range, n, rng, labels=combined)
    features = np.concatenate([noise_x, comb_x], axis=1)
    if config.binarize:
        features = binarize_features(features)
    return SyntheticDataset(features, noise_labels, outcome_labels, combined, times,
                            events, config.n_noise_features)


def to_sequences(features, n_windows: int) -> np.ndarray:
    """Cut each row into ``n_windows`` contiguous equal-width windows."""
    x = np.asarray(features, dtype=np.float64)
    if n_windows < 1 or x.shape[1] % n_windows:
        raise InvalidConfigError(
            "n_windows", f"{x.shape[1]} features do not split into {n_windows} windows")
    return x.reshape(x.shape[0], n_windows, x.shape[1] // n_windows)


def flatten_sequences(seq) -> np.ndarray:
    seq = np.asarray(seq)
    return seq.reshape(seq.shape[0], -1)
