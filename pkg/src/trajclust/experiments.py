"""Desk-scale experiment protocol on the synthetic benchmark.

One *fit* trains a model for one loss scenario and cluster count: optional
reconstruction pre-training, a warm-up on the scenario's non-clustering
terms, k-means centroid initialization, then joint self-training.  The
ARI matrix and the log-rank ordering study repeat fits on seeded 80% splits
and score the patients each model was trained on.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import fit_rsf_cluster, kmeans, pca_kmeans
from .losses import SCENARIOS, LossWeights
from .metrics import adjusted_rand_index, cluster_survival_report
from .network import ModelConfig, TrajectoryModel
from .synthetic import SyntheticDataset
from .trainer import (Cohort, FinetuneResult, TrainConfig, finetune_cluster, pretrain,
                      repeated_runs)

log = logging.getLogger(__name__)

LABEL_KINDS = ("unsupervised", "outcome", "combined")
METHODS = ("pca_kmeans", "rsf", "recon_only", "outcome_only", "combined")
OMITTED_METHODS = ("ac_tpc",)


@dataclass(frozen=True)
class Protocol:
    """Sizes and schedules for one fit.

    The defaults are the desk-scale settings used by the acceptance suite:
    a small feedforward VAE (one window of all features), no pre-training,
    a 60-epoch warm-up, strong decoupled weight decay and 25 self-training
    epochs at batch size 128.
    """

    embed_width: int = 8
    latent_width: int = 4
    encoder_kind: str = "feedforward"
    n_windows: int = 1
    dropout_p: float = 0.1
    pretrain_epochs: int = 0
    pretrain_lr: float = 2e-3
    pretrain_batch_size: int = 256
    warmup_epochs: int = 60
    finetune_epochs: int = 25
    learning_rate: float = 3e-4
    batch_size: int = 128
    weight_decay: float = 1.0
    standardize: bool = True
    pca_components: int = 5
    n_repeats: int = 5
    split_fraction: float = 0.8

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Protocol:
        return cls(**d)


def standardize(x) -> np.ndarray:
    """Column z-scores; constant columns become 0."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def model_inputs(features, protocol: Protocol) -> np.ndarray:
    x = standardize(features) if protocol.standardize else np.asarray(features, float)
    n, width = x.shape
    if width % protocol.n_windows:
        raise ValueError(f"{width} features do not split into {protocol.n_windows} windows")
    return x.reshape(n, protocol.n_windows, width // protocol.n_windows)


@dataclass
class Fit:
    model: TrajectoryModel
    result: FinetuneResult
    pretrain_history: list = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return self.result.labels


def fit_model(x, times, events, weights: LossWeights, k: int, protocol: Protocol,
              seed: int, skip_pretrain: bool = False) -> Fit:
    """Train one model on ``x`` of shape ``(N, T, F)`` and cluster it into ``k``."""
    x = np.asarray(x, dtype=np.float64)
    cfg = ModelConfig(input_width=x.shape[2], n_windows=x.shape[1],
                      embed_width=protocol.embed_width, latent_width=protocol.latent_width,
                      dropout_p=protocol.dropout_p, n_clusters=k,
                      encoder_kind=protocol.encoder_kind)
    ss = np.random.SeedSequence(seed)
    init_seed, pre_seed, fine_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    model = TrajectoryModel(cfg, seed=init_seed)
    cohort = Cohort(x, times=times, events=events)
    pre_rows = []
    if protocol.pretrain_epochs > 0 and not skip_pretrain:
        pre_cfg = TrainConfig(epochs=protocol.pretrain_epochs,
                              batch_size=protocol.pretrain_batch_size,
                              learning_rate=protocol.pretrain_lr,
                              weight_decay=protocol.weight_decay, seed=pre_seed,
                              weights=LossWeights(w_r=1.0, w_kl=weights.w_kl or 1e-5))
        pre_rows = pretrain(model, Cohort(x), pre_cfg).rows
    fine_cfg = TrainConfig(epochs=protocol.finetune_epochs, batch_size=protocol.batch_size,
                           learning_rate=protocol.learning_rate,
                           weight_decay=protocol.weight_decay, seed=fine_seed,
                           weights=weights)
    result = finetune_cluster(model, cohort, fine_cfg, warmup_epochs=protocol.warmup_epochs)
    return Fit(model, result, pre_rows)


def _ari_row(labels, dataset: SyntheticDataset, idx) -> dict:
    return {kind: adjusted_rand_index(labels, dataset.labels(kind)[idx])
            for kind in LABEL_KINDS}


# --------------------------------------------------------------- ARI matrix

@dataclass
class AriMatrix:
    """Per-repeat ARI scores keyed by (method, k, label kind)."""

    runs: list[dict]
    ks: tuple[int, ...]
    methods: tuple[str, ...] = METHODS

    def key(self, method: str, k: int, kind: str) -> str:
        return f"{method}/k={k}/{kind}"

    def values(self, method: str, k: int, kind: str) -> np.ndarray:
        return np.array([r[self.key(method, k, kind)] for r in self.runs])

    def mean(self, method: str, k: int, kind: str) -> float:
        return float(self.values(method, k, kind).mean())

    def std(self, method: str, k: int, kind: str) -> float:
        return float(self.values(method, k, kind).std())

    def to_csv(self, path: str | Path) -> None:
        """Methods as rows; one mean and one std column per (k, label kind)."""
        header = ["method"]
        for k in self.ks:
            for kind in LABEL_KINDS:
                header += [f"k{k}_{kind}", f"k{k}_{kind}_std"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for m in self.methods:
                row = [m]
                for k in self.ks:
                    for kind in LABEL_KINDS:
                        row += [f"{self.mean(m, k, kind):.4f}", f"{self.std(m, k, kind):.4f}"]
                w.writerow(row)

    def to_json(self) -> str:
        return json.dumps({"ks": list(self.ks), "methods": list(self.methods),
                           "omitted_methods": list(OMITTED_METHODS),
                           "label_kinds": list(LABEL_KINDS), "runs": self.runs},
                          indent=2, sort_keys=True)


def ari_matrix(dataset: SyntheticDataset, protocol: Protocol = Protocol(), seed: int = 0,
               ks: tuple[int, ...] = (3, 6), methods: tuple[str, ...] = METHODS
               ) -> AriMatrix:
    """Every method at every ``k`` on ``protocol.n_repeats`` seeded splits."""
    x_all = model_inputs(dataset.features, protocol)

    def run(train, _test, repeat_seed):
        rng = np.random.default_rng(repeat_seed)
        row = {}
        times, events = dataset.times[train], dataset.events[train]
        if "pca_kmeans" in methods:
            for k in ks:
                _, km = pca_kmeans(x_all[train].reshape(len(train), -1), k, rng,
                                   protocol.pca_components)
                row.update(_prefixed("pca_kmeans", k, _ari_row(km.labels, dataset, train)))
        if "rsf" in methods:
            forest = fit_rsf_cluster(dataset.features[train], times, events, ks[0], rng)
            risk = forest.risk_vectors(dataset.features[train])
            for k in ks:
                labels = kmeans(risk, k, rng).labels
                row.update(_prefixed("rsf", k, _ari_row(labels, dataset, train)))
        for scenario in SCENARIOS:
            if scenario not in methods:
                continue
            for k in ks:
                fit = fit_model(x_all[train], times, events, SCENARIOS[scenario], k,
                                protocol, int(rng.integers(2**31 - 1)))
                row.update(_prefixed(scenario, k, _ari_row(fit.labels, dataset, train)))
        log.info("repeat done: %s", {k: round(v, 3) for k, v in row.items()})
        return row

    summary = repeated_runs(len(dataset), run, protocol.n_repeats,
                            protocol.split_fraction, seed)
    return AriMatrix(summary.runs, tuple(ks), tuple(methods))


def _prefixed(method: str, k: int, scores: dict) -> dict:
    return {f"{method}/k={k}/{kind}": v for kind, v in scores.items()}


# ------------------------------------------------------- log-rank ordering

def logrank_study(dataset: SyntheticDataset, protocol: Protocol = Protocol(),
                  seed: int = 0, ks=(2, 3, 4, 5),
                  scenarios=("recon_only", "outcome_only", "combined")) -> dict:
    """Mean and std of the k-group log-rank statistic per scenario and ``k``."""
    x_all = model_inputs(dataset.features, protocol)

    def run(train, _test, repeat_seed):
        rng = np.random.default_rng(repeat_seed)
        row = {}
        for scenario in scenarios:
            for k in ks:
                fit = fit_model(x_all[train], dataset.times[train], dataset.events[train],
                                SCENARIOS[scenario], k, protocol,
                                int(rng.integers(2**31 - 1)))
                rep = cluster_survival_report(fit.labels, dataset.times[train],
                                              dataset.events[train])
                row[f"{scenario}/k={k}"] = rep["statistic"]
        return row

    summary = repeated_runs(len(dataset), run, protocol.n_repeats,
                            protocol.split_fraction, seed)
    return {"ks": list(ks), "scenarios": list(scenarios), "runs": summary.runs,
            "summary": summary.table()}


def with_overrides(protocol: Protocol, **changes) -> Protocol:
    return replace(protocol, **{k: v for k, v in changes.items() if v is not None})
