"""Pre-training and joint clustering fine-tuning."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .autodiff import ParamSet
from .losses import LossWeights
from .network import TrajectoryModel, hard_labels, init_centroids, target_distribution

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, component: str = "total"):
        super().__init__(f"loss {component} became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    split_fraction: float = 0.8
    n_repeats: int = 5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 < self.split_fraction <= 1.0:
            raise ValueError("split_fraction must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.n_repeats < 1:
            raise ValueError("epochs, batch_size and n_repeats must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


PRETRAIN_DEFAULTS = TrainConfig(epochs=350, batch_size=4096, learning_rate=2e-3)
FINETUNE_DEFAULTS = TrainConfig(epochs=25, batch_size=256, learning_rate=1e-3)


@dataclass
class Cohort:
    """Model inputs for a set of patients.

    ``x`` has shape ``(N, T, F)``; ``mask`` marks the entries counted by the
    reconstruction loss.  Outcomes are optional for pre-training.
    """

    x: np.ndarray
    mask: np.ndarray | None = None
    times: np.ndarray | None = None
    events: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 2:
            self.x = self.x[:, None, :]
        if self.mask is None:
            self.mask = np.ones(self.x.shape, dtype=bool)
        self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), self.x.shape)
        if len(self.x) == 0:
            raise ValueError("cohort is empty")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> Cohort:
        return Cohort(self.x[idx], self.mask[idx],
                      None if self.times is None else np.asarray(self.times)[idx],
                      None if self.events is None else np.asarray(self.events)[idx])


class Adam:
    """Adam with decoupled weight decay on parameters flagged for decay."""

    def __init__(self, params: ParamSet, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k].value) for k in params}
        self.v = {k: np.zeros_like(params[k].value) for k in params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name in self.params:
            if not self.params.trainable[name]:
                continue
            t = self.params[name]
            g = np.zeros_like(t.value) if t.grad is None else t.grad
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            value = t.value - self.lr * update
            if self.params.decay[name] and self.weight_decay:
                value = value - self.lr * self.weight_decay * t.value
            t.value = value


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        cols = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c]
                            for c in cols])


def _step_losses(model: TrajectoryModel, batch: Cohort, weights: LossWeights,
                 rng: np.random.Generator, target=None) -> dict:
    emb = model.encode(batch.x, training=True, rng=rng)
    comps = {}
    if weights.w_r > 0:
        x_hat = model.decode(emb.z, batch.x)
        comps["L_r"] = losses.recon_loss(batch.x, x_hat, batch.mask, weights.w_b,
                                         model.config.binary_mask)
    if weights.w_kl > 0:
        comps["L_KL"] = losses.kl_loss(emb.mu, emb.logvar)
    if weights.w_y > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            comps["L_y"] = losses.cox_loss(model.predict_risk(emb.z), batch.times,
                                           batch.events)
    if target is not None and weights.w_c > 0:
        comps["L_c"] = losses.cluster_loss(target, model.assign(emb.z))
    return comps


def _train_epoch(model, cohort, weights, opt, rng, batch_size, epoch, target=None):
    sums = dict.fromkeys(losses.COMPONENTS, 0.0)
    sums["total"] = 0.0
    n_batches = 0
    for idx in _batches(len(cohort), batch_size, rng):
        batch = cohort.subset(idx)
        comps = _step_losses(model, batch, weights, rng,
                             None if target is None else target[idx])
        try:
            total = losses.total_loss(comps, weights)
        except FloatingPointError as exc:
            raise DivergenceError(epoch, str(exc)) from exc
        if not np.isfinite(total.value):
            raise DivergenceError(epoch)
        model.params.zero_grad()
        if total.requires_grad:
            total.backward()
        opt.step()
        for name, c in comps.items():
            sums[name] += float(c.value)
        sums["total"] += float(total.value)
        n_batches += 1
    return {k: v / n_batches for k, v in sums.items()}


def pretrain(model: TrajectoryModel, cohort: Cohort, config: TrainConfig,
             log_every: int = 0) -> History:
    """Fit the autoencoder with ``w_r L_r + w_kl L_KL`` only; updates ``model`` in place."""
    weights = replace(config.weights, w_y=0.0, w_c=0.0)
    if weights.w_r == 0 and weights.w_kl == 0:
        raise ValueError("pre-training needs w_r or w_kl > 0")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.learning_rate, config.weight_decay)
    hist = History()
    for epoch in range(config.epochs):
        row = _train_epoch(model, cohort, weights, opt, rng, config.batch_size, epoch)
        hist.rows.append({"epoch": epoch, **row})
        if log_every and epoch % log_every == 0:
            log.info("pretrain epoch %d: %s", epoch, row)
    return hist


@dataclass
class FinetuneResult:
    model: TrajectoryModel
    labels: np.ndarray
    q: np.ndarray
    history: History


def finetune_cluster(model: TrajectoryModel, cohort: Cohort, config: TrainConfig,
                     warmup_epochs: int = 0, log_every: int = 0,
                     on_epoch: Callable[[int, TrajectoryModel], None] | None = None
                     ) -> FinetuneResult:
    """Joint optimisation of the weighted loss with DEC self-training.

    The first ``warmup_epochs`` epochs train the scenario's reconstruction,
    KL and outcome terms only, so the embedding can take on the outcome
    structure before any cluster is fixed.  Centroids are then initialized
    by k-means on the evaluation-mode embeddings and ``config.epochs`` epochs
    of joint training follow; the target distribution is recomputed from the
    full-cohort soft assignments at the start of each of these epochs.

    The history records one row per clustering epoch: mean loss components
    and ``frac_confident``, the share of patients whose largest membership
    exceeds 0.7 when the target is refreshed.
    """
    weights = config.weights
    if weights.w_y > 0 and (cohort.times is None or cohort.events is None):
        raise ValueError("outcome loss needs times and events")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.learning_rate, config.weight_decay)
    warm_weights = replace(weights, w_c=0.0)
    for epoch in range(warmup_epochs):
        row = _train_epoch(model, cohort, warm_weights, opt, rng, config.batch_size,
                           epoch)
        if log_every and epoch % log_every == 0:
            log.info("warm-up epoch %d: %s", epoch, row)
    k = model.config.n_clusters
    model.params.set_value("centroids", init_centroids(model.embed(cohort.x), k, rng))
    hist = History()
    for epoch in range(config.epochs):
        q = model.soft_labels(cohort.x)
        target = target_distribution(q)
        confident = float((q.max(axis=1) > 0.7).mean())
        row = _train_epoch(model, cohort, weights, opt, rng, config.batch_size, epoch,
                           target)
        hist.rows.append({"epoch": epoch, **row, "frac_confident": confident})
        if log_every and epoch % log_every == 0:
            log.info("finetune epoch %d: %s", epoch, hist.rows[-1])
        if on_epoch is not None:
            on_epoch(epoch, model)
    q = model.soft_labels(cohort.x)
    return FinetuneResult(model, hard_labels(q), q, hist)


def clone_model(model: TrajectoryModel, n_clusters: int | None = None) -> TrajectoryModel:
    """Copy of ``model``, optionally with a different cluster count."""
    cfg = model.config
    params = model.params.copy()
    if n_clusters is not None and n_clusters != cfg.n_clusters:
        cfg = replace(cfg, n_clusters=n_clusters)
        fresh = ParamSet()
        for name in params:
            value = params[name].value
            if name == "centroids":
                value = np.zeros((n_clusters, cfg.latent_width))
            fresh.add(name, value, params.trainable[name], params.decay[name])
        params = fresh
    return TrajectoryModel(cfg, params)


def split_indices(n: int, fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    cut = int(round(fraction * n))
    if fraction >= 1.0:
        return np.sort(order), np.sort(order)
    return np.sort(order[:cut]), np.sort(order[cut:])


@dataclass
class RepeatSummary:
    runs: list[dict]

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.runs]))

    def std(self, key: str) -> float:
        return float(np.std([r[key] for r in self.runs]))

    def table(self) -> dict:
        keys = [k for k in self.runs[0] if isinstance(self.runs[0][k], (int, float))]
        return {k: {"mean": self.mean(k), "std": self.std(k)} for k in keys}

    def to_json(self) -> str:
        return json.dumps({"runs": self.runs, "summary": self.table()}, indent=2,
                          sort_keys=True, default=float)


def repeated_runs(n_patients: int, run: Callable[[np.ndarray, np.ndarray, int], dict],
                  n_repeats: int = 5, split_fraction: float = 0.8,
                  seed: int = 0) -> RepeatSummary:
    """Run ``run(train_idx, test_idx, repeat_seed)`` on fresh seeded splits.

    When ``split_fraction`` is 1 the test indices equal the training indices.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be at least 1")
    seeds = np.random.SeedSequence(seed).spawn(n_repeats)
    runs = []
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        train, test = split_indices(n_patients, split_fraction, rng)
        repeat_seed = int(rng.integers(2**31 - 1))
        result = dict(run(train, test, repeat_seed))
        result.setdefault("repeat", r)
        runs.append(result)
    return RepeatSummary(runs)


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([v.mean()]) if v.size else v
    return np.convolve(v, np.ones(window) / window, mode="valid")


__all__ = [
    "Adam", "Cohort", "DivergenceError", "FinetuneResult", "History", "TrainConfig",
    "clone_model", "finetune_cluster", "moving_average", "pretrain", "repeated_runs",
    "split_indices",
]
