"""Variational trajectory autoencoder with a risk head and a cluster layer.

Two encoder families share one interface:

* ``recurrent`` -- each window passes through a two-layer ReLU embedding, a
  stacked bidirectional GRU reads the embedded windows, and the final hidden
  states of every layer and direction are aggregated by a ReLU dense layer
  before the ``mu``/``logvar`` heads.  The decoder is a unidirectional GRU
  whose initial state is ``z``; it emits windows last-to-first, and the step
  that reconstructs window ``i`` is fed the embedded window ``i + 1`` (teacher
  forcing).  The step for the last window is fed a learned start vector.
* ``feedforward`` -- the flattened windows go through two ReLU dense layers
  and the same heads; the decoder mirrors it.

Binary columns of the reconstruction pass through a sigmoid, continuous
columns are left linear.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .baselines import kmeans

ENCODER_KINDS = ("feedforward", "recurrent")


@dataclass(frozen=True)
class ModelConfig:
    input_width: int
    n_windows: int = 1
    embed_width: int = 256
    latent_width: int = 256
    n_gru_layers: int = 2
    dropout_p: float = 0.1
    n_clusters: int = 3
    encoder_kind: str = "recurrent"
    binary_columns: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "binary_columns", tuple(int(c) for c in self.binary_columns))
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        for name in ("input_width", "n_windows", "embed_width", "latent_width",
                     "n_gru_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.latent_width >= self.input_width * self.n_windows:
            raise ValueError("latent_width must be smaller than the input size")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be at least 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if any(not 0 <= c < self.input_width for c in self.binary_columns):
            raise ValueError("binary column index out of range")

    @property
    def binary_mask(self) -> np.ndarray:
        mask = np.zeros(self.input_width, dtype=bool)
        mask[list(self.binary_columns)] = True
        return mask

    def to_json(self) -> str:
        d = asdict(self)
        d["binary_columns"] = list(self.binary_columns)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ModelConfig:
        return cls(**json.loads(text))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases, centroids at the origin."""
    p = ParamSet()
    E, L, F = config.embed_width, config.latent_width, config.input_width

    def layer(name, fan_in, fan_out):
        p.add(f"{name}_W", _glorot(rng, fan_in, fan_out), decay=True)
        p.add(f"{name}_b", np.zeros(fan_out))

    if config.encoder_kind == "feedforward":
        D = F * config.n_windows
        layer("enc1", D, E)
        layer("enc2", E, E)
        layer("mu", E, L)
        layer("logvar", E, L)
        layer("dec1", L, E)
        layer("dec2", E, E)
        layer("dec_out", E, D)
    else:
        layer("embed1", F, E)
        layer("embed2", E, E)
        H = E
        for l in range(config.n_gru_layers):
            d_in = E if l == 0 else 2 * H
            for direction in ("fwd", "bwd"):
                _gru_params(p, rng, f"gru{l}_{direction}_", d_in, H)
        layer("agg", 2 * config.n_gru_layers * H, E)
        layer("mu", E, L)
        layer("logvar", E, L)
        _gru_params(p, rng, "dec_gru_", E, L)
        p.add("start_token", np.zeros(E))
        layer("dec1", L, E)
        layer("dec_out", E, F)
    layer("risk", L, 1)
    p.add("centroids", np.zeros((config.n_clusters, L)))
    return p


def _gru_params(p: ParamSet, rng, prefix, d_in, hidden):
    p.add(prefix + "W", np.concatenate([_glorot(rng, d_in, hidden) for _ in range(3)], 1),
          decay=True)
    p.add(prefix + "U", np.concatenate([_glorot(rng, hidden, hidden) for _ in range(3)], 1),
          decay=True)
    p.add(prefix + "b", np.zeros(3 * hidden))


@dataclass
class Embedding:
    mu: Tensor
    logvar: Tensor
    z: Tensor


class TrajectoryModel:
    """Encoder, decoder, risk head and centroid layer over a shared latent space.

    Inputs are arrays of shape ``(batch, n_windows, input_width)``.
    """

    def __init__(self, config: ModelConfig, params: ParamSet | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(
            config, np.random.default_rng(seed))

    # ------------------------------------------------------------ encoder

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, None, :]
        cfg = self.config
        if x.ndim != 3 or x.shape[2] != cfg.input_width:
            raise ValueError(
                f"expected input width {cfg.input_width}, got shape {x.shape}")
        if cfg.encoder_kind == "feedforward" and x.shape[1] != cfg.n_windows:
            raise ValueError(f"expected {cfg.n_windows} windows, got {x.shape[1]}")
        return x

    def _embed_windows(self, x: np.ndarray | Tensor) -> Tensor:
        x = ad.as_tensor(x)
        b, t, f = x.shape
        flat = ad.reshape(x, (b * t, f))
        p = self.params
        h = ad.dense(flat, p["embed1_W"], p["embed1_b"], "relu")
        h = ad.dense(h, p["embed2_W"], p["embed2_b"], "relu")
        return ad.reshape(h, (b, t, h.shape[1]))

    def encode(self, x, training: bool = False,
               rng: np.random.Generator | None = None) -> Embedding:
        """Latent posterior for a batch; ``z`` is ``mu`` outside training."""
        x = self._check_input(x)
        p, cfg = self.params, self.config
        if cfg.encoder_kind == "feedforward":
            h = x.reshape(x.shape[0], -1)
            h = ad.dense(h, p["enc1_W"], p["enc1_b"], "relu")
            h = ad.dense(h, p["enc2_W"], p["enc2_b"], "relu")
        else:
            emb = self._embed_windows(x)
            steps = [ad.take(emb, (slice(None), t, slice(None))) for t in range(x.shape[1])]
            finals = ad.bidirectional_gru(steps, p, cfg.n_gru_layers, cfg.dropout_p,
                                          training=training, rng=rng)
            h = ad.dense(ad.concat(finals, axis=1), p["agg_W"], p["agg_b"], "relu")
        mu = ad.dense(h, p["mu_W"], p["mu_b"])
        logvar = ad.dense(h, p["logvar_W"], p["logvar_b"])
        if training:
            if rng is None:
                raise ValueError("training-mode encode needs an explicit rng")
            z = ad.reparameterize(mu, logvar, rng.standard_normal(mu.shape))
        else:
            z = mu
        return Embedding(mu, logvar, z)

    # ------------------------------------------------------------ decoder

    def _output_head(self, h: Tensor) -> Tensor:
        p = self.params
        out = ad.dense(h, p["dec_out_W"], p["dec_out_b"])
        binary = self.config.binary_mask
        if not binary.any():
            return out
        if self.config.encoder_kind == "feedforward":
            binary = np.tile(binary, self.config.n_windows)
        b = binary.astype(np.float64)
        return ad.sigmoid(out) * b + out * (1.0 - b)

    def decode(self, z, x) -> Tensor:
        """Reconstruct ``x`` (teacher-forced for the recurrent decoder)."""
        z = ad.as_tensor(z)
        x = self._check_input(x)
        cfg, p = self.config, self.params
        if z.shape[-1] != cfg.latent_width:
            raise ValueError(f"latent width {z.shape[-1]} != {cfg.latent_width}")
        b, t, f = x.shape
        if z.shape[0] != b:
            raise ValueError("teacher sequence batch does not match z")
        if cfg.encoder_kind == "feedforward":
            h = ad.dense(z, p["dec1_W"], p["dec1_b"], "relu")
            h = ad.dense(h, p["dec2_W"], p["dec2_b"], "relu")
            return ad.reshape(self._output_head(h), (b, t, f))
        emb = self._embed_windows(x)
        start = ad.reshape(p["start_token"], (1, cfg.embed_width)) * np.ones((b, 1))
        h = z
        states: list[Tensor] = [None] * t
        for i in range(t - 1, -1, -1):
            teacher = start if i == t - 1 else ad.take(emb, (slice(None), i + 1, slice(None)))
            h = ad.gru_cell(teacher, h, p, "dec_gru_")
            states[i] = ad.reshape(h, (b, 1, cfg.latent_width))
        hs = ad.reshape(ad.concat(states, axis=1), (b * t, cfg.latent_width))
        hs = ad.dense(hs, p["dec1_W"], p["dec1_b"], "relu")
        return ad.reshape(self._output_head(hs), (b, t, f))

    # ------------------------------------------------------- heads

    def predict_risk(self, z) -> Tensor:
        z = ad.as_tensor(z)
        r = ad.dense(z, self.params["risk_W"], self.params["risk_b"])
        return ad.reshape(r, (r.shape[0],))

    def assign(self, z) -> Tensor:
        return soft_assign(z, self.params["centroids"])

    # ------------------------------------------------------- inference

    def embed(self, x, batch_size: int = 1024) -> np.ndarray:
        """Evaluation-mode ``mu`` for a whole cohort."""
        x = self._check_input(x)
        out = [self.encode(x[i:i + batch_size]).mu.value
               for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out, axis=0)

    def soft_labels(self, x, batch_size: int = 1024) -> np.ndarray:
        z = self.embed(x, batch_size)
        return soft_assign(z, self.params["centroids"].value).value

    def risks(self, x, batch_size: int = 1024) -> np.ndarray:
        return self.predict_risk(self.embed(x, batch_size)).value

    # ------------------------------------------------------- persistence

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.params.save(directory / "params.npz")
        (directory / "model_config.json").write_text(self.config.to_json() + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> TrajectoryModel:
        directory = Path(directory)
        config = ModelConfig.from_json((directory / "model_config.json").read_text())
        return cls(config, ParamSet.load(directory / "params.npz"))


def soft_assign(z, centroids) -> Tensor:
    """Student-t kernel memberships ``(1 + ||z - c||^2)^(-1/2)``, row-normalized."""
    z, centroids = ad.as_tensor(z), ad.as_tensor(centroids)
    if z.value.ndim == 1:
        z = ad.reshape(z, (1, z.shape[0]))
    if centroids.shape[0] < 2:
        raise ValueError("soft_assign needs at least two centroids")
    diff = ad.reshape(z, (z.shape[0], 1, z.shape[1])) - ad.reshape(
        centroids, (1,) + centroids.shape)
    sq = ad.sum_(diff * diff, axis=2)
    kernel = ad.power(1.0 + sq, -0.5)
    return kernel / ad.sum_(kernel, axis=1, keepdims=True)


class DegenerateClusterError(ValueError):
    def __init__(self, cluster: int):
        super().__init__(f"cluster {cluster} has zero total assignment")
        self.cluster = cluster


def target_distribution(q) -> np.ndarray:
    """Sharpened self-training target ``p_k ∝ q_k^2 / f_k``, ``f_k = Σ_n q_nk``."""
    q = np.asarray(q.value if isinstance(q, Tensor) else q, dtype=np.float64)
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise DegenerateClusterError(int(np.flatnonzero(f <= 0)[0]))
    w = q * q / f
    return w / w.sum(axis=1, keepdims=True)


def hard_labels(q) -> np.ndarray:
    q = q.value if isinstance(q, Tensor) else np.asarray(q)
    return q.argmax(axis=1)


def init_centroids(embeddings, k: int, rng: np.random.Generator,
                   n_init: int = 10) -> np.ndarray:
    """k-means (k-means++ seeding, at most 100 Lloyd steps) on embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] < k:
        raise ValueError(f"need at least k={k} embeddings, got {emb.shape[0]}")
    return kmeans(emb, k, rng, n_init=n_init, max_iter=100).centroids
