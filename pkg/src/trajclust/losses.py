"""Reconstruction, KL, Cox partial-likelihood and clustering losses."""

from __future__ import annotations

import math
import warnings
from dataclasses import astuple, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w_r: float = 0.5
    w_y: float = 0.0
    w_c: float = 0.25
    w_kl: float = 1e-5
    w_b: float = 1.0

    def __post_init__(self):
        vals = astuple(self)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"loss weights must be finite and nonnegative: {self}")
        if not any(v > 0 for v in (self.w_r, self.w_y, self.w_c, self.w_kl)):
            raise ValueError("at least one loss weight must be positive")

    def scaled(self, factor: float) -> LossWeights:
        return LossWeights(self.w_r * factor, self.w_y * factor, self.w_c * factor,
                           self.w_kl * factor, self.w_b)


SCENARIOS = {
    "recon_only": LossWeights(w_r=0.5, w_y=0.0),
    "outcome_only": LossWeights(w_r=0.0, w_y=1.0),
    "combined": LossWeights(w_r=0.05, w_y=1.0),
}


def recon_loss(x, x_hat, mask, w_b: float = 1.0, binary=None) -> Tensor:
    """Masked mixed-type reconstruction loss ``L_cont + w_b * L_bin``.

    ``mask`` marks the entries that count; ``binary`` marks the binary
    columns (broadcast against ``x``).  Continuous entries use squared error,
    binary entries use cross-entropy with predictions clamped to
    ``[1e-7, 1 - 1e-7]``.  Each term is averaged over its own valid entries
    and contributes 0 when it has none.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = ad.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"recon_loss shape mismatch: {x.shape} vs {x_hat.shape}")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    binary = (np.zeros(x.shape, dtype=bool) if binary is None
              else np.broadcast_to(np.asarray(binary, dtype=bool), x.shape))
    cont_w = (mask & ~binary).astype(np.float64)
    bin_w = (mask & binary).astype(np.float64)

    total = Tensor(0.0)
    n_cont = cont_w.sum()
    if n_cont > 0:
        diff = x_hat - np.where(cont_w > 0, x, 0.0)
        total = total + ad.sum_(diff * diff * cont_w) * (1.0 / n_cont)
    n_bin = bin_w.sum()
    if n_bin > 0:
        preds = x_hat.value[bin_w > 0]
        if np.any(preds < 0) or np.any(preds > 1):
            raise ValueError("binary predictions must lie in [0, 1]")
        p = ad.clip(x_hat * bin_w + 0.5 * (1.0 - bin_w), BCE_EPS, 1.0 - BCE_EPS)
        target = np.where(bin_w > 0, x, 0.0)
        bce = -(ad.log(p) * target + ad.log(1.0 - p) * (1.0 - target))
        total = total + ad.sum_(bce * bin_w) * (w_b / n_bin)
    return total


def kl_loss(mu, logvar) -> Tensor:
    """KL of ``N(mu, exp(logvar))`` from the unit normal, summed over latent
    dimensions and averaged over the batch."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"kl_loss shape mismatch: {mu.shape} vs {logvar.shape}")
    n = mu.shape[0] if mu.value.ndim > 1 else 1
    terms = 1.0 + logvar - mu * mu - ad.exp(logvar)
    return ad.sum_(terms) * (-0.5 / n)


def risk_set_matrix(times) -> np.ndarray:
    """``M[n, j] = 1`` iff ``times[j] >= times[n]``."""
    t = np.asarray(times, dtype=np.float64)
    return (t[None, :] >= t[:, None]).astype(np.float64)


def cox_loss(risks, times, events) -> Tensor:
    """Negative Cox partial log-likelihood averaged over the batch size.

    Tied times share a risk set (Breslow).  Returns 0, with a warning, when
    the batch holds no events.
    """
    risks = ad.as_tensor(risks)
    if risks.value.ndim == 2:
        risks = ad.reshape(risks, (risks.shape[0],))
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.float64)
    n = risks.shape[0]
    if n < 1 or times.shape != (n,) or events.shape != (n,):
        raise ValueError("cox_loss needs matching nonempty risks, times and events")
    if np.any(times <= 0):
        raise ValueError("cox_loss needs positive times")
    if not events.any():
        warnings.warn("cox_loss: batch has no events; loss is 0", RuntimeWarning,
                      stacklevel=2)
        return ad.sum_(risks) * 0.0
    shift = float(risks.value.max())
    scaled = ad.exp(risks - shift)
    m = risk_set_matrix(times)
    log_denom = ad.log(ad.matmul(Tensor(m), ad.reshape(scaled, (n, 1))))
    log_denom = ad.reshape(log_denom, (n,)) + shift
    return ad.sum_((risks - log_denom) * events) * (-1.0 / n)


def cluster_loss(p, q) -> Tensor:
    """``KL(P || Q)`` averaged over rows; ``p`` is a constant target."""
    p = np.asarray(p, dtype=np.float64)
    q = ad.as_tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"cluster_loss shape mismatch: {p.shape} vs {q.shape}")
    if np.any(q.value <= 0):
        raise ValueError("cluster_loss needs strictly positive q")
    n = p.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0).sum()
    return (plogp - ad.sum_(ad.log(q) * p)) * (1.0 / n)


COMPONENTS = ("L_r", "L_KL", "L_y", "L_c")


def total_loss(components: dict, weights: LossWeights) -> Tensor:
    """``w_r L_r + w_kl L_KL + w_y L_y + w_c L_c``.

    Missing components count as zero; a non-finite component raises.
    """
    pairs = (("L_r", weights.w_r), ("L_KL", weights.w_kl), ("L_y", weights.w_y),
             ("L_c", weights.w_c))
    total = Tensor(0.0)
    for name, w in pairs:
        comp = components.get(name)
        if comp is None:
            continue
        comp = ad.as_tensor(comp)
        if not np.all(np.isfinite(comp.value)):
            raise FloatingPointError(f"loss component {name} is not finite")
        if w != 0.0:
            total = total + comp * w
    return total
