"""Gamma-cross-entropy objectives and their exact cross-entropy limits.

Scores are always log density ratios: for the binary task z = log r(x, u),
for the multiclass task z[t, k] = log r(k, x(t)).  All sigmoid powers are
evaluated in the log domain, exp((g/(g+1)) * logsigmoid(.)), so the losses
stay finite for |z| up to several hundred.

gamma = 0 dispatches to the exact cross entropies; it is never evaluated
as a 0/0 limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError

BINARY = "binary-pair"
MULTICLASS = "multiclass"


def log_sigmoid(t: np.ndarray) -> np.ndarray:
    """log(sigmoid(t)), stable for large |t|."""
    return -np.logaddexp(0.0, -np.asarray(t, dtype=np.float64))


def softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class GammaLossSpec:
    gamma: float
    task: str = BINARY
    n_classes: int = 0

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if self.task not in (BINARY, MULTICLASS):
            raise ParameterError(f"unknown task {self.task!r}")
        if self.task == MULTICLASS and self.n_classes < 2:
            raise ParameterError("multiclass task needs n_classes >= 2")


@dataclass
class ContrastiveBatch:
    task: str
    z_pos: np.ndarray | None = None
    z_neg: np.ndarray | None = None
    logits: np.ndarray | None = None
    labels: np.ndarray | None = None

    @classmethod
    def binary_pairs(cls, z_pos, z_neg) -> "ContrastiveBatch":
        z_pos = np.asarray(z_pos, dtype=np.float64).reshape(-1)
        z_neg = np.asarray(z_neg, dtype=np.float64).reshape(-1)
        if z_pos.size == 0:
            raise InputError("empty batch")
        if z_pos.size != z_neg.size:
            raise InputError("positive and negative score counts must match")
        if not (np.isfinite(z_pos).all() and np.isfinite(z_neg).all()):
            raise InputError("non-finite scores in batch")
        return cls(BINARY, z_pos=z_pos, z_neg=z_neg)

    @classmethod
    def multiclass(cls, logits, labels) -> "ContrastiveBatch":
        logits = np.asarray(logits, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if logits.ndim != 2 or logits.shape[0] == 0:
            raise InputError("logits must be a nonempty (n, K) matrix")
        if labels.shape[0] != logits.shape[0]:
            raise InputError("one label per logit row required")
        if not np.isfinite(logits).all():
            raise InputError("non-finite logits in batch")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise InputError("labels out of range")
        return cls(MULTICLASS, logits=logits, labels=labels)


def gamma_binary_loss(batch: ContrastiveBatch, spec: GammaLossSpec):
    """Empirical binary gamma-cross entropy and its exact score gradients.

    loss = -(1/g) log[ (1/2T) sum_t ( sigmoid((g+1) z+_t)^{g/(g+1)}
                                    + sigmoid(-(g+1) z-_t)^{g/(g+1)} ) ]
    """
    if batch.task != BINARY:
        raise InputError("gamma_binary_loss needs a binary-pair batch")
    g = spec.gamma
    if g == 0.0:
        return baseline_ce_loss(batch)
    z_pos, z_neg = batch.z_pos, batch.z_neg
    n = z_pos.size
    w = g / (g + 1.0)
    la = w * log_sigmoid((g + 1.0) * z_pos)
    lb = w * log_sigmoid(-(g + 1.0) * z_neg)
    m = max(la.max(), lb.max())
    total = np.exp(la - m).sum() + np.exp(lb - m).sum()
    lse = m + np.log(total)
    loss = -(lse - np.log(2.0 * n)) / g
    g_pos = -np.exp(la - lse) * np.exp(log_sigmoid(-(g + 1.0) * z_pos))
    g_neg = np.exp(lb - lse) * np.exp(log_sigmoid((g + 1.0) * z_neg))
    return loss, (g_pos, g_neg)


def gamma_multiclass_loss(batch: ContrastiveBatch, spec: GammaLossSpec):
    """Empirical multiclass gamma-cross entropy and its exact logit gradients.

    Per-sample term exp(g z[t,u(t)] - (g/(g+1)) LSE_k((g+1) z[t,k])),
    averaged over the batch inside the outer -log/g.
    """
    if batch.task != MULTICLASS:
        raise InputError("gamma_multiclass_loss needs a multiclass batch")
    g = spec.gamma
    if g == 0.0:
        return baseline_ce_loss(batch)
    z = batch.logits
    u = batch.labels
    n = z.shape[0]
    w = g / (g + 1.0)
    scaled = (g + 1.0) * z
    zmax = scaled.max(axis=1, keepdims=True)
    lse_k = (zmax + np.log(np.exp(scaled - zmax).sum(axis=1, keepdims=True))).reshape(-1)
    t = g * z[np.arange(n), u] - w * lse_k
    tmax = t.max()
    lse_t = tmax + np.log(np.exp(t - tmax).sum())
    loss = -(lse_t - np.log(n)) / g
    omega = np.exp(t - lse_t)
    p = np.exp(scaled - lse_k[:, None])
    grad = p * omega[:, None]
    grad[np.arange(n), u] -= omega
    return loss, grad


def baseline_ce_loss(batch: ContrastiveBatch):
    """Exact logistic / softmax cross entropy; the gamma -> 0 limit."""
    if batch.task == BINARY:
        z_pos, z_neg = batch.z_pos, batch.z_neg
        n = z_pos.size
        loss = (softplus(-z_pos).sum() + softplus(z_neg).sum()) / (2.0 * n)
        g_pos = -np.exp(log_sigmoid(-z_pos)) / (2.0 * n)
        g_neg = np.exp(log_sigmoid(z_neg)) / (2.0 * n)
        return loss, (g_pos, g_neg)
    z = batch.logits
    u = batch.labels
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))).reshape(-1)
    loss = (lse - z[np.arange(n), u]).sum() / n
    grad = np.exp(z - lse[:, None]) / n
    grad[np.arange(n), u] -= 1.0 / n
    return loss, grad


def estimate_nu(outlier_scores, eps: float, spec: GammaLossSpec) -> float:
    """Monte-Carlo estimate of the outlier-leakage integral.

    nu_hat = eps * mean_t sigmoid((g+1) z_t)^{g/(g+1)} over scores z at
    outlier samples.  Scores of -inf (ratio exactly 0) contribute 0.
    """
    if spec.gamma <= 0.0:
        raise ParameterError("nu is only informative for gamma > 0")
    if not 0.0 <= eps < 1.0:
        raise ParameterError(f"eps must be in [0, 1), got {eps}")
    z = np.asarray(outlier_scores, dtype=np.float64).reshape(-1)
    if eps == 0.0:
        return 0.0
    if z.size == 0:
        raise InputError("need outlier scores when eps > 0")
    if np.isnan(z).any() or (z == np.inf).any():
        raise InputError("outlier scores must be < +inf and not NaN")
    g = spec.gamma
    w = g / (g + 1.0)
    return float(eps * np.exp(w * log_sigmoid((g + 1.0) * z)).mean())
