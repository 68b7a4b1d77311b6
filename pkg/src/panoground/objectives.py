"""Multi-level training objective: pixel BCE, distribution KL, and a
region-text InfoNCE alignment term, with exact analytic gradients and a
small gradient-descent demo that fits a free heatmap to supervision.

Losses accept any float dtype and accumulate in float64; natural log
everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, ParameterError, ShapeError

NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three terms plus the InfoNCE temperature and the
    epsilon guarding logs and empty masks."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.5
    tau: float = 0.07
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ParameterError("tau must be positive")
        if self.eps <= 0:
            raise ParameterError("eps must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    bce: float
    kl: float
    rtc: float
    total: float


def bce_loss(logits: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy in the numerically stable logit form."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if x.shape != t.shape:
        raise ShapeError(f"logits {x.shape} != target {t.shape}")
    if t.min() < 0 or t.max() > 1:
        raise DomainError("BCE target must lie in [0, 1]")
    # max(x,0) - x*t + log(1 + exp(-|x|)) == -[t log s + (1-t) log(1-s)]
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return float(loss.mean())


def kl_loss(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-8) -> float:
    """KL divergence of two already-normalized maps, ground truth as the
    reference: sum(gt * log((gt + eps) / (pred + eps)))."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} != gt {g.shape}")
    if abs(p.sum() - 1.0) > 1e-4 or abs(g.sum() - 1.0) > 1e-4:
        raise ContractError("kl_loss inputs must each sum to 1 (within 1e-4)")
    return float(np.sum(g * (np.log(g + eps) - np.log(p + eps))))


def region_pool(tokens: np.ndarray, masks: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Mask-weighted mean token per class: (M @ F) / (sum(M) + eps)."""
    f = np.asarray(tokens, dtype=np.float64)
    m = np.asarray(masks, dtype=np.float64)
    if f.ndim != 2 or m.ndim != 2 or m.shape[1] != f.shape[0]:
        raise ShapeError(f"tokens {f.shape} and masks {m.shape} disagree")
    if m.min() < 0:
        raise DomainError("region masks must be non-negative")
    pooled = (m @ f) / (m.sum(axis=1, keepdims=True) + eps)
    return pooled.astype(np.float32)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.maximum(np.linalg.norm(a, axis=1, keepdims=True), NORM_FLOOR)
    nb = np.maximum(np.linalg.norm(b, axis=1, keepdims=True), NORM_FLOOR)
    return (a / na) @ (b / nb).T


def info_nce_loss(regions: np.ndarray, text: np.ndarray, tau: float) -> float:
    """InfoNCE over classes with cosine logits; the matching class is the
    positive for each region."""
    v = np.asarray(regions, dtype=np.float64)
    t = np.asarray(text, dtype=np.float64)
    if v.shape != t.shape:
        raise ShapeError(f"regions {v.shape} != text {t.shape}")
    if tau <= 0:
        raise ParameterError("tau must be positive")
    logits = _cosine_rows(v, t) / float(tau)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_prob_diag = np.diag(shifted) - log_z
    return float(-log_prob_diag.mean())


def total_loss(parts: tuple[float, float, float], w: LossWeights) -> LossBreakdown:
    bce, kl, rtc = (float(x) for x in parts)
    total = w.lambda1 * bce + w.lambda2 * kl + w.lambda3 * rtc
    return LossBreakdown(bce, kl, rtc, total)


def _normalize64(arr: np.ndarray, eps: float) -> np.ndarray:
    if arr.min() < 0:
        raise DomainError("distribution inputs must be non-negative")
    shifted = arr.astype(np.float64) + eps
    return shifted / shifted.sum()


def grad_heatmap_losses(logits: np.ndarray, target: np.ndarray, gt: np.ndarray,
                        w: LossWeights) -> np.ndarray:
    """Exact gradient of lambda1*BCE + lambda2*KL with respect to logits.

    The KL path runs through sigmoid and the (x + eps)/sum normalization,
    so the chain rule carries the normalizer's coupling term.
    """
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if x.shape != t.shape or x.shape != g.shape:
        raise ShapeError("logits, target, and gt must share a shape")
    n = x.size
    p = expit(x)
    grad = w.lambda1 * (p - t) / n
    if w.lambda2 != 0.0:
        eps = w.eps
        z = (p + eps).sum()
        q = (p + eps) / z
        coupling = np.sum(g * q / (q + eps))
        dkl_dp = (-g / (q + eps) + coupling) / z
        grad = grad + w.lambda2 * dkl_dp * p * (1.0 - p)
    return grad.astype(np.float32)


def grad_info_nce(regions: np.ndarray, text: np.ndarray,
                  tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact InfoNCE gradient with respect to region and text rows."""
    v = np.asarray(regions, dtype=np.float64)
    t = np.asarray(text, dtype=np.float64)
    if v.shape != t.shape:
        raise ShapeError(f"regions {v.shape} != text {t.shape}")
    if tau <= 0:
        raise ParameterError("tau must be positive")
    c = v.shape[0]
    nv = np.maximum(np.linalg.norm(v, axis=1, keepdims=True), NORM_FLOOR)
    nt = np.maximum(np.linalg.norm(t, axis=1, keepdims=True), NORM_FLOOR)
    uv = v / nv
    ut = t / nt
    sims = uv @ ut.T
    logits = sims / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    dl_dsim = (probs - np.eye(c)) / (c * tau)
    # d sim(v_c, t_k) / d v_c = (ut_k - sim * uv_c) / |v_c|
    grad_v = (dl_dsim @ ut - (dl_dsim * sims).sum(axis=1, keepdims=True) * uv) / nv
    # d sim(v_c, t_k) / d t_k = (uv_c - sim * ut_k) / |t_k|
    grad_t = (dl_dsim.T @ uv - (dl_dsim * sims).sum(axis=0)[:, None] * ut) / nt
    return grad_v.astype(np.float32), grad_t.astype(np.float32)


def two_blob_target(height: int = 32, width: int = 64) -> np.ndarray:
    """Bundled demo supervision: two Gaussian blobs, peak 1, sigma 3."""
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    blobs = np.zeros((height, width), dtype=np.float64)
    for (cy, cx) in ((height // 4, width // 4), (3 * height // 4, 3 * width // 4)):
        d2 = (rows - cy) ** 2 + (cols - cx) ** 2
        blobs = np.maximum(blobs, np.exp(-d2 / (2.0 * 3.0 ** 2)))
    return blobs.astype(np.float32)


def optimize_heatmap(gt: np.ndarray, steps: int, lr: float, w: LossWeights,
                     seed: int = 0) -> tuple[np.ndarray, list[LossBreakdown]]:
    """Plain gradient descent fitting free logits to a supervision map.

    The trace holds steps + 1 rows: losses at the seeded init and after
    each update.  Steps descend the per-pixel (sum-form) BCE plus the KL
    term — the mean-form BCE gradient shrinks with pixel count, which
    would make the step size depend on resolution — so the exported
    gradient is called with the BCE weight scaled by the pixel count.
    The reported losses keep the standard (mean BCE) convention.  There
    is no region/text pair here, so the contrastive term reports zero.
    """
    g = np.asarray(gt, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError("optimize_heatmap expects an H×W target")
    if g.min() < 0 or g.max() > 1:
        raise DomainError("target must lie in [0, 1]")
    if steps < 0:
        raise ParameterError("steps must be >= 0")
    ghat = _normalize64(g, w.eps)
    step_w = LossWeights(lambda1=w.lambda1 * g.size, lambda2=w.lambda2,
                         lambda3=w.lambda3, tau=w.tau, eps=w.eps)
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 0.01, g.shape)
    trace: list[LossBreakdown] = []
    for step in range(steps + 1):
        p = expit(x)
        q = _normalize64(p, w.eps)
        bce = bce_loss(x, g)
        kl = kl_loss(q, ghat, w.eps)
        trace.append(total_loss((bce, kl, 0.0), w))
        if step == steps:
            break
        x -= lr * grad_heatmap_losses(x, g, ghat, step_w).astype(np.float64)
    return x.astype(np.float32), trace
