"""Latitude-compensated spectral refinement of panoramic token features.

The stage chain: text-conditioned attention injects class semantics into
the visual tokens; the token field splits into a Laplacian (edge) band
and a Gaussian (structure) band; each band is re-weighted by latitude —
edges trusted near the equator, extra smoothing toward the poles, where
the equirectangular stretch distorts local statistics; a gated residual
folds both bands back; a small pre-norm transformer block re-mixes global
context.  All spatial filtering wraps horizontally so the 360° seam is
invisible to the math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError
from .geometry import LatitudeProfile
from .numerics import (PanoPadding, _gelu64, conv2d_pano, gaussian_kernel,
                       laplacian_kernel, row_softmax)

LN_EPS = 1e-5
FFN_WIDTH = 4  # hidden width multiplier of the re-aggregation FFN


@dataclass(frozen=True, eq=False)
class VisualTokens:
    """L×D patch tokens in row-major order over an (rows, cols) grid."""

    tokens: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float32)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        if tokens.ndim != 2:
            raise ShapeError("tokens must be L×D")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ShapeError(f"bad token grid {self.grid}")
        if tokens.shape[0] != self.grid[0] * self.grid[1]:
            raise ShapeError(
                f"token count {tokens.shape[0]} != grid {self.grid[0]}x{self.grid[1]}")

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True, eq=False)
class TextEmbeddings:
    """C×D class embeddings; row order matches ``class_names``."""

    embeddings: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float32)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ShapeError("embeddings must be C×D with C >= 1")
        if len(self.class_names) != emb.shape[0]:
            raise ShapeError("class_names length must match embedding rows")

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True, eq=False)
class ModulatorParams:
    """Weights and hyperparameters of the spectral refinement stage."""

    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    sigma_lf: float
    hf_pointwise: np.ndarray
    lf_pointwise: np.ndarray
    gate_text: np.ndarray
    gate_bias: np.ndarray
    lambda_h: float
    lambda_l: float
    reagg_wq: np.ndarray
    reagg_wk: np.ndarray
    reagg_wv: np.ndarray
    reagg_wo: np.ndarray
    ffn_w1: np.ndarray
    ffn_w2: np.ndarray
    ln1_scale: np.ndarray
    ln1_offset: np.ndarray
    ln2_scale: np.ndarray
    ln2_offset: np.ndarray
    seed: int = 0
    inject_residual: bool = True
    inject_out_proj: bool = True

    def __post_init__(self):
        d = np.asarray(self.wq).shape[0]
        if d % self.heads != 0:
            raise ConfigError(f"dim {d} not divisible by {self.heads} heads")
        if self.sigma_lf <= 0:
            raise ConfigError("sigma_lf must be positive")
        square = ("wq", "wk", "wv", "wo", "hf_pointwise", "lf_pointwise",
                  "gate_text", "reagg_wq", "reagg_wk", "reagg_wv", "reagg_wo")
        for name in square:
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        vectors = ("gate_bias", "ln1_scale", "ln1_offset", "ln2_scale", "ln2_offset")
        for name in vectors:
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != (d,):
                raise ShapeError(f"{name} must have length {d}")
            object.__setattr__(self, name, arr)
        w1 = np.asarray(self.ffn_w1, dtype=np.float32)
        w2 = np.asarray(self.ffn_w2, dtype=np.float32)
        if w1.shape != (d, FFN_WIDTH * d) or w2.shape != (FFN_WIDTH * d, d):
            raise ShapeError("FFN weights must be D×4D and 4D×D")
        object.__setattr__(self, "ffn_w1", w1)
        object.__setattr__(self, "ffn_w2", w2)

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    TENSOR_FIELDS = ("wq", "wk", "wv", "wo", "hf_pointwise", "lf_pointwise",
                     "gate_text", "gate_bias", "reagg_wq", "reagg_wk",
                     "reagg_wv", "reagg_wo", "ffn_w1", "ffn_w2",
                     "ln1_scale", "ln1_offset", "ln2_scale", "ln2_offset")

    @classmethod
    def initialize(cls, dim: int, heads: int, seed: int, sigma_lf: float = 1.5,
                   lambda_h: float = 0.1, lambda_l: float = 0.1,
                   inject_residual: bool = True,
                   inject_out_proj: bool = True) -> "ModulatorParams":
        """Seeded init giving an exact identity path out of the box.

        Output projections and the FFN second layer start at zero, the
        channel transforms at identity, so the freshly built stage is a
        (testable) passthrough plus the attention injection.
        """
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        rng = np.random.default_rng(seed)
        draw = {name: _orthogonal(rng, dim, dim)
                for name in ("wq", "wk", "wv", "reagg_wq", "reagg_wk", "reagg_wv")}
        ffn_w1 = _orthogonal(rng, dim, FFN_WIDTH * dim)
        gate_text = _orthogonal(rng, dim, dim)
        eye = np.eye(dim, dtype=np.float32)
        zeros = np.zeros((dim, dim), dtype=np.float32)
        return cls(
            heads=heads,
            wq=draw["wq"], wk=draw["wk"], wv=draw["wv"], wo=zeros.copy(),
            sigma_lf=float(sigma_lf),
            hf_pointwise=eye.copy(), lf_pointwise=eye.copy(),
            gate_text=gate_text, gate_bias=np.zeros(dim, dtype=np.float32),
            lambda_h=float(lambda_h), lambda_l=float(lambda_l),
            reagg_wq=draw["reagg_wq"], reagg_wk=draw["reagg_wk"],
            reagg_wv=draw["reagg_wv"], reagg_wo=zeros.copy(),
            ffn_w1=ffn_w1, ffn_w2=np.zeros((FFN_WIDTH * dim, dim), dtype=np.float32),
            ln1_scale=np.ones(dim, dtype=np.float32),
            ln1_offset=np.zeros(dim, dtype=np.float32),
            ln2_scale=np.ones(dim, dtype=np.float32),
            ln2_offset=np.zeros(dim, dtype=np.float32),
            seed=int(seed),
            inject_residual=inject_residual,
            inject_out_proj=inject_out_proj,
        )


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Semi-orthogonal init via QR with sign fixing for determinism."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))[None, :]
    if rows >= cols:
        out = q[:rows, :cols]
    else:
        out = q[:cols, :rows].T
    return out.astype(np.float32)


def multi_head_attention(q_src: np.ndarray, kv_src: np.ndarray,
                         wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                         wo: np.ndarray, heads: int,
                         out_proj: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention; returns (L×D output, heads×L×S weights)."""
    d = q_src.shape[1]
    if kv_src.shape[1] != d:
        raise ShapeError(f"query dim {d} != key/value dim {kv_src.shape[1]}")
    if d % heads != 0:
        raise ConfigError(f"dim {d} not divisible by {heads} heads")
    q = q_src.astype(np.float64) @ wq.astype(np.float64)
    k = kv_src.astype(np.float64) @ wk.astype(np.float64)
    v = kv_src.astype(np.float64) @ wv.astype(np.float64)
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    outs = []
    weights = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        attn = row_softmax(scores).astype(np.float64)
        weights.append(attn)
        outs.append(attn @ v[:, sl])
    merged = np.concatenate(outs, axis=1)
    if out_proj:
        merged = merged @ wo.astype(np.float64)
    return merged.astype(np.float32), np.stack(weights).astype(np.float32)


def cross_modal_inject(v: VisualTokens, t: TextEmbeddings,
                       p: ModulatorParams) -> VisualTokens:
    """Attend from visual tokens to class embeddings and add the readout."""
    if v.dim != t.dim or v.dim != p.dim:
        raise ShapeError(
            f"dims disagree: tokens {v.dim}, text {t.dim}, params {p.dim}")
    attended, _ = multi_head_attention(v.tokens, t.embeddings, p.wq, p.wk,
                                       p.wv, p.wo, p.heads, p.inject_out_proj)
    if p.inject_residual:
        out = (v.tokens.astype(np.float64) + attended.astype(np.float64))
        return VisualTokens(out.astype(np.float32), v.grid)
    return VisualTokens(attended, v.grid)


def tokens_to_field(tokens: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """L×D tokens -> D×rows×cols channel field (row-major token order)."""
    rows, cols = grid
    return np.transpose(np.asarray(tokens).reshape(rows, cols, -1), (2, 0, 1))


def field_to_tokens(field: np.ndarray) -> np.ndarray:
    d, rows, cols = field.shape
    return np.transpose(field, (1, 2, 0)).reshape(rows * cols, d)


def frequency_decompose(v: VisualTokens,
                        p: ModulatorParams) -> tuple[VisualTokens, VisualTokens]:
    """Split the token field into edge and structure bands.

    The edge band is the 4-neighbor Laplacian response; the structure band
    is a Gaussian smooth (sigma_lf, radius 3 sigma).  Both wrap across the
    seam and replicate rows at the poles.
    """
    field = tokens_to_field(v.tokens, v.grid)
    pad = PanoPadding("replicate")
    high = conv2d_pano(field, laplacian_kernel(), pad)
    radius = int(math.ceil(3.0 * p.sigma_lf))
    low = conv2d_pano(field, gaussian_kernel(p.sigma_lf, radius), pad)
    return (VisualTokens(field_to_tokens(high), v.grid),
            VisualTokens(field_to_tokens(low), v.grid))


def _token_row_weights(lat: LatitudeProfile, grid: tuple[int, int]) -> np.ndarray:
    rows, cols = grid
    if lat.rows != rows:
        raise ShapeError(f"latitude profile rows {lat.rows} != grid rows {rows}")
    return np.repeat(lat.weight.astype(np.float64), cols)


def sharpen_high_freq(high: VisualTokens, lat: LatitudeProfile,
                      p: ModulatorParams) -> VisualTokens:
    """Emphasize edge responses where the projection is trustworthy.

    Channel transform + GELU, then a per-row gain of cos(latitude): full
    strength at the equator, fading to zero at the poles where stretched
    hallucinated edges dominate.
    """
    gain = _token_row_weights(lat, high.grid)
    mixed = _gelu64(high.tokens.astype(np.float64) @ p.hf_pointwise.astype(np.float64))
    return VisualTokens((mixed * gain[:, None]).astype(np.float32), high.grid)


def stabilize_low_freq(low: VisualTokens, lat: LatitudeProfile,
                       p: ModulatorParams) -> VisualTokens:
    """Blend in extra smoothing toward the poles to keep structure coherent.

    Per row r: out = (1 - w) * low + w * smooth(low) with w = 1 - cos(phi_r),
    so the equator passes through untouched while polar rows receive the
    full extra 3×3 Gaussian pass; a channel transform + GELU follows.
    """
    gain = 1.0 - _token_row_weights(lat, low.grid)
    field = tokens_to_field(low.tokens, low.grid)
    smooth = conv2d_pano(field, gaussian_kernel(1.0, 1), PanoPadding("replicate"))
    smooth_tokens = field_to_tokens(smooth).astype(np.float64)
    base = low.tokens.astype(np.float64)
    blended = base * (1.0 - gain[:, None]) + smooth_tokens * gain[:, None]
    mixed = _gelu64(blended @ p.lf_pointwise.astype(np.float64))
    return VisualTokens(mixed.astype(np.float32), low.grid)


def fusion_gates(base: VisualTokens, t: TextEmbeddings,
                 p: ModulatorParams) -> tuple[np.ndarray, np.ndarray]:
    """Channel gate from the mean class embedding, spatial gate from the tokens."""
    tmean = t.embeddings.astype(np.float64).mean(axis=0)
    g_ch = expit(tmean @ p.gate_text.astype(np.float64) + p.gate_bias.astype(np.float64))
    g_sp = expit(base.tokens.astype(np.float64).mean(axis=1))
    return g_ch, g_sp


def fuse_with_gates(base: np.ndarray, high: np.ndarray, low: np.ndarray,
                    g_ch: np.ndarray, g_sp: np.ndarray,
                    lambda_h: float, lambda_l: float) -> np.ndarray:
    gate = np.outer(np.asarray(g_sp, dtype=np.float64),
                    np.asarray(g_ch, dtype=np.float64))
    out = (base.astype(np.float64)
           + lambda_h * gate * high.astype(np.float64)
           + lambda_l * gate * low.astype(np.float64))
    return out.astype(np.float32)


def gated_fuse(base: VisualTokens, high: VisualTokens, low: VisualTokens,
               t: TextEmbeddings, p: ModulatorParams) -> VisualTokens:
    """Fold both frequency bands back through channel × spatial gates."""
    if not (base.tokens.shape == high.tokens.shape == low.tokens.shape):
        raise ShapeError("fusion inputs must share the token shape")
    g_ch, g_sp = fusion_gates(base, t, p)
    fused = fuse_with_gates(base.tokens, high.tokens, low.tokens,
                            g_ch, g_sp, p.lambda_h, p.lambda_l)
    return VisualTokens(fused, base.grid)


def _layer_norm(x: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    normed = (x - mean) / np.sqrt(var + LN_EPS)
    return normed * scale.astype(np.float64) + offset.astype(np.float64)


def contextual_reaggregate(f: VisualTokens, p: ModulatorParams) -> VisualTokens:
    """Pre-norm transformer block exchanging context across all tokens."""
    x = f.tokens.astype(np.float64)
    normed = _layer_norm(x, p.ln1_scale, p.ln1_offset)
    attended, _ = multi_head_attention(normed.astype(np.float32),
                                       normed.astype(np.float32),
                                       p.reagg_wq, p.reagg_wk, p.reagg_wv,
                                       p.reagg_wo, p.heads, True)
    x = x + attended.astype(np.float64)
    normed2 = _layer_norm(x, p.ln2_scale, p.ln2_offset)
    hidden = _gelu64(normed2 @ p.ffn_w1.astype(np.float64))
    x = x + hidden @ p.ffn_w2.astype(np.float64)
    return VisualTokens(x.astype(np.float32), f.grid)


def modulate(v: VisualTokens, t: TextEmbeddings, lat: LatitudeProfile,
             p: ModulatorParams) -> VisualTokens:
    """Full refinement: inject, decompose, compensate, fuse, re-aggregate."""
    injected = cross_modal_inject(v, t, p)
    high, low = frequency_decompose(injected, p)
    high = sharpen_high_freq(high, lat, p)
    low = stabilize_low_freq(low, lat, p)
    fused = gated_fuse(injected, high, low, t, p)
    return contextual_reaggregate(fused, p)
