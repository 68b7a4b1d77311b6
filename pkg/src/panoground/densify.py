"""Seed-driven densification of sparse class activations.

Text/visual similarity gives an initial per-class activation over tokens;
cosine affinity between tokens then propagates the strongest ("seed")
activations outward so fragmented responses grow into contiguous regions.
A standardized-sigmoid confidence map keeps noisy seeds from spreading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ParameterError, ShapeError
from .geometry import _bilinear_pano
from .numerics import mean_std, row_softmax, topk_indices
from .spectral import TextEmbeddings, VisualTokens

NORM_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class AffordanceMap:
    """Per-class activations, either C×L over tokens or C×H×W over pixels."""

    values: np.ndarray
    space: str
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", values)
        if self.space == "token":
            if values.ndim != 2:
                raise ShapeError("token-space maps must be C×L")
            if self.grid is None:
                raise ShapeError("token-space maps need a grid")
            grid = (int(self.grid[0]), int(self.grid[1]))
            object.__setattr__(self, "grid", grid)
            if grid[0] * grid[1] != values.shape[1]:
                raise ShapeError(
                    f"token count {values.shape[1]} != grid {grid[0]}x{grid[1]}")
        elif self.space == "pixel":
            if values.ndim != 3:
                raise ShapeError("pixel-space maps must be C×H×W")
        else:
            raise ParameterError(f"unknown map space {self.space!r}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("affordance map values must be finite")


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Symmetric L×L cosine affinity with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError("affinity must be square")
        if not np.allclose(values, values.T, atol=1e-6):
            raise ShapeError("affinity must be symmetric")
        if not np.allclose(np.diag(values), 1.0, atol=1e-6):
            raise ShapeError("affinity diagonal must be 1")
        if values.min() < -1.0 - 1e-6 or values.max() > 1.0 + 1e-6:
            raise ShapeError("affinity entries must lie in [-1, 1]")


@dataclass(frozen=True)
class DensifierParams:
    """Densification knobs: seeds per class, confidence temperature, and
    the residual propagation scale."""

    seeds_k: int = 10
    temperature: float = 1.0
    alpha: float = 0.5
    clamp_negative: bool = True
    refine_queries: bool = False

    def __post_init__(self):
        if self.seeds_k < 1:
            raise ParameterError("seeds_k must be >= 1")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")


def initial_activations(v: VisualTokens, t: TextEmbeddings) -> AffordanceMap:
    """Raw scaled dot-product similarity of class embeddings vs tokens.

    No softmax: the result is a similarity field scaled by 1/sqrt(D), not
    an attention distribution.
    """
    if v.dim != t.dim:
        raise ShapeError(f"token dim {v.dim} != text dim {t.dim}")
    sims = (t.embeddings.astype(np.float64) @ v.tokens.astype(np.float64).T)
    sims *= 1.0 / math.sqrt(v.dim)
    return AffordanceMap(sims.astype(np.float32), "token", v.grid)


def cosine_affinity(v: VisualTokens) -> AffinityMatrix:
    """Pairwise cosine similarity of token rows (norms floored at 1e-8).

    The diagonal is pinned to exactly 1 and the matrix symmetrized, which
    only removes float noise for non-degenerate inputs.
    """
    tokens = v.tokens.astype(np.float64)
    norms = np.maximum(np.linalg.norm(tokens, axis=1, keepdims=True), NORM_FLOOR)
    unit = tokens / norms
    s = unit @ unit.T
    s = np.clip((s + s.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(s, 1.0)
    return AffinityMatrix(s.astype(np.float32))


def confidence_map(a: AffordanceMap, temperature: float) -> np.ndarray:
    """Per-class standardized sigmoid of the activations.

    Each class is standardized with its own population mean/std (std
    floored at 1e-8) so one class's scale cannot mute another's seeds.
    """
    if a.space != "token":
        raise ShapeError("confidence_map expects a token-space map")
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    values = a.values.astype(np.float64)
    out = np.empty_like(values)
    for c in range(values.shape[0]):
        mu, std = mean_std(values[c])
        out[c] = expit((values[c] - mu) / (std / float(temperature)))
    return out.astype(np.float32)


def select_seeds(a: AffordanceMap, k: int) -> list[list[int]]:
    """Top-k token indices per class, ties to the lower index."""
    if a.space != "token":
        raise ShapeError("select_seeds expects a token-space map")
    return [topk_indices(row, k) for row in a.values]


def densify(a: AffordanceMap, affinity: AffinityMatrix, conf: np.ndarray,
            seeds: list[list[int]], p: DensifierParams) -> AffordanceMap:
    """Propagate seed confidence through the affinity graph.

    Per class c and token i the lift is max over seeds j of
    S[i, j] * conf[c, j], optionally clamped at zero, scaled by alpha and
    added back.  The lift is bounded by |alpha| since |S * conf| < 1.
    """
    if a.space != "token":
        raise ShapeError("densify expects a token-space map")
    values = a.values.astype(np.float64)
    s = affinity.values.astype(np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != values.shape:
        raise ShapeError(f"confidence shape {conf.shape} != map shape {values.shape}")
    if s.shape[0] != values.shape[1]:
        raise ShapeError("affinity size does not match token count")
    if len(seeds) != values.shape[0]:
        raise ShapeError("need one seed set per class")
    out = np.empty_like(values)
    for c, seed_ix in enumerate(seeds):
        if len(seed_ix) == 0:
            raise ParameterError(f"class {c}: empty seed set")
        seed_ix = np.asarray(seed_ix, dtype=np.int64)
        lift = (s[:, seed_ix] * conf[c, seed_ix][None, :]).max(axis=1)
        if p.clamp_negative:
            lift = np.maximum(lift, 0.0)
        out[c] = values[c] + p.alpha * lift
    return AffordanceMap(out.astype(np.float32), "token", a.grid)


def refine_activations(v: VisualTokens, t: TextEmbeddings,
                       p: DensifierParams) -> AffordanceMap:
    """Full head: similarity readout, affinity, confidence, seeds, lift."""
    if p.seeds_k > v.count:
        raise ParameterError(f"seeds_k {p.seeds_k} > token count {v.count}")
    text = t
    if p.refine_queries:
        # One unparameterized cross-attention pass sharpening the queries
        # before readout; off by default.
        scores = (t.embeddings.astype(np.float64)
                  @ v.tokens.astype(np.float64).T) / math.sqrt(v.dim)
        attn = row_softmax(scores).astype(np.float64)
        refined = t.embeddings.astype(np.float64) + attn @ v.tokens.astype(np.float64)
        text = TextEmbeddings(refined.astype(np.float32), t.class_names)
    acts = initial_activations(v, text)
    affinity = cosine_affinity(v)
    conf = confidence_map(acts, p.temperature)
    seeds = select_seeds(acts, p.seeds_k)
    return densify(acts, affinity, conf, seeds, p)


def to_pixel_map(a: AffordanceMap, grid: tuple[int, int], out_h: int, out_w: int,
                 normalize: bool = True) -> AffordanceMap:
    """Reshape token activations to the grid and upsample to pixels.

    Bilinear interpolation wraps horizontally (the seam interpolates
    between the last and first grid columns) and replicates vertically.
    With ``normalize`` each class is min-max scaled to [0, 1]; constant
    classes collapse to zero.
    """
    if a.space != "token":
        raise ShapeError("to_pixel_map expects a token-space map")
    grid = (int(grid[0]), int(grid[1]))
    if a.grid != grid:
        raise ShapeError(f"grid argument {grid} != map grid {a.grid}")
    if out_h < 1 or out_w < 1:
        raise ParameterError("output size must be positive")
    rows, cols = grid
    field = a.values.reshape(a.values.shape[0], rows, cols).astype(np.float64)
    src_r = (np.arange(out_h, dtype=np.float64) + 0.5) * (rows / out_h) - 0.5
    src_c = (np.arange(out_w, dtype=np.float64) + 0.5) * (cols / out_w) - 0.5
    rr = np.broadcast_to(src_r[:, None], (out_h, out_w))
    cc = np.broadcast_to(src_c[None, :], (out_h, out_w))
    up = _bilinear_pano(field, rr, cc)
    if normalize:
        for c in range(up.shape[0]):
            lo, hi = up[c].min(), up[c].max()
            if hi > lo:
                up[c] = (up[c] - lo) / (hi - lo)
            else:
                up[c] = 0.0
    return AffordanceMap(up.astype(np.float32), "pixel")
