"""Deterministic float32 tensor primitives shared by every stage.

Values carry 32-bit float semantics: public results are float32, while
every accumulation runs in float64 before rounding back.  All functions
are pure and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import erf, expit

from .errors import DomainError, ParameterError, ShapeError

# Floor applied to standard deviations so standardization stays defined
# on constant inputs.
STD_FLOOR = 1e-8


def tensor(values) -> np.ndarray:
    """Materialize ``values`` as a row-major float32 array.

    Rejects NaN/Inf input; this is the single entry point through which
    external data becomes a tensor.
    """
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor values must be finite")
    return arr.astype(np.float32)


@dataclass(frozen=True)
class PanoPadding:
    """Padding for ERP maps.

    Columns always wrap (the 360° seam is a real neighbor relation);
    rows either replicate the polar rows or zero-fill.
    """

    vertical: str = "replicate"

    horizontal = "circular"

    def __post_init__(self):
        if self.vertical not in ("replicate", "zero"):
            raise ParameterError(f"unknown vertical padding {self.vertical!r}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims disagree: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def row_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, stabilized by per-row max subtraction."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(np.asarray(x, dtype=np.float64)).astype(np.float32)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(np.float32)


def _gelu64(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def conv2d_pano(maps: np.ndarray, kernel: np.ndarray,
                pad: PanoPadding = PanoPadding()) -> np.ndarray:
    """Per-channel 2-D correlation with wraparound columns.

    ``maps`` is C×H×W (a single H×W map is also accepted).  Column
    indexing wraps; row indexing follows ``pad.vertical``.  Kernel dims
    must be odd so the output stays aligned with the input.
    """
    arr = np.asarray(maps, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError("conv2d_pano expects a C×H×W map")
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ShapeError("kernel must be 2-D")
    if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ParameterError(f"kernel dims must be odd, got {kernel.shape}")

    rv = kernel.shape[0] // 2
    mode = "edge" if pad.vertical == "replicate" else "constant"
    padded = np.pad(arr, ((0, 0), (rv, rv), (0, 0)), mode=mode)
    out = np.empty_like(arr)
    for c in range(arr.shape[0]):
        # mode="wrap" is correct horizontally; vertically the manual pad
        # of rv rows keeps the interior slice free of wrap effects.
        full = ndimage.correlate(padded[c], kernel, mode="wrap")
        out[c] = full[rv:rv + arr.shape[1], :]
    result = out[0] if squeeze else out
    return result.astype(np.float32)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """(2r+1)² Gaussian samples normalized to sum 1."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if radius < 0 or int(radius) != radius:
        raise ParameterError(f"radius must be a non-negative int, got {radius}")
    ax = np.arange(-int(radius), int(radius) + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return (g / g.sum()).astype(np.float32)


def laplacian_kernel() -> np.ndarray:
    """4-neighbor Laplacian stencil."""
    return np.array([[0.0, 1.0, 0.0],
                     [1.0, -4.0, 1.0],
                     [0.0, 1.0, 0.0]], dtype=np.float32)


def topk_indices(v: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest entries, ties to the lower index.

    The result is sorted ascending by index so downstream consumers see a
    deterministic, order-independent set.
    """
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError("topk_indices expects a 1-D tensor")
    n = v.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1 or k > n:
        raise ParameterError(f"k must satisfy 1 <= k <= {n}, got {k}")
    # Stable argsort of the negated values keeps equal entries in index order.
    order = np.argsort(-v.astype(np.float64), kind="stable")
    return sorted(int(i) for i in order[:k])


def mean_std(v: np.ndarray) -> tuple[float, float]:
    """Arithmetic mean and population (divide-by-n) std, floored at 1e-8."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size < 1:
        raise ParameterError("mean_std needs at least one value")
    return float(v.mean()), float(max(v.std(), STD_FLOOR))
