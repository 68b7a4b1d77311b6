"""Equirectangular geometry: latitude profiles, panoramic augmentation,
and keypoint-based supervision heatmaps.

Conventions used throughout: images are row-major with row 0 at the north
pole and the equator at the vertical center; latitudes are taken at row
centers.  Horizontal coordinates are periodic (column W wraps to 0), so
horizontal distances, shifts, and resampling all respect the seam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, VocabularyError
from .numerics import PanoPadding, conv2d_pano, gaussian_kernel

ROTATION_MAX_DEG = 3.0
SCALE_MIN = 0.95
SCALE_MAX = 1.05


@dataclass(frozen=True, eq=False)
class LatitudeProfile:
    """Per-row latitude (radians) and cos-latitude weight of an ERP grid."""

    rows: int
    phi: np.ndarray
    weight: np.ndarray


def latitude_profile(rows: int) -> LatitudeProfile:
    """Latitudes at row centers: phi[r] = pi * (0.5 - (r + 0.5) / rows)."""
    if rows < 1:
        raise ParameterError(f"rows must be >= 1, got {rows}")
    r = np.arange(rows, dtype=np.float64)
    phi = np.pi * (0.5 - (r + 0.5) / rows)
    weight = np.clip(np.cos(phi), 0.0, 1.0)
    return LatitudeProfile(rows, phi.astype(np.float32), weight.astype(np.float32))


@dataclass(eq=False)
class KeypointAnnotation:
    """Interaction keypoints for one panorama.

    ``entries`` holds (affordance class, [(u, v), ...]) pairs with u the
    column and v the row in pixel coordinates.
    """

    image_id: str
    width: int
    height: int
    entries: list = field(default_factory=list)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ParameterError("annotation width/height must be positive")
        for affordance, points in self.entries:
            for (u, v) in points:
                if not (0 <= u < self.width and 0 <= v < self.height):
                    raise DomainError(
                        f"{self.image_id}: keypoint ({u},{v}) outside "
                        f"{self.width}x{self.height} for class {affordance!r}")

    def points_for(self, affordance: str) -> list:
        pts = []
        for name, points in self.entries:
            if name == affordance:
                pts.extend(points)
        return pts


def annotation_from_dict(obj: dict) -> KeypointAnnotation:
    """Parse the keypoint JSON schema (see README) into an annotation."""
    try:
        entries = [(item["affordance"], [(int(u), int(v)) for u, v in item["points"]])
                   for item in obj["annotations"]]
        ann = KeypointAnnotation(
            image_id=str(obj["image"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            entries=entries,
        )
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed annotation object: {exc}") from exc
    ann.validate()
    return ann


def annotation_to_dict(ann: KeypointAnnotation) -> dict:
    return {
        "image": ann.image_id,
        "width": ann.width,
        "height": ann.height,
        "annotations": [
            {"affordance": name, "points": [[int(u), int(v)] for u, v in points]}
            for name, points in ann.entries
        ],
    }


def load_vocabulary(path) -> list[str]:
    """Read one class name per line; channel order is the sorted vocabulary."""
    with open(path, encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    if not names:
        raise ParameterError(f"{path}: empty vocabulary")
    return sorted(set(names))


def keypoints_to_heatmap(ann: KeypointAnnotation, classes, sigma_px: float) -> np.ndarray:
    """Per-class Gaussian heatmaps from keypoints, max-combined.

    Each keypoint contributes exp(-d^2 / (2 sigma^2)) with the horizontal
    component of d measured along the shorter way around the panorama.
    Points of the same class merge by pixelwise max, so duplicate clicks
    are idempotent and every marked region keeps a peak of 1.  Classes
    with at least one point are max-normalized to peak exactly 1.
    """
    if sigma_px <= 0:
        raise ParameterError(f"sigma_px must be positive, got {sigma_px}")
    ann.validate()
    index = {name: i for i, name in enumerate(classes)}
    h, w = ann.height, ann.width
    out = np.zeros((len(index), h, w), dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    inv = 1.0 / (2.0 * float(sigma_px) ** 2)
    for affordance, points in ann.entries:
        if affordance not in index:
            raise VocabularyError(f"unknown affordance class {affordance!r}")
        c = index[affordance]
        for (u, v) in points:
            du = np.abs(cols - float(u))
            du = np.minimum(du, w - du)  # shorter way around the seam
            d2 = (rows - float(v))[:, None] ** 2 + du[None, :] ** 2
            out[c] = np.maximum(out[c], np.exp(-d2 * inv))
    for c in range(out.shape[0]):
        peak = out[c].max()
        if peak > 0:
            out[c] /= peak
    return out.astype(np.float32)


def blur_supervision(maps: np.ndarray, sigma_px: float) -> np.ndarray:
    """Soften supervision maps with a panorama-aware Gaussian blur.

    Uses a kernel of radius ceil(3 sigma) with wraparound columns and
    replicated polar rows, then restores a per-class peak of 1 wherever
    the class is non-empty.
    """
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError("blur_supervision expects C×H×W maps")
    if sigma_px <= 0:
        raise ParameterError(f"sigma_px must be positive, got {sigma_px}")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise DomainError("supervision maps must lie in [0, 1]")
    radius = int(math.ceil(3.0 * float(sigma_px)))
    kernel = gaussian_kernel(float(sigma_px), radius)
    blurred = conv2d_pano(arr, kernel, PanoPadding("replicate")).astype(np.float64)
    for c in range(blurred.shape[0]):
        peak = blurred[c].max()
        if peak > 0:
            blurred[c] /= peak
    return blurred.astype(np.float32)


def wrap_shift(arr: np.ndarray, delta: int) -> np.ndarray:
    """Circular horizontal shift: column u moves to (u + delta) mod W."""
    return np.roll(np.asarray(arr), int(delta), axis=-1)


@dataclass(frozen=True)
class AugmentParams:
    """Panorama augmentation parameters; ranges follow the training recipe."""

    rotation_deg: float = 0.0
    scale: float = 1.0
    wrap_shift_px: int = 0
    flip: bool = False
    seed: int = 0

    def __post_init__(self):
        if not -ROTATION_MAX_DEG <= self.rotation_deg <= ROTATION_MAX_DEG:
            raise ParameterError(f"rotation_deg outside ±{ROTATION_MAX_DEG}")
        if not SCALE_MIN <= self.scale <= SCALE_MAX:
            raise ParameterError(f"scale outside [{SCALE_MIN}, {SCALE_MAX}]")
        if self.wrap_shift_px < 0:
            raise ParameterError("wrap_shift_px must be non-negative")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


def sample_augment_params(seed: int, width: int) -> AugmentParams:
    """Draw augmentation parameters; fully determined by the seed."""
    rng = np.random.default_rng(seed)
    return AugmentParams(
        rotation_deg=float(rng.uniform(-ROTATION_MAX_DEG, ROTATION_MAX_DEG)),
        scale=float(rng.uniform(SCALE_MIN, SCALE_MAX)),
        wrap_shift_px=int(rng.integers(0, width)),
        flip=bool(rng.integers(0, 2)),
        seed=seed,
    )


def _bilinear_pano(channels: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    """Bilinear sample C×H×W channels at fractional (row, col) coordinates.

    Columns wrap modulo W; rows clamp (replicate) at the poles.
    """
    h, w = channels.shape[-2:]
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0w = np.mod(c0, w)
    c1w = np.mod(c0 + 1, w)
    v00 = channels[..., r0c, c0w]
    v01 = channels[..., r0c, c1w]
    v10 = channels[..., r1c, c0w]
    v11 = channels[..., r1c, c1w]
    top = v00 * (1.0 - fc) + v01 * fc
    bot = v10 * (1.0 - fc) + v11 * fc
    return top * (1.0 - fr) + bot * fr


def _warp(channels: np.ndarray, rotation_deg: float, scale: float) -> np.ndarray:
    """Inverse-map rotation about the image center, then central scaling."""
    out = channels
    h, w = channels.shape[-2:]
    cr = (h - 1) / 2.0
    cc = (w - 1) / 2.0
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    dr = np.broadcast_to(rows - cr, (h, w))
    dc = np.broadcast_to(cols - cc, (h, w))
    if rotation_deg != 0.0:
        theta = math.radians(rotation_deg)
        src_r = cr + math.cos(theta) * dr + math.sin(theta) * dc
        src_c = cc - math.sin(theta) * dr + math.cos(theta) * dc
        out = _bilinear_pano(out, src_r, src_c)
    if scale != 1.0:
        src_r = cr + dr / scale
        src_c = cc + dc / scale
        out = _bilinear_pano(out, src_r, src_c)
    return out


def augment(image: np.ndarray, maps: np.ndarray,
            params: AugmentParams) -> tuple[np.ndarray, np.ndarray]:
    """Apply one geometric augmentation jointly to an image and its maps.

    Order: wraparound shift, horizontal flip, in-plane rotation, central
    scaling.  Rotation and scaling resample bilinearly with wraparound
    columns and replicated rows; identity parameters return bitwise-equal
    copies.  The transform is a pure function of ``params``.
    """
    img = np.asarray(image, dtype=np.float32)
    mps = np.asarray(maps, dtype=np.float32)
    if img.ndim != 3 or mps.ndim != 3:
        raise ShapeError("augment expects C×H×W image and maps")
    if img.shape[1:] != mps.shape[1:]:
        raise ShapeError(f"image {img.shape} and maps {mps.shape} grids differ")

    def apply(x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=np.float64)
        if params.wrap_shift_px:
            y = wrap_shift(y, params.wrap_shift_px)
        if params.flip:
            y = y[..., ::-1]
        y = _warp(y, params.rotation_deg, params.scale)
        return np.ascontiguousarray(y).astype(np.float32)

    return apply(img), apply(mps)


def normalize_to_distribution(arr: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """(map + eps) / sum(map + eps); output sums to 1."""
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    values = np.asarray(arr, dtype=np.float64)
    if values.min() < 0:
        raise DomainError("normalize_to_distribution requires non-negative values")
    shifted = values + float(eps)
    return (shifted / shifted.sum()).astype(np.float32)
