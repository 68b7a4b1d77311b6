"""Configuration, parameter initialization/serialization, and the full
forward pass from token features + class embeddings to pixel heatmaps.

Features and text embeddings are always inputs (PFT files): the backbone
that produces them is out of scope, which keeps the pipeline agnostic to
whichever encoder exported them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .densify import AffordanceMap, DensifierParams, refine_activations, to_pixel_map
from .errors import ConfigError, ShapeError
from .geometry import (ROTATION_MAX_DEG, SCALE_MAX, SCALE_MIN,
                       latitude_profile)
from .pft import read_pft, write_pft
from .spectral import ModulatorParams, TextEmbeddings, VisualTokens, modulate

PATCH_STRIDE = 14
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class PipelineConfig:
    embed_dim: int = 64
    heads: int = 8
    grid: tuple[int, int] = (40, 80)
    image_size: tuple[int, int] = (560, 1120)
    classes: tuple[str, ...] = ()
    sigma_lf: float = 1.5
    lambda_h: float = 0.1
    lambda_l: float = 0.1
    inject_residual: bool = True
    inject_out_proj: bool = True
    seeds_k: int = 10
    temperature: float = 1.0
    alpha: float = 0.5
    clamp_negative: bool = True
    refine_queries: bool = False
    loss_lambda1: float = 1.0
    loss_lambda2: float = 1.0
    loss_lambda3: float = 0.5
    loss_tau: float = 0.07
    loss_eps: float = 1e-8
    supervision_sigma_px: float = 0.0  # 0 means "derive from image height"
    rotation_max_deg: float = 3.0
    scale_min: float = 0.95
    scale_max: float = 1.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        object.__setattr__(self, "image_size",
                           (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConfigError("class vocabulary must be non-empty")
        if list(self.classes) != sorted(self.classes):
            raise ConfigError("classes must be sorted (channel order contract)")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        h, w = self.image_size
        gr, gc = self.grid
        if h != gr * PATCH_STRIDE or w != gc * PATCH_STRIDE:
            raise ConfigError(
                f"image {h}x{w} inconsistent with grid {gr}x{gc} at stride {PATCH_STRIDE}")
        if not 0 < self.rotation_max_deg <= ROTATION_MAX_DEG:
            raise ConfigError(f"rotation_max_deg must be in (0, {ROTATION_MAX_DEG}]")
        if not SCALE_MIN <= self.scale_min <= self.scale_max <= SCALE_MAX:
            raise ConfigError(f"scale range must sit inside [{SCALE_MIN}, {SCALE_MAX}]")
        if self.seeds_k < 1 or self.temperature <= 0:
            raise ConfigError("seeds_k must be >= 1 and temperature positive")

    @property
    def sigma_px(self) -> float:
        """Supervision Gaussian width; defaults to 8 px scaled from 512 rows."""
        if self.supervision_sigma_px > 0:
            return float(self.supervision_sigma_px)
        return 8.0 * self.image_size[0] / 512.0


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return PipelineConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(cfg: PipelineConfig, path) -> None:
    payload = asdict(cfg)
    payload["grid"] = list(cfg.grid)
    payload["image_size"] = list(cfg.image_size)
    payload["classes"] = list(cfg.classes)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def init_params(cfg: PipelineConfig) -> tuple[ModulatorParams, DensifierParams]:
    """Deterministic seeded parameter construction."""
    mod = ModulatorParams.initialize(
        dim=cfg.embed_dim, heads=cfg.heads, seed=cfg.seed,
        sigma_lf=cfg.sigma_lf, lambda_h=cfg.lambda_h, lambda_l=cfg.lambda_l,
        inject_residual=cfg.inject_residual, inject_out_proj=cfg.inject_out_proj)
    den = DensifierParams(
        seeds_k=cfg.seeds_k, temperature=cfg.temperature, alpha=cfg.alpha,
        clamp_negative=cfg.clamp_negative, refine_queries=cfg.refine_queries)
    return mod, den


def save_params(directory, mod: ModulatorParams, den: DensifierParams) -> None:
    """Write every weight as a PFT file plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name in ModulatorParams.TENSOR_FIELDS:
        arr = getattr(mod, name)
        write_pft(directory / f"{name}.pft", arr)
        tensors[name] = list(arr.shape)
    manifest = {
        "tensors": tensors,
        "modulator": {
            "heads": mod.heads,
            "sigma_lf": mod.sigma_lf,
            "lambda_h": mod.lambda_h,
            "lambda_l": mod.lambda_l,
            "seed": mod.seed,
            "inject_residual": mod.inject_residual,
            "inject_out_proj": mod.inject_out_proj,
        },
        "densifier": {
            "seeds_k": den.seeds_k,
            "temperature": den.temperature,
            "alpha": den.alpha,
            "clamp_negative": den.clamp_negative,
            "refine_queries": den.refine_queries,
        },
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(directory) -> tuple[ModulatorParams, DensifierParams]:
    directory = Path(directory)
    with open(directory / MANIFEST_NAME, encoding="utf-8") as fh:
        manifest = json.load(fh)
    weights = {}
    for name, shape in manifest["tensors"].items():
        arr = read_pft(directory / f"{name}.pft")
        if list(arr.shape) != list(shape):
            raise ConfigError(f"{name}: manifest shape {shape} != file {list(arr.shape)}")
        weights[name] = arr
    mod = ModulatorParams(**manifest["modulator"], **weights)
    den = DensifierParams(**manifest["densifier"])
    return mod, den


def forward(v: VisualTokens, t: TextEmbeddings,
            params: tuple[ModulatorParams, DensifierParams],
            cfg: PipelineConfig) -> AffordanceMap:
    """Token features + class embeddings -> normalized C×H×W heatmaps."""
    mod, den = params
    if v.grid != cfg.grid:
        raise ShapeError(f"token grid {v.grid} != config grid {cfg.grid}")
    if v.dim != cfg.embed_dim or t.dim != cfg.embed_dim:
        raise ShapeError(
            f"feature dims ({v.dim}, {t.dim}) != config embed_dim {cfg.embed_dim}")
    if t.class_names != cfg.classes:
        raise ShapeError("text embedding classes must match the config vocabulary")
    lat = latitude_profile(cfg.grid[0])
    refined_tokens = modulate(v, t, lat, mod)
    acts = refine_activations(refined_tokens, t, den)
    h, w = cfg.image_size
    return to_pixel_map(acts, cfg.grid, h, w)
