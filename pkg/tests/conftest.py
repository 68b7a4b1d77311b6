import dataclasses
from pathlib import Path

import numpy as np
import pytest

import panoground as pg

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def shift_grid_tokens(tokens: np.ndarray, cols: int, grid) -> np.ndarray:
    """Roll row-major tokens by whole grid columns."""
    rows, width = grid
    field = np.asarray(tokens).reshape(rows, width, -1)
    return np.roll(field, cols, axis=1).reshape(rows * width, -1)


def identity_modulator(dim: int, heads: int = 1, **overrides) -> pg.ModulatorParams:
    """All-identity attention/channel weights; handy for worked examples."""
    eye = np.eye(dim, dtype=np.float32)
    base = dict(
        heads=heads, wq=eye.copy(), wk=eye.copy(), wv=eye.copy(), wo=eye.copy(),
        sigma_lf=1.5, hf_pointwise=eye.copy(), lf_pointwise=eye.copy(),
        gate_text=eye.copy(), gate_bias=np.zeros(dim, np.float32),
        lambda_h=0.1, lambda_l=0.1,
        reagg_wq=eye.copy(), reagg_wk=eye.copy(), reagg_wv=eye.copy(),
        reagg_wo=eye.copy(),
        ffn_w1=np.zeros((dim, 4 * dim), np.float32),
        ffn_w2=np.zeros((4 * dim, dim), np.float32),
        ln1_scale=np.ones(dim, np.float32), ln1_offset=np.zeros(dim, np.float32),
        ln2_scale=np.ones(dim, np.float32), ln2_offset=np.zeros(dim, np.float32),
    )
    base.update(overrides)
    return pg.ModulatorParams(**base)


def replace_params(params: pg.ModulatorParams, **overrides) -> pg.ModulatorParams:
    return dataclasses.replace(params, **overrides)
