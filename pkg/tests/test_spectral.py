import numpy as np
import pytest

import panoground as pg
from panoground.errors import ConfigError, ShapeError

from conftest import identity_modulator, replace_params, shift_grid_tokens


def eq_injection_reference(fv, ft, wq, wk, wv, wo, heads):
    """Independent single-formula implementation of the text-injection
    attention (visual queries, text keys/values, residual added)."""
    d = fv.shape[1]
    dh = d // heads
    q = fv.astype(np.float64) @ wq.astype(np.float64)
    k = ft.astype(np.float64) @ wk.astype(np.float64)
    val = ft.astype(np.float64) @ wv.astype(np.float64)
    parts = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        parts.append(attn @ val[:, sl])
    return fv + np.concatenate(parts, axis=1) @ wo.astype(np.float64)


def random_instance(rng, dim=16, grid=(6, 10), classes=3):
    tokens = rng.standard_normal((grid[0] * grid[1], dim)).astype(np.float32)
    text = rng.standard_normal((classes, dim)).astype(np.float32)
    v = pg.VisualTokens(tokens, grid)
    t = pg.TextEmbeddings(text, tuple(f"c{i}" for i in range(classes)))
    return v, t


class TestContainers:
    def test_token_grid_mismatch(self):
        with pytest.raises(ShapeError):
            pg.VisualTokens(np.zeros((5, 4), np.float32), (2, 3))

    def test_class_name_mismatch(self):
        with pytest.raises(ShapeError):
            pg.TextEmbeddings(np.zeros((2, 4), np.float32), ("only-one",))

    def test_heads_divisibility(self):
        with pytest.raises(ConfigError):
            pg.ModulatorParams.initialize(dim=6, heads=4, seed=0)


class TestCrossModalInject:
    def test_worked_example_without_residual(self):
        p = identity_modulator(2, inject_residual=False)
        v = pg.VisualTokens(np.array([[1.0, 0.0]], np.float32), (1, 1))
        t = pg.TextEmbeddings(np.array([[1.0, 0.0], [0.0, 1.0]], np.float32), ("a", "b"))
        out = pg.cross_modal_inject(v, t, p)
        assert np.allclose(out.tokens, [[0.6698, 0.3302]], atol=1e-4)

    def test_single_class_returns_embedding(self, rng):
        p = identity_modulator(3, inject_residual=False)
        v = pg.VisualTokens(rng.uniform(-1, 1, (4, 3)).astype(np.float32), (2, 2))
        emb = rng.uniform(-1, 1, (1, 3)).astype(np.float32)
        t = pg.TextEmbeddings(emb, ("solo",))
        out = pg.cross_modal_inject(v, t, p)
        assert np.allclose(out.tokens, np.repeat(emb, 4, axis=0), atol=1e-5)

    def test_zero_output_projection_is_residual_only(self, rng):
        p = identity_modulator(4, wo=np.zeros((4, 4), np.float32))
        v, t = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        out = pg.cross_modal_inject(v, t, p)
        assert np.array_equal(out.tokens, v.tokens)

    def test_attention_rows_sum_to_one(self, rng):
        v, t = random_instance(rng)
        p = pg.ModulatorParams.initialize(16, 4, seed=1)
        _, weights = pg.multi_head_attention(v.tokens, t.embeddings, p.wq, p.wk,
                                             p.wv, p.wo, p.heads)
        assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


class TestFrequencyDecompose:
    def test_constant_field(self):
        p = identity_modulator(3)
        v = pg.VisualTokens(np.full((48, 3), 2.5, np.float32), (6, 8))
        high, low = pg.frequency_decompose(v, p)
        assert np.abs(high.tokens).max() <= 1e-5
        assert np.allclose(low.tokens, 2.5, atol=1e-5)

    def test_ramp_high_band_nonzero_only_at_seam(self):
        p = identity_modulator(1)
        width = 8
        ramp = np.repeat(np.arange(width, dtype=np.float32)[None, :], 6, axis=0)
        v = pg.VisualTokens(np.ascontiguousarray(ramp.reshape(-1, 1)), (6, width))
        high, _ = pg.frequency_decompose(v, p)
        field = high.tokens[:, 0].reshape(6, width)
        assert np.abs(field[:, 1:-1]).max() <= 1e-5
        assert np.allclose(field[:, 0], width, atol=1e-5)
        assert np.allclose(field[:, -1], -float(width), atol=1e-5)

    def test_impulse_low_band_is_kernel_footprint(self):
        p = identity_modulator(1)  # sigma_lf 1.5 -> radius 5
        tokens = np.zeros((12 * 16, 1), np.float32)
        tokens[6 * 16 + 8] = 1.0
        _, low = pg.frequency_decompose(pg.VisualTokens(tokens, (12, 16)), p)
        field = low.tokens[:, 0].reshape(12, 16)
        assert np.abs(field[1:12, 3:14] - pg.gaussian_kernel(1.5, 5)).max() <= 1e-6


class TestLatitudeCompensation:
    def test_equator_row_passes_gelu(self, rng):
        p = identity_modulator(4)
        lat = pg.latitude_profile(3)  # weights [0.5, 1.0, 0.5]
        tokens = rng.uniform(-1, 1, (12, 4)).astype(np.float32)
        out = pg.sharpen_high_freq(pg.VisualTokens(tokens, (3, 4)), lat, p)
        assert np.allclose(out.tokens[4:8], pg.gelu(tokens[4:8]), atol=1e-6)

    def test_half_weight_row_halves_output(self, rng):
        p = identity_modulator(4)
        lat = pg.latitude_profile(3)
        block = rng.uniform(-1, 1, (4, 4)).astype(np.float32)
        tokens = np.tile(block, (3, 1))
        out = pg.sharpen_high_freq(pg.VisualTokens(tokens, (3, 4)), lat, p)
        assert np.allclose(out.tokens[:4], 0.5 * out.tokens[4:8], atol=1e-5)

    def test_zero_input_gives_zero(self):
        p = identity_modulator(4)
        lat = pg.latitude_profile(2)
        out = pg.sharpen_high_freq(
            pg.VisualTokens(np.zeros((8, 4), np.float32), (2, 4)), lat, p)
        assert np.all(out.tokens == 0)

    def test_profile_length_mismatch(self, rng):
        p = identity_modulator(4)
        v, _ = random_instance(rng, dim=4, grid=(3, 4))
        with pytest.raises(ShapeError):
            pg.sharpen_high_freq(v, pg.latitude_profile(5), p)

    def test_stabilize_equator_passes_gelu(self, rng):
        p = identity_modulator(4)
        lat = pg.latitude_profile(3)
        tokens = rng.uniform(-1, 1, (12, 4)).astype(np.float32)
        out = pg.stabilize_low_freq(pg.VisualTokens(tokens, (3, 4)), lat, p)
        assert np.allclose(out.tokens[4:8], pg.gelu(tokens[4:8]), atol=1e-5)

    def test_stabilize_constant_blend_noop(self):
        p = identity_modulator(4)
        lat = pg.latitude_profile(4)
        tokens = np.full((16, 4), 1.25, np.float32)
        out = pg.stabilize_low_freq(pg.VisualTokens(tokens, (4, 4)), lat, p)
        assert np.allclose(out.tokens, pg.gelu(tokens), atol=1e-5)

    def test_pole_impulse_spreads_more_than_equator(self):
        dim, rows, cols = 4, 8, 12
        p = identity_modulator(dim)
        lat = pg.latitude_profile(rows)

        def spatial_variance(row):
            tokens = np.zeros((rows * cols, dim), np.float32)
            tokens[row * cols + 6, :] = 1.0
            out = pg.stabilize_low_freq(pg.VisualTokens(tokens, (rows, cols)), lat, p)
            field = np.abs(out.tokens[:, 0].reshape(rows, cols))
            f = field / field.sum()
            rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
            mr, mc = (f * rr).sum(), (f * cc).sum()
            return (f * ((rr - mr) ** 2 + (cc - mc) ** 2)).sum()

        assert spatial_variance(0) > spatial_variance(rows // 2)


class TestGatedFuse:
    def test_zero_lambdas_passthrough(self, rng):
        p = identity_modulator(4, lambda_h=0.0, lambda_l=0.0)
        base, t = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        high, _ = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        low, _ = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        out = pg.gated_fuse(base, high, low, t, p)
        assert np.array_equal(out.tokens, base.tokens)

    def test_gate_closure_in_negative_limit(self, rng):
        p = identity_modulator(4, gate_text=np.zeros((4, 4), np.float32),
                               gate_bias=np.full(4, -40.0, np.float32))
        base, t = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        high, _ = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        low, _ = random_instance(rng, dim=4, grid=(2, 3), classes=2)
        out = pg.gated_fuse(base, high, low, t, p)
        assert np.abs(out.tokens - base.tokens).max() <= 1e-6

    def test_scalar_arithmetic(self):
        out = pg.fuse_with_gates(np.array([[1.0]]), np.array([[2.0]]),
                                 np.array([[0.0]]), np.array([0.5]),
                                 np.array([0.5]), 0.1, 0.1)
        assert out[0, 0] == pytest.approx(1.05, abs=1e-6)

    def test_gates_strictly_inside_unit_interval(self, rng):
        p = pg.ModulatorParams.initialize(8, 2, seed=3)
        base, t = random_instance(rng, dim=8, grid=(3, 4), classes=3)
        g_ch, g_sp = pg.fusion_gates(base, t, p)
        assert np.all(g_ch > 0) and np.all(g_ch < 1)
        assert np.all(g_sp > 0) and np.all(g_sp < 1)

    def test_fusion_delta_bound(self, rng):
        p = pg.ModulatorParams.initialize(8, 2, seed=3)
        base, t = random_instance(rng, dim=8, grid=(3, 4), classes=3)
        high, _ = random_instance(rng, dim=8, grid=(3, 4), classes=3)
        low, _ = random_instance(rng, dim=8, grid=(3, 4), classes=3)
        out = pg.gated_fuse(base, high, low, t, p)
        bound = (abs(p.lambda_h) * np.abs(high.tokens)
                 + abs(p.lambda_l) * np.abs(low.tokens))
        assert np.all(np.abs(out.tokens - base.tokens) <= bound + 1e-6)


class TestContextualReaggregate:
    def test_zero_init_passthrough(self, rng):
        p = pg.ModulatorParams.initialize(8, 2, seed=5)
        v, _ = random_instance(rng, dim=8, grid=(3, 4))
        out = pg.contextual_reaggregate(v, p)
        assert np.array_equal(out.tokens, v.tokens)

    def test_single_token_attends_to_itself(self, rng):
        p = pg.ModulatorParams.initialize(8, 2, seed=5)
        x = rng.uniform(-1, 1, (1, 8)).astype(np.float32)
        _, weights = pg.multi_head_attention(x, x, p.reagg_wq, p.reagg_wk,
                                             p.reagg_wv, p.reagg_wo, p.heads)
        assert np.allclose(weights, 1.0)

    def test_token_permutation_equivariance(self, rng):
        p = pg.ModulatorParams.initialize(8, 2, seed=5)
        p = replace_params(
            p,
            reagg_wo=(0.2 * rng.standard_normal((8, 8))).astype(np.float32),
            ffn_w2=(0.2 * rng.standard_normal((32, 8))).astype(np.float32))
        v, _ = random_instance(rng, dim=8, grid=(3, 4))
        out = pg.contextual_reaggregate(v, p).tokens
        perm = rng.permutation(12)
        out_p = pg.contextual_reaggregate(
            pg.VisualTokens(v.tokens[perm], v.grid), p).tokens
        assert np.abs(out_p - out[perm]).max() <= 1e-5


class TestModulate:
    def test_zero_init_reduces_to_injection_only(self, rng):
        # lambdas zero and zero re-aggregation output leave exactly the
        # injection; the oracle is an independent implementation of it.
        dim, heads = 12, 3
        p = pg.ModulatorParams.initialize(dim, heads, seed=11,
                                          lambda_h=0.0, lambda_l=0.0)
        wo = (0.3 * rng.standard_normal((dim, dim))).astype(np.float32)
        p = replace_params(p, wo=wo)
        v, t = random_instance(rng, dim=dim, grid=(4, 5), classes=4)
        lat = pg.latitude_profile(4)
        out = pg.modulate(v, t, lat, p)
        oracle = eq_injection_reference(v.tokens, t.embeddings, p.wq, p.wk,
                                        p.wv, wo, heads)
        assert np.abs(out.tokens - oracle).max() <= 1e-5

    def test_horizontal_shift_equivariance(self, rng):
        p = pg.ModulatorParams.initialize(16, 4, seed=11)
        v, t = random_instance(rng, dim=16, grid=(6, 10), classes=3)
        lat = pg.latitude_profile(6)
        out = pg.modulate(v, t, lat, p)
        for delta in (1, 3, 7):
            shifted = pg.VisualTokens(
                shift_grid_tokens(v.tokens, delta, v.grid), v.grid)
            out_s = pg.modulate(shifted, t, lat, p)
            expected = shift_grid_tokens(out.tokens, delta, v.grid)
            assert np.abs(out_s.tokens - expected).max() <= 1e-5

    def test_deterministic(self, rng):
        p = pg.ModulatorParams.initialize(16, 4, seed=2)
        v, t = random_instance(rng)
        lat = pg.latitude_profile(6)
        a = pg.modulate(v, t, lat, p)
        b = pg.modulate(v, t, lat, p)
        assert np.array_equal(a.tokens, b.tokens)
