import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanformer.compression import (
    CompressionReport,
    QuantizedTensor,
    dequantize,
    dequantize_params,
    head_importance,
    prune_heads,
    prune_layers,
    prune_magnitude,
    quantize_params,
    quantize_tensor,
    quantized_memory_bytes,
    reduce_config,
)
from leanformer.model import (
    ModelConfig,
    PRESETS,
    init_params,
    iter_params,
    model_forward,
    param_count,
    param_count_enumerated,
    synth_copy_batch,
)
from leanformer.model import _flatten_params, _with_flat_params
from leanformer.numerics import RngState, rng_uniform_array


def random_matrix(rows, cols, seed, lo=-1.0, hi=1.0):
    m, _ = rng_uniform_array(RngState(seed), (rows, cols), lo, hi)
    return m


class TestReduceConfig:
    def test_paper_pair(self):
        assert reduce_config(PRESETS["paper-baseline"]) == PRESETS["paper-reduced"]

    def test_factor_one_is_identity(self):
        cfg = PRESETS["paper-baseline"]
        assert reduce_config(cfg, 1) == cfg

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError, match="not divisible"):
            reduce_config(ModelConfig(100, 10, 30, 2, 60, 1), 4)

    def test_vocab_seq_layers_unchanged(self):
        cfg = ModelConfig(123, 7, 16, 4, 32, 3)
        out = reduce_config(cfg, 2)
        assert (out.vocab_size, out.max_seq_len, out.n_layers) == (123, 7, 3)
        assert (out.d_model, out.n_heads, out.d_ff) == (8, 2, 16)


class TestPruneMagnitude:
    def test_zero_threshold_keeps_everything(self):
        p = init_params(PRESETS["tiny"], 3)
        pruned, report = prune_magnitude(p, 0.0)
        for (_, a), (_, b) in zip(iter_params(p), iter_params(pruned)):
            assert np.array_equal(a, b)
        assert report.max_error == 0.0

    def test_huge_threshold_zeroes_everything(self):
        p = init_params(PRESETS["tiny"], 3)
        pruned, report = prune_magnitude(p, 1.0)
        assert report.sparsity == 1.0
        for _, arr in iter_params(pruned):
            assert np.array_equal(arr, np.zeros_like(arr))

    def test_forced_two_by_two(self):
        cfg = ModelConfig(2, 2, 1, 1, 1, 0)
        p = init_params(cfg, 0)
        flat = np.array([0.1, -0.5, 0.2, 0.9])
        p = _with_flat_params(p, flat)
        pruned, report = prune_magnitude(p, 0.3)
        assert np.array_equal(_flatten_params(pruned), [0.0, -0.5, 0.0, 0.9])
        assert report.sparsity == 0.5
        assert report.max_error == pytest.approx(0.2)

    def test_counts_unchanged(self):
        p = init_params(PRESETS["paper-reduced"], 1)
        pruned, report = prune_magnitude(p, 0.02)
        assert report.params_before == report.params_after == 67_072
        assert report.bytes_before == report.bytes_after == 536_576

    def test_negative_threshold_rejected(self):
        p = init_params(PRESETS["tiny"], 0)
        with pytest.raises(ValueError, match="threshold"):
            prune_magnitude(p, -1e-9)

    @given(st.floats(0, 0.06), st.floats(0, 0.06))
    @settings(max_examples=40, deadline=None)
    def test_sparsity_monotone_in_threshold(self, t1, t2):
        p = init_params(PRESETS["tiny"], 5)
        lo, hi = sorted((t1, t2))
        _, r_lo = prune_magnitude(p, lo)
        _, r_hi = prune_magnitude(p, hi)
        assert r_lo.sparsity <= r_hi.sparsity


class TestHeadImportance:
    def test_zeroed_block_scores_zero(self):
        cfg = ModelConfig(10, 4, 8, 4, 16, 1)
        p = init_params(cfg, 2)
        wo = p.layers[0].wo.copy()
        wo[2 * 2:3 * 2, :] = 0.0  # head 2 of 4, head width 2
        p.layers[0].wo = wo
        scores = head_importance(p, cfg, 0)
        assert scores[2] == 0.0
        assert all(s > 0 for i, s in enumerate(scores) if i != 2)

    def test_identical_blocks_equal_scores(self):
        cfg = ModelConfig(10, 4, 8, 4, 16, 1)
        p = init_params(cfg, 2)
        block = random_matrix(2, 8, seed=8)
        p.layers[0].wo = np.vstack([block] * 4)
        scores = head_importance(p, cfg, 0)
        assert all(s == scores[0] for s in scores)

    def test_constructed_norms(self):
        cfg = ModelConfig(10, 4, 4, 4, 8, 1)
        p = init_params(cfg, 2)
        wo = np.zeros((4, 4))
        for h, norm in enumerate([1.0, 2.0, 3.0, 4.0]):
            wo[h, h] = norm  # head width 1: each block is one row
        p.layers[0].wo = wo
        assert head_importance(p, cfg, 0) == [1.0, 2.0, 3.0, 4.0]

    def test_bad_layer_rejected(self):
        p = init_params(PRESETS["tiny"], 0)
        with pytest.raises(ValueError, match="layer"):
            head_importance(p, PRESETS["tiny"], 5)


class TestPruneHeads:
    def test_keep_all_is_bit_identical_forward(self):
        cfg = PRESETS["tiny"]
        p = init_params(cfg, 7)
        pruned, new_cfg, report = prune_heads(p, cfg, 0, set(range(cfg.n_heads)))
        assert new_cfg == cfg
        batch, _ = synth_copy_batch(1, 3, 4, cfg.vocab_size)
        a, _ = model_forward(p, cfg, list(batch))
        b, _ = model_forward(pruned, new_cfg, list(batch))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        assert report.params_before == report.params_after

    def test_drop_four_of_eight_baseline(self):
        cfg = PRESETS["paper-baseline"]  # d=32, H=8, head width 4
        p = init_params(cfg, 0)
        pruned, new_cfg, report = prune_heads(p, cfg, 0, {0, 2, 4, 6})
        drop = 4 * 4 * cfg.d_model * (cfg.d_model // cfg.n_heads)
        assert drop == 2048
        assert report.params_before - report.params_after == drop
        assert param_count_enumerated(pruned) == 140_288 - 2048
        assert new_cfg.n_heads == 4 and new_cfg.head_dim == 4
        assert param_count(new_cfg) == 140_288 - 2048

    def test_pruned_model_runs_and_serializes_count(self):
        cfg = PRESETS["paper-baseline"]
        p = init_params(cfg, 0)
        pruned, new_cfg, _ = prune_heads(p, cfg, 0, {1, 3, 5})
        batch, _ = synth_copy_batch(3, 2, 10, cfg.vocab_size)
        logits, _ = model_forward(pruned, new_cfg, list(batch))
        assert logits[0].shape == (10, cfg.vocab_size)
        assert param_count(new_cfg) == param_count_enumerated(pruned)

    def test_dropping_zero_output_head_is_transparent(self):
        cfg = ModelConfig(13, 6, 8, 4, 16, 1)
        p = init_params(cfg, 9)
        dh = cfg.d_model // cfg.n_heads
        wo = p.layers[0].wo.copy()
        wo[3 * dh:4 * dh, :] = 0.0
        p.layers[0].wo = wo
        pruned, new_cfg, _ = prune_heads(p, cfg, 0, {0, 1, 2})
        batch, _ = synth_copy_batch(5, 3, 6, cfg.vocab_size)
        before, _ = model_forward(p, cfg, list(batch))
        after, _ = model_forward(pruned, new_cfg, list(batch))
        for x, y in zip(before, after):
            assert np.max(np.abs(x - y)) <= 1e-12

    def test_empty_keep_rejected(self):
        cfg = PRESETS["tiny"]
        p = init_params(cfg, 0)
        with pytest.raises(ValueError, match="non-empty"):
            prune_heads(p, cfg, 0, set())

    def test_bad_index_rejected(self):
        cfg = PRESETS["tiny"]
        p = init_params(cfg, 0)
        with pytest.raises(ValueError, match="outside"):
            prune_heads(p, cfg, 0, {0, 9})


class TestPruneLayers:
    def test_keep_all_identity(self):
        cfg = ModelConfig(9, 4, 4, 2, 8, 2)
        p = init_params(cfg, 3)
        pruned, new_cfg, report = prune_layers(p, cfg, [0, 1])
        assert new_cfg == cfg
        assert report.params_before == report.params_after
        batch, _ = synth_copy_batch(2, 2, 4, cfg.vocab_size)
        a, _ = model_forward(p, cfg, list(batch))
        b, _ = model_forward(pruned, new_cfg, list(batch))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_keep_none_leaves_embedding_path(self):
        cfg = PRESETS["tiny"]
        p = init_params(cfg, 1)
        pruned, new_cfg, _ = prune_layers(p, cfg, [])
        assert new_cfg.n_layers == 0
        tokens = [1, 2, 3]
        logits, _ = model_forward(pruned, new_cfg, [tokens])
        from leanformer.model import embed
        assert np.array_equal(logits[0], embed(pruned, tokens) @ pruned.tok_emb.T)

    def test_dropping_one_baseline_layer(self):
        cfg = ModelConfig(3990, 10, 32, 8, 128, 2)
        p = init_params(cfg, 0)
        pruned, new_cfg, report = prune_layers(p, cfg, [0])
        expected_drop = 4 * 32 * 32 + 2 * 32 * 128
        assert expected_drop == 12_288
        assert report.params_before - report.params_after == expected_drop
        assert param_count(new_cfg) == param_count_enumerated(pruned)

    def test_unsorted_rejected(self):
        cfg = ModelConfig(9, 4, 4, 2, 8, 3)
        p = init_params(cfg, 0)
        with pytest.raises(ValueError, match="increasing"):
            prune_layers(p, cfg, [2, 0])

    def test_out_of_range_rejected(self):
        cfg = PRESETS["tiny"]
        p = init_params(cfg, 0)
        with pytest.raises(ValueError, match="outside"):
            prune_layers(p, cfg, [0, 1])


class TestQuantize:
    def test_unit_peak_exact(self):
        qt = quantize_tensor(np.array([[1.0]]))
        assert qt.scale == 1.0 / 127.0
        assert qt.values.tolist() == [[127]]
        assert dequantize(qt)[0, 0] == 1.0

    def test_all_zero_convention(self):
        qt = quantize_tensor(np.zeros((2, 3)))
        assert qt.scale == 1.0
        assert np.array_equal(qt.values, np.zeros((2, 3), np.int8))
        assert np.array_equal(dequantize(qt), np.zeros((2, 3)))

    def test_forced_pair(self):
        qt = quantize_tensor(np.array([[-2.0, 1.0]]))
        assert qt.scale == pytest.approx(2.0 / 127.0, rel=1e-15)
        assert qt.values.tolist() == [[-127, 64]]
        deq = dequantize(qt)
        assert deq[0, 0] == -2.0
        assert deq[0, 1] == pytest.approx(128.0 / 127.0, rel=1e-15)

    def test_half_rounds_away_from_zero(self):
        # 0.5 * scale sits exactly on the rounding boundary
        qt = quantize_tensor(np.array([[127.0, 62.5, -62.5]]))
        assert qt.scale == 1.0
        assert qt.values.tolist() == [[127, 63, -63]]

    def test_unsupported_width_rejected(self):
        with pytest.raises(ValueError, match="8-bit"):
            quantize_tensor(np.array([[1.0]]), bits=4)

    def test_never_produces_minus_128(self):
        m = random_matrix(40, 40, seed=3, lo=-9.0, hi=9.0)
        qt = quantize_tensor(m)
        assert int(qt.values.min()) >= -127

    @given(st.integers(0, 10_000))
    @settings(max_examples=150, deadline=None)
    def test_error_bound_and_idempotence(self, seed):
        scale_exp = (seed % 13) - 6
        m = random_matrix(5, 7, seed=seed, lo=-1.0, hi=1.0) * (10.0 ** scale_exp)
        qt = quantize_tensor(m)
        deq = dequantize(qt)
        assert np.max(np.abs(deq - m)) <= qt.scale / 2
        again = quantize_tensor(deq)
        assert again.scale == qt.scale
        assert np.array_equal(again.values, qt.values)

    def test_error_bound_exhaustive_on_params(self):
        p = init_params(PRESETS["tiny"], 11)
        for name, qt in quantize_params(p):
            orig = dict(iter_params(p))[name]
            deq = dequantize(qt).reshape(orig.shape)
            assert np.max(np.abs(deq - orig)) <= qt.scale / 2


class TestQuantizedParams:
    def test_roundtrip_shapes(self):
        cfg = ModelConfig(9, 4, 4, 2, 8, 1, use_bias=True)
        p = init_params(cfg, 3)
        restored = dequantize_params(p, quantize_params(p))
        for (na, a), (nb, b) in zip(iter_params(p), iter_params(restored)):
            assert na == nb and a.shape == b.shape

    def test_memory_bytes_baseline(self):
        p = init_params(PRESETS["paper-baseline"], 0)
        # 140,288 int8 values + 8 tensors x 8-byte scales
        assert quantized_memory_bytes(p) == 140_288 + 64

    def test_memory_bytes_smallest(self):
        p = init_params(ModelConfig(1, 1, 1, 1, 1, 0), 0)
        assert quantized_memory_bytes(p) == 2 + 16

    def test_quantized_smaller_than_float(self):
        p = init_params(PRESETS["tiny"], 0)
        assert quantized_memory_bytes(p) < 8 * param_count_enumerated(p)


class TestReportInvariants:
    def test_growth_rejected(self):
        with pytest.raises(ValueError, match="grow"):
            CompressionReport("x", 10, 11, 80, 88, 0.0, 0.0)

    def test_sparsity_range_enforced(self):
        with pytest.raises(ValueError, match="sparsity"):
            CompressionReport("x", 10, 10, 80, 80, 1.5, 0.0)
