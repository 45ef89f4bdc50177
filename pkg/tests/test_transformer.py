import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from solarcast.autograd import ShapeError, Tensor, finite_difference_check
from solarcast.transformer import (
    SegmentConfig,
    SgtParams,
    extract_segments,
    gated_residual,
    sgt_forward,
    support_layout,
    tokenize,
    topk_attention,
    topk_softmax,
)

import reference

CFG = SegmentConfig()


def sgt_case(n=3, T=24, d=4, seed=0, cfg=CFG, spd=144):
    rng = np.random.default_rng(seed)
    params = SgtParams.init(cfg, d, n, spd, rng)
    for t in (params.ln_gain, params.ln_bias, params.bo, params.ba, params.bb,
              params.query_bias, params.support_bias):
        t.data[:] = rng.normal(size=t.shape) * 0.5
    h1 = rng.normal(size=(2, n, T, d))
    slots = rng.integers(0, spd, size=2)
    return params, h1, slots


def as_dict(p):
    names = ["query_proj", "query_bias", "support_proj", "support_bias", "time_table",
             "node_table", "Wq", "Wk", "Wv", "Wo", "bo", "Wa", "ba", "Wb", "bb",
             "ln_gain", "ln_bias"]
    return {f"sgt.{k}": getattr(p, k).data for k in names}


class TestSegments:
    def test_layout_for_default_window(self):
        meta = support_layout(24, 2, CFG)
        assert len(meta.node) == 18
        starts = meta.end - CFG.l
        assert (starts.min(), meta.end[starts.argmin()]) == (7, 13)
        assert (starts.max(), meta.end.max()) == (15, 21)
        assert_array_equal(meta.node, np.repeat([0, 1], 9))

    def test_supports_end_at_least_r_steps_before_window_end(self):
        for T in (17, 24, 40):
            meta = support_layout(T, 3, CFG)
            assert np.all(meta.end <= T - CFG.r)

    def test_patch_contents(self):
        h1 = np.arange(2 * 24 * 1, dtype=float).reshape(1, 2, 24, 1)
        query, supports, meta = extract_segments(Tensor(h1), CFG)
        assert_array_equal(query.data[0], h1[0, 0, 18:, 0])
        # node 1, p = 0 is the tenth support: steps [15, 21)
        assert_array_equal(supports.data[0, 9], h1[0, 1, 15:21, 0])
        assert_array_equal(supports.data[0, 8], h1[0, 0, 7:13, 0])

    def test_window_too_short(self):
        with pytest.raises(ShapeError):
            extract_segments(Tensor(np.zeros((1, 2, 16, 1))), CFG)

    def test_min_length(self):
        assert CFG.min_length() == 17
        assert SegmentConfig(q=30).min_length() == 30


class TestTopK:
    def test_two_of_three(self):
        out = topk_softmax(Tensor(np.array([[2.0, 1.0, 0.0]])), 2).data
        e = np.e
        assert_allclose(out, [[e / (e + 1), 1 / (e + 1), 0.0]])

    @given(shift=st.floats(-50, 50), seed=st.integers(0, 10_000), k=st.integers(1, 8))
    @settings(max_examples=50, deadline=None)
    def test_score_shift_invariance(self, shift, seed, k):
        s = np.random.default_rng(seed).normal(size=(2, 8))
        assert_allclose(topk_softmax(Tensor(s + shift), k).data,
                        topk_softmax(Tensor(s), k).data, atol=1e-12)

    @given(seed=st.integers(0, 10_000), k=st.integers(1, 27))
    @settings(max_examples=50, deadline=None)
    def test_exactly_k_nonzero_summing_to_one(self, seed, k):
        s = np.random.default_rng(seed).normal(size=(3, 4, 27))
        w = topk_softmax(Tensor(s), k).data
        assert np.all((w > 0).sum(axis=-1) == k)
        assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_k_larger_than_supports_rejected(self):
        params, h1, slots = sgt_case(cfg=SegmentConfig(k_top=28), n=3)
        with pytest.raises(ShapeError):
            sgt_forward(Tensor(h1), slots, params, SegmentConfig(k_top=28))


def dense_attention(q_tok, s_tok, p, heads):
    """Ordinary multi-head softmax attention, all supports kept."""
    B, M, dm = s_tok.shape
    dh = dm // heads
    Q = (q_tok @ p.Wq.data).reshape(B, heads, dh)
    K = (s_tok @ p.Wk.data).reshape(B, M, heads, dh)
    V = (s_tok @ p.Wv.data).reshape(B, M, heads, dh)
    scores = np.einsum("bhd,bmhd->bhm", Q, K) / np.sqrt(dh)
    w = np.exp(scores - scores.max(-1, keepdims=True))
    w /= w.sum(-1, keepdims=True)
    ctx = np.einsum("bhm,bmhd->bhd", w, V).reshape(B, dm)
    return ctx @ p.Wo.data + p.bo.data


class TestAttention:
    def test_full_k_equals_dense_attention(self):
        n = 3
        cfg = SegmentConfig(k_top=9 * n)
        params, h1, slots = sgt_case(n=n, cfg=cfg)
        q, s, meta = extract_segments(Tensor(h1), cfg)
        q_tok, s_tok = tokenize(q, s, meta, slots, params)
        ctx, _ = topk_attention(q_tok, s_tok, params, cfg)
        assert_allclose(ctx.data, dense_attention(q_tok.data, s_tok.data, params, cfg.heads),
                        atol=1e-10)

    def test_weights_shape_and_sparsity(self):
        params, h1, slots = sgt_case()
        _, w = sgt_forward(Tensor(h1), slots, params, CFG, return_weights=True)
        assert w.shape == (2, 4, 27)
        assert np.all((w.data > 0).sum(-1) == CFG.k_top)

    def test_closed_gate_leaves_normalized_query(self):
        params, h1, slots = sgt_case()
        params.bb.data[:] = -200.0
        q_tok = Tensor(np.random.default_rng(3).normal(size=(2, 32)))
        ctx = Tensor(np.random.default_rng(4).normal(size=(2, 32)))
        out = gated_residual(q_tok, ctx, params).data
        x = q_tok.data
        ln = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5)
        assert_allclose(out, ln * params.ln_gain.data + params.ln_bias.data, atol=1e-10)


class TestSgtForward:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_reference(self, seed):
        params, h1, slots = sgt_case(seed=seed)
        out = sgt_forward(Tensor(h1), slots, params, CFG).data
        for b in range(2):
            ref, _ = reference.sgt(h1[b], int(slots[b]), as_dict(params), CFG.q, CFG.l, CFG.m,
                                   CFG.r, CFG.heads, CFG.k_top)
            assert_allclose(out[b], ref, atol=1e-10)

    def test_token_time_embedding_uses_final_step_slot(self):
        params, h1, _ = sgt_case()
        q, s, meta = extract_segments(Tensor(h1), CFG)
        base_q, base_s = tokenize(q, s, meta, [0, 0], params)
        params.time_table.data[23] += 1.0  # final query step of a window starting at slot 0
        q2, s2 = tokenize(q, s, meta, [0, 0], params)
        assert_allclose(q2.data - base_q.data, 1.0)
        assert_array_equal(s2.data, base_s.data)

    def test_gradients_match_finite_differences(self):
        cfg = SegmentConfig(k_top=3, heads=2, d_model=8)
        params, h1, slots = sgt_case(n=2, T=18, d=2, seed=5, cfg=cfg, spd=24)
        x = Tensor(h1)
        w = np.random.default_rng(1).normal(size=(2, 8))
        leaves = [getattr(params, k) for k in ("query_proj", "support_proj", "time_table",
                                                "node_table", "Wq", "Wk", "Wv", "Wo", "Wa",
                                                "Wb", "bb", "ln_gain", "ln_bias")]
        err = finite_difference_check(lambda: (sgt_forward(x, slots, params, cfg) * w).sum(),
                                      leaves)
        assert err < 1e-6
