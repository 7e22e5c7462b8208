import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_grads_against_fd
from vidgan.attention import (AttentionParams, peak_attention_entries,
                              self_attention, separable_attention)


def self_attention_oracle(x: np.ndarray, q, k, v) -> np.ndarray:
    """Scalar-loop reference: softmax[XQ (XK)^T] XV, no vectorized shortcuts."""
    n, c = x.shape
    xq, xk, xv = x @ q, x @ k, x @ v
    out = np.zeros((n, c))
    for i in range(n):
        logits = np.array([sum(xq[i, a] * xk[j, a] for a in range(c)) for j in range(n)])
        weights = np.exp(logits - logits.max())
        weights = weights / weights.sum()
        for f in range(c):
            out[i, f] = sum(weights[j] * xv[j, f] for j in range(n))
    return out


def separable_attention_oracle(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Slice-by-slice reference over the time, height, then width axes."""
    b, h, w, t, c = x.shape
    p = {k: v.numpy().astype(np.float64) for k, v in vars(params).items()}
    out = x.astype(np.float64).copy()
    for bi in range(b):
        for hi in range(h):
            for wi in range(w):
                out[bi, hi, wi] = self_attention_oracle(
                    out[bi, hi, wi], p["time_q"], p["time_k"], p["time_v"])
    for bi in range(b):
        for wi in range(w):
            for ti in range(t):
                out[bi, :, wi, ti] = self_attention_oracle(
                    out[bi, :, wi, ti], p["height_q"], p["height_k"], p["height_v"])
    for bi in range(b):
        for hi in range(h):
            for ti in range(t):
                out[bi, hi, :, ti] = self_attention_oracle(
                    out[bi, hi, :, ti], p["width_q"], p["width_k"], p["width_v"])
    return out


def _random_qkv(c, seed, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(c, c, generator=gen, dtype=dtype) for _ in range(3)]


class TestSelfAttention:
    def test_single_position_reduces_to_xv(self):
        q, k, v = _random_qkv(3, 0)
        x = torch.randn(1, 3, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(1))
        assert torch.allclose(self_attention(x, q, k, v), x @ v, atol=1e-12)

    def test_constant_positions_give_constant_output(self):
        q, k, v = _random_qkv(3, 2)
        row = torch.randn(1, 3, dtype=torch.float64,
                          generator=torch.Generator().manual_seed(3))
        x = row.expand(5, 3).clone()
        out = self_attention(x, q, k, v)
        assert torch.allclose(out, (row @ v).expand(5, 3), atol=1e-10)

    def test_matches_scalar_loop_oracle(self):
        gen = torch.Generator().manual_seed(4)
        x = torch.randn(3, 2, generator=gen, dtype=torch.float64)
        q, k, v = _random_qkv(2, 5)
        out = self_attention(x, q, k, v).numpy()
        expected = self_attention_oracle(x.numpy(), q.numpy(), k.numpy(), v.numpy())
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_batched_semantics_match_per_slice_calls(self):
        gen = torch.Generator().manual_seed(6)
        x = torch.randn(4, 3, 2, generator=gen, dtype=torch.float64)
        q, k, v = _random_qkv(2, 7)
        batched = self_attention(x, q, k, v)
        for i in range(4):
            assert torch.allclose(batched[i], self_attention(x[i], q, k, v), atol=1e-12)

    def test_scaled_variant_divides_logits(self):
        gen = torch.Generator().manual_seed(8)
        x = torch.randn(3, 4, generator=gen, dtype=torch.float64)
        q, k, v = _random_qkv(4, 9)
        scaled = self_attention(x, q, k, v, scaled=True)
        manual = torch.softmax((x @ q) @ (x @ k).T / math.sqrt(4), dim=-1) @ (x @ v)
        assert torch.allclose(scaled, manual, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        q, k, v = _random_qkv(3, 10)
        with pytest.raises(ValueError):
            self_attention(torch.randn(2, 4), q, k, v)


class TestSeparableAttention:
    def test_degenerate_axes_compose_value_projections(self):
        params = AttentionParams.random(3, torch.Generator().manual_seed(0),
                                        dtype=torch.float64)
        x = torch.randn(2, 1, 1, 1, 3, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(1))
        out = separable_attention(x, params)
        expected = x @ params.time_v @ params.height_v @ params.width_v
        assert torch.allclose(out, expected, atol=1e-10)

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    @settings(max_examples=12, deadline=None)
    def test_output_shape_equals_input_shape(self, h, w, t, c):
        params = AttentionParams.random(c, torch.Generator().manual_seed(2))
        x = torch.randn(2, h, w, t, c)
        assert separable_attention(x, params).shape == x.shape

    def test_time_only_reduces_to_self_attention_plus_projections(self):
        params = AttentionParams.random(2, torch.Generator().manual_seed(3),
                                        dtype=torch.float64)
        x = torch.randn(1, 1, 1, 3, 2, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(4))
        out = separable_attention(x, params)
        reduced = self_attention(x[0, 0, 0], params.time_q, params.time_k, params.time_v)
        reduced = reduced @ params.height_v @ params.width_v
        assert torch.allclose(out[0, 0, 0], reduced, atol=1e-10)

    def test_matches_slice_loop_oracle(self):
        params = AttentionParams.random(3, torch.Generator().manual_seed(5),
                                        dtype=torch.float64)
        x = torch.randn(2, 2, 3, 2, 3, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(6))
        out = separable_attention(x, params).numpy()
        expected = separable_attention_oracle(x.numpy(), params)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_information_propagates_to_every_position(self):
        # Jacobian of the flattened map has no structurally zero output block
        params = AttentionParams.random(2, torch.Generator().manual_seed(7),
                                        dtype=torch.float64)
        x = torch.randn(1, 2, 2, 2, 2, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(8))

        def flat_fn(inp):
            return separable_attention(inp.reshape(1, 2, 2, 2, 2), params).reshape(-1)

        jac = torch.autograd.functional.jacobian(flat_fn, x.reshape(-1))
        # group jacobian entries by (output position, input position) blocks
        blocks = jac.reshape(8, 2, 8, 2).abs().amax(dim=(1, 3))
        assert float(blocks.min()) > 1e-12, "some position pair exchanges no information"

    def test_peak_attention_memory_is_separable_not_full(self):
        params = AttentionParams.random(2, torch.Generator().manual_seed(9))
        b, h, w, t = 1, 3, 3, 3
        x = torch.randn(b, h, w, t, 2)
        stats = {}
        separable_attention(x, params, stats=stats)
        separable_peak, full = peak_attention_entries(b, h, w, t)
        assert stats["max_logits_entries"] == separable_peak
        assert stats["max_logits_entries"] < full

    def test_gradients_match_finite_differences(self):
        params = AttentionParams.random(3, torch.Generator().manual_seed(10),
                                        dtype=torch.float64, scale=0.5)
        x = torch.randn(2, 2, 2, 2, 3, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(11))
        proj = torch.randn(2, 2, 2, 2, 3, dtype=torch.float64,
                           generator=torch.Generator().manual_seed(12))
        check_grads_against_fd(
            lambda: (separable_attention(x, params) * proj).sum(),
            [x, params.time_q, params.width_v], rtol=1e-4)

    def test_rejects_wrong_rank(self):
        params = AttentionParams.random(2, torch.Generator().manual_seed(13))
        with pytest.raises(ValueError):
            separable_attention(torch.randn(2, 2, 2, 2), params)

    def test_params_validated_square(self):
        mats = [torch.eye(2)] * 8 + [torch.zeros(3, 2)]
        with pytest.raises(ValueError):
            AttentionParams(*mats)
