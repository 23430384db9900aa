"""Unfold/fold and attention tests, including the brute-force MHSA oracle."""
import numpy as np
import pytest

from cactiscan.attention import (
    AttentionConfig,
    TransformerWeights,
    fold_patches,
    mhsa,
    transformer_block,
    unfold_patches,
)
from cactiscan.tensor import ShapeError, Tensor

from oracles import mhsa_naive


def zeros_weights(d: int) -> TransformerWeights:
    z = lambda *s: Tensor(np.zeros(s, dtype=np.float32))
    return TransformerWeights(
        ln1_gamma=z(d), ln1_beta=z(d),
        wq=z(d, d), wk=z(d, d), wv=z(d, d), wo=z(d, d),
        ln2_gamma=z(d), ln2_beta=z(d),
        fc1_weight=z(d, 2 * d), fc1_bias=z(2 * d),
        fc2_weight=z(2 * d, d), fc2_bias=z(d),
    )


class TestUnfoldFold:
    def test_single_patch_case(self):
        x = np.arange(4, dtype=np.float32).reshape(1, 2, 2, 1)
        seq = unfold_patches(x, 2, 2)
        assert seq.shape == (1, 4, 1, 1)
        np.testing.assert_array_equal(seq.data.reshape(4), [0, 1, 2, 3])

    def test_1x1_patch_equals_flatten(self, rng):
        x = rng.standard_normal((1, 3, 4, 2)).astype(np.float32)
        seq = unfold_patches(x, 1, 1)
        assert seq.shape == (1, 1, 12, 2)
        np.testing.assert_array_equal(seq.data[0, 0], x.reshape(12, 2))

    def test_round_trip_bitwise(self, rng):
        x = rng.standard_normal((1, 4, 4, 3)).astype(np.float32)
        seq = unfold_patches(x, 2, 2)
        back = fold_patches(seq, 4, 4, 2, 2)
        np.testing.assert_array_equal(back.data, x)

    @pytest.mark.parametrize("seed", range(10))
    def test_round_trip_random_shapes(self, seed):
        r = np.random.default_rng(seed)
        ph, pw = int(r.integers(1, 4)), int(r.integers(1, 4))
        h, w = ph * int(r.integers(1, 5)), pw * int(r.integers(1, 5))
        c = int(r.integers(1, 5))
        x = r.standard_normal((2, h, w, c)).astype(np.float32)
        back = fold_patches(unfold_patches(x, ph, pw), h, w, ph, pw)
        np.testing.assert_array_equal(back.data, x)

    def test_values_preserved(self, rng):
        x = rng.standard_normal((1, 8, 8, 16)).astype(np.float32)
        seq = unfold_patches(x, 2, 2)
        np.testing.assert_array_equal(np.sort(seq.data.ravel()), np.sort(x.ravel()))

    def test_non_divisible_extent_instructs_padding(self):
        with pytest.raises(ShapeError, match="pad"):
            unfold_patches(np.zeros((1, 5, 4, 1), dtype=np.float32), 2, 2)

    def test_fold_inconsistent_extents(self):
        with pytest.raises(ShapeError):
            fold_patches(np.zeros((1, 4, 4, 1), dtype=np.float32), 5, 3, 2, 2)


class TestMhsa:
    def test_single_token_output_is_v_projected(self, rng):
        d = 8
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        x = rng.standard_normal((1, d)).astype(np.float32)
        wq, wk, wv, wo = (rng.standard_normal((d, d)).astype(np.float32) for _ in range(4))
        out = mhsa(x, wq, wk, wv, wo, cfg)
        np.testing.assert_allclose(out.data, (x @ wv) @ wo, atol=1e-5)

    def test_identical_keys_average_values(self, rng):
        d, t = 4, 5
        cfg = AttentionConfig(embed_dim=d, num_heads=1)
        x = np.tile(rng.standard_normal((1, d)).astype(np.float32), (t, 1))
        v_in = rng.standard_normal((t, d)).astype(np.float32)
        # zero wq/wk make every score identical regardless of the values fed to V
        wz = np.zeros((d, d), dtype=np.float32)
        wv = np.eye(d, dtype=np.float32)
        out = mhsa(v_in, wz, wz, wv, np.eye(d, dtype=np.float32), cfg)
        np.testing.assert_allclose(out.data, np.tile(v_in.mean(axis=0), (t, 1)), atol=1e-5)

    def test_matches_naive_oracle(self, rng):
        t, d, h = 4, 8, 2
        cfg = AttentionConfig(embed_dim=d, num_heads=h)
        seq = rng.standard_normal((t, d)).astype(np.float32)
        wq, wk, wv, wo = (rng.standard_normal((d, d)).astype(np.float32) for _ in range(4))
        got = mhsa(seq, wq, wk, wv, wo, cfg).data
        want = mhsa_naive(seq, wq, wk, wv, wo, h)
        np.testing.assert_allclose(got, want, atol=1e-5)

    @pytest.mark.parametrize("seed", range(15))
    def test_oracle_sweep(self, seed):
        r = np.random.default_rng(seed + 500)
        h = int(r.choice([1, 2, 4]))
        d = h * int(r.integers(1, 5))
        t = int(r.integers(1, 7))
        cfg = AttentionConfig(embed_dim=d, num_heads=h)
        seq = r.standard_normal((t, d)).astype(np.float32)
        wq, wk, wv, wo = (r.standard_normal((d, d)).astype(np.float32) for _ in range(4))
        np.testing.assert_allclose(
            mhsa(seq, wq, wk, wv, wo, cfg).data,
            mhsa_naive(seq, wq, wk, wv, wo, h),
            atol=1e-5,
        )

    def test_permutation_equivariance(self, rng):
        t, d = 6, 8
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        seq = rng.standard_normal((t, d)).astype(np.float32)
        wq, wk, wv, wo = (rng.standard_normal((d, d)).astype(np.float32) for _ in range(4))
        perm = rng.permutation(t)
        out = mhsa(seq, wq, wk, wv, wo, cfg).data
        out_perm = mhsa(seq[perm], wq, wk, wv, wo, cfg).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-5)

    def test_batched_leading_dims(self, rng):
        d = 8
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        seq = rng.standard_normal((2, 3, 5, d)).astype(np.float32)
        wq, wk, wv, wo = (rng.standard_normal((d, d)).astype(np.float32) for _ in range(4))
        out = mhsa(seq, wq, wk, wv, wo, cfg).data
        # each (batch, position) sequence must match its own standalone run
        for i in range(2):
            for j in range(3):
                ref = mhsa(seq[i, j], wq, wk, wv, wo, cfg).data
                np.testing.assert_allclose(out[i, j], ref, atol=1e-6)

    def test_dim_mismatch(self, rng):
        cfg = AttentionConfig(embed_dim=8, num_heads=2)
        with pytest.raises(ShapeError):
            mhsa(np.zeros((3, 4), dtype=np.float32), *(np.zeros((8, 8), dtype=np.float32),) * 4, cfg)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ValueError):
            AttentionConfig(embed_dim=10, num_heads=4)


class TestTransformerBlock:
    def test_zero_weights_identity(self, rng):
        d = 8
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        x = rng.standard_normal((1, 4, 5, d)).astype(np.float32)
        out = transformer_block(x, zeros_weights(d), cfg)
        np.testing.assert_array_equal(out.data, x)

    def test_single_token_finite(self, rng):
        d = 8
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        r = np.random.default_rng(7)
        w = TransformerWeights(
            ln1_gamma=np.ones(d, dtype=np.float32), ln1_beta=np.zeros(d, dtype=np.float32),
            wq=r.standard_normal((d, d)).astype(np.float32),
            wk=r.standard_normal((d, d)).astype(np.float32),
            wv=r.standard_normal((d, d)).astype(np.float32),
            wo=r.standard_normal((d, d)).astype(np.float32),
            ln2_gamma=np.ones(d, dtype=np.float32), ln2_beta=np.zeros(d, dtype=np.float32),
            fc1_weight=r.standard_normal((d, 2 * d)).astype(np.float32),
            fc1_bias=r.standard_normal(2 * d).astype(np.float32),
            fc2_weight=r.standard_normal((2 * d, d)).astype(np.float32),
            fc2_bias=r.standard_normal(d).astype(np.float32),
        )
        out = transformer_block(rng.standard_normal((1, 1, d)).astype(np.float32), w, cfg)
        assert out.shape == (1, 1, d)
        assert np.all(np.isfinite(out.data))

    def test_matches_composed_oracle(self, rng):
        from oracles import layer_norm_naive, matmul_naive

        d, t = 8, 4
        cfg = AttentionConfig(embed_dim=d, num_heads=2)
        r = np.random.default_rng(11)
        x = r.standard_normal((t, d)).astype(np.float32)
        mats = {k: r.standard_normal((d, d)).astype(np.float32) for k in ("wq", "wk", "wv", "wo")}
        fc1_w = r.standard_normal((d, 2 * d)).astype(np.float32)
        fc1_b = r.standard_normal(2 * d).astype(np.float32)
        fc2_w = r.standard_normal((2 * d, d)).astype(np.float32)
        fc2_b = r.standard_normal(d).astype(np.float32)
        g1, b1 = np.ones(d, dtype=np.float32), np.zeros(d, dtype=np.float32)
        g2, b2 = np.ones(d, dtype=np.float32), np.zeros(d, dtype=np.float32)
        w = TransformerWeights(g1, b1, mats["wq"], mats["wk"], mats["wv"], mats["wo"],
                               g2, b2, fc1_w, fc1_b, fc2_w, fc2_b)

        got = transformer_block(x, w, cfg, activation="silu").data

        h = x + mhsa_naive(layer_norm_naive(x, g1, b1), **mats, num_heads=2)
        normed = layer_norm_naive(h.astype(np.float32), g2, b2)
        hidden = matmul_naive(normed, fc1_w, fc1_b)
        hidden = hidden / (1.0 + np.exp(-hidden))
        want = h + matmul_naive(hidden.astype(np.float32), fc2_w, fc2_b)
        np.testing.assert_allclose(got, want, atol=1e-4)
