import numpy as np
import pytest

from anchorsynth.attention import (
    ConditionMemory,
    KvProjection,
    TextContext,
    attend,
    attend_with_weights,
    encode_memory,
    project_kv,
)
from anchorsynth.motion import ControlFamily
from anchorsynth.scaffold import Anchor, AnchorSet, ScaffoldFeatures, build_features


def reference_attention(q, k, v):
    """Plain attention mirroring attend's exact operation order."""
    scores = q @ k.T / np.sqrt(q.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    num = np.exp(scores)
    return num / num.sum(axis=1, keepdims=True) @ v


def empty_scaffold(d):
    return np.zeros((0, d)), np.zeros((0, d))


# --------------------------------------------------------------- encode_memory


def test_encode_zero_features_zero_memory():
    feats = ScaffoldFeatures(np.zeros((12, 11)), 3)
    w_in = np.random.default_rng(0).normal(size=(11, 6))
    memory = encode_memory(feats, 4, w_in)
    assert memory.values.shape == (3, 6)
    assert not memory.values.any()


def test_encode_ratio_one_identity_map_is_passthrough():
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(7, 11))
    feats = ScaffoldFeatures(vals, 3)
    memory = encode_memory(feats, 1, np.eye(11))
    assert np.array_equal(memory.values, vals)


def test_encode_pools_window_means():
    rng = np.random.default_rng(2)
    vals = np.repeat(rng.normal(size=(4, 11)), 4, axis=0)  # constant per window
    feats = ScaffoldFeatures(vals, 3)
    w_in = rng.normal(size=(11, 5))
    memory = encode_memory(feats, 4, w_in)
    np.testing.assert_allclose(memory.values, vals[::4] @ w_in, atol=1e-12)


def test_encode_pads_final_window_with_last_frame():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(10, 11))
    feats = ScaffoldFeatures(vals, 3)
    memory = encode_memory(feats, 4, np.eye(11))
    assert memory.values.shape == (3, 11)
    padded = np.concatenate([vals[8:], vals[9:], vals[9:]])
    np.testing.assert_allclose(memory.values[2], padded.mean(axis=0), atol=1e-12)


def test_encode_matches_direct_averaging_oracle():
    rng = np.random.default_rng(4)
    family = ControlFamily.root3d()
    anchors = AnchorSet(family, (Anchor(3, rng.normal(size=3)), Anchor(12, rng.normal(size=3))))
    feats = build_features(anchors, 16)
    w_in = rng.normal(size=(11, 8))
    memory = encode_memory(feats, 4, w_in)
    for n in range(4):
        expect = feats.values[4 * n : 4 * (n + 1)].mean(axis=0) @ w_in
        np.testing.assert_allclose(memory.values[n], expect, atol=1e-12)


def test_encode_rejects_wrong_input_width():
    feats = ScaffoldFeatures(np.zeros((8, 11)), 3)
    with pytest.raises(ValueError, match="rows"):
        encode_memory(feats, 2, np.zeros((7, 4)))


# ------------------------------------------------------------------ project_kv


def test_project_zero_memory_gives_zero_kv():
    params = KvProjection(np.ones((6, 2)), np.ones((2, 6)), np.ones((2, 6)))
    keys, values = project_kv(ConditionMemory(np.zeros((4, 6))), params)
    assert not keys.any() and not values.any()


def test_project_rank_one_structure():
    rng = np.random.default_rng(5)
    params = KvProjection(
        rng.normal(size=(6, 1)), rng.normal(size=(1, 6)), rng.normal(size=(1, 6))
    )
    memory = ConditionMemory(rng.normal(size=(5, 6)))
    keys, _ = project_kv(memory, params)
    coeff = memory.values @ params.proj  # (5, 1)
    np.testing.assert_allclose(keys, coeff @ params.key_map, atol=1e-12)
    assert np.linalg.matrix_rank(keys, tol=1e-10) == 1


def test_project_matches_naive_triple_product():
    rng = np.random.default_rng(6)
    params = KvProjection(
        rng.normal(size=(8, 3)), rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    )
    memory = ConditionMemory(rng.normal(size=(10, 8)))
    keys, values = project_kv(memory, params)
    naive_k = np.array([[row @ params.proj @ params.key_map[:, j] for j in range(8)]
                        for row in memory.values])
    naive_v = np.array([[row @ params.proj @ params.value_map[:, j] for j in range(8)]
                        for row in memory.values])
    np.testing.assert_allclose(keys, naive_k, atol=1e-12)
    np.testing.assert_allclose(values, naive_v, atol=1e-12)


def test_project_association_order_agrees():
    rng = np.random.default_rng(7)
    params = KvProjection(
        rng.normal(size=(9, 4)), rng.normal(size=(4, 9)), rng.normal(size=(4, 9))
    )
    h = rng.normal(size=(6, 9))
    keys, _ = project_kv(ConditionMemory(h), params)
    np.testing.assert_allclose(keys, h @ (params.proj @ params.key_map), atol=1e-12)


# ---------------------------------------------------------------------- attend


def test_attend_empty_scaffold_equals_plain_attention_bit_exact():
    rng = np.random.default_rng(8)
    q = rng.normal(size=(5, 7))
    k = rng.normal(size=(9, 7))
    v = rng.normal(size=(9, 7))
    ks, vs = empty_scaffold(7)
    assert np.array_equal(attend(q, k, v, ks, vs), reference_attention(q, k, v))


def test_attend_single_key_returns_its_value():
    rng = np.random.default_rng(9)
    q = rng.normal(size=(4, 6))
    k = rng.normal(size=(1, 6))
    v = rng.normal(size=(1, 6))
    ks, vs = empty_scaffold(6)
    out = attend(q, k, v, ks, vs)
    np.testing.assert_allclose(out, np.tile(v, (4, 1)), atol=1e-15)


def test_attend_matches_dense_reference_with_scaffold():
    rng = np.random.default_rng(10)
    q = rng.normal(size=(6, 5))
    k = rng.normal(size=(7, 5))
    v = rng.normal(size=(7, 5))
    ks = rng.normal(size=(3, 5))
    vs = rng.normal(size=(3, 5))
    out = attend(q, k, v, ks, vs)
    expect = reference_attention(q, np.concatenate([k, ks]), np.concatenate([v, vs]))
    np.testing.assert_allclose(out, expect, atol=1e-10)


def test_attend_rows_sum_to_one():
    rng = np.random.default_rng(11)
    q = rng.normal(size=(8, 4))
    k = rng.normal(size=(5, 4))
    v = rng.normal(size=(5, 4))
    ks = rng.normal(size=(4, 4))
    vs = rng.normal(size=(4, 4))
    _, weights = attend_with_weights(q, k, v, ks, vs)
    np.testing.assert_allclose(weights.sum(axis=1), np.ones(8), atol=1e-12)


def test_attend_duplicated_key_moves_output_along_value_segment():
    # appending a copy of base key j with its value shifts the output to
    # (1 - theta) * out + theta * v_j with theta = e_j / (S + e_j)
    rng = np.random.default_rng(12)
    q = rng.normal(size=(3, 5))
    k = rng.normal(size=(6, 5))
    v = rng.normal(size=(6, 5))
    j = 2
    base, weights = attend_with_weights(q, k, v, *empty_scaffold(5))
    out = attend(q, k, v, k[j : j + 1], v[j : j + 1])

    scores = q @ k.T / np.sqrt(5)
    shifted = scores - scores.max(axis=1, keepdims=True)
    num = np.exp(shifted)
    theta = num[:, j] / (num.sum(axis=1) + num[:, j])
    expect = (1 - theta)[:, None] * base + theta[:, None] * v[j]
    np.testing.assert_allclose(out, expect, atol=1e-12)
    assert np.all(theta > 0) and np.all(theta < 1)


def test_attend_rejects_zero_width():
    with pytest.raises(ValueError, match="width"):
        attend(np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((0, 0)), np.zeros((0, 0)))


def test_text_context_is_shape_compatible_with_scaffold_memory():
    # the pooled text vector can ride along as one extra appended row
    rng = np.random.default_rng(13)
    text = TextContext(rng.normal(size=6))
    q = rng.normal(size=(4, 6))
    k = rng.normal(size=(5, 6))
    v = rng.normal(size=(5, 6))
    out = attend(q, k, v, text.pooled[None, :], text.pooled[None, :])
    assert out.shape == (4, 6)
    assert np.all(np.isfinite(out))
