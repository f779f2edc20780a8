"""Token-aligned scaffold memory and appended key/value attention.

The reference encoder is a window mean followed by one affine map; the
projection parameters are supplied by the caller (seeded randomly in tests).
Attention is single-head: scaffold keys/values are concatenated after the
base keys/values and attended jointly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scaffold import ScaffoldFeatures


@dataclass(frozen=True)
class ConditionMemory:
    """Token-aligned scaffold memory, shape (L, d)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("condition memory must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise ValueError("condition memory must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class KvProjection:
    """Low-rank per-layer projection: memory -> (d x r) -> keys and values."""

    proj: np.ndarray       # (d, r)
    key_map: np.ndarray    # (r, d)
    value_map: np.ndarray  # (r, d)

    def __post_init__(self):
        p = np.asarray(self.proj, dtype=np.float64)
        k = np.asarray(self.key_map, dtype=np.float64)
        v = np.asarray(self.value_map, dtype=np.float64)
        if p.ndim != 2 or k.ndim != 2 or v.ndim != 2:
            raise ValueError("projection matrices must be 2-D")
        if p.shape[1] < 1:
            raise ValueError("projection rank must be at least 1")
        if k.shape[0] != p.shape[1] or v.shape[0] != p.shape[1]:
            raise ValueError("key/value maps must consume the projection rank")
        object.__setattr__(self, "proj", p)
        object.__setattr__(self, "key_map", k)
        object.__setattr__(self, "value_map", v)

    @property
    def rank(self) -> int:
        return self.proj.shape[1]


@dataclass(frozen=True)
class TextContext:
    """Opaque pooled text vector; carried for shape compatibility only."""

    pooled: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.pooled, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("pooled text vector must be a finite 1-D array")
        object.__setattr__(self, "pooled", v)


def encode_memory(features: ScaffoldFeatures, ratio: int, w_in: np.ndarray) -> ConditionMemory:
    """Pool condition features to the token grid and map them to memory width.

    Frames are averaged in windows of ``ratio``; a final partial window is
    padded by repeating the last frame so the token count stays L = ceil(T /
    ratio). The pooled rows then pass through the (no-bias) linear map
    ``w_in``.
    """
    if ratio < 1:
        raise ValueError("downsample ratio must be at least 1")
    vals = features.values
    w_in = np.asarray(w_in, dtype=np.float64)
    if w_in.ndim != 2 or w_in.shape[0] != vals.shape[1]:
        raise ValueError(
            f"w_in must have {vals.shape[1]} rows to consume the features, "
            f"got shape {w_in.shape}"
        )
    frames = vals.shape[0]
    length = -(-frames // ratio)
    pad = length * ratio - frames
    if pad:
        vals = np.concatenate([vals, np.repeat(vals[-1:], pad, axis=0)])
    pooled = vals.reshape(length, ratio, -1).mean(axis=1)
    return ConditionMemory(pooled @ w_in)


def project_kv(memory: ConditionMemory, params: KvProjection) -> tuple[np.ndarray, np.ndarray]:
    """Project memory into appended keys and values: (H P) U_K and (H P) U_V."""
    if memory.values.shape[1] != params.proj.shape[0]:
        raise ValueError("memory width does not match projection input")
    low = memory.values @ params.proj
    return low @ params.key_map, low @ params.value_map


def attend(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    scaffold_keys: np.ndarray,
    scaffold_values: np.ndarray,
) -> np.ndarray:
    """Single-head attention over base plus appended scaffold memory.

    Scaffold keys/values are concatenated after the base keys/values; scores
    are scaled by 1/sqrt(d) and row-softmaxed, so each query's weights sum
    to 1 over the combined memory.
    """
    out, _ = attend_with_weights(queries, keys, values, scaffold_keys, scaffold_values)
    return out


def attend_with_weights(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    scaffold_keys: np.ndarray,
    scaffold_values: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`attend` but also returns the (n_q, n_k + L) weight rows."""
    q = np.asarray(queries, dtype=np.float64)
    d = q.shape[1] if q.ndim == 2 else 0
    if d == 0:
        raise ValueError("attention width d must be positive")
    k = np.concatenate([keys, scaffold_keys], axis=0)
    v = np.concatenate([values, scaffold_values], axis=0)
    if k.shape[1] != d or v.shape[1] != d:
        raise ValueError("keys and values must share the query width")
    if k.shape[0] != v.shape[0]:
        raise ValueError("key and value counts must agree")
    if k.shape[0] == 0:
        raise ValueError("attention needs at least one key")
    scores = q @ k.T / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    num = np.exp(scores)
    weights = num / num.sum(axis=1, keepdims=True)
    return weights @ v, weights
