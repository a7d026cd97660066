"""Joint-action index arithmetic.

A joint action is a tuple (a_0, ..., a_{n-1}) of per-agent actions. Flat
indices use the row-major (C-order) mixed-radix convention: agent 0 is the
most significant digit, the last agent the least significant. This matches
``numpy.reshape`` on a tensor whose action axes are ordered by agent, so a
joint table of shape (S, A_0, ..., A_{n-1}) flattens to (S, prod A_i)
without reordering.
"""

from __future__ import annotations

import numpy as np


def joint_size(action_counts: list[int]) -> int:
    out = 1
    for c in action_counts:
        out *= int(c)
    return out


def radix_weights(action_counts: list[int]) -> np.ndarray:
    """Per-agent multipliers w such that flat = sum_i w[i] * a_i."""
    n = len(action_counts)
    w = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        w[i] = w[i + 1] * action_counts[i + 1]
    return w


def encode_joint(components: np.ndarray, action_counts: list[int]) -> np.ndarray:
    """Flat joint index from per-agent components, shape (..., n) -> (...)."""
    comps = np.asarray(components, dtype=np.int64)
    return comps @ radix_weights(action_counts)


def decode_joint(flat: np.ndarray, action_counts: list[int]) -> np.ndarray:
    """Per-agent components from flat joint indices, shape (...) -> (..., n)."""
    flat = np.asarray(flat, dtype=np.int64)
    n = len(action_counts)
    out = np.empty(flat.shape + (n,), dtype=np.int64)
    rem = flat
    for i in range(n - 1, -1, -1):
        out[..., i] = rem % action_counts[i]
        rem = rem // action_counts[i]
    return out


def others_radix_weights(action_counts: list[int], agent: int) -> np.ndarray:
    """Radix weights over all agents except ``agent`` (same ordering)."""
    counts = [c for j, c in enumerate(action_counts) if j != agent]
    return radix_weights(counts) if counts else np.zeros(0, dtype=np.int64)


def all_joint_components(action_counts: list[int]) -> np.ndarray:
    """Table of shape (prod A_i, n) listing components of every joint index."""
    return decode_joint(np.arange(joint_size(action_counts)), action_counts)
