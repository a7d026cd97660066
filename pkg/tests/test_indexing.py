"""Mixed-radix joint-action encoding (agent 0 most significant)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parlab.indexing import (
    all_joint_components,
    decode_joint,
    encode_joint,
    joint_size,
    others_radix_weights,
    radix_weights,
)


def test_joint_size_is_product():
    assert joint_size([2, 3, 4]) == 24
    assert joint_size([5]) == 5
    assert joint_size([1, 1]) == 1


def test_radix_weights_order():
    # agent 0 carries the largest stride, the last agent stride 1
    assert radix_weights([2, 3, 4]).tolist() == [12, 4, 1]
    assert radix_weights([7]).tolist() == [1]


def test_encode_known_values():
    counts = [2, 2]
    comps = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    assert encode_joint(comps, counts).tolist() == [0, 1, 2, 3]


def test_decode_matches_enumeration_order():
    counts = [2, 3]
    comps = decode_joint(np.arange(6), counts)
    # row-major: agent 1 cycles fastest
    assert comps.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]


def test_all_joint_components_consistent():
    counts = [3, 2]
    comps = all_joint_components(counts)
    assert comps.shape == (6, 2)
    assert encode_joint(comps, counts).tolist() == list(range(6))


def test_others_radix_weights_drop_agent():
    # weights for the reduced tuple with the agent's slot removed
    assert others_radix_weights([2, 3, 2], agent=1).tolist() == [2, 1]
    assert others_radix_weights([2, 3, 2], agent=0).tolist() == [2, 1]
    assert others_radix_weights([4], agent=0).tolist() == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
       st.integers(min_value=0, max_value=10**6))
def test_encode_decode_roundtrip(counts, raw):
    size = joint_size(counts)
    flat = np.array([raw % size])
    comps = decode_joint(flat, counts)
    assert (comps < np.array(counts)).all() and (comps >= 0).all()
    assert encode_joint(comps, counts).tolist() == flat.tolist()


def test_encode_batch_shape():
    counts = [2, 2, 2]
    comps = all_joint_components(counts)
    flat = encode_joint(comps, counts)
    assert flat.shape == (8,)
    np.testing.assert_array_equal(decode_joint(flat, counts), comps)


def test_single_agent_identity():
    counts = [4]
    flat = np.arange(4)
    np.testing.assert_array_equal(decode_joint(flat, counts).ravel(), flat)
    np.testing.assert_array_equal(encode_joint(flat[:, None], counts), flat)
