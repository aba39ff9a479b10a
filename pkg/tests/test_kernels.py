"""Digest kernels: backends agree with the pure-Python reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spendchain import _kernels as K

u64 = st.integers(0, (1 << 64) - 1)


@given(u64)
def test_fmix_inverse_roundtrip(x):
    assert K.fmix64_inv(K.fmix64(x)) == x
    assert K.fmix64(K.fmix64_inv(x)) == x


@given(st.lists(u64, min_size=0, max_size=12), u64, u64)
def test_nonce_for_top_lane_hits_requested_lane(prefix, nonce, top):
    state = K.absorb_py(prefix + [0])
    n = K.nonce_for_top_lane(state, top)
    assert K.finalize_py(state, n)[0] == top


def _reference_digests(rows):
    return [K.lanes_to_int(K.finalize_py(K.absorb_py(r[:-1]), int(r[-1]))) for r in rows.tolist()]


def test_numpy_rows_match_reference():
    rng = np.random.default_rng(3)
    rows = rng.integers(0, 1 << 64, size=(200, 9), dtype=np.uint64)
    lanes = K.digest_rows_numpy(rows)
    got = [K.lanes_to_int(tuple(int(v) for v in row)) for row in lanes]
    assert got == _reference_digests(rows)


@pytest.mark.skipif(not K.USE_NUMBA, reason="numba backend disabled")
def test_numba_rows_match_numpy():
    rng = np.random.default_rng(4)
    rows = rng.integers(0, 1 << 64, size=(500, 6), dtype=np.uint64)
    assert np.array_equal(K.digest_rows_numba(rows), K.digest_rows_numpy(rows))


@pytest.mark.skipif(not K.USE_NUMBA, reason="numba backend disabled")
def test_numba_absorb_matches_reference():
    data = bytes(range(80))
    words = np.frombuffer(data, dtype=">u8").astype(np.uint64)
    assert K.absorb_numba(words) == K.absorb_bytes(data)


def test_absorb_bytes_reads_big_endian_words():
    assert K.absorb_bytes(b"\x01" + b"\x00" * 7) == K.absorb_py([1 << 56])
    with pytest.raises(ValueError):
        K.absorb_bytes(b"\x01")


@pytest.mark.parametrize("target_bits", [4, 9, 13])
def test_grind_backends_agree(target_bits):
    state = K.absorb_py([11, 22, 33])
    target = 1 << (256 - target_bits)
    expected = K.grind_numpy(state, 1234, target, 1 << 24, chunk=1 << 10)
    assert expected[0] > 0
    if K.USE_NUMBA:
        assert K.grind_numba(state, 1234, target, 1 << 24) == expected
    # the winning nonce is the first from the start position below the target
    attempts, nonce = expected
    assert nonce == (1234 + attempts - 1) % (1 << 64)
    assert K.lanes_to_int(K.finalize_py(state, nonce)) < target
    for n in range(1234, nonce):
        assert K.lanes_to_int(K.finalize_py(state, n)) >= target


def test_grind_reports_exhaustion():
    state = K.absorb_py([1])
    assert K.grind_numpy(state, 0, 1, 1000, chunk=256) == (0, 0)
    if K.USE_NUMBA:
        assert K.grind_numba(state, 0, 1, 1000)[0] == 0


def test_nlz_lanes():
    lanes = np.array(
        [[0, 0, 0, 0], [0, 0, 0, 1], [1 << 63, 0, 0, 0], [1, 5, 0, 0], [0, 1 << 10, 0, 0]],
        dtype=np.uint64,
    )
    assert K.nlz_lanes(lanes).tolist() == [256, 255, 0, 63, 64 + 53]
