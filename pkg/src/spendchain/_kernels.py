"""Digest mixing kernels.

The block digest is a 256-bit value built from four 64-bit lanes. Every
8-byte big-endian word of the canonical serialization except the trailing
nonce is absorbed into all four lanes with the murmur3 64-bit finalizer,
followed by the word count. The nonce is then folded in:

    lane0 = fmix64(state0 ^ nonce)
    laneJ = fmix64(stateJ ^ (nonce * MUL[J]) ^ lane0)      for J = 1, 2, 3

and the digest is ``lane0 || lane1 || lane2 || lane3`` (lane0 most
significant). ``fmix64`` is a bijection on 64-bit words, so for a fixed
prefix the map ``nonce -> lane0`` is invertible. The geometric simulation
mode uses that to pick a nonce whose digest lands at a given point below
the target without grinding.

Two backends are provided for the batch kernels: numba ``@njit`` loops and
vectorized numpy. Set ``SPENDCHAIN_DISABLE_NUMBA=1`` to force numpy (and
the pure-Python single-digest path).
"""

from __future__ import annotations

import os

import numpy as np

MASK = (1 << 64) - 1
C1 = 0xFF51AFD7ED558CCD
C2 = 0xC4CEB9FE1A85EC53
C1_INV = pow(C1, -1, 1 << 64)
C2_INV = pow(C2, -1, 1 << 64)
IV = (0x6A09E667F3BCC908, 0xBB67AE8584CAA73B, 0x3C6EF372FE94F82B, 0xA54FF53A5F1D36F1)
MUL = (0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB, 0xD6E8FEB86659FD93)

_DISABLED = os.environ.get("SPENDCHAIN_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and not _DISABLED


# --- pure Python reference -------------------------------------------------


def fmix64(k: int) -> int:
    k ^= k >> 33
    k = (k * C1) & MASK
    k ^= k >> 33
    k = (k * C2) & MASK
    k ^= k >> 33
    return k


def fmix64_inv(k: int) -> int:
    # x ^= x >> 33 is an involution on 64-bit words since 2 * 33 > 64
    k ^= k >> 33
    k = (k * C2_INV) & MASK
    k ^= k >> 33
    k = (k * C1_INV) & MASK
    k ^= k >> 33
    return k


def absorb_py(words) -> tuple[int, int, int, int]:
    s0, s1, s2, s3 = IV
    m0, m1, m2, m3 = MUL
    n = 0
    for w in words:
        w = int(w)
        s0 = fmix64(s0 ^ ((w * m0) & MASK))
        s1 = fmix64(s1 ^ ((w * m1) & MASK))
        s2 = fmix64(s2 ^ ((w * m2) & MASK))
        s3 = fmix64(s3 ^ ((w * m3) & MASK))
        n += 1
    s0 = fmix64(s0 ^ ((n * m0) & MASK))
    s1 = fmix64(s1 ^ ((n * m1) & MASK))
    s2 = fmix64(s2 ^ ((n * m2) & MASK))
    s3 = fmix64(s3 ^ ((n * m3) & MASK))
    return s0, s1, s2, s3


def finalize_py(state, nonce: int) -> tuple[int, int, int, int]:
    s0, s1, s2, s3 = state
    o0 = fmix64(s0 ^ nonce)
    o1 = fmix64(s1 ^ ((nonce * MUL[1]) & MASK) ^ o0)
    o2 = fmix64(s2 ^ ((nonce * MUL[2]) & MASK) ^ o0)
    o3 = fmix64(s3 ^ ((nonce * MUL[3]) & MASK) ^ o0)
    return o0, o1, o2, o3


def lanes_to_int(lanes) -> int:
    o0, o1, o2, o3 = (int(x) for x in lanes)
    return (o0 << 192) | (o1 << 128) | (o2 << 64) | o3


def int_to_lanes(value: int) -> tuple[int, int, int, int]:
    return (value >> 192) & MASK, (value >> 128) & MASK, (value >> 64) & MASK, value & MASK


def nonce_for_top_lane(state, top: int) -> int:
    """Nonce whose digest has most-significant lane ``top`` under ``state``."""
    return fmix64_inv(top) ^ state[0]


# --- numpy backend ---------------------------------------------------------

_U33 = np.uint64(33)
_NC1 = np.uint64(C1)
_NC2 = np.uint64(C2)
_NIV = np.array(IV, dtype=np.uint64)
_NMUL = np.array(MUL, dtype=np.uint64)


def _fmix_np(k: np.ndarray) -> np.ndarray:
    k = k ^ (k >> _U33)
    k = k * _NC1
    k = k ^ (k >> _U33)
    k = k * _NC2
    return k ^ (k >> _U33)


def _absorb_rows_np(prefix: np.ndarray) -> list[np.ndarray]:
    n_rows, n_words = prefix.shape
    state = [np.full(n_rows, _NIV[j], dtype=np.uint64) for j in range(4)]
    for c in range(n_words):
        w = prefix[:, c]
        for j in range(4):
            state[j] = _fmix_np(state[j] ^ (w * _NMUL[j]))
    for j in range(4):
        state[j] = _fmix_np(state[j] ^ np.uint64((n_words * MUL[j]) & MASK))
    return state


def _finalize_np(state, nonce: np.ndarray) -> list[np.ndarray]:
    o0 = _fmix_np(state[0] ^ nonce)
    out = [o0]
    for j in (1, 2, 3):
        out.append(_fmix_np(state[j] ^ (nonce * _NMUL[j]) ^ o0))
    return out


def digest_rows_numpy(rows: np.ndarray) -> np.ndarray:
    """Digest lanes for each row of serialized words (last column = nonce)."""
    rows = np.ascontiguousarray(rows, dtype=np.uint64)
    state = _absorb_rows_np(rows[:, :-1])
    return np.stack(_finalize_np(state, rows[:, -1]), axis=1)


def _below(o, t) -> np.ndarray:
    t0, t1, t2, t3 = (np.uint64(x) for x in t)
    return (o[0] < t0) | (
        (o[0] == t0) & ((o[1] < t1) | ((o[1] == t1) & ((o[2] < t2) | ((o[2] == t2) & (o[3] < t3)))))
    )


def grind_numpy(state, start: int, target: int, max_attempts: int, chunk: int = 1 << 16) -> tuple[int, int]:
    """Try nonces start, start+1, ... until the digest is below ``target``.

    Returns ``(attempts, nonce)``; ``attempts`` is 0 if nothing was found
    within ``max_attempts``.
    """
    t = int_to_lanes(target)
    st = [np.full(1, np.uint64(s), dtype=np.uint64) for s in state]
    done = 0
    base = np.uint64(start & MASK)
    while done < max_attempts:
        n = min(chunk, max_attempts - done)
        nonces = base + np.arange(done, done + n, dtype=np.uint64)
        hit = _below(_finalize_np(st, nonces), t)
        if hit.any():
            i = int(np.argmax(hit))
            return done + i + 1, int(nonces[i])
        done += n
    return 0, 0


def nlz_lanes(lanes: np.ndarray) -> np.ndarray:
    """Leading-zero bit count of each 256-bit digest given as (n, 4) lanes."""
    lanes = np.asarray(lanes, dtype=np.uint64)
    total = np.zeros(lanes.shape[0], dtype=np.int64)
    still = np.ones(lanes.shape[0], dtype=bool)
    for j in range(4):
        z = _nlz64_np(lanes[:, j])
        total += np.where(still, z, 0)
        still &= z == 64
    return total


def _nlz64_np(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    n = np.zeros(x.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        top_zero = (x >> np.uint64(64 - s)) == 0
        n += s * top_zero
        x = np.where(top_zero, x << np.uint64(s), x)
    return n + ((x >> np.uint64(63)) == 0)


# --- numba backend ---------------------------------------------------------

if numba is not None:
    _B33 = np.uint64(33)
    _BC1 = np.uint64(C1)
    _BC2 = np.uint64(C2)
    _BIV0, _BIV1, _BIV2, _BIV3 = (np.uint64(x) for x in IV)
    _BM0, _BM1, _BM2, _BM3 = (np.uint64(x) for x in MUL)

    @numba.njit(cache=True, inline="always")
    def _fmix_nb(k):
        k ^= k >> _B33
        k *= _BC1
        k ^= k >> _B33
        k *= _BC2
        k ^= k >> _B33
        return k

    @numba.njit(cache=True)
    def _absorb_nb(words, n_words):
        s0, s1, s2, s3 = _BIV0, _BIV1, _BIV2, _BIV3
        for i in range(n_words):
            w = words[i]
            s0 = _fmix_nb(s0 ^ (w * _BM0))
            s1 = _fmix_nb(s1 ^ (w * _BM1))
            s2 = _fmix_nb(s2 ^ (w * _BM2))
            s3 = _fmix_nb(s3 ^ (w * _BM3))
        n = np.uint64(n_words)
        s0 = _fmix_nb(s0 ^ (n * _BM0))
        s1 = _fmix_nb(s1 ^ (n * _BM1))
        s2 = _fmix_nb(s2 ^ (n * _BM2))
        s3 = _fmix_nb(s3 ^ (n * _BM3))
        return s0, s1, s2, s3

    @numba.njit(cache=True, inline="always")
    def _finalize_nb(s0, s1, s2, s3, nonce):
        o0 = _fmix_nb(s0 ^ nonce)
        o1 = _fmix_nb(s1 ^ (nonce * _BM1) ^ o0)
        o2 = _fmix_nb(s2 ^ (nonce * _BM2) ^ o0)
        o3 = _fmix_nb(s3 ^ (nonce * _BM3) ^ o0)
        return o0, o1, o2, o3

    @numba.njit(cache=True)
    def _digest_rows_nb(rows):
        n_rows, n_cols = rows.shape
        out = np.empty((n_rows, 4), dtype=np.uint64)
        for r in range(n_rows):
            s0, s1, s2, s3 = _absorb_nb(rows[r], n_cols - 1)
            o0, o1, o2, o3 = _finalize_nb(s0, s1, s2, s3, rows[r, n_cols - 1])
            out[r, 0] = o0
            out[r, 1] = o1
            out[r, 2] = o2
            out[r, 3] = o3
        return out

    @numba.njit(cache=True)
    def _absorb_one_nb(words):
        return _absorb_nb(words, words.shape[0])

    @numba.njit(cache=True)
    def _grind_nb(s0, s1, s2, s3, start, t0, t1, t2, t3, max_attempts):
        nonce = start
        one = np.uint64(1)
        for i in range(max_attempts):
            o0, o1, o2, o3 = _finalize_nb(s0, s1, s2, s3, nonce)
            if o0 < t0:
                return i + 1, nonce
            if o0 == t0:
                if o1 < t1 or (o1 == t1 and (o2 < t2 or (o2 == t2 and o3 < t3))):
                    return i + 1, nonce
            nonce += one
        return 0, np.uint64(0)

    def digest_rows_numba(rows: np.ndarray) -> np.ndarray:
        return _digest_rows_nb(np.ascontiguousarray(rows, dtype=np.uint64))

    def grind_numba(state, start: int, target: int, max_attempts: int) -> tuple[int, int]:
        s = [np.uint64(x) for x in state]
        t = [np.uint64(x) for x in int_to_lanes(target)]
        attempts, nonce = _grind_nb(*s, np.uint64(start & MASK), *t, max_attempts)
        return int(attempts), int(nonce)

    def absorb_numba(words: np.ndarray) -> tuple[int, int, int, int]:
        return tuple(int(x) for x in _absorb_one_nb(words))

else:  # pragma: no cover
    digest_rows_numba = grind_numba = absorb_numba = None


# --- dispatch --------------------------------------------------------------


def absorb_bytes(data: bytes) -> tuple[int, int, int, int]:
    """Absorb a byte string whose length is a multiple of 8."""
    if len(data) % 8:
        raise ValueError("serialization must be a whole number of 8-byte words")
    if USE_NUMBA:
        return absorb_numba(np.frombuffer(data, dtype=">u8").astype(np.uint64))
    return absorb_py(int.from_bytes(data[i : i + 8], "big") for i in range(0, len(data), 8))


def digest_rows(rows: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return digest_rows_numba(rows)
    return digest_rows_numpy(rows)


def grind(state, start: int, target: int, max_attempts: int) -> tuple[int, int]:
    if USE_NUMBA:
        return grind_numba(state, start, target, max_attempts)
    return grind_numpy(state, start, target, max_attempts)
