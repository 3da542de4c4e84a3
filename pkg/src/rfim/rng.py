"""Deterministic keyed randomness.

Every random quantity in this package is derived from a 64-bit master seed
plus the identity of the thing being drawn (a site, an edge, a named cell),
via a splitmix64-style avalanche hash.  This gives two properties the
couplings and field samplers rely on:

* restriction consistency: the field value at a site depends only on
  (seed, site coordinates), so a realization restricted to a sub-box equals
  the sub-box's own realization;
* identity keying: shared uniforms in couplings are attached to the element
  (edge or site) itself, not to the order in which elements happen to be
  revealed.

Monte Carlo chains use numpy PCG64 generators seeded from `derive_seed`;
the hash itself is used where per-element determinism matters.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(x):
    """splitmix64 finalizer; accepts uint64 scalars or arrays, wraps mod 2^64."""
    z = np.asarray(x, dtype=np.uint64) + _GAMMA
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


def _token_words(token) -> list[int]:
    # canonical encoding: ints map to one word, strings to a length-prefixed
    # word sequence, tuples recurse.  Signed ints use two's complement.
    if isinstance(token, (bool, np.bool_)):
        return [int(token)]
    if isinstance(token, (int, np.integer)):
        return [int(token) & _MASK]
    if isinstance(token, str):
        raw = token.encode("utf-8")
        words = [len(raw)]
        for k in range(0, len(raw), 8):
            words.append(int.from_bytes(raw[k:k + 8], "little"))
        return words
    if isinstance(token, tuple):
        words = [0x7C7C7C7C ^ len(token)]
        for t in token:
            words.extend(_token_words(t))
        return words
    raise TypeError(f"cannot key randomness on {type(token).__name__}")


def hash_key(seed: int, *tokens) -> int:
    """Fold (seed, tokens...) into a single uint64."""
    with np.errstate(over="ignore"):
        h = mix64(_U64(int(seed) & _MASK))
        for t in tokens:
            for w in _token_words(t):
                h = mix64(h ^ _U64(w))
    return int(h)


def derive_seed(master: int, *tokens) -> int:
    """Per-cell seed derivation; distinct token paths give independent seeds."""
    return hash_key(master, "derive", *tokens)


def uniform_from_bits(bits) -> np.ndarray:
    """uint64 -> float64 in the open interval (0, 1).

    52 payload bits plus a half-ulp offset: the maximum value is
    (2^52 - 1 + 0.5) * 2^-52 = 1 - 2^-53 < 1 exactly (a 53rd payload bit
    would round the top value up to 1.0)."""
    b = np.asarray(bits, dtype=np.uint64)
    return ((b >> _U64(12)).astype(np.float64) + 0.5) * (2.0 ** -52)


def keyed_uniform(seed: int, *tokens) -> float:
    return float(uniform_from_bits(_U64(hash_key(seed, *tokens))))


def coords_uniforms(seed: int, coords: np.ndarray, salt: str) -> np.ndarray:
    """Vectorized per-site uniforms keyed by (seed, salt, coordinates).

    coords has shape (N, d); returns shape (N,).  Matches
    keyed_uniform(seed, salt, site_tuple) exactly (tested), so scalar and
    vector paths are interchangeable.
    """
    coords = np.asarray(coords, dtype=np.int64)
    n, d = coords.shape
    with np.errstate(over="ignore"):
        h = mix64(_U64(int(seed) & _MASK))
        for w in _token_words(salt):
            h = mix64(h ^ _U64(w))
        # tuple prefix word, then one word per coordinate
        h = mix64(h ^ _U64(0x7C7C7C7C ^ d))
        hv = np.full(n, h, dtype=np.uint64)
        for j in range(d):
            hv = mix64(hv ^ coords[:, j].astype(np.uint64))
    return uniform_from_bits(hv)


def seeds_uniforms(seeds: np.ndarray, *tokens) -> np.ndarray:
    """Vectorized over master seeds for a fixed key; matches keyed_uniform."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    with np.errstate(over="ignore"):
        hv = mix64(seeds)
        for t in tokens:
            for w in _token_words(t):
                hv = mix64(hv ^ _U64(w))
    return uniform_from_bits(hv)


class UniformStream:
    """Shared uniforms keyed by element identity.

    stream.uniform(key) is a pure function of (seed, key); the same element
    queried by two coupled processes sees the same value regardless of the
    order of queries.
    """

    def __init__(self, seed: int, namespace: str = ""):
        self.seed = int(seed)
        self.namespace = namespace

    def uniform(self, *key) -> float:
        return keyed_uniform(self.seed, self.namespace, *key)

    def generator(self, *key) -> np.random.Generator:
        """An independent PCG64 generator for a keyed sub-task."""
        return np.random.default_rng(hash_key(self.seed, "gen", self.namespace, *key))
