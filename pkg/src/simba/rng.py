"""Seedable random streams.

All stochastic code in the package draws from numpy ``Generator`` objects
that are passed in explicitly.  A single run seed fans out into named
substreams (``data``, ``init``, ``dropout``, ...) so that changing how one
component consumes randomness never perturbs the others.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named substream of ``seed``.

    The stream is a pure function of ``(seed, name)``: same pair, same
    bit stream, on every platform.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    salt = int.from_bytes(digest[:8], "little")
    return np.random.default_rng([int(seed) & (2**64 - 1), salt])


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return rng.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    """Rebuild a generator from a :func:`generator_state` snapshot."""
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
