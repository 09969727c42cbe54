"""Seed derivation so that every random choice in the harness replicates across machines."""
import hashlib

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64 seeded by sha256(parts)[:8] v1"


def derive_seed(*parts) -> int:
    """Fold arbitrary printable parts into a 64-bit seed."""
    payload = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def make_rng(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
