"""Named, independent random streams.

One run seed fans out into independent counter-based (Philox) generators,
one per purpose ("sources", "outliers", "mixing", ...).  Toggling a stage
on or off therefore never shifts the draws of the other stages.
"""

import hashlib

import numpy as np

STREAMS = ("sources", "outliers", "mixing", "permutation", "init", "minibatch")


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for stream `name` derived from `seed`."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))
