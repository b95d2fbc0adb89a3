"""Seeded, splittable random streams.

Every component derives its own stream from the run seed and a name, so
adding or removing a component never shifts another component's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def sub_seed(seed: int, *names: str) -> int:
    h = hashlib.sha256(str(int(seed)).encode())
    for name in names:
        h.update(b"/" + str(name).encode())
    return int.from_bytes(h.digest()[:8], "little")


def generator(seed: int, *names: str) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``seed`` and component names."""
    return np.random.Generator(np.random.Philox(key=sub_seed(seed, *names)))
