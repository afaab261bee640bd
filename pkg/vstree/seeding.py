"""
Named random streams derived from a single seed

Every phase (initialization, minibatching, reparameterization noise, bandit
environment, ...) draws from its own stream so that adding draws to one
phase never perturbs another.
"""
import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str) -> np.random.Generator:
    """Return the generator for stream `label` under `seed`"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return np.random.default_rng(sequence)


def derive_seed(seed: int, label: str) -> int:
    """Derive a child integer seed (fits in 32 bits, usable by sklearn)"""
    return int(stream(seed, label).integers(0, 2**32 - 1))
