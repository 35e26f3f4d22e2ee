"""Deterministic derivation of named randomness substreams from one root seed."""

from __future__ import annotations

import hashlib
import random


def derive_seed(root_seed: int, *labels: str) -> int:
    """Derive an independent 64-bit seed for the substream named by `labels`."""
    material = ":".join([str(root_seed), *labels]).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big")


def substream(root_seed: int, *labels: str) -> random.Random:
    """A private RNG for one named substream; same (seed, labels) → same stream."""
    return random.Random(derive_seed(root_seed, *labels))
