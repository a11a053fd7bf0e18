"""Deterministic RNG lanes.

Every stochastic operation in the simulator draws from an RngStream lane
identified by (master_seed, purpose, client_id, round_id).  Identical lane
material always produces the identical draw sequence, and distinct lanes are
statistically independent, so concurrent client work cannot perturb results.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Seed material for one independent random lane."""

    master_seed: int
    purpose: str = "root"
    client_id: int = 0
    round_id: int = 0

    def lane(self, purpose: str, client_id: int = 0, round_id: int = 0) -> "RngStream":
        """Derive a sibling lane from the same master seed."""
        return RngStream(self.master_seed, purpose, client_id, round_id)

    def sublane(self, suffix: str) -> "RngStream":
        """Narrow this lane further, keeping client and round coordinates."""
        return RngStream(
            self.master_seed, f"{self.purpose}/{suffix}", self.client_id, self.round_id
        )

    def generator(self) -> np.random.Generator:
        """Fresh generator for this lane; repeated calls restart the sequence."""
        tag = zlib.crc32(self.purpose.encode("utf-8"))
        seq = np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(tag, self.client_id, self.round_id),
        )
        return np.random.Generator(np.random.PCG64(seq))
