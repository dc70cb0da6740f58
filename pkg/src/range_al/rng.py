"""Deterministic random-number streams.

Every source of randomness in the engine is a pure function of a seed plus
integer key material, so parallel workers produce identical results regardless
of scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Domain tags keep independent stream families from colliding on key material.
DOMAIN_STREAM = 0x517EA3
DOMAIN_SPLIT = 0x5AA17
DOMAIN_INIT_POOL = 0x1A17
DOMAIN_MODEL = 0xAB0DE1


def derive(seed: int, *keys: int) -> np.random.Generator:
    """Generator that is a pure function of (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]]))


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream keyed by (seed, sample_id, step).

    The stream is immutable; `at_step`/`for_sample` return re-keyed copies.
    Output never depends on how many other streams were consumed.
    """

    seed: int
    sample_id: int = 0
    step: int = 0

    def generator(self) -> np.random.Generator:
        return derive(self.seed, DOMAIN_STREAM, self.sample_id, self.step)

    def at_step(self, step: int) -> "RngStream":
        return replace(self, step=step)

    def for_sample(self, sample_id: int) -> "RngStream":
        return replace(self, sample_id=sample_id)
