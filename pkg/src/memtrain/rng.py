"""Named random streams derived from one run seed.

Each purpose gets its own generator seeded from ``(seed, crc32(purpose),
*extra)``, so switching one noise source on or off never shifts the draws of
another.
"""

from __future__ import annotations

import zlib

import numpy as np

MAX_SEED = 2 ** 64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit value, got {seed}")
    return seed


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    key = [check_seed(seed), zlib.crc32(purpose.encode("utf-8"))] + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(key))


class Streams:
    """Lazily created per-purpose generators for one run."""

    PURPOSES = ("init", "shuffle", "read", "adc", "program", "transfer", "eval")

    def __init__(self, seed: int):
        self.seed = check_seed(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def __getitem__(self, purpose: str) -> np.random.Generator:
        gen = self._gens.get(purpose)
        if gen is None:
            gen = self._gens[purpose] = stream(self.seed, purpose)
        return gen

    def fresh(self, purpose: str, *extra: int) -> np.random.Generator:
        """A generator independent of the long-lived one, e.g. per epoch or per trial."""
        return stream(self.seed, purpose, *extra)

    def get_state(self) -> dict:
        return {k: g.bit_generator.state for k, g in self._gens.items()}

    def set_state(self, states: dict) -> None:
        for k, st in states.items():
            self[k].bit_generator.state = st
