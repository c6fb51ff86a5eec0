"""Named counter-based random streams.

Every stochastic draw in the workbench goes through a ``RngStream``: a root
seed plus a per-name draw counter. A draw is reproduced from (seed, name,
counter) alone, so a serialized stream state pins down an episode exactly,
independent of draw interleaving across other names.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """Counter-based RNG with independent named substreams."""

    def __init__(self, seed: int, counters: dict[str, int] | None = None):
        self.seed = int(seed)
        self.counters = dict(counters or {})

    def draw(self, name: str) -> np.random.Generator:
        """Return a fresh Generator for the next draw on substream `name`."""
        count = self.counters.get(name, 0)
        self.counters[name] = count + 1
        bits = np.random.Philox(key=_key(self.seed, name), counter=[count, 0, 0, 0])
        return np.random.Generator(bits)

    def peek(self, name: str) -> np.random.Generator:
        """Generator for the current counter without consuming it."""
        count = self.counters.get(name, 0)
        bits = np.random.Philox(key=_key(self.seed, name), counter=[count, 0, 0, 0])
        return np.random.Generator(bits)

    def state(self) -> dict:
        return {"seed": self.seed, "counters": dict(self.counters)}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        return cls(state["seed"], state.get("counters"))
