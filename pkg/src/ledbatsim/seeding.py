"""Seed derivation and the per-flow random stream.

Every random stream is a pure function of its labels, so any single run or
sweep cell can be reproduced in isolation.
"""
from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


def derive_seed(*labels) -> int:
    """Stable 63-bit seed from arbitrary labels (ints, floats, strings)."""
    text = "|".join(repr(x) for x in labels)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big") >> 1


class SplitMix64:
    """SplitMix64 generator with a ``random()`` method like :mod:`random`.

    Chosen over ``random.Random`` because its state is a single 64-bit word,
    which the compiled engine can carry and advance identically.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def __repr__(self):
        return f"SplitMix64(state={self.state:#x})"


def flow_seed(seed: int, flow_id: int) -> int:
    # independent per-flow stream, so adding a flow leaves the others untouched
    return derive_seed("flow", seed, flow_id)


def flow_rng(seed: int, flow_id: int) -> SplitMix64:
    return SplitMix64(flow_seed(seed, flow_id))
