"""Counter-based, splittable random streams.

Every consumer of randomness asks for a stream keyed by
``(seed, run_id, tag)``. Streams built from distinct keys are statistically
independent, and the same key always reproduces the same draws.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

__all__ = ["make_stream", "tag_to_int", "SplitMix64"]


def tag_to_int(tag: str | int) -> int:
    """Map a purpose tag to a stable non-negative integer."""
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def make_stream(seed: int, run_id: int = 0, tag: str | int = "default") -> np.random.Generator:
    """Return a Philox-backed generator for the key ``(seed, run_id, tag)``.

    Parameters
    ----------
    seed : int
        Experiment-level master seed.
    run_id : int
        Index of the run within an experiment.
    tag : str or int
        Purpose tag, e.g. ``"env"``, ``"policy"`` or ``"init"``.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(run_id), tag_to_int(tag)])
    return np.random.Generator(np.random.Philox(ss))


_MASK = (1 << 64) - 1


class SplitMix64:
    """Pure-Python SplitMix64 generator.

    It mirrors the generator used inside the compiled kernels draw for draw,
    so the compiled and fallback kernels produce bit-identical results.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def randint(self, n: int) -> int:
        """Integer in ``[0, n)`` (multiply-shift, negligible bias for small n)."""
        return int(self.uniform() * n)

    def normal(self) -> float:
        """Standard normal via Box-Muller (one value per call, no caching)."""
        u1 = self.uniform()
        u2 = self.uniform()
        if u1 < 1e-300:
            u1 = 1e-300
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def gamma(self, shape: float) -> float:
        """Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1."""
        if shape < 1.0:
            g = self.gamma(shape + 1.0)
            u = self.uniform()
            if u < 1e-300:
                u = 1e-300
            return g * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.uniform()
            if u < 1e-300:
                u = 1e-300
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    # numpy-Generator-compatible subset used by the exploration rules
    def random(self) -> float:
        return self.uniform()

    def integers(self, n: int) -> int:
        return self.randint(n)

    def standard_normal(self) -> float:
        return self.normal()

    def beta(self, a, b):
        """Beta draw. Arrays of parameters give one draw per entry, in order."""
        if np.ndim(a) == 0 and np.ndim(b) == 0:
            return self._beta1(float(a), float(b))
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        return np.array([self._beta1(float(x), float(y)) for x, y in zip(a.ravel(), b.ravel())]).reshape(a.shape)

    def _beta1(self, a: float, b: float) -> float:
        x = self.gamma(a)
        y = self.gamma(b)
        return x / (x + y)
