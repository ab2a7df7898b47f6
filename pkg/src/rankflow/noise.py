"""Counter-based Gaussian noise streams.

Each (seed, path, particle) triple keys its own Philox stream; the i-th draw of
that stream is the standard-normal increment for step i. A particle's noise is
therefore independent of how many other particles or paths are simulated, of
the batch it lands in, and of the number of worker threads.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, path: int, particle: int) -> np.random.Generator:
    if not (0 <= path < 1 << 32 and 0 <= particle < 1 << 32):
        raise ValueError("path and particle indices must fit in 32 bits")
    key = [int(seed) & _MASK64, (int(path) << 32) | int(particle)]
    return np.random.Generator(np.random.Philox(key=key))


class NoiseSource:
    """Draws blocks of increments of shape (paths, steps, particles)."""

    def __init__(self, seed: int, paths: Sequence[int], particles: Sequence[int] | int):
        if isinstance(particles, (int, np.integer)):
            particles = range(int(particles))
        self.seed = int(seed)
        self.paths = [int(p) for p in paths]
        self.particles = [int(i) for i in particles]
        self._gens = [[stream(seed, p, i) for i in self.particles] for p in self.paths]

    def add_particles(self, particles: Sequence[int]) -> None:
        """Open streams for further particles, starting at their step 0."""
        for i in particles:
            self.particles.append(int(i))
            for p, row in zip(self.paths, self._gens):
                row.append(stream(self.seed, p, i))

    def take(self, steps: int) -> np.ndarray:
        out = np.empty((len(self.paths), steps, len(self.particles)))
        for a, row in enumerate(self._gens):
            for b, g in enumerate(row):
                out[a, :, b] = g.standard_normal(steps)
        return out


class ArrayNoise:
    """Replays a fixed (paths, steps, particles) array; used to force noise."""

    def __init__(self, noise: np.ndarray):
        noise = np.asarray(noise, dtype=float)
        if noise.ndim == 2:
            noise = noise[None]
        self._noise = noise
        self._pos = 0

    def take(self, steps: int) -> np.ndarray:
        block = self._noise[:, self._pos:self._pos + steps]
        if block.shape[1] != steps:
            raise ValueError("forced noise array is shorter than the time grid")
        self._pos += steps
        return block
