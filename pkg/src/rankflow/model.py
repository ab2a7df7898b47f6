"""System parameters, rank resolution and spacings.

Particles and rank slots are 0-based throughout the library. A rank
permutation ``order`` maps rank slot ``j`` to the particle occupying it, so
``positions[order]`` is the ranked configuration.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, NonPositiveSigma, UnorderedInitial


@dataclass(frozen=True)
class SystemSpec:
    """Finite rank-based system: drift and volatility per rank, named start."""

    drifts: tuple[float, ...]
    sigmas: tuple[float, ...]
    initial: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "drifts", tuple(float(v) for v in self.drifts))
        object.__setattr__(self, "sigmas", tuple(float(v) for v in self.sigmas))
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))

    @property
    def n(self) -> int:
        return len(self.initial)

    @property
    def sigmas2(self) -> np.ndarray:
        return np.asarray(self.sigmas) ** 2


def validate_spec(spec: SystemSpec, *, allow_ties: bool = False) -> SystemSpec:
    """Check lengths, positivity of volatilities and ordering of the start.

    ``allow_ties`` accepts a nondecreasing start; tied particles are then
    ranked by index, which is how the simulators resolve them.
    """
    n = spec.n
    if n < 1 or len(spec.drifts) != n or len(spec.sigmas) != n:
        raise LengthMismatch(
            f"drifts ({len(spec.drifts)}), sigmas ({len(spec.sigmas)}) and "
            f"initial ({n}) must have the same positive length"
        )
    for j, s in enumerate(spec.sigmas):
        if not s > 0:
            raise NonPositiveSigma(f"sigma at rank {j + 1} is {s}; must be > 0")
    x = spec.initial
    for i in range(n - 1):
        if x[i] > x[i + 1] or (x[i] == x[i + 1] and not allow_ties):
            raise UnorderedInitial(
                f"initial positions must be {'nondecreasing' if allow_ties else 'strictly increasing'}; "
                f"X_{i + 1}(0)={x[i]}, X_{i + 2}(0)={x[i + 1]}"
            )
    return spec


def identity(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.intp)


def rank_resolve(positions: Sequence[float], previous: Sequence[int] | None = None) -> np.ndarray:
    """Order particles by position, breaking exact ties by ``previous``.

    ``previous`` defaults to the identity, i.e. ties follow particle index.
    Ties are bit-identical positions only; no tolerance is applied.
    """
    x = np.asarray(positions, dtype=float)
    prev = identity(len(x)) if previous is None else np.asarray(previous, dtype=np.intp)
    if prev.shape != x.shape:
        raise LengthMismatch(f"previous has {prev.size} entries, positions has {x.size}")
    return prev[np.argsort(x[prev], kind="stable")]


def rank_resolve_batch(positions: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Row-wise :func:`rank_resolve` for arrays of shape (paths, n)."""
    reordered = np.take_along_axis(positions, previous, axis=1)
    return np.take_along_axis(previous, np.argsort(reordered, axis=1, kind="stable"), axis=1)


def inverse(order: np.ndarray) -> np.ndarray:
    """Rank slot of each particle, given slot -> particle ``order`` (row-wise)."""
    order = np.asarray(order)
    return np.argsort(order, axis=-1, kind="stable")


def spacings(positions: Sequence[float], ranks: Sequence[int]) -> np.ndarray:
    """Gaps between consecutive ranked positions (length n-1)."""
    x = np.asarray(positions, dtype=float)
    ranked = x[np.asarray(ranks, dtype=np.intp)]
    return np.diff(ranked)
