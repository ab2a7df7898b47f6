"""Concavity conditions on the variance sequence and the spectral ledger.

The ledger quantities for a variance sequence ``s = (sigma_1^2, ..., sigma_n^2)``:

* ``M0`` -- trace of the diffusion matrix of the centered process,
  ``(n-1)/n * sum(s)``;
* ``M1`` -- largest eigenvalue of ``P diag(s) P`` where ``P`` projects onto
  the hyperplane ``sum(x) = 0``;
* ``M2`` -- the closed-form bound ``(n-1)/n * C + c/n`` with ``C`` the largest
  and ``c`` the second-largest entry (counted with multiplicity).

No triple collisions is guaranteed whenever ``M0 > 2 * M1``.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NonPositiveEntry, TooFewParticles


class Classification(str, enum.Enum):
    NO_TRIPLE_COLLISIONS = "NoTripleCollisions"
    TRIPLE_COLLISIONS_POSITIVE_PROBABILITY = "TripleCollisionsPositiveProbability"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class ConditionReport:
    sigmas2: tuple[float, ...]
    infinite: bool
    condition1: bool
    condition2: bool
    M0: float | None
    M1: float | None
    M2: float | None
    C: float
    c: float | None
    de_blassie: bool | None
    classification: Classification

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigmas2"] = list(self.sigmas2)
        d["classification"] = self.classification.value
        return d


def is_concave(seq: Sequence[float]) -> bool:
    a = np.asarray(seq, dtype=float)
    if a.size <= 2:
        return True
    # 2*a[i+1] >= a[i] + a[i+2] avoids the rounding of a division
    return bool(np.all(2.0 * a[1:-1] >= a[:-2] + a[2:]))


def _positive(sigmas2: Sequence[float]) -> np.ndarray:
    s = np.asarray(sigmas2, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise NonPositiveEntry("variance sequence must be a non-empty 1-d sequence")
    bad = np.flatnonzero(~(s > 0))
    if bad.size:
        raise NonPositiveEntry(f"entry {bad[0] + 1} is {s[bad[0]]}; variances must be > 0")
    return s


def _at_least(s: np.ndarray, n_min: int) -> None:
    if s.size < n_min:
        raise TooFewParticles(f"need at least {n_min} particles, got {s.size}")


def check_condition1(sigmas2: Sequence[float], infinite: bool = False) -> bool:
    s = _positive(sigmas2)
    if infinite:
        s = np.concatenate((s, s[-1:]))
    return is_concave(s)


def check_condition2(sigmas2: Sequence[float], infinite: bool = False) -> bool:
    """Concavity with a zero prepended (and appended, for finite systems).

    For an infinite system pass the head through the stabilisation index M;
    the constant tail is represented by one repeated copy of the last entry,
    after which every further check holds with equality.
    """
    s = _positive(sigmas2)
    if infinite:
        return is_concave(np.concatenate(([0.0], s, s[-1:])))
    return is_concave(np.concatenate(([0.0], s, [0.0])))


def trace_M0(sigmas2: Sequence[float]) -> float:
    s = _positive(sigmas2)
    _at_least(s, 2)
    n = s.size
    return (n - 1) / n * float(np.sum(s))


def projected_diffusion(sigmas2: Sequence[float]) -> np.ndarray:
    """The symmetric matrix ``P diag(s) P`` with ``P = I - 11'/n``."""
    s = np.asarray(sigmas2, dtype=float)
    n = s.size
    p = np.eye(n) - 1.0 / n
    return (p * s) @ p


def max_eig_M1(sigmas2: Sequence[float]) -> float:
    s = _positive(sigmas2)
    _at_least(s, 2)
    # full divide-and-conquer solve: the subset drivers (evr, evx) can fail
    # to converge on the highly degenerate equal-variance spectrum
    vals = scipy.linalg.eigh(projected_diffusion(s), eigvals_only=True, driver="evd")
    return float(vals[-1])


def top_two(sigmas2: Sequence[float]) -> tuple[float, float]:
    """Largest and second-largest entries, counting multiplicity."""
    s = np.sort(_positive(sigmas2))
    _at_least(s, 2)
    return float(s[-1]), float(s[-2])


def bound_M2(sigmas2: Sequence[float]) -> float:
    C, c = top_two(sigmas2)
    n = len(sigmas2)
    return (n - 1) / n * C + c / n


def de_blassie_holds(sigmas2: Sequence[float]) -> tuple[bool, float, float]:
    """Return ``(M0 > 2*M1, M0, M1)``."""
    s = _positive(sigmas2)
    _at_least(s, 3)
    m0 = trace_M0(s)
    m1 = max_eig_M1(s)
    return m0 > 2.0 * m1, m0, m1


def classify(sigmas2: Sequence[float], infinite: bool = False) -> ConditionReport:
    s = _positive(sigmas2)
    cond1 = check_condition1(s, infinite=infinite)
    cond2 = check_condition2(s, infinite=infinite)
    if cond2 or s.size < 3:
        # fewer than three particles cannot collide three at a time
        verdict = Classification.NO_TRIPLE_COLLISIONS
    elif not cond1:
        verdict = Classification.TRIPLE_COLLISIONS_POSITIVE_PROBABILITY
    else:
        verdict = Classification.INDETERMINATE

    m0 = m1 = m2 = c = None
    deb = None
    if s.size >= 2:
        m0, m1, m2 = trace_M0(s), max_eig_M1(s), bound_M2(s)
        c = top_two(s)[1]
    if s.size >= 3:
        deb = m0 > 2.0 * m1
    return ConditionReport(
        sigmas2=tuple(float(v) for v in s),
        infinite=infinite,
        condition1=cond1,
        condition2=cond2,
        M0=m0,
        M1=m1,
        M2=m2,
        C=float(np.max(s)),
        c=c,
        de_blassie=deb,
        classification=verdict,
    )
