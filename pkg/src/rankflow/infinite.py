"""Countably infinite systems with a constant coefficient tail.

Only the lowest ``n(k)`` particles interact (rank-based, as a finite system);
every particle above them moves as an independent Brownian motion with the tail
drift and volatility. When a free particle reaches the block's maximum on the
grid, the block grows to swallow it. Free particles are never simulated
step-by-step: their grid values are evaluated in closed form from their own
noise stream, so activating a particle early or late does not change its past.

Particles far above the block are not materialized at all. The window is
chosen so that none of them can come within reach of the block except on an
event of probability at most ``TRUNCATION_PROB`` per particle; the realized
union bound over all non-materialized particles is returned with every run.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtri, log_ndtr

from . import model
from .errors import (
    GrowthViolation,
    LengthMismatch,
    NonPositiveGamma1,
    NonPositiveSigma,
    UnorderedInitial,
    WindowTooSmall,
)
from .model import rank_resolve
from .noise import stream
from .sim import MAX_STEPS, Trajectory, n_steps, triple_radius

TRUNCATION_PROB = 1e-12
MAX_MATERIALIZED = 100_000


@dataclass(frozen=True)
class InfiniteSpec:
    """Coefficients ``delta_1..delta_M``, ``sigma_1..sigma_M``; every rank
    beyond ``M`` reuses ``delta_M`` and ``sigma_M``. ``initial_fn`` maps the
    1-based particle label ``i`` to ``X_i(0)``."""

    M: int
    head_drifts: tuple[float, ...]
    head_sigmas: tuple[float, ...]
    gamma1: float
    gamma2: float
    initial_fn: Callable[[int], float]

    @property
    def tail_drift(self) -> float:
        return float(self.head_drifts[-1])

    @property
    def tail_sigma(self) -> float:
        return float(self.head_sigmas[-1])

    def drifts(self, m: int) -> np.ndarray:
        d = np.full(m, self.tail_drift)
        k = min(m, self.M)
        d[:k] = self.head_drifts[:k]
        return d

    def sigmas(self, m: int) -> np.ndarray:
        s = np.full(m, self.tail_sigma)
        k = min(m, self.M)
        s[:k] = self.head_sigmas[:k]
        return s

    def initial(self, m: int) -> np.ndarray:
        return np.array([float(self.initial_fn(i)) for i in range(1, m + 1)])


def validate_infinite(spec: InfiniteSpec, horizon_index: int) -> InfiniteSpec:
    if spec.M < 1 or len(spec.head_drifts) != spec.M or len(spec.head_sigmas) != spec.M:
        raise LengthMismatch("head_drifts and head_sigmas must both have length M >= 1")
    if horizon_index < spec.M:
        raise ValueError("horizon_index must be at least M")
    for j, s in enumerate(spec.head_sigmas):
        if not s > 0:
            raise NonPositiveSigma(f"sigma at rank {j + 1} is {s}; must be > 0")
    if not spec.gamma1 > 0:
        raise NonPositiveGamma1(f"gamma1 is {spec.gamma1}; must be > 0")
    x = spec.initial(horizon_index)
    for i in range(1, horizon_index + 1):
        if x[i - 1] < spec.gamma1 * i + spec.gamma2:
            raise GrowthViolation(
                f"X_{i}(0)={x[i - 1]} < gamma1*{i} + gamma2={spec.gamma1 * i + spec.gamma2}"
            )
        if i > 1 and not x[i - 2] < x[i - 1]:
            raise UnorderedInitial(f"X_{i - 1}(0) >= X_{i}(0)")
    return spec


@dataclass
class ActiveSetRecord:
    kappas: list[float] = field(default_factory=lambda: [0.0])
    sizes: list[int] = field(default_factory=list)
    steps: list[int] = field(default_factory=lambda: [0])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "kappa_k", "n_k"])
            for k, (kap, m) in enumerate(zip(self.kappas, self.sizes)):
                w.writerow([k, repr(float(kap)), m])


@dataclass
class InfiniteRun:
    """All materialized particles on the grid, with the block size per step."""

    times: np.ndarray
    named: np.ndarray
    block_size: np.ndarray
    record: ActiveSetRecord
    noise: np.ndarray
    initial: np.ndarray
    drift_tail: float
    sigma_tail: float
    dt: float
    seed: int | None
    truncation_bound: float
    halted: bool = False

    @property
    def n_materialized(self) -> int:
        return self.named.shape[1]

    def block_trajectory(self, m: int | None = None, upto: int | None = None) -> Trajectory:
        """First ``m`` particles (default: final block) as a :class:`Trajectory`."""
        m = int(self.block_size[-1]) if m is None else m
        last = len(self.times) - 1 if upto is None else upto
        named = self.named[: last + 1, :m]
        ranks = np.empty(named.shape, dtype=np.intp)
        order = rank_resolve(named[0])
        for k in range(last + 1):
            order = rank_resolve(named[k], order)
            ranks[k] = order
        gaps = np.diff(np.take_along_axis(named, ranks, axis=1), axis=1)
        return Trajectory(
            times=self.times[: last + 1], named=named, ranks=ranks, spacings=gaps,
            noise=self.noise[:last, :m], seed=self.seed, dt=self.dt, halted=self.halted,
        )


def _reach(spec: InfiniteSpec, T: float) -> float:
    """Distance a free tail particle can fall in time T outside an event of
    probability ``TRUNCATION_PROB`` (reflection principle)."""
    z = -float(ndtri(TRUNCATION_PROB / 2))
    return abs(spec.tail_drift) * T + z * spec.tail_sigma * math.sqrt(T)


def _union_bound(spec: InfiniteSpec, first: int, level: float, T: float) -> float:
    """Sum over labels ``i >= first`` of P(free particle i dips to ``level``)."""
    s = spec.tail_sigma * math.sqrt(T)
    total = 0.0
    i = first
    while True:
        a = float(spec.initial_fn(i)) - level - abs(spec.tail_drift) * T
        if a <= 0:
            return 1.0
        term = 2.0 * math.exp(float(log_ndtr(-a / s)))
        total += term
        if term < 1e-300 or (term < total * 1e-17 and i - first > 10):
            return min(total, 1.0)
        i += 1


def materialized_count(spec: InfiniteSpec, T: float, safety_margin: float) -> int:
    r = _reach(spec, T)
    top = max(float(spec.initial_fn(i)) for i in range(1, spec.M + 1)) + r
    m = spec.M + 1
    while float(spec.initial_fn(m + 1)) - r <= top + safety_margin:
        m += 1
        if m > MAX_MATERIALIZED:
            raise WindowTooSmall("materialization window exceeds MAX_MATERIALIZED")
    return m


def simulate_infinite(
    spec: InfiniteSpec,
    T: float,
    dt: float,
    seed: int,
    safety_margin: float,
    *,
    epsilon: float | None = None,
    path: int = 0,
    noise: Callable[[int, int], np.ndarray] | None = None,
    max_steps: int = MAX_STEPS,
) -> InfiniteRun:
    """Simulate the infinite system on ``[0, T]``.

    ``noise(label0, steps)`` may replace the RNG; it returns the increments of
    the 0-based particle ``label0``. ``epsilon`` halts the run at triple
    proximity inside the block (``None`` disables the check).
    """
    if not safety_margin > 0:
        raise ValueError("safety_margin must be positive")
    steps = n_steps(T, dt, max_steps)
    n_mat = materialized_count(spec, T, safety_margin)
    validate_infinite(spec, n_mat)
    first_missing_low = float(spec.initial_fn(n_mat + 1)) - _reach(spec, T)

    if noise is None:
        xi = np.stack([stream(seed, path, i).standard_normal(steps) for i in range(n_mat)], axis=1)
    else:
        xi = np.stack([np.asarray(noise(i, steps), dtype=float) for i in range(n_mat)], axis=1)
    x0 = spec.initial(n_mat)
    sqdt = math.sqrt(dt)
    d_tail, s_tail = spec.tail_drift, spec.tail_sigma

    named = np.empty((steps + 1, n_mat))
    block_size = np.empty(steps + 1, dtype=np.intp)
    named[0] = x0
    x = x0.copy()
    cum = np.zeros(n_mat)  # running sums of increments, sequential order
    m = spec.M
    order = model.identity(m)
    drifts, sigmas = spec.drifts(m), spec.sigmas(m)
    record = ActiveSetRecord(sizes=[m])
    running_max = float(x[:m].max())
    halted = False

    def grow(k: int) -> None:
        nonlocal m, order, drifts, sigmas
        new_m = m
        while True:
            top = x[:new_m].max()
            below = np.flatnonzero(x[new_m:] <= top)
            if below.size == 0:
                break
            new_m = new_m + int(below[-1]) + 1
        if new_m == m:
            return
        if new_m >= n_mat:
            raise WindowTooSmall("active block reached the end of the materialized window")
        order = rank_resolve(x[:new_m], np.concatenate((order, np.arange(m, new_m))))
        m = new_m
        drifts, sigmas = spec.drifts(m), spec.sigmas(m)
        record.kappas.append(k * dt)
        record.sizes.append(m)
        record.steps.append(k)

    def corner_hit() -> bool:
        if epsilon is None or m < 3:
            return False
        gaps = np.diff(x[:m][order])
        return bool(triple_radius(gaps)[0] <= epsilon)

    block_size[0] = m
    last = steps
    if corner_hit():
        halted, last = True, 0
    k = 0
    while not halted and k < steps:
        e = xi[k]
        rank_of = model.inverse(order)
        xb = x[:m] + (drifts[rank_of] * dt + sigmas[rank_of] * sqdt * e[:m])
        order = rank_resolve(xb, order)
        cum += e
        k += 1
        t = k * dt
        x[m:] = x0[m:] + d_tail * t + s_tail * (sqdt * cum[m:])
        x[:m] = xb
        grow(k)
        running_max = max(running_max, float(x[:m].max()))
        if running_max >= first_missing_low:
            raise WindowTooSmall(
                f"block maximum {running_max} came within reach of particle {n_mat + 1}; "
                f"increase safety_margin"
            )
        named[k] = x
        block_size[k] = m
        if corner_hit():
            halted, last = True, k
    bound = _union_bound(spec, n_mat + 1, running_max, T)
    return InfiniteRun(
        times=np.arange(last + 1) * dt,
        named=named[: last + 1],
        block_size=block_size[: last + 1],
        record=record,
        noise=xi[:last],
        initial=x0,
        drift_tail=d_tail,
        sigma_tail=s_tail,
        dt=dt,
        seed=seed,
        truncation_bound=bound,
        halted=halted,
    )


def linear_initial(slope: float, offset: float) -> Callable[[int], float]:
    """``i -> slope * i + offset``."""
    def f(i: int) -> float:
        return slope * i + offset
    return f
