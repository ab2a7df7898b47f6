"""Finite-system path simulation.

Two schemes share the same grid, noise streams and output type:

* :func:`simulate_path` -- explicit Euler on the rank-based system, each
  particle taking the coefficients of its rank at the start of the step;
* :func:`event_driven_path` -- the stitched construction: particles move
  freely with the coefficients of their slot, adjacent pairs in the active
  set evolve as two-particle rank-based systems, and the slot permutation and
  active set are only recomputed at discrete stopping times (a gap outside the
  active set reaching zero).

Both are thin wrappers over batched engines that advance many paths at once;
the engines are also what :mod:`rankflow.stats` uses for Monte Carlo.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model
from .errors import (
    IndexOutOfRange,
    StepBudgetExceeded,
    TooFewParticles,
    UnsupportedDimension,
)
from .model import SystemSpec, rank_resolve, rank_resolve_batch, validate_spec
from .noise import ArrayNoise, NoiseSource

MAX_STEPS = 10_000_000
NOISE_BLOCK = 1024


@dataclass
class Trajectory:
    """A simulated path on a uniform grid.

    ``ranks[k]`` maps rank slot -> particle (0-based) at ``times[k]``,
    ``spacings[k, j]`` is the gap between slots ``j`` and ``j + 1`` and
    ``noise[k]`` holds the standard-normal increments used for step
    ``k -> k + 1``. A path that stopped early (triple proximity) has fewer
    than ``round(T / dt) + 1`` rows and ``halted`` set.
    """

    times: np.ndarray
    named: np.ndarray
    ranks: np.ndarray
    spacings: np.ndarray
    noise: np.ndarray
    seed: int | None
    path: int = 0
    dt: float = 0.0
    halted: bool = False

    @property
    def n(self) -> int:
        return self.named.shape[1]

    @property
    def ranked(self) -> np.ndarray:
        return np.take_along_axis(self.named, self.ranks, axis=1)


@dataclass(frozen=True)
class StoppingEvent:
    """One discrete stopping time of the event-driven scheme.

    ``active`` lists the lower slots of the adjacent pairs evolving as
    two-particle systems after this time; ``order`` is the slot permutation.
    """

    step: int
    time: float
    active: tuple[int, ...]
    order: tuple[int, ...]


@dataclass(frozen=True)
class CollisionRecord:
    pair_events: list[tuple[int, int]] = field(default_factory=list)
    triple_first_hit: tuple[int, int, float] | None = None
    epsilon: float | None = None


@dataclass(frozen=True)
class LocalTimeEstimate:
    gap: int
    estimate: float
    method: str
    epsilon: float | None = None


def n_steps(T: float, dt: float, max_steps: int = MAX_STEPS) -> int:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    k = int(round(T / dt))
    if k < 1 or abs(k * dt - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    if k > max_steps:
        raise StepBudgetExceeded(f"{k} steps requested, budget is {max_steps}")
    return k


def euler_step(positions, previous_ranks, spec: SystemSpec, dt: float, xi):
    """One explicit Euler step; returns ``(new_positions, new_ranks)``."""
    x = np.asarray(positions, dtype=float)
    order = rank_resolve(x, previous_ranks)
    rank_of = model.inverse(order)
    drifts = np.asarray(spec.drifts)[rank_of]
    sigmas = np.asarray(spec.sigmas)[rank_of]
    new = x + (drifts * dt + sigmas * math.sqrt(dt) * np.asarray(xi, dtype=float))
    return new, rank_resolve(new, order)


def triple_radius(gaps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest corner distance ``hypot(Y_j, Y_j+1)`` along the last axis.

    Returns ``(radius, j)``; needs at least two gaps.
    """
    r = np.hypot(gaps[..., :-1], gaps[..., 1:])
    j = np.argmin(r, axis=-1)
    return np.take_along_axis(r, j[..., None], axis=-1)[..., 0], j


@dataclass
class BatchResult:
    """Per-path summaries from a batched run (leading axis = paths)."""

    final: np.ndarray
    order: np.ndarray
    gap_martingale: np.ndarray
    occupation: np.ndarray | None = None
    min_radius: np.ndarray | None = None
    halted_step: np.ndarray | None = None
    n_events: np.ndarray | None = None
    named: np.ndarray | None = None
    ranks: np.ndarray | None = None
    noise: np.ndarray | None = None
    events: list[list[StoppingEvent]] | None = None


class _Recorder:
    def __init__(self, n_paths: int, steps: int, n: int, enabled: bool):
        self.enabled = enabled
        if enabled:
            self.named = np.empty((n_paths, steps + 1, n))
            self.ranks = np.empty((n_paths, steps + 1, n), dtype=np.intp)
            self.noise = np.empty((n_paths, steps, n))

    def put(self, k: int, x: np.ndarray, order: np.ndarray, xi: np.ndarray | None = None):
        if self.enabled:
            self.named[:, k] = x
            self.ranks[:, k] = order
            if xi is not None:
                self.noise[:, k - 1] = xi


def _gap_martingale_increment(xi, order, sigmas, sqdt):
    ranked_xi = np.take_along_axis(xi, order, axis=1)
    term = sigmas * sqdt * ranked_xi
    return term[:, 1:] - term[:, :-1]


def euler_batch(
    x0: np.ndarray,
    drifts: Sequence[float],
    sigmas: Sequence[float],
    dt: float,
    steps: int,
    noise,
    *,
    record: bool = False,
    occupation_eps: float | None = None,
    track_triples: bool = False,
) -> BatchResult:
    """Advance ``x0`` (paths, n) by ``steps`` Euler steps.

    Always accumulates, per gap, the discrete martingale part
    ``sum_k sqrt(dt) (sigma_{j+1} xi_{slot j+1} - sigma_j xi_{slot j})`` using
    the ranks at the start of each step.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    n_paths, n = x.shape
    drifts = np.asarray(drifts, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    sqdt = math.sqrt(dt)
    order = rank_resolve_batch(x, np.broadcast_to(model.identity(n), x.shape).copy())
    mart = np.zeros((n_paths, max(n - 1, 0)))
    occ = np.zeros((n_paths, n - 1), dtype=np.int64) if occupation_eps is not None else None
    want_r = track_triples and n >= 3
    min_r = np.full(n_paths, np.inf) if want_r else None
    rec = _Recorder(n_paths, steps, n, record)
    rec.put(0, x, order)

    def observe(x, order, k):
        if occ is None and not want_r:
            return
        gaps = np.diff(np.take_along_axis(x, order, axis=1), axis=1)
        if occ is not None and k < steps:
            occ[...] += (gaps >= 0) & (gaps <= occupation_eps)
        if want_r:
            np.minimum(min_r, triple_radius(gaps)[0], out=min_r)

    observe(x, order, 0)
    k = 0
    while k < steps:
        block = noise.take(min(NOISE_BLOCK, steps - k))
        for b in range(block.shape[1]):
            xi = block[:, b]
            rank_of = model.inverse(order)
            mart += _gap_martingale_increment(xi, order, sigmas, sqdt)
            x = x + (drifts[rank_of] * dt + sigmas[rank_of] * sqdt * xi)
            order = rank_resolve_batch(x, order)
            k += 1
            rec.put(k, x, order, xi)
            observe(x, order, k)
    out = BatchResult(final=x, order=order, gap_martingale=mart, occupation=occ, min_radius=min_r)
    if record:
        out.named, out.ranks, out.noise = rec.named, rec.ranks, rec.noise
    return out


def _noise_for(seed, paths, n, noise):
    if noise is not None:
        return ArrayNoise(noise)
    return NoiseSource(seed, paths, n)


def _trajectory(spec_n, res: BatchResult, steps: int, dt: float, seed, path, halted_at=None):
    end = steps if halted_at is None else halted_at
    named = res.named[0, : end + 1]
    ranks = res.ranks[0, : end + 1]
    gaps = np.diff(np.take_along_axis(named, ranks, axis=1), axis=1)
    return Trajectory(
        times=np.arange(end + 1) * dt,
        named=named,
        ranks=ranks,
        spacings=gaps,
        noise=res.noise[0, :end],
        seed=seed,
        path=path,
        dt=dt,
        halted=halted_at is not None,
    )


def simulate_path(
    spec: SystemSpec,
    T: float,
    dt: float,
    seed: int,
    *,
    path: int = 0,
    noise: np.ndarray | None = None,
    max_steps: int = MAX_STEPS,
) -> Trajectory:
    """Baseline Euler path. ``noise`` (steps, n) overrides the RNG streams."""
    validate_spec(spec, allow_ties=True)
    steps = n_steps(T, dt, max_steps)
    res = euler_batch(
        np.asarray(spec.initial)[None], spec.drifts, spec.sigmas, dt, steps,
        _noise_for(seed, [path], spec.n, noise), record=True,
    )
    return _trajectory(spec.n, res, steps, dt, seed, path)


# -- event-driven construction ------------------------------------------------

def _pair_sorted(pi: np.ndarray, active: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``pi`` with each active adjacent pair put in position order.

    Active pairs are disjoint, so the swaps never interfere.
    """
    if pi.shape[1] < 2:
        return pi
    lo, hi = pi[:, :-1], pi[:, 1:]
    swap = active & (np.take_along_axis(x, lo, axis=1) > np.take_along_axis(x, hi, axis=1))
    if not swap.any():
        return pi
    cur = pi.copy()
    cur[:, :-1] = np.where(swap, hi, cur[:, :-1])
    cur[:, 1:] = np.where(swap, lo, cur[:, 1:])
    return cur


def _new_active(cur: np.ndarray, crossed: np.ndarray, new_order: np.ndarray) -> np.ndarray:
    """Active set after a stopping time for one path.

    Every gap outside the old active set that closed contributes the slots
    now separating its two particles; overlapping pairs are thinned greedily
    from the bottom so the active pairs stay disjoint.
    """
    n = cur.size
    slot = np.empty(n, dtype=np.intp)
    slot[new_order] = np.arange(n)
    wanted = set()
    for j in np.flatnonzero(crossed):
        a, b = sorted((slot[cur[j]], slot[cur[j + 1]]))
        wanted.update(range(a, max(b, a + 1)))
    active = np.zeros(n - 1, dtype=bool)
    last = -2
    for j in sorted(wanted):
        if j > last + 1:
            active[j] = True
            last = j
    return active


def event_batch(
    x0: np.ndarray,
    drifts: Sequence[float],
    sigmas: Sequence[float],
    dt: float,
    steps: int,
    noise,
    *,
    epsilon: float | None,
    record: bool = False,
) -> BatchResult:
    """Batched event-driven scheme; paths halt at triple proximity if ``epsilon``."""
    x = np.array(x0, dtype=float, ndmin=2)
    n_paths, n = x.shape
    drifts = np.asarray(drifts, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    sqdt = math.sqrt(dt)
    pi = rank_resolve_batch(x, np.broadcast_to(model.identity(n), x.shape).copy())
    active = np.zeros((n_paths, max(n - 1, 0)), dtype=bool)
    cur = pi
    halted_step = np.full(n_paths, -1, dtype=np.int64)
    n_events = np.zeros(n_paths, dtype=np.int64)
    mart = np.zeros((n_paths, max(n - 1, 0)))
    events: list[list[StoppingEvent]] = [[] for _ in range(n_paths)]
    check_triples = epsilon is not None and n >= 3
    rec = _Recorder(n_paths, steps, n, record)
    rec.put(0, x, cur)

    def halt_check(k):
        if not check_triples:
            return
        gaps = np.diff(np.take_along_axis(x, cur, axis=1), axis=1)
        hit = (triple_radius(gaps)[0] <= epsilon) & (halted_step < 0)
        halted_step[hit] = k

    halt_check(0)
    k = 0
    while k < steps:
        block = noise.take(min(NOISE_BLOCK, steps - k))
        for b in range(block.shape[1]):
            xi = block[:, b]
            live = (halted_step < 0)[:, None]
            # slot j of the pair-sorted order carries rank-j coefficients
            rank_of = model.inverse(cur)
            mart += np.where(live, _gap_martingale_increment(xi, cur, sigmas, sqdt), 0.0)
            step = drifts[rank_of] * dt + sigmas[rank_of] * sqdt * xi
            x = np.where(live, x + step, x)
            k += 1
            cur = _pair_sorted(pi, active, x)
            if n >= 2:
                gaps = np.diff(np.take_along_axis(x, cur, axis=1), axis=1)
                crossed = (gaps <= 0) & ~active & live
                hit_paths = np.flatnonzero(crossed.any(axis=1))
                if hit_paths.size:
                    new_order = rank_resolve_batch(x[hit_paths], cur[hit_paths])
                    for row, p in enumerate(hit_paths):
                        act = _new_active(cur[p], crossed[p], new_order[row])
                        active[p] = act
                        n_events[p] += 1
                        events[p].append(StoppingEvent(
                            step=k, time=k * dt,
                            active=tuple(int(j) for j in np.flatnonzero(act)),
                            order=tuple(int(i) for i in new_order[row]),
                        ))
                    pi = pi.copy()
                    pi[hit_paths] = new_order
                    cur = _pair_sorted(pi, active, x)
            rec.put(k, x, cur, xi)
            halt_check(k)
    out = BatchResult(
        final=x, order=cur, gap_martingale=mart, halted_step=halted_step,
        n_events=n_events, events=events,
    )
    if record:
        out.named, out.ranks, out.noise = rec.named, rec.ranks, rec.noise
    return out


def event_driven_path(
    spec: SystemSpec,
    T: float,
    dt_fine: float,
    seed: int,
    *,
    epsilon: float | None,
    path: int = 0,
    noise: np.ndarray | None = None,
    max_steps: int = MAX_STEPS,
) -> tuple[Trajectory, list[StoppingEvent]]:
    """Event-driven path and its stopping-time log.

    ``epsilon`` is the triple-proximity radius at which the run halts; pass
    ``None`` explicitly to run to ``T`` regardless.
    """
    validate_spec(spec, allow_ties=True)
    steps = n_steps(T, dt_fine, max_steps)
    res = event_batch(
        np.asarray(spec.initial)[None], spec.drifts, spec.sigmas, dt_fine, steps,
        _noise_for(seed, [path], spec.n, noise), epsilon=epsilon, record=True,
    )
    h = int(res.halted_step[0])
    traj = _trajectory(spec.n, res, steps, dt_fine, seed, path, None if h < 0 else h)
    log = [e for e in res.events[0] if h < 0 or e.step <= h]
    return traj, log


# -- path functionals ----------------------------------------------------------

def detect_pair_collisions(traj: Trajectory, j_range: Sequence[int] | None = None) -> CollisionRecord:
    """Steps ``k`` and gaps ``j`` where the gap between the particles in slots
    ``j, j+1`` at step ``k-1`` became negative at step ``k`` (before
    re-ranking), or closed to exactly zero from a positive value.
    """
    n = traj.n
    if n < 2 or len(traj.times) < 2:
        return CollisionRecord()
    prev = traj.ranks[:-1]
    moved = np.take_along_axis(traj.named[1:], prev, axis=1)
    pre_gaps = np.diff(moved, axis=1)
    before = traj.spacings[:-1]
    hit = (pre_gaps < 0) | ((pre_gaps == 0) & (before > 0))
    if j_range is not None:
        mask = np.zeros(n - 1, dtype=bool)
        mask[list(j_range)] = True
        hit &= mask
    ks, js = np.nonzero(hit)
    return CollisionRecord(pair_events=[(int(k) + 1, int(j)) for k, j in zip(ks, js)])


def detect_triple_proximity(traj: Trajectory, epsilon: float) -> CollisionRecord:
    if traj.n < 3:
        raise TooFewParticles("triple proximity needs at least 3 particles")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    r, j = triple_radius(traj.spacings)
    hits = np.flatnonzero(r <= epsilon)
    if hits.size == 0:
        return CollisionRecord(epsilon=epsilon)
    k = int(hits[0])
    return CollisionRecord(triple_first_hit=(k, int(j[k]), float(r[k])), epsilon=epsilon)


def tanaka_regulator(traj: Trajectory, spec: SystemSpec) -> np.ndarray:
    """Running local-time residual ``Y(t_k) - Y(0) - mu t_k - sum nu dbeta``
    for a two-particle path, one value per grid point."""
    if traj.n != 2:
        raise UnsupportedDimension("the Tanaka residual is exact only for n = 2")
    s = np.asarray(spec.sigmas)
    sqdt = math.sqrt(traj.dt)
    ranked_xi = np.take_along_axis(traj.noise, traj.ranks[:-1], axis=1)
    term = s * sqdt * ranked_xi
    mart = np.concatenate(([0.0], np.cumsum(term[:, 1] - term[:, 0])))
    y = traj.spacings[:, 0]
    mu = spec.drifts[1] - spec.drifts[0]
    return y - y[0] - mu * traj.times - mart


def local_time_tanaka(traj: Trajectory, spec: SystemSpec, horizon: int | None = None) -> LocalTimeEstimate:
    lam = tanaka_regulator(traj, spec)
    k = len(lam) - 1 if horizon is None else horizon
    return LocalTimeEstimate(gap=0, estimate=float(lam[k]), method="TanakaResidual")


def local_time_occupation(traj: Trajectory, spec: SystemSpec, gap: int, epsilon: float) -> LocalTimeEstimate:
    """``(nu^2 / 2 eps) * dt * #{k < K : 0 <= Y_gap(t_k) <= eps}``."""
    if traj.n < 2:
        raise TooFewParticles("local time needs at least 2 particles")
    if not 0 <= gap < traj.n - 1:
        raise IndexOutOfRange(f"gap index {gap} outside 0..{traj.n - 2}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y = traj.spacings[:-1, gap]
    count = int(np.count_nonzero((y >= 0) & (y <= epsilon)))
    nu2 = spec.sigmas[gap] ** 2 + spec.sigmas[gap + 1] ** 2
    return LocalTimeEstimate(
        gap=gap, estimate=nu2 / (2 * epsilon) * traj.dt * count,
        method="Occupation", epsilon=epsilon,
    )


# -- export ----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path: str | Path, decimation: int = 1) -> None:
    """Write ``t, X_1..X_n, rank_1..rank_n, Y_1..Y_{n-1}``.

    ``rank_j`` is the 1-based label of the particle in rank slot ``j``. The last
    grid point is always written; a halted path ends with a
    ``halted_at_triple_proximity`` marker row carrying the halt time.
    """
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    n = traj.n
    header = (["t"] + [f"X_{i}" for i in range(1, n + 1)]
              + [f"rank_{j}" for j in range(1, n + 1)]
              + [f"Y_{j}" for j in range(1, n)])
    last = len(traj.times) - 1
    rows = sorted(set(range(0, last + 1, decimation)) | {last})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in rows:
            w.writerow([_fmt(traj.times[k])] + [_fmt(v) for v in traj.named[k]]
                       + [str(int(i) + 1) for i in traj.ranks[k]]
                       + [_fmt(v) for v in traj.spacings[k]])
        if traj.halted:
            w.writerow(["halted_at_triple_proximity", _fmt(traj.times[last])]
                       + [""] * (len(header) - 2))
