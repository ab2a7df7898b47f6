"""Monte Carlo harness, closed-form oracles and goodness-of-fit checks.

Paths are split into fixed chunks of consecutive path indices; each chunk is
simulated independently (optionally on a thread pool) and the per-path values
are concatenated in path order before any reduction. Because every path draws
its noise from its own counter-based stream, results are bit-identical for any
worker count.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from .errors import NegativeY, TooFewParticles, UnsupportedDimension
from .model import SystemSpec, validate_spec
from .noise import NoiseSource
from .sim import Trajectory, euler_batch, event_batch, n_steps

CHUNK_ELEMENTS = 4_000_000
MAX_CHUNK = 1000


@dataclass(frozen=True)
class McResult:
    estimate: float
    std_error: float
    n_paths: int
    seed_base: int
    name: str = ""


@dataclass(frozen=True)
class ProximityCurve:
    epsilons: tuple[float, ...]
    frequencies: tuple[float, ...]
    ci_halfwidths: tuple[float, ...]
    n_paths: int
    seed_base: int

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "frequency", "ci_halfwidth"])
            for row in zip(self.epsilons, self.frequencies, self.ci_halfwidths):
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class KsResult:
    statistic: float
    n_paths: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.statistic <= self.tolerance


def write_results_csv(results: Sequence[McResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "estimate", "std_error", "n_paths", "seed"])
        for r in results:
            w.writerow([r.name, repr(r.estimate), repr(r.std_error), r.n_paths, r.seed_base])


def default_threads() -> int:
    return int(os.environ.get("RANKFLOW_THREADS", "1"))


# -- oracles ---------------------------------------------------------------------

def reflected_bm_cdf(y, y0: float, mu: float, nu2: float, t: float):
    """P(Y_t <= y) for Brownian motion with drift ``mu`` and variance ``nu2``
    started at ``y0 >= 0`` and reflected at the origin."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise NegativeY("reflected Brownian motion lives on [0, inf)")
    if y0 < 0 or nu2 <= 0 or t <= 0:
        raise ValueError("need y0 >= 0, nu2 > 0, t > 0")
    s = math.sqrt(nu2 * t)
    first = ndtr((y - y0 - mu * t) / s)
    # exp(2 mu y / nu2) * Phi(.) in log space: the factor overflows for large y
    second = np.exp(2.0 * mu * y / nu2 + log_ndtr((-y - y0 - mu * t) / s))
    return np.clip(first - second, 0.0, 1.0)


def reflected_bm_mean(y0: float, mu: float, nu2: float, t: float) -> float:
    """E Y_t by integrating the survival function."""
    s = math.sqrt(nu2 * t)
    hi = y0 + abs(mu) * t + 40 * s
    val, _ = integrate.quad(lambda y: 1.0 - float(reflected_bm_cdf(y, y0, mu, nu2, t)), 0.0, hi,
                            limit=200, epsabs=1e-13, epsrel=1e-12)
    return val


def local_time_mean(y0: float, mu: float, nu2: float, t: float) -> float:
    """E of the regulator at time t: E Y_t - y0 - mu t."""
    return reflected_bm_mean(y0, mu, nu2, t) - y0 - mu * t


def sample_reflected_bm(n: int, y0: float, mu: float, nu2: float, t: float,
                        rng: np.random.Generator, tol: float = 1e-12) -> np.ndarray:
    """Exact draws by inverting the CDF with bisection to ``tol``."""
    u = rng.random(n)
    lo = np.zeros(n)
    hi = np.full(n, y0 + abs(mu) * t + 1.0)
    while True:
        short = reflected_bm_cdf(hi, y0, mu, nu2, t) < u
        if not short.any():
            break
        hi = np.where(short, 2 * hi, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = reflected_bm_cdf(mid, y0, mu, nu2, t) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def ks_statistic(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_2samp_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# -- batched simulation --------------------------------------------------------------

def _chunks(n_paths: int, steps: int, n: int, record: bool) -> list[range]:
    size = MAX_CHUNK
    if record:
        size = max(1, min(MAX_CHUNK, CHUNK_ELEMENTS // max(1, (steps + 1) * n)))
    return [range(a, min(a + size, n_paths)) for a in range(0, n_paths, size)]


def _map(fn, items, threads: int | None):
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_batches(spec: SystemSpec, T: float, dt: float, n_paths: int, seed: int, *,
                scheme: str = "euler", threads: int | None = None, record: bool = False,
                **kwargs):
    """Simulate ``n_paths`` paths in fixed chunks; returns the chunk results in order."""
    validate_spec(spec, allow_ties=True)
    steps = n_steps(T, dt)
    x0 = np.asarray(spec.initial)
    epsilon = kwargs.pop("epsilon", None)

    def one(paths: range):
        noise = NoiseSource(seed, paths, spec.n)
        start = np.broadcast_to(x0, (len(paths), spec.n))
        if scheme == "euler":
            return euler_batch(start, spec.drifts, spec.sigmas, dt, steps, noise, record=record, **kwargs)
        if scheme == "event":
            return event_batch(start, spec.drifts, spec.sigmas, dt, steps, noise, record=record,
                               epsilon=epsilon, **kwargs)
        raise ValueError(f"unknown scheme {scheme!r}")

    return _map(one, _chunks(n_paths, steps, spec.n, record), threads)


def _paths_of(res, dt: float, seed: int, first_path: int):
    times = np.arange(res.named.shape[1]) * dt
    for p in range(res.named.shape[0]):
        named, ranks = res.named[p], res.ranks[p]
        gaps = np.diff(np.take_along_axis(named, ranks, axis=1), axis=1)
        yield Trajectory(times=times, named=named, ranks=ranks, spacings=gaps,
                         noise=res.noise[p], seed=seed, path=first_path + p, dt=dt)


def _summarize(values: np.ndarray, seed: int, name: str) -> McResult:
    n = values.size
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McResult(estimate=float(np.mean(values)), std_error=se, n_paths=n, seed_base=seed, name=name)


def mc_means(functionals: dict[str, Callable[[Trajectory], float]], spec: SystemSpec, T: float,
             dt: float, n_paths: int, seed: int, *, scheme: str = "euler",
             threads: int | None = None) -> dict[str, McResult]:
    """Monte Carlo means of several path functionals on shared paths."""
    validate_spec(spec, allow_ties=True)
    steps = n_steps(T, dt)
    chunks = _chunks(n_paths, steps, spec.n, record=True)
    names = list(functionals)

    def one(paths: range):
        noise = NoiseSource(seed, paths, spec.n)
        start = np.broadcast_to(np.asarray(spec.initial), (len(paths), spec.n))
        if scheme == "euler":
            res = euler_batch(start, spec.drifts, spec.sigmas, dt, steps, noise, record=True)
        else:
            res = event_batch(start, spec.drifts, spec.sigmas, dt, steps, noise, record=True, epsilon=None)
        out = np.empty((len(paths), len(names)))
        for p, traj in enumerate(_paths_of(res, dt, seed, paths.start)):
            out[p] = [functionals[k](traj) for k in names]
        return out

    values = np.concatenate(_map(one, chunks, threads), axis=0)
    return {k: _summarize(values[:, c], seed, k) for c, k in enumerate(names)}


def mc_mean(functional: Callable[[Trajectory], float], spec: SystemSpec, T: float, dt: float,
            n_paths: int, seed: int, *, scheme: str = "euler", threads: int | None = None,
            name: str = "") -> McResult:
    res = mc_means({name: functional}, spec, T, dt, n_paths, seed, scheme=scheme, threads=threads)
    return res[name]


def final_positions(spec: SystemSpec, T: float, dt: float, n_paths: int, seed: int, *,
                    scheme: str = "euler", threads: int | None = None) -> np.ndarray:
    parts = run_batches(spec, T, dt, n_paths, seed, scheme=scheme, threads=threads)
    return np.concatenate([r.final for r in parts], axis=0)


# -- statistical checks ---------------------------------------------------------------

def gap_law_test(spec: SystemSpec, T: float, dt: float, n_paths: int, seed: int, *,
                 tolerance: float = 0.02, threads: int | None = None) -> KsResult:
    """KS distance between the simulated two-particle gap at T and the
    reflected Brownian motion law with drift ``d2 - d1`` and variance
    ``s1^2 + s2^2``."""
    if spec.n != 2:
        raise UnsupportedDimension("the gap law is closed-form only for n = 2")
    x = final_positions(spec, T, dt, n_paths, seed, threads=threads)
    gaps = np.abs(x[:, 1] - x[:, 0])
    y0 = spec.initial[1] - spec.initial[0]
    mu = spec.drifts[1] - spec.drifts[0]
    nu2 = spec.sigmas[0] ** 2 + spec.sigmas[1] ** 2
    d = ks_statistic(gaps, lambda y: reflected_bm_cdf(y, y0, mu, nu2, T))
    return KsResult(statistic=d, n_paths=n_paths, tolerance=tolerance)


def scheme_ks(spec: SystemSpec, T: float, dt: float, n_paths: int, seed_euler: int,
              seed_event: int, *, threads: int | None = None) -> list[float]:
    """Two-sample KS distance per rank between event-driven and Euler endpoints."""
    a = np.sort(final_positions(spec, T, dt, n_paths, seed_euler, threads=threads), axis=1)
    b = np.sort(final_positions(spec, T, dt, n_paths, seed_event, scheme="event", threads=threads), axis=1)
    return [ks_2samp_statistic(a[:, j], b[:, j]) for j in range(spec.n)]


def triple_proximity_curve(spec: SystemSpec, T: float, epsilons: Sequence[float], n_paths: int,
                           seed: int, *, dt: float, threads: int | None = None) -> ProximityCurve:
    """Fraction of paths whose spacings come within each radius of a corner.

    All radii are evaluated on the same paths through the per-path minimum
    corner distance, so the frequencies are exactly monotone in epsilon.
    """
    if spec.n < 3:
        raise TooFewParticles("triple proximity needs at least 3 particles")
    eps = np.asarray(epsilons, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be positive and strictly decreasing")
    parts = run_batches(spec, T, dt, n_paths, seed, threads=threads, track_triples=True)
    r = np.concatenate([p.min_radius for p in parts])
    freq = (r[:, None] <= eps[None, :]).mean(axis=0)
    half = 1.96 * np.sqrt(freq * (1 - freq) / n_paths)
    return ProximityCurve(
        epsilons=tuple(float(e) for e in eps),
        frequencies=tuple(float(f) for f in freq),
        ci_halfwidths=tuple(float(h) for h in half),
        n_paths=n_paths,
        seed_base=seed,
    )
