import csv
import math

import numpy as np
import pytest

from rankflow.errors import (
    IndexOutOfRange,
    StepBudgetExceeded,
    TooFewParticles,
    UnsupportedDimension,
)
from rankflow.model import SystemSpec
from rankflow.noise import ArrayNoise, NoiseSource
from rankflow.sim import (
    Trajectory,
    detect_pair_collisions,
    detect_triple_proximity,
    euler_batch,
    euler_step,
    event_batch,
    event_driven_path,
    local_time_occupation,
    local_time_tanaka,
    n_steps,
    simulate_path,
    tanaka_regulator,
    write_trajectory_csv,
)

TWO = SystemSpec((1, -1), (1, 2), (0, 1))


def _traj_from_spacings(gaps):
    """A synthetic path whose ranked positions have the given spacings."""
    gaps = np.asarray(gaps, dtype=float)
    named = np.concatenate([np.zeros((len(gaps), 1)), np.cumsum(gaps, axis=1)], axis=1)
    n = named.shape[1]
    ranks = np.tile(np.arange(n), (len(gaps), 1))
    return Trajectory(times=np.arange(len(gaps)) * 0.1, named=named, ranks=ranks, spacings=gaps,
                      noise=np.zeros((len(gaps) - 1, n)), seed=None, dt=0.1)


def test_euler_step_zero_noise():
    x, r = euler_step((0, 1), (0, 1), TWO, 0.01, (0, 0))
    assert x == pytest.approx((0.01, 0.99), abs=1e-15)
    assert tuple(r) == (0, 1)


def test_euler_step_with_noise():
    x, _ = euler_step((0, 1), (0, 1), TWO, 0.01, (1, -1))
    assert x == pytest.approx((0.11, 0.79), abs=1e-15)


def test_euler_step_tie_uses_index_order():
    x, r = euler_step((0, 0), (0, 1), TWO, 0.01, (0, 0))
    # particle 1 takes rank-1 drift +1, particle 2 rank-2 drift -1; they cross
    assert x == pytest.approx((0.01, -0.01))
    assert tuple(r) == (1, 0)


def test_n_steps_checks():
    assert n_steps(1.0, 1e-3) == 1000
    with pytest.raises(ValueError):
        n_steps(1.0, 0.3)
    with pytest.raises(StepBudgetExceeded):
        n_steps(1.0, 1e-3, max_steps=999)


def test_simulate_budget():
    with pytest.raises(StepBudgetExceeded):
        simulate_path(TWO, 1.0, 1e-3, 0, max_steps=10)


def test_single_particle_zero_noise_is_drift_line():
    spec = SystemSpec((2.0,), (0.7,), (0.5,))
    tr = simulate_path(spec, 1.0, 0.01, 0, noise=np.zeros((100, 1)))
    assert tr.named[-1, 0] == pytest.approx(0.5 + 2.0, abs=1e-12)
    assert tr.spacings.shape == (101, 0)


def test_determinism_and_shapes():
    spec = SystemSpec((0.1, 0, -0.3), (1, 2, 1.5), (0, 0.2, 0.3))
    a = simulate_path(spec, 0.5, 0.01, 42)
    b = simulate_path(spec, 0.5, 0.01, 42)
    for f in ("times", "named", "ranks", "spacings", "noise"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.named.shape == (51, 3) and a.noise.shape == (50, 3)
    assert np.array_equal(a.named[0], spec.initial)
    assert np.all(np.diff(a.ranked, axis=1) >= 0)
    assert np.allclose(a.spacings, np.diff(a.ranked, axis=1))
    assert not np.array_equal(a.named, simulate_path(spec, 0.5, 0.01, 43).named)


def test_path_index_matches_batch_row():
    spec = SystemSpec((0, 0, 0), (1, 1, 1), (0, 1, 2))
    res = euler_batch(np.tile(spec.initial, (4, 1)), spec.drifts, spec.sigmas, 0.01, 30,
                      NoiseSource(9, range(4), 3))
    single = simulate_path(spec, 0.3, 0.01, 9, path=3)
    assert np.array_equal(res.final[3], single.named[-1])


def test_euler_step_agrees_with_simulator():
    spec = SystemSpec((0.3, -0.2, 0.1), (1, 0.5, 2), (0, 0.01, 0.02))
    tr = simulate_path(spec, 0.2, 0.01, 5)
    x, r = np.array(spec.initial), np.arange(3)
    for k in range(20):
        x, r = euler_step(x, r, spec, 0.01, tr.noise[k])
        assert np.array_equal(x, tr.named[k + 1])
        assert np.array_equal(r, tr.ranks[k + 1])


def test_label_symmetry():
    rng = np.random.default_rng(3)
    x0 = np.array([0.0, 0.3, 0.35, 1.0])
    noise = rng.standard_normal((200, 4))
    d, s = (0.5, 0, 0, -0.5), (1, 2, 2, 1)
    base = euler_batch(x0, d, s, 1e-3, 200, ArrayNoise(noise), record=True)
    perm = np.array([2, 0, 3, 1])
    other = euler_batch(x0[perm], d, s, 1e-3, 200, ArrayNoise(noise[:, perm]), record=True)
    ranked_a = np.take_along_axis(base.named[0], base.ranks[0], axis=1)
    ranked_b = np.take_along_axis(other.named[0], other.ranks[0], axis=1)
    assert np.array_equal(ranked_a, ranked_b)


def test_ranked_paths_continuous():
    spec = SystemSpec((0, 0, 0), (1, 1.5, 1), (0, 0.1, 0.2))

    def mean_max_jump(dt):
        jumps = []
        for p in range(20):
            tr = simulate_path(spec, 0.4, dt, 1, path=p)
            jumps.append(np.abs(np.diff(tr.ranked, axis=0)).max())
        return np.mean(jumps)

    ratio = mean_max_jump(1e-3) / mean_max_jump(2.5e-4)
    assert 1.6 < ratio < 2.6


def test_sum_conservation_small():
    spec = SystemSpec((0.5, -0.2, 0.1), (1, 2, 1), (0, 0.5, 1))
    res = euler_batch(np.tile(spec.initial, (2000, 1)), spec.drifts, spec.sigmas, 0.01, 100,
                      NoiseSource(77, range(2000), 3))
    sums = res.final.sum(axis=1)
    expected = 1.5 + 1.0 * 0.4
    assert abs(sums.mean() - expected) <= 3 * sums.std(ddof=1) / math.sqrt(2000)


# -- collisions ------------------------------------------------------------------

def test_no_pair_events_when_paths_do_not_cross():
    spec = SystemSpec((0, 0), (1, 1), (0, 100))
    tr = simulate_path(spec, 0.1, 0.01, 0)
    assert detect_pair_collisions(tr).pair_events == []


def test_pair_swap_recorded_at_the_step_after():
    spec = SystemSpec((0, 0), (1, 1), (0, 0.05))
    noise = np.zeros((3, 2))
    noise[1] = (1.0, -1.0)  # moves by +-0.1 at step 1 -> 2
    tr = simulate_path(spec, 0.03, 0.01, 0, noise=noise)
    assert detect_pair_collisions(tr).pair_events == [(2, 0)]


def test_pair_events_single_particle_and_range():
    tr = simulate_path(SystemSpec((0,), (1,), (0,)), 0.1, 0.01, 0)
    assert detect_pair_collisions(tr).pair_events == []
    spec = SystemSpec((0, 0, 0), (1, 1, 1), (0, 0.001, 0.002))
    tr = simulate_path(spec, 0.5, 0.01, 3)
    all_events = detect_pair_collisions(tr).pair_events
    only_lower = detect_pair_collisions(tr, j_range=[0]).pair_events
    assert all_events and only_lower == [e for e in all_events if e[1] == 0]
    changed = {k for k in range(1, len(tr.times)) if not np.array_equal(tr.ranks[k], tr.ranks[k - 1])}
    assert changed <= {k for k, _ in all_events}


def test_triple_proximity_examples():
    far = _traj_from_spacings([[0.5, 0.5]] * 5)
    assert detect_triple_proximity(far, 0.1).triple_first_hit is None
    near = _traj_from_spacings([[0.5, 0.5], [0.2, 0.1], [0.0, 0.05], [0, 0]])
    hit = detect_triple_proximity(near, 0.1).triple_first_hit
    assert hit[0] == 2 and hit[1] == 0 and hit[2] == pytest.approx(0.05)
    assert detect_triple_proximity(far, 1.0).triple_first_hit[0] == 0
    with pytest.raises(TooFewParticles):
        detect_triple_proximity(simulate_path(TWO, 0.1, 0.01, 0), 0.1)


def test_triple_proximity_radius_within_epsilon():
    spec = SystemSpec((0, 0, 0), (1, 1, 2), (0, 0.01, 0.02))
    tr = simulate_path(spec, 0.2, 1e-3, 8)
    rec = detect_triple_proximity(tr, 0.02)
    assert rec.triple_first_hit[2] <= rec.epsilon


# -- local time ------------------------------------------------------------------

def test_tanaka_zero_when_gap_stays_open():
    spec = SystemSpec((0, 0), (1, 1), (0, 1))
    tr = simulate_path(spec, 0.1, 0.01, 0, noise=np.zeros((10, 2)))
    assert local_time_tanaka(tr, spec).estimate == 0.0


def test_tanaka_regulator_nondecreasing_and_matches_folding():
    spec = SystemSpec((0.3, -0.4), (1, 1.5), (0, 0))
    tr = simulate_path(spec, 1.0, 1e-3, 21)
    lam = tanaka_regulator(tr, spec)
    assert np.all(np.diff(lam) >= -1e-12)
    assert local_time_tanaka(tr, spec, horizon=500).estimate <= local_time_tanaka(tr, spec).estimate + 1e-12
    # each increment is 2 * max(-z, 0) for the unreflected gap proposal z
    mu, s = -0.7, np.array(spec.sigmas)
    y = tr.spacings[:, 0]
    ranked_xi = np.take_along_axis(tr.noise, tr.ranks[:-1], axis=1)
    z = y[:-1] + mu * tr.dt + math.sqrt(tr.dt) * (s[1] * ranked_xi[:, 1] - s[0] * ranked_xi[:, 0])
    assert np.allclose(np.diff(lam), 2 * np.maximum(-z, 0), atol=1e-12)


def test_tanaka_needs_two_particles():
    spec = SystemSpec((0, 0, 0), (1, 1, 1), (0, 1, 2))
    with pytest.raises(UnsupportedDimension):
        local_time_tanaka(simulate_path(spec, 0.1, 0.01, 0), spec)


def test_occupation_examples():
    spec = SystemSpec((0, 0), (1, 1), (0, 1))
    tr = simulate_path(spec, 0.1, 0.01, 0, noise=np.zeros((10, 2)))
    assert local_time_occupation(tr, spec, 0, 0.5).estimate == 0.0
    tied = SystemSpec((0, 0), (1, 1), (0, 0))
    tr = simulate_path(tied, 1.0, 1e-3, 2)
    est = [local_time_occupation(tr, tied, 0, e).estimate for e in (0.01, 0.02, 0.04)]
    assert all(0 <= v <= 2 / (2 * e) * 1.0 for v, e in zip(est, (0.01, 0.02, 0.04)))
    with pytest.raises(IndexOutOfRange):
        local_time_occupation(tr, tied, 1, 0.01)


# -- event-driven ------------------------------------------------------------------

def test_event_no_events_without_noise():
    spec = SystemSpec((-1, 1), (1, 1), (0, 5))
    tr, log = event_driven_path(spec, 1.0, 0.01, 0, epsilon=None, noise=np.zeros((100, 2)))
    assert log == []
    assert tr.named[-1] == pytest.approx((-1, 6))


def test_event_first_pairs_close_particles():
    spec = SystemSpec((0, 0, 0), (1, 1, 1), (0, 1e-6, 10))
    tr, log = event_driven_path(spec, 0.1, 1e-3, 5, epsilon=None)
    first = log[0]
    assert first.active == (0,)
    assert set(first.order[:2]) == {0, 1} and first.order[2] == 2
    # particle 3 moves as a free Brownian motion with rank-3 coefficients
    free = 10 + np.concatenate(([0.0], np.cumsum(math.sqrt(1e-3) * tr.noise[:, 2])))
    assert np.allclose(tr.named[:, 2], free, atol=1e-12)


def test_event_active_pairs_disjoint_and_ranked():
    spec = SystemSpec((0, 0, 0, 0), (1, 1.4, 1.4, 1), (0, 0.01, 0.02, 0.03))
    tr, log = event_driven_path(spec, 0.5, 1e-3, 3, epsilon=None)
    assert log
    for e in log:
        assert all(b - a >= 2 for a, b in zip(e.active, e.active[1:]))
        assert np.all(np.diff(tr.named[e.step][list(e.order)]) >= 0)
    assert np.all(tr.spacings >= 0)


def test_event_matches_euler_on_shared_noise():
    # the stitched construction assigns every particle the coefficients of its
    # current rank, so off ties it reproduces the Euler path exactly
    spec = SystemSpec((0.2, 0, 0, -0.2), (1, 2, 2, 1), (0, 0.05, 0.1, 0.15))
    a = simulate_path(spec, 1.0, 1e-3, 13)
    b, _ = event_driven_path(spec, 1.0, 1e-3, 13, epsilon=None)
    assert np.array_equal(a.named, b.named)


def test_event_halts_at_triple_proximity():
    spec = SystemSpec((0, 0, 0), (1, 1, 2), (0, 0.01, 0.02))
    tr, log = event_driven_path(spec, 1.0, 1e-3, 0, epsilon=0.05)
    assert tr.halted and len(tr.times) == 1
    tr, log = event_driven_path(spec, 1.0, 1e-4, 0, epsilon=0.005)
    if tr.halted:
        assert detect_triple_proximity(tr, 0.005).triple_first_hit[0] == len(tr.times) - 1
        assert all(e.step <= len(tr.times) - 1 for e in log)


def test_event_batch_halted_paths_freeze():
    x0 = np.tile([0.0, 0.01, 0.02], (8, 1))
    res = event_batch(x0, (0, 0, 0), (1, 1, 2), 1e-3, 200, NoiseSource(1, range(8), 3), epsilon=0.05)
    assert np.all(res.halted_step == 0)
    assert np.array_equal(res.final, x0)


def test_trajectory_csv(tmp_path):
    spec = SystemSpec((0, 0, 0), (1, 1, 1), (0, 1, 2))
    tr = simulate_path(spec, 0.1, 0.01, 0)
    path = tmp_path / "t.csv"
    write_trajectory_csv(tr, path, decimation=3)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "X_1", "X_2", "X_3", "rank_1", "rank_2", "rank_3", "Y_1", "Y_2"]
    assert [float(r[0]) for r in rows[1:]] == pytest.approx([0, 0.03, 0.06, 0.09, 0.1])
    assert float(rows[-1][1]) == tr.named[-1, 0]
    assert sorted(rows[-1][4:7]) == ["1", "2", "3"]
