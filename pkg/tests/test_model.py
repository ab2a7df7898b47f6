import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankflow.errors import LengthMismatch, NonPositiveSigma, UnorderedInitial
from rankflow.model import SystemSpec, inverse, rank_resolve, rank_resolve_batch, spacings, validate_spec

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_validate_accepts_valid_spec():
    spec = SystemSpec((0, 0), (1, 1), (0, 1))
    assert validate_spec(spec) is spec


@pytest.mark.parametrize("spec, exc", [
    (SystemSpec((0, 0), (1, 0), (0, 1)), NonPositiveSigma),
    (SystemSpec((0, 0), (1, -2), (0, 1)), NonPositiveSigma),
    (SystemSpec((0, 0), (1, 1), (1, 1)), UnorderedInitial),
    (SystemSpec((0, 0), (1, 1), (2, 1)), UnorderedInitial),
    (SystemSpec((0,), (1, 1), (0, 1)), LengthMismatch),
    (SystemSpec((), (), ()), LengthMismatch),
])
def test_validate_rejects(spec, exc):
    with pytest.raises(exc):
        validate_spec(spec)


def test_ties_allowed_on_request_only():
    spec = SystemSpec((0, 0), (1, 1), (0, 0))
    assert validate_spec(spec, allow_ties=True) is spec
    with pytest.raises(UnorderedInitial):
        validate_spec(SystemSpec((0, 0), (1, 1), (1, 0)), allow_ties=True)


@pytest.mark.parametrize("positions, previous, expected", [
    ((3, 1, 2), None, (2, 3, 1)),
    ((1, 1, 0), None, (3, 1, 2)),
    ((1, 1), (2, 1), (2, 1)),
])
def test_rank_resolve_examples(positions, previous, expected):
    prev = None if previous is None else np.array(previous) - 1
    assert tuple(rank_resolve(positions, prev) + 1) == expected


def test_rank_resolve_length_mismatch():
    with pytest.raises(LengthMismatch):
        rank_resolve((1, 2, 3), (0, 1))


@pytest.mark.parametrize("positions, ranks, expected", [
    ((0, 1, 3), (0, 1, 2), (1, 2)),
    ((5, 5), (1, 0), (0,)),
    ((4,), (0,), ()),
])
def test_spacings_examples(positions, ranks, expected):
    assert tuple(spacings(positions, ranks)) == expected


@given(st.lists(finite, min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_rank_resolve_properties(xs, rnd):
    prev = np.array(rnd.sample(range(len(xs)), len(xs)))
    order = rank_resolve(xs, prev)
    assert sorted(order.tolist()) == list(range(len(xs)))
    ranked = np.asarray(xs)[order]
    assert np.all(np.diff(ranked) >= 0)
    assert np.all(spacings(xs, order) >= 0)
    assert ranked.sum() == pytest.approx(np.sum(xs), rel=1e-12, abs=1e-6)
    # ties keep the relative order they had in prev
    pos_in_prev = inverse(prev)
    for a, b in zip(order[:-1], order[1:]):
        if xs[a] == xs[b]:
            assert pos_in_prev[a] < pos_in_prev[b]


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=10), st.integers(-1000, 1000))
def test_rank_resolve_shift_invariant(xs, c):
    # integer-valued floats keep the shift exact, so ties survive it
    x = np.asarray(xs, dtype=float)
    assert np.array_equal(rank_resolve(x), rank_resolve(x + c))


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 4, size=(50, 6)).astype(float)
    prev = np.stack([rng.permutation(6) for _ in range(50)])
    batch = rank_resolve_batch(x, prev)
    for row in range(50):
        assert np.array_equal(batch[row], rank_resolve(x[row], prev[row]))
    assert np.array_equal(inverse(batch)[0], np.argsort(batch[0]))
