import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefguide.annotate import PreferredSet
from prefguide.mmd import (DistanceCache, KernelSpec, dist_to_set, kernel,
                           median_bandwidth, policy_mmd_metric, traj_mmd_sq)
from prefguide.rollout import OnPolicyBuffer, Trajectory, Transition


def make_traj(points, traj_id="t", dim=1) -> Trajectory:
    """Trajectory whose projected states are the given 1-D or 2-D points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and np.asarray(points).ndim == 1 and len(points) > 1 and dim == 1:
        pts = np.asarray(points, dtype=float)[:, None]
    transitions = [Transition(obs=row.copy(), action=0, env_reward=0.0,
                              logp_behavior=0.0, done=False) for row in pts]
    return Trajectory(transitions=transitions, states=[None] * (len(pts) + 1),
                      traj_id=traj_id, node_score=(0, len(pts), 0.0))


def brute_force_mmd_sq(xa: np.ndarray, xb: np.ndarray, sigma: float) -> float:
    """Independent O(n^2) double-sum V-statistic."""
    def k(u, v):
        return math.exp(-float(np.sum((u - v) ** 2)) / (2 * sigma * sigma))
    n, m = len(xa), len(xb)
    aa = sum(k(xa[i], xa[j]) for i in range(n) for j in range(n)) / (n * n)
    bb = sum(k(xb[i], xb[j]) for i in range(m) for j in range(m)) / (m * m)
    ab = sum(k(xa[i], xb[j]) for i in range(n) for j in range(m)) / (n * m)
    return aa - 2 * ab + bb


SPEC1 = KernelSpec(bandwidth=1.0, projection=(0,))


def test_kernel_self_is_one():
    assert kernel(np.array([0.3, -2.0]), np.array([0.3, -2.0]),
                  KernelSpec(bandwidth=0.7, projection=(0, 1))) == 1.0


def test_kernel_hand_value():
    assert kernel(np.array([0.0]), np.array([1.0]), SPEC1) == pytest.approx(
        math.exp(-0.5), abs=1e-9)


@given(seed=st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_kernel_symmetry(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=3), rng.normal(size=3)
    spec = KernelSpec(bandwidth=0.8, projection=(0, 1, 2))
    assert kernel(x, y, spec) == kernel(y, x, spec)
    assert 0.0 < kernel(x, y, spec) <= 1.0


def test_kernel_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        KernelSpec(bandwidth=-1.0)
    with pytest.raises(ValueError):
        kernel(np.zeros(1), np.zeros(1), KernelSpec(bandwidth="median"))


def test_mmd_self_distance_zero():
    t = make_traj([0.1, 0.5, 0.9, 0.3])
    assert traj_mmd_sq(t, t, SPEC1) <= 1e-12


def test_mmd_singleton_hand_value():
    a, b = make_traj([0.0], "a"), make_traj([1.0], "b")
    expect = 2.0 - 2.0 * math.exp(-0.5)
    assert traj_mmd_sq(a, b, SPEC1) == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(0.786939, abs=1e-6)


def test_mmd_matches_brute_force():
    rng = np.random.default_rng(0)
    spec = KernelSpec(bandwidth=0.6, projection=(0, 1))
    for _ in range(20):
        xa = rng.normal(size=(rng.integers(1, 12), 2))
        xb = rng.normal(size=(rng.integers(1, 12), 2))
        a = Trajectory(
            transitions=[Transition(r, 0, 0.0, 0.0, False) for r in xa],
            states=[None] * (len(xa) + 1), traj_id="a")
        b = Trajectory(
            transitions=[Transition(r, 0, 0.0, 0.0, False) for r in xb],
            states=[None] * (len(xb) + 1), traj_id="b")
        assert traj_mmd_sq(a, b, spec) == pytest.approx(
            brute_force_mmd_sq(xa, xb, 0.6), abs=1e-12)


def test_mmd_symmetric_exactly():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = make_traj(rng.normal(size=rng.integers(1, 9)), "a")
        b = make_traj(rng.normal(size=rng.integers(1, 9)), "b")
        assert traj_mmd_sq(a, b, SPEC1) == traj_mmd_sq(b, a, SPEC1)


def test_mmd_identical_multisets_zero():
    pts = [0.2, 0.7, 0.2, 0.9]
    a, b = make_traj(pts, "a"), make_traj(list(pts), "b")
    assert traj_mmd_sq(a, b, SPEC1) <= 1e-12


def test_mmd_far_apart_approaches_two():
    a, b = make_traj([0.0, 0.01], "a"), make_traj([100.0, 100.01], "b")
    assert traj_mmd_sq(a, b, SPEC1) == pytest.approx(2.0, abs=0.01)


def test_mmd_monotone_in_separation():
    base = make_traj([0.0], "base")
    last = -1.0
    for gap in (0.1, 0.4, 0.9, 1.7, 3.0):
        d = traj_mmd_sq(base, make_traj([gap], f"g{gap}"), SPEC1)
        assert d > last
        last = d


def test_mmd_rejects_empty():
    a = make_traj([0.0], "a")
    empty = Trajectory(transitions=[], states=[None], traj_id="e")
    with pytest.raises(ValueError):
        traj_mmd_sq(a, empty, SPEC1)


def test_dist_to_set_singleton_self():
    t = make_traj([0.1, 0.2], "t")
    P = PreferredSet(h=8, items=[t])
    assert dist_to_set(t, P, SPEC1) <= 1e-12


def test_dist_to_set_mean_of_pairs():
    t = make_traj([0.0], "t")
    u, v = make_traj([0.5], "u"), make_traj([1.5], "v")
    P = PreferredSet(h=8, items=[u, v])
    expect = 0.5 * (traj_mmd_sq(t, u, SPEC1) + traj_mmd_sq(t, v, SPEC1))
    assert dist_to_set(t, P, SPEC1) == pytest.approx(expect, abs=1e-12)


def test_dist_to_set_cache_transparent():
    rng = np.random.default_rng(1)
    t = make_traj(rng.normal(size=6), "t")
    members = [make_traj(rng.normal(size=5), f"m{i}") for i in range(4)]
    P = PreferredSet(h=8, items=members)
    P.version = 3
    cache = DistanceCache()
    d1 = dist_to_set(t, P, SPEC1, cache)
    d2 = dist_to_set(t, P, SPEC1, cache)   # cache hit
    d3 = dist_to_set(t, P, SPEC1, None)    # no cache
    assert d1 == d2 == d3
    assert cache.generation == 3


def test_dist_cache_invalidated_on_version_bump():
    t = make_traj([0.0], "t")
    u = make_traj([1.0], "u")
    P = PreferredSet(h=8, items=[u])
    cache = DistanceCache()
    dist_to_set(t, P, SPEC1, cache)
    assert cache.entries
    P.version += 1
    dist_to_set(t, P, SPEC1, cache)
    assert cache.generation == P.version


def test_dist_to_set_empty_raises():
    with pytest.raises(ValueError):
        dist_to_set(make_traj([0.0]), PreferredSet(h=8), SPEC1)


def test_median_bandwidth_single_pair():
    rng = np.random.default_rng(0)
    assert median_bandwidth(np.array([[0.0], [1.0]]), rng) == 1.0


def test_median_bandwidth_degenerate_fallback():
    rng = np.random.default_rng(0)
    assert median_bandwidth(np.zeros((5, 2)), rng) == 1.0


def test_median_bandwidth_three_points():
    rng = np.random.default_rng(0)
    # pairwise distances {1, 1, 2} -> median 1
    assert median_bandwidth(np.array([[0.0], [1.0], [2.0]]), rng) == 1.0


def test_median_bandwidth_subsample_deterministic():
    pts = np.random.default_rng(5).normal(size=(3000, 2))
    a = median_bandwidth(pts, np.random.default_rng(7), max_states=500)
    b = median_bandwidth(pts, np.random.default_rng(7), max_states=500)
    assert a == b


def test_policy_mmd_metric_zero_when_buffer_is_set():
    t = make_traj([0.3, 0.6], "t")
    buf = OnPolicyBuffer(trajectories=[t])
    P = PreferredSet(h=8, items=[t])
    assert policy_mmd_metric(buf, P, SPEC1) <= 1e-12


def test_policy_mmd_metric_two_by_two_hand_average():
    a, b = make_traj([0.0], "a"), make_traj([1.0], "b")
    u, v = make_traj([0.25], "u"), make_traj([2.0], "v")
    buf = OnPolicyBuffer(trajectories=[a, b])
    P = PreferredSet(h=8, items=[u, v])
    pairs = [[traj_mmd_sq(x, y, SPEC1) for y in (u, v)] for x in (a, b)]
    expect = np.mean([np.mean(row) for row in pairs])
    assert policy_mmd_metric(buf, P, SPEC1) == pytest.approx(expect, abs=1e-12)
    assert policy_mmd_metric(buf, P, SPEC1) >= 0.0
