import numpy as np
import pytest

from prefguide.annotate import (CANDIDATE, INCUMBENT, TIE, Judgment,
                                MislabelConfig, PreferredSet,
                                annotation_workload_schedule, apply_mislabel,
                                make_judgment_comparator,
                                make_oracle_comparator, oracle_compare,
                                score_key, update_preferred_set)
from prefguide.rollout import Trajectory


def stub(score, traj_id="t", age=0) -> Trajectory:
    return Trajectory(transitions=[None], states=[None, None], traj_id=traj_id,
                      age=age, node_score=score)


def test_oracle_prefers_more_nodes():
    a, b = stub((2, 100, 0.0), "a"), stub((1, 30, 0.0), "b")
    assert oracle_compare(a, b) == CANDIDATE
    assert oracle_compare(b, a) == INCUMBENT


def test_oracle_prefers_fewer_steps_on_node_tie():
    a, b = stub((1, 50, 0.0), "a"), stub((1, 80, 0.0), "b")
    assert oracle_compare(a, b) == CANDIDATE


def test_oracle_prefers_lower_control_cost_last():
    a, b = stub((1, 50, 2.0), "a"), stub((1, 50, 5.0), "b")
    assert oracle_compare(a, b) == CANDIDATE


def test_oracle_self_tie():
    a = stub((2, 10, 1.0), "a")
    assert oracle_compare(a, a) == TIE


def test_mislabel_zero_identity():
    cfg = MislabelConfig(0.0, np.random.default_rng(0))
    assert apply_mislabel(CANDIDATE, cfg) == CANDIDATE
    assert apply_mislabel(TIE, cfg) == TIE


def test_mislabel_one_flips_everything():
    cfg = MislabelConfig(1.0, np.random.default_rng(0))
    for _ in range(50):
        assert apply_mislabel(CANDIDATE, cfg) == INCUMBENT
        assert apply_mislabel(INCUMBENT, cfg) == CANDIDATE
        assert apply_mislabel(TIE, cfg) == TIE


def test_mislabel_empirical_frequency():
    cfg = MislabelConfig(0.2, np.random.default_rng(123))
    flips = sum(apply_mislabel(CANDIDATE, cfg) == INCUMBENT for _ in range(10_000))
    assert flips / 10_000 == pytest.approx(0.2, abs=0.01)


def test_mislabel_ratio_validated():
    with pytest.raises(ValueError):
        MislabelConfig(1.5, np.random.default_rng(0))


def test_update_fills_empty_set_ranked():
    P = PreferredSet(h=8)
    cands = [stub((0, 30, 0.0), "a", age=0), stub((2, 40, 0.0), "b", age=1),
             stub((1, 20, 0.0), "c", age=2)]
    stats = update_preferred_set(P, cands, make_oracle_comparator())
    assert P.ids() == ["b", "c", "a"]
    assert stats.changed and P.version == 1
    assert stats.comparisons <= len(cands) * P.h


def test_update_dominated_candidate_leaves_set_unchanged():
    members = [stub((2, 10 + i, 0.0), f"m{i}", age=i) for i in range(8)]
    P = PreferredSet(h=8, items=list(members), version=4)
    stats = update_preferred_set(P, [stub((0, 240, 0.0), "worse", age=99)],
                                 make_oracle_comparator())
    assert P.ids() == [f"m{i}" for i in range(8)]
    assert not stats.changed and P.version == 4


def test_update_better_candidate_evicts_worst():
    members = [stub((1, 10 + i, 0.0), f"m{i}", age=i) for i in range(8)]
    P = PreferredSet(h=8, items=list(members))
    update_preferred_set(P, [stub((2, 60, 0.0), "hero", age=99)],
                         make_oracle_comparator())
    assert P.ids()[0] == "hero"
    assert "m7" not in P.ids()
    assert len(P) == 8


def test_update_comparison_budget():
    members = [stub((1, 10 + i, 0.0), f"m{i}", age=i) for i in range(8)]
    P = PreferredSet(h=8, items=list(members))
    cands = [stub((1, 5 + i, 0.0), f"c{i}", age=100 + i) for i in range(16)]
    stats = update_preferred_set(P, cands, make_oracle_comparator())
    assert stats.comparisons <= 16 * 8


def test_update_is_idempotent_without_noise():
    P = PreferredSet(h=4)
    cands = [stub((i % 2, 30, 0.0), f"c{i}", age=i) for i in range(6)]
    comparator = make_oracle_comparator()
    update_preferred_set(P, cands, comparator)
    ids1, v1 = P.ids(), P.version
    stats = update_preferred_set(P, cands, comparator)
    assert P.ids() == ids1
    assert P.version == v1
    assert not stats.changed


def test_update_tie_ranks_newer_higher():
    P = PreferredSet(h=4)
    old = stub((1, 30, 0.0), "old", age=1)
    new = stub((1, 30, 0.0), "new", age=2)
    update_preferred_set(P, [old], make_oracle_comparator())
    update_preferred_set(P, [new], make_oracle_comparator())
    assert P.ids() == ["new", "old"]


def test_update_ranking_consistent_with_comparator():
    """Re-sorting the final set by (score, recency) must reproduce it."""
    rng = np.random.default_rng(0)
    P = PreferredSet(h=8)
    age = 0
    for _ in range(12):
        cands = []
        for _ in range(6):
            cands.append(stub((int(rng.integers(0, 4)), int(rng.integers(5, 240)),
                               float(rng.integers(0, 3))), f"t{age}", age=age))
            age += 1
        update_preferred_set(P, cands, make_oracle_comparator())
        resorted = sorted(P.items, key=lambda t: (score_key(t.node_score), t.age),
                          reverse=True)
        assert [t.traj_id for t in resorted] == P.ids()
        assert len(P) <= 8


def test_update_min_score_monotone_oracle():
    rng = np.random.default_rng(7)
    P = PreferredSet(h=8)
    age = 0
    last_min = None
    for _ in range(30):
        cands = []
        for _ in range(8):
            cands.append(stub((int(rng.integers(0, 4)), int(rng.integers(5, 240)),
                               0.0), f"t{age}", age=age))
            age += 1
        update_preferred_set(P, cands, make_oracle_comparator())
        if len(P) == P.h:
            cur = score_key(P.min_node_score())
            if last_min is not None:
                assert cur >= last_min
            last_min = cur


def test_judgment_comparator_lookup_and_fallback():
    a, b = stub((0, 1, 0.0), "a", age=5), stub((0, 1, 0.0), "b", age=1)
    comp = make_judgment_comparator([Judgment("a", "b", INCUMBENT)])
    assert comp(a, b) == INCUMBENT
    assert comp(b, a) == TIE  # unjudged direction falls back to tie


def test_judgment_outcome_validated():
    with pytest.raises(ValueError):
        Judgment("a", "b", "maybe")


def test_schedule_warmup_surfaces_all():
    P = PreferredSet(h=8)
    buf = [stub((1, 100 + i, 0.0), f"c{i}", age=i) for i in range(8)]
    assert annotation_workload_schedule(0, buf, P, warmup_iters=50) == buf


def test_schedule_zero_node_trajectories_not_preference_worthy():
    P = PreferredSet(h=8)
    junk = [stub((0, 240, 0.0), f"j{i}", age=i) for i in range(8)]
    good = stub((1, 90, 0.0), "g", age=9)
    assert annotation_workload_schedule(0, junk, P) == []
    assert annotation_workload_schedule(0, junk + [good], P) == [good]
    # min_nodes=0 restores unconditional surfacing
    assert annotation_workload_schedule(0, junk, P, min_nodes=0) == junk


def test_schedule_filters_after_warmup():
    members = [stub((1, 10 + i, 0.0), f"m{i}", age=i) for i in range(8)]
    P = PreferredSet(h=8, items=list(members))
    dull = [stub((0, 240, 0.0), f"d{i}", age=50 + i) for i in range(8)]
    assert annotation_workload_schedule(60, dull, P, warmup_iters=50) == []
    sharp = stub((2, 100, 0.0), "sharp", age=99)
    out = annotation_workload_schedule(60, dull + [sharp], P, warmup_iters=50)
    assert out == [sharp]


def test_schedule_surfaces_all_while_below_capacity():
    P = PreferredSet(h=8, items=[stub((2, 10, 0.0), "m", age=0)])
    buf = [stub((1, 240, 0.0), "c", age=1)]
    assert annotation_workload_schedule(60, buf, P, warmup_iters=50) == buf


def test_schedule_rejects_negative_iteration():
    with pytest.raises(ValueError):
        annotation_workload_schedule(-1, [], PreferredSet(h=8))


def test_capacity_never_exceeded_random_stream():
    rng = np.random.default_rng(11)
    P = PreferredSet(h=8)
    mislabel = MislabelConfig(0.3, np.random.default_rng(5))
    comp = make_oracle_comparator(mislabel)
    age = 0
    for _ in range(40):
        cands = [stub((int(rng.integers(0, 3)), int(rng.integers(1, 240)), 0.0),
                      f"r{age + i}", age=age + i) for i in range(8)]
        age += 8
        update_preferred_set(P, cands, comp)
        assert len(P) <= 8
