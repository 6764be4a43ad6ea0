"""Preference production and preferred-set maintenance.

A scripted oracle ranks trajectories lexicographically by landmark score
(more nodes, then fewer steps, then lower control cost); optional label
noise flips individual pairwise outcomes. The capacity-bounded preferred
set is updated by comparing each fresh trajectory pairwise against the
current members and keeping the best ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CANDIDATE = "candidate"
INCUMBENT = "incumbent"
TIE = "tie"
OUTCOMES = (CANDIDATE, INCUMBENT, TIE)


@dataclass
class Judgment:
    """One pairwise verdict between a fresh candidate and a set member."""

    candidate_id: str
    incumbent_id: str
    outcome: str

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome must be one of {OUTCOMES}")


@dataclass
class MislabelConfig:
    """Flip each non-tie pairwise outcome with probability ``ratio``."""

    ratio: float
    rng: np.random.Generator

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("mislabel ratio must be in [0, 1]")


@dataclass
class PreferredSet:
    """Ranked best-first buffer of at most ``h`` preferred trajectories."""

    h: int = 8
    items: list = field(default_factory=list)
    version: int = 0

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("capacity h must be >= 1")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def ids(self) -> list:
        return [t.traj_id for t in self.items]

    def worst(self):
        return self.items[-1] if self.items else None

    def min_node_score(self):
        return self.items[-1].node_score if self.items else None

    def to_jsonable(self, kind: str) -> dict:
        from .rollout import trajectory_summary
        return {
            "version": self.version,
            "h": self.h,
            "items": [trajectory_summary(t, kind) for t in self.items],
        }


def score_key(score) -> tuple:
    """Sort key: higher is better (more nodes, fewer steps, lower cost)."""
    nodes, steps, cost = score
    return (nodes, -steps, -cost)


def oracle_compare(traj_a, traj_b, nodes=None) -> str:
    """Deterministic lexicographic preference between two scored trajectories."""
    ka, kb = score_key(traj_a.node_score), score_key(traj_b.node_score)
    if ka > kb:
        return CANDIDATE
    if kb > ka:
        return INCUMBENT
    return TIE


def apply_mislabel(outcome: str, cfg: MislabelConfig | None) -> str:
    """Flip a non-tie judgment with the configured probability."""
    if cfg is None or outcome == TIE or cfg.ratio == 0.0:
        return outcome
    if cfg.rng.random() < cfg.ratio:
        return INCUMBENT if outcome == CANDIDATE else CANDIDATE
    return outcome


def make_oracle_comparator(mislabel: MislabelConfig | None = None):
    """Comparator callable (candidate, incumbent) -> outcome."""
    def compare(candidate, incumbent) -> str:
        return apply_mislabel(oracle_compare(candidate, incumbent), mislabel)
    return compare


def make_judgment_comparator(judgments):
    """Comparator backed by recorded human judgments.

    Pairs without a recorded judgment (e.g. against a member admitted later
    in the same update) fall back to a tie, which the recency rule resolves
    in the newer trajectory's favor.
    """
    table = {(j.candidate_id, j.incumbent_id): j.outcome for j in judgments}
    def compare(candidate, incumbent) -> str:
        return table.get((candidate.traj_id, incumbent.traj_id), TIE)
    return compare


@dataclass
class UpdateStats:
    comparisons: int = 0
    admitted: int = 0
    changed: bool = False


def update_preferred_set(preferred: PreferredSet, candidates, comparator,
                         h: int | None = None) -> UpdateStats:
    """Insert each candidate by pairwise comparison against all members.

    Candidates are processed in order; each is compared against every
    current member (at most h comparisons apiece, so at most N*h per
    update) and placed below the members it lost to plus the tied members
    that are newer (ties favor recency), then the list is cut back to
    capacity. Candidates already in the set are skipped, which together
    with the age-based tie rule makes re-applying the same batch a no-op.
    The version increments only if membership or order changed.
    """
    if h is not None and h != preferred.h:
        preferred.h = h
    before = preferred.ids()
    stats = UpdateStats()
    for cand in candidates:
        if any(m.traj_id == cand.traj_id for m in preferred.items):
            continue
        above = 0
        for member in preferred.items:
            stats.comparisons += 1
            outcome = comparator(cand, member)
            if outcome == INCUMBENT or (outcome == TIE and member.age > cand.age):
                above += 1
        if above >= preferred.h:
            continue
        preferred.items.insert(above, cand)
        if len(preferred.items) > preferred.h:
            preferred.items.pop()
        stats.admitted += 1
    stats.changed = preferred.ids() != before
    if stats.changed:
        preferred.version += 1
    return stats


def annotation_workload_schedule(iteration: int, buffer, preferred: PreferredSet,
                                 warmup_iters: int = 50, min_nodes: int = 1) -> list:
    """Pick which fresh trajectories get surfaced for comparison.

    Only trajectories that hit at least ``min_nodes`` landmarks count as
    preference-worthy at all. Of those, every one is surfaced during the
    warmup phase (and while the set is below capacity); afterwards only
    candidates whose landmark score strictly beats the current worst
    member's, which shrinks the annotation workload as training progresses.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    trajs = [t for t in buffer if t.node_score[0] >= min_nodes]
    if iteration < warmup_iters or len(preferred) < preferred.h:
        return trajs
    floor = score_key(preferred.min_node_score())
    return [t for t in trajs if score_key(t.node_score) > floor]
