"""Kernel and maximum-mean-discrepancy computations.

Trajectories are compared through the squared MMD between their projected
state-visitation samples, estimated with the biased V-statistic (diagonal
terms included) so identical multisets give exactly zero and every distance
is nonnegative. The kernel is a Gaussian RBF on a low-dimensional position
projection of the observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .annotate import PreferredSet
from .rollout import OnPolicyBuffer, Trajectory

MEDIAN = "median"


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel over selected observation dimensions.

    ``bandwidth`` is either a positive float or the string ``"median"``,
    meaning the median-heuristic value still has to be resolved from data
    before any kernel evaluation.
    """

    bandwidth: float | str = MEDIAN
    projection: tuple[int, ...] = (0, 1)
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError("only the rbf kernel is supported")
        if not isinstance(self.bandwidth, str) and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def resolved(self) -> bool:
        return not isinstance(self.bandwidth, str)

    def with_bandwidth(self, sigma: float) -> "KernelSpec":
        return replace(self, bandwidth=float(sigma))

    def sigma(self) -> float:
        if not self.resolved:
            raise ValueError("bandwidth not resolved; call median_bandwidth first")
        return float(self.bandwidth)

    def project(self, traj: Trajectory) -> np.ndarray:
        return traj.obs_matrix()[:, list(self.projection)]


def kernel(x, y, spec: KernelSpec) -> float:
    """exp(-||x-y||^2 / (2 sigma^2)), in (0, 1]."""
    sigma = spec.sigma()
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("kernel arguments must share a dimension")
    d2 = float(np.sum((x - y) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def _mean_cross(a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    d2 = cdist(a, b, "sqeuclidean")
    return float(np.exp(-d2 / (2.0 * sigma * sigma)).mean())


def _mean_self(traj: Trajectory, spec: KernelSpec) -> float:
    key = (spec.bandwidth, spec.projection)
    hit = traj._kernel_cache.get(key)
    if hit is None:
        x = spec.project(traj)
        hit = _mean_cross(x, x, spec.sigma())
        traj._kernel_cache[key] = hit
    return hit


def traj_mmd_sq(a: Trajectory, b: Trajectory, spec: KernelSpec) -> float:
    """Squared MMD between the state-visitation samples of two trajectories."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("trajectories must be nonempty")
    sigma = spec.sigma()
    xa, xb = spec.project(a), spec.project(b)
    # canonical orientation by content so the result is exactly symmetric
    # (float summation order would otherwise differ under argument swap)
    if xa.tobytes() > xb.tobytes():
        xa, xb = xb, xa
    cross = _mean_cross(xa, xb, sigma)
    val = _mean_self(a, spec) - 2.0 * cross + _mean_self(b, spec)
    # V-statistic is nonnegative up to roundoff
    return max(val, 0.0)


@dataclass
class DistanceCache:
    """Pairwise trajectory distances, valid for one preferred-set version."""

    entries: dict = field(default_factory=dict)
    generation: int = -1

    def sync(self, version: int) -> None:
        if version != self.generation:
            self.entries.clear()
            self.generation = version


def dist_to_set(traj: Trajectory, preferred: PreferredSet, spec: KernelSpec,
                cache: DistanceCache | None = None) -> float:
    """Mean squared-MMD distance from one trajectory to every set member."""
    if len(preferred) == 0:
        raise ValueError("preferred set is empty")
    if cache is not None:
        cache.sync(preferred.version)
    total = 0.0
    for member in preferred:
        key = (traj.traj_id, member.traj_id)
        if cache is not None and key in cache.entries:
            d = cache.entries[key]
        else:
            d = traj_mmd_sq(traj, member, spec)
            if cache is not None:
                cache.entries[key] = d
        total += d
    return total / len(preferred)


def median_bandwidth(states, rng: np.random.Generator, max_states: int = 1000) -> float:
    """Median pairwise distance over a bounded subsample; 1.0 if degenerate."""
    pts = np.asarray(states, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        raise ValueError("need at least two states")
    if len(pts) > max_states:
        idx = rng.choice(len(pts), size=max_states, replace=False)
        pts = pts[np.sort(idx)]
    med = float(np.median(pdist(pts)))
    return med if med > 0.0 else 1.0


def policy_mmd_metric(buffer: OnPolicyBuffer, preferred: PreferredSet,
                      spec: KernelSpec, cache: DistanceCache | None = None) -> float:
    """Per-iteration scalar: mean distance of sampled trajectories to the set."""
    if len(buffer) == 0 or len(preferred) == 0:
        raise ValueError("buffer and preferred set must be nonempty")
    return float(np.mean([dist_to_set(t, preferred, spec, cache) for t in buffer]))
