"""Trajectory containers, on-policy rollout collection, and return/advantage
annotation shared by the policy-improvement and preference-guidance steps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .envs import Environment, node_score, render_path
from .nets import ForwardCache, MlpSpec, ParamVector


@dataclass
class Transition:
    obs: np.ndarray
    action: object
    env_reward: float
    logp_behavior: float
    done: bool


@dataclass(eq=False)
class Trajectory:
    """One complete episode plus derived annotations.

    ``states`` keeps the raw per-step environment states (length = steps + 1,
    including the initial state) for node scoring and rendering; ``obs`` in
    each transition is the encoded observation the policy saw.
    """

    transitions: list
    states: list
    traj_id: str = ""
    age: int = 0
    return_undiscounted: float = 0.0
    node_score: tuple | None = None
    control_cost: float = 0.0
    guidance_distance: float | None = None
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None
    _obs_matrix: np.ndarray | None = field(default=None, repr=False)
    _kernel_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.transitions)

    def obs_matrix(self) -> np.ndarray:
        if self._obs_matrix is None:
            self._obs_matrix = np.stack([tr.obs for tr in self.transitions])
        return self._obs_matrix

    def actions(self):
        return [tr.action for tr in self.transitions]

    def rewards(self) -> np.ndarray:
        return np.array([tr.env_reward for tr in self.transitions])

    def succeeded(self) -> bool:
        """Whether the sparse terminal bonus was obtained."""
        return self.return_undiscounted > 0.0

    def to_jsonable(self) -> dict:
        acts = [a if np.isscalar(a) or isinstance(a, int) else np.asarray(a).tolist()
                for a in self.actions()]
        return {
            "id": self.traj_id,
            "obs": [tr.obs.tolist() for tr in self.transitions],
            "actions": acts,
            "env_rewards": [tr.env_reward for tr in self.transitions],
            "logp": [tr.logp_behavior for tr in self.transitions],
            "node_score": list(self.node_score) if self.node_score else None,
            "guidance_distance": self.guidance_distance,
        }


@dataclass(eq=False)
class OnPolicyBuffer:
    """Trajectories collected by one policy snapshot in one iteration."""

    trajectories: list
    iteration: int = 0
    _flat: tuple | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def flat_arrays(self):
        """(obs, actions, logp, traj_slices) concatenated across trajectories."""
        if self._flat is not None:
            return self._flat
        obs = np.concatenate([t.obs_matrix() for t in self.trajectories])
        logp = np.concatenate([[tr.logp_behavior for tr in t.transitions]
                               for t in self.trajectories])
        first = self.trajectories[0].transitions[0].action
        if np.isscalar(first) or isinstance(first, (int, np.integer)):
            actions = np.array([tr.action for t in self.trajectories
                                for tr in t.transitions])
        else:
            actions = np.stack([np.atleast_1d(tr.action) for t in self.trajectories
                                for tr in t.transitions])
        slices, off = [], 0
        for t in self.trajectories:
            slices.append(slice(off, off + len(t)))
            off += len(t)
        self._flat = (obs, actions, logp, slices)
        return self._flat


def _sample_discrete(cumprobs: np.ndarray, rng) -> int:
    u = rng.random() * cumprobs[-1]
    i = int(np.searchsorted(cumprobs, u, side="right"))
    return min(i, len(cumprobs) - 1)


def collect(params: ParamVector, spec: MlpSpec, env: Environment, episodes: int,
            rng: np.random.Generator, id_prefix: str = "t",
            age_base: int = 0) -> OnPolicyBuffer:
    """Sample complete episodes with the current policy.

    Episodes run in lockstep so policy forwards are batched; each episode
    slot draws from its own spawned rng stream, which keeps the buffer
    deterministic for a fixed generator state. ``age_base + slot`` becomes
    each trajectory's age, a monotone recency stamp used for tie-breaking
    in preference ranking.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    streams = rng.spawn(episodes)
    states = [env.reset(streams[i]) for i in range(episodes)]
    paths = [[s] for s in states]
    parts = [{"obs": [], "act": [], "rew": [], "logp": [], "done": []}
             for _ in range(episodes)]
    costs = [0.0] * episodes
    active = list(range(episodes))
    while active:
        obs = np.stack([env.encode(states[i]) for i in active])
        cache = ForwardCache(params, obs, spec)
        if env.discrete:
            probs = cache.probs
            cum = probs.cumsum(axis=1)
        else:
            mean, std = cache.mean, cache.std
        still = []
        for row, i in enumerate(active):
            if env.discrete:
                a = _sample_discrete(cum[row], streams[i])
                logp = float(np.log(probs[row, a]))
                applied = a
            else:
                a = mean[row] + std * streams[i].standard_normal(len(std))
                u = (a - mean[row]) / std
                logp = float(-0.5 * (u * u).sum() - np.log(std).sum()
                             - 0.5 * len(std) * np.log(2 * np.pi))
                costs[i] += float(np.sum(np.clip(a, -1.0, 1.0) ** 2))
                applied = float(a[0])
            new_state, reward, done = env.step(states[i], applied)
            p = parts[i]
            p["obs"].append(obs[row])
            p["act"].append(a)
            p["rew"].append(float(reward))
            p["logp"].append(logp)
            p["done"].append(done)
            states[i] = new_state
            paths[i].append(new_state)
            if not done:
                still.append(i)
        active = still
    trajs = []
    for i in range(episodes):
        p = parts[i]
        transitions = [Transition(o, a, r, lp, d) for o, a, r, lp, d in
                       zip(p["obs"], p["act"], p["rew"], p["logp"], p["done"])]
        score = node_score(paths[i], env.nodes, control_cost=costs[i])
        trajs.append(Trajectory(
            transitions=transitions,
            states=paths[i],
            traj_id=f"{id_prefix}_e{i}",
            age=age_base + i,
            return_undiscounted=float(sum(p["rew"])),
            node_score=score,
            control_cost=costs[i],
        ))
    return OnPolicyBuffer(trajectories=trajs)


def discounted_suffix_sums(rewards, gamma: float) -> np.ndarray:
    """out[t] = sum_{l>=0} gamma^l * rewards[t+l], single backward pass."""
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def annotate_gae(buffer: OnPolicyBuffer, value_params: ParamVector,
                 value_spec: MlpSpec, gamma: float = 0.99, lam: float = 0.95,
                 normalize: bool = True) -> OnPolicyBuffer:
    """Attach GAE advantages and value-regression targets to every trajectory.

    Episodes end at the terminal state or the horizon, so no bootstrap value
    is used past the last step. When ``normalize`` is set the advantages are
    standardized to zero mean / unit variance across the whole buffer;
    ``value_targets`` always keep the raw (unnormalized) scale.
    """
    raw = []
    for traj in buffer:
        v = forward_values(value_params, traj.obs_matrix(), value_spec)
        r = traj.rewards()
        deltas = r + gamma * np.append(v[1:], 0.0) - v
        adv = np.empty_like(deltas)
        acc = 0.0
        for t in range(len(deltas) - 1, -1, -1):
            acc = deltas[t] + gamma * lam * acc
            adv[t] = acc
        traj.advantages = adv
        traj.value_targets = adv + v
        raw.append(adv)
    if normalize:
        flat = np.concatenate(raw)
        mu, sd = flat.mean(), flat.std()
        for traj in buffer:
            traj.advantages = (traj.advantages - mu) / (sd + 1e-8)
    return buffer


def forward_values(params: ParamVector, obs: np.ndarray, spec: MlpSpec) -> np.ndarray:
    cache = ForwardCache(params, obs, spec)
    return cache.value()


def dump_trajectories(buffer: OnPolicyBuffer, path) -> None:
    """JSON-lines dump, one trajectory per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in buffer:
            fh.write(json.dumps(traj.to_jsonable()) + "\n")


def trajectory_summary(traj: Trajectory, kind: str) -> dict:
    """Compact UI-facing record: id, score, and render payload."""
    return {
        "id": traj.traj_id,
        "node_score": list(traj.node_score),
        "length": len(traj),
        "control_cost": traj.control_cost,
        "return": traj.return_undiscounted,
        "path": render_path(traj.states, kind),
    }
