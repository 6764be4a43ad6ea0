"""Two-step preference-guided training loop.

Each iteration: collect on-policy episodes, run a PPO-style clipped-surrogate
policy-improvement step on environment-reward advantages, then a preference
guidance step that descends on MMD-shaped rewards (each trajectory's distance
to the preferred set broadcast to its steps), and finally let the annotator
refresh the preferred set. Plain-PPO and single-step ablations fall out of
the ``no_pg`` / ``no_pi`` flags.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import annotate as ann
from . import envs as E
from . import mmd
from . import nets
from . import rollout as ro
from .config import TrainConfig

METRIC_COLUMNS = ("iteration", "avg_return", "success_rate", "mmd_metric",
                  "pi_loss", "pg_obj", "p_size")


@dataclass
class IterationMetrics:
    """One row of the training log.

    ``pi_loss`` is the last-epoch negative clipped surrogate of the policy
    improvement step; ``pg_obj`` is the last-epoch value of the clipped
    guidance objective being minimized. Both are NaN when the step did not
    run that iteration.
    """

    iteration: int
    avg_return: float
    success_rate: float
    mean_len: float
    mmd_metric: float
    pi_loss: float
    pg_obj: float
    p_size: int
    p_version: int

    def to_row(self) -> list:
        return [self.iteration, self.avg_return, self.success_rate,
                self.mmd_metric, self.pi_loss, self.pg_obj, self.p_size]

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainState:
    """Policy and value networks plus their optimizer states."""

    policy_spec: nets.MlpSpec
    value_spec: nets.MlpSpec
    policy: nets.ParamVector
    value: nets.ParamVector
    adam_policy: nets.AdamState
    adam_value: nets.AdamState


@dataclass
class TrainHooks:
    """Side channels for the service layer; all optional."""

    on_metrics: object = None          # fn(IterationMetrics)
    judgment_provider: object = None   # fn(iteration, candidates, preferred) -> list[Judgment] | None
    on_preferred_update: object = None # fn(preferred)
    should_stop: object = None         # fn() -> bool


@dataclass
class RunResult:
    config: TrainConfig
    metrics: list
    preferred: ann.PreferredSet
    state: TrainState
    resolved_bandwidth: float | None
    out_dir: str | None
    comparisons_per_iteration: list = field(default_factory=list)
    interrupted: bool = False

    def final_success(self, window_frac: float = 0.1) -> float:
        """Mean success rate over the trailing window of iterations."""
        if not self.metrics:
            return 0.0
        n = max(1, int(round(window_frac * len(self.metrics))))
        return float(np.mean([m.success_rate for m in self.metrics[-n:]]))


def build_env(cfg: TrainConfig) -> E.Environment:
    if cfg.env == "grid":
        layout = E.load_map_file(cfg.map_path) if cfg.map_path else E.default_layout()
        return E.grid_environment(layout, max_steps=cfg.max_episode_steps)
    line = E.LineCfg(length=cfg.line.length, v_max=cfg.line.v_max)
    return E.line_environment(line, max_steps=cfg.max_episode_steps)


def init_train_state(cfg: TrainConfig, env: E.Environment) -> TrainState:
    hidden = tuple(cfg.hidden_sizes)
    dtype = np.dtype(cfg.dtype)
    if env.discrete:
        pspec = nets.MlpSpec((env.obs_dim, *hidden, env.action_dim), head="softmax")
    else:
        pspec = nets.MlpSpec((env.obs_dim, *hidden, env.action_dim),
                             head="tanh-gaussian", init_std=cfg.init_std)
    vspec = nets.MlpSpec((env.obs_dim, *hidden, 1), head="linear")
    policy = nets.init_params(pspec, seed=cfg.seed, dtype=dtype)
    value = nets.init_params(vspec, seed=cfg.seed + 1, dtype=dtype)
    return TrainState(pspec, vspec, policy, value,
                      nets.AdamState.zeros(len(policy), dtype=dtype),
                      nets.AdamState.zeros(len(value), dtype=dtype))


def _clipped_surrogate_epoch(policy, pspec, obs, actions, logp_old, advantage,
                             clip_eps, adam_state, lr):
    """One full-batch PPO epoch: returns updated params, adam state, and the
    surrogate value (the maximized objective) before the update."""
    cache = nets.ForwardCache(policy, obs, pspec)
    logp = cache.logp(actions)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    s1 = ratio * advantage
    s2 = clipped * advantage
    surrogate = float(np.minimum(s1, s2).mean())
    # gradient flows only where the unclipped branch is active
    weights = np.where(s1 <= s2, ratio * advantage, 0.0)
    grad = cache.weighted_grad(actions, -weights)
    policy, adam_state = nets.adam_step(
        policy, nets.ParamVector(grad, policy.shapes, policy.log_std_len),
        adam_state, lr)
    return policy, adam_state, surrogate


def pi_step(state: TrainState, buffer: ro.OnPolicyBuffer, cfg: TrainConfig):
    """Policy improvement on environment-reward advantages plus value fit.

    Runs ``epochs_per_iteration`` full-batch epochs of the clipped surrogate
    (the clip radius is the trust region) and regression of the value net to
    the GAE targets. Returns (new state, last-epoch pi loss).
    """
    obs, actions, logp_old, slices = buffer.flat_arrays()
    obs = obs.astype(state.policy.values.dtype)
    advantage = np.concatenate([t.advantages for t in buffer])
    targets = np.concatenate([t.value_targets for t in buffer])
    policy, adam_p = state.policy, state.adam_policy
    value, adam_v = state.value, state.adam_value
    surrogate = 0.0
    for _ in range(cfg.epochs_per_iteration):
        policy, adam_p, surrogate = _clipped_surrogate_epoch(
            policy, state.policy_spec, obs, actions, logp_old, advantage,
            cfg.clip_epsilon, adam_p, cfg.policy_lr)
        vcache = nets.ForwardCache(value, obs, state.value_spec)
        vgrad, _ = vcache.value_mse_grad(targets)
        value, adam_v = nets.adam_step(
            value, nets.ParamVector(vgrad, value.shapes, value.log_std_len),
            adam_v, cfg.value_lr)
        if not math.isfinite(surrogate):
            raise FloatingPointError("non-finite policy-improvement loss")
    new = dataclasses.replace(state, policy=policy, value=value,
                              adam_policy=adam_p, adam_value=adam_v)
    return new, -surrogate


def guidance_rewards(buffer: ro.OnPolicyBuffer, preferred: ann.PreferredSet,
                     kspec: mmd.KernelSpec, cache: mmd.DistanceCache | None = None) -> bool:
    """Attach each trajectory's distance-to-set as its per-step shaped reward.

    Every step of a trajectory receives the same value (the trajectory's own
    mean squared-MMD distance to the preferred set). Returns False and leaves
    the buffer untouched when the set is empty, signalling the guidance step
    should be skipped.
    """
    if len(preferred) == 0:
        return False
    for traj in buffer:
        traj.guidance_distance = mmd.dist_to_set(traj, preferred, kspec, cache)
    return True


def pg_step(state: TrainState, buffer: ro.OnPolicyBuffer, cfg: TrainConfig):
    """Preference guidance: descend on discounted sums of the shaped rewards.

    The shaped reward of each step is its trajectory's distance to the
    preferred set; the per-step returns (discounted suffix sums) are batch
    normalized and entered into the clipped surrogate with a negative sign,
    so minimizing the distance is plain PPO ascent on ``-guidance_coef * Q``.
    Behavior log-probs are refreshed under the current (post-improvement)
    policy so the trust region is centered where this step starts.
    """
    if cfg.guidance_coef == 0.0:
        return state, 0.0
    r_g = np.concatenate([np.full(len(t), t.guidance_distance) for t in buffer])
    if float(r_g.std()) < 1e-12:
        # identical distances carry no preference signal between trajectories
        return state, 0.0
    q = np.concatenate([ro.discounted_suffix_sums(np.full(len(t), t.guidance_distance),
                                                  cfg.gamma) for t in buffer])
    qhat = (q - q.mean()) / (q.std() + 1e-8)
    advantage = -cfg.guidance_coef * qhat
    obs, actions, _, _ = buffer.flat_arrays()
    obs = obs.astype(state.policy.values.dtype)
    base = nets.ForwardCache(state.policy, obs, state.policy_spec)
    logp_old = base.logp(actions)
    policy, adam_p = state.policy, state.adam_policy
    surrogate = 0.0
    for _ in range(cfg.effective_pg_epochs):
        policy, adam_p, surrogate = _clipped_surrogate_epoch(
            policy, state.policy_spec, obs, actions, logp_old, advantage,
            cfg.clip_epsilon, adam_p, cfg.policy_lr)
        if not math.isfinite(surrogate):
            raise FloatingPointError("non-finite preference-guidance objective")
    new = dataclasses.replace(state, policy=policy, adam_policy=adam_p)
    return new, -surrogate


def evaluate(params: nets.ParamVector, spec: nets.MlpSpec, env: E.Environment,
             episodes: int = 20, rng: np.random.Generator | None = None):
    """Stochastic rollouts with the current policy.

    Returns (success rate, average undiscounted return); success means the
    sparse terminal bonus was obtained.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    buf = ro.collect(params, spec, env, episodes, rng, id_prefix="eval")
    success = float(np.mean([t.succeeded() for t in buf]))
    avg_return = float(np.mean([t.return_undiscounted for t in buf]))
    return success, avg_return


def _rng(tag: int, iteration: int, seed: int) -> np.random.Generator:
    return np.random.default_rng([tag, iteration, seed])


def _resolve_bandwidth(kspec: mmd.KernelSpec, buffer, preferred, seed):
    states = [kspec.project(t) for t in buffer] + [kspec.project(t) for t in preferred]
    sigma = mmd.median_bandwidth(np.concatenate(states), _rng(4, 0, seed))
    return kspec.with_bandwidth(sigma)


class _RunWriter:
    """Streams the on-disk run record; safe to finalize after an abort."""

    def __init__(self, out_dir: str | None, cfg: TrainConfig):
        self.dir = out_dir
        self.fh = None
        self.writer = None
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "trajectories"), exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_json())
        self.fh = open(os.path.join(out_dir, "metrics.csv"), "w",
                       encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(METRIC_COLUMNS)

    def metrics_row(self, m: IterationMetrics) -> None:
        if self.writer:
            self.writer.writerow(m.to_row())
            self.fh.flush()

    def checkpoint(self, iteration: int, state: TrainState) -> None:
        if self.dir is None:
            return
        record = {
            "iteration": iteration,
            "policy": nets.checkpoint_dump(state.policy_spec, state.policy,
                                           state.adam_policy),
            "value": nets.checkpoint_dump(state.value_spec, state.value,
                                          state.adam_value),
        }
        path = os.path.join(self.dir, "checkpoints", f"iter_{iteration}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(record, fh)

    def trajectories(self, iteration: int, buffer) -> None:
        if self.dir is None:
            return
        ro.dump_trajectories(buffer, os.path.join(
            self.dir, "trajectories", f"iter_{iteration}.jsonl"))

    def preferred(self, preferred: ann.PreferredSet, kind: str) -> None:
        if self.dir is None:
            return
        with open(os.path.join(self.dir, "preferred_set.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(preferred.to_jsonable(kind), fh)

    def close(self):
        if self.fh:
            self.fh.close()
            self.fh = None


def train(cfg: TrainConfig, out_dir: str | None = None,
          hooks: TrainHooks | None = None) -> RunResult:
    """Run the full training loop; returns the in-memory run record.

    Iteration order: collect, advantage annotation, policy improvement,
    preference guidance against the previous iteration's preferred set,
    then the preferred-set update and metrics. With ``out_dir`` set, the
    run directory (config.json, metrics.csv, checkpoints/, trajectories/,
    preferred_set.json) is written incrementally and survives aborts.
    """
    hooks = hooks or TrainHooks()
    env = build_env(cfg)
    state = init_train_state(cfg, env)
    preferred = ann.PreferredSet(h=cfg.preferred_capacity)
    cache = mmd.DistanceCache()
    kspec = mmd.KernelSpec(bandwidth=cfg.kernel.bandwidth,
                           projection=tuple(cfg.kernel.projection))
    mislabel = None
    if cfg.annotation.mislabel_ratio > 0:
        mislabel = ann.MislabelConfig(cfg.annotation.mislabel_ratio,
                                      _rng(3, 0, cfg.seed))
    writer = _RunWriter(out_dir, cfg)
    result = RunResult(cfg, [], preferred, state, None, out_dir)
    try:
        for k in range(cfg.iterations):
            if hooks.should_stop and hooks.should_stop():
                result.interrupted = True
                break
            buffer = ro.collect(state.policy, state.policy_spec, env,
                                cfg.episodes_per_iteration, _rng(1, k, cfg.seed),
                                id_prefix=f"i{k}",
                                age_base=k * cfg.episodes_per_iteration)
            ro.annotate_gae(buffer, state.value, state.value_spec,
                            gamma=cfg.gamma, lam=cfg.gae_lambda,
                            normalize=cfg.advantage_norm)
            pi_loss = float("nan")
            if not cfg.no_pi:
                state, pi_loss = pi_step(state, buffer, cfg)
            pg_obj = float("nan")
            mmd_metric = float("nan")
            if not cfg.no_pg and len(preferred) > 0:
                if not kspec.resolved:
                    kspec = _resolve_bandwidth(kspec, buffer, preferred, cfg.seed)
                    result.resolved_bandwidth = kspec.sigma()
                if guidance_rewards(buffer, preferred, kspec, cache):
                    state, pg_obj = pg_step(state, buffer, cfg)
                    mmd_metric = mmd.policy_mmd_metric(buffer, preferred, kspec, cache)
            candidates = []
            if cfg.annotation.mode != "none":
                candidates = ann.annotation_workload_schedule(
                    k, buffer, preferred, cfg.annotation.warmup_iters,
                    cfg.annotation.min_nodes)
            comparisons = 0
            if candidates:
                comparator = None
                if cfg.annotation.mode == "human" and hooks.judgment_provider:
                    judgments = hooks.judgment_provider(k, candidates, preferred)
                    if judgments is not None:
                        comparator = ann.make_judgment_comparator(judgments)
                if comparator is None:
                    comparator = ann.make_oracle_comparator(mislabel)
                stats = ann.update_preferred_set(preferred, candidates, comparator)
                comparisons = stats.comparisons
                if stats.changed:
                    writer.preferred(preferred, env.kind)
                    if hooks.on_preferred_update:
                        hooks.on_preferred_update(preferred)
            result.comparisons_per_iteration.append(comparisons)
            success, avg_return = evaluate(state.policy, state.policy_spec, env,
                                           cfg.eval_episodes, _rng(5, k, cfg.seed))
            mean_len = float(np.mean([len(t) for t in buffer]))
            metrics = IterationMetrics(k, avg_return, success, mean_len,
                                       mmd_metric, pi_loss, pg_obj,
                                       len(preferred), preferred.version)
            result.metrics.append(metrics)
            writer.metrics_row(metrics)
            if hooks.on_metrics:
                hooks.on_metrics(metrics)
            last = k == cfg.iterations - 1
            if last or (cfg.checkpoint_every and (k + 1) % cfg.checkpoint_every == 0):
                writer.checkpoint(k, state)
            if last or (cfg.traj_dump_every and (k + 1) % cfg.traj_dump_every == 0):
                writer.trajectories(k, buffer)
        result.state = state
        writer.preferred(preferred, env.kind)
    finally:
        writer.close()
    return result
