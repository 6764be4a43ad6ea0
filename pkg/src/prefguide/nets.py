"""Minimal numpy MLP stack for policy and value networks.

Tanh hidden layers with one of three heads (softmax over discrete actions,
tanh-squashed Gaussian mean with learned per-dimension log-std, or a linear
scalar), exact analytic gradients via hand-rolled backprop, and a plain Adam
optimizer. Everything operates on a flat parameter vector so checkpoints and
finite-difference checks stay trivial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HEADS = ("softmax", "tanh-gaussian", "linear")

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer sizes input -> hidden... -> output.

    ``init_std`` is only used by the tanh-gaussian head: the learned log-std
    block is initialized to ``ln(init_std)`` so the starting action noise is
    an explicit, configurable quantity.
    """

    layer_sizes: tuple[int, ...]
    head: str = "softmax"
    init_std: float = 1.0

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if any(int(s) <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}, expected one of {HEADS}")
        if self.head == "linear" and self.layer_sizes[-1] != 1:
            raise ValueError("linear head is scalar: output size must be 1")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def layer_shapes(self) -> tuple[tuple[int, int, int], ...]:
        """(rows, cols, bias_len) per affine layer, weight stored row-major."""
        sizes = self.layer_sizes
        return tuple((sizes[i + 1], sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1))

    @property
    def log_std_len(self) -> int:
        return self.out_dim if self.head == "tanh-gaussian" else 0

    def param_count(self) -> int:
        n = sum(r * c + b for r, c, b in self.layer_shapes())
        return n + self.log_std_len

    def to_jsonable(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "head": self.head,
            "init_std": self.init_std,
        }

    @staticmethod
    def from_jsonable(d: dict) -> "MlpSpec":
        return MlpSpec(
            layer_sizes=tuple(d["layer_sizes"]),
            head=d["head"],
            init_std=d.get("init_std", 1.0),
        )


@dataclass
class ParamVector:
    """Flat parameter store plus per-layer shape metadata.

    ``values`` holds, in order, each layer's weight matrix (row-major) and
    bias, followed by the log-std block for tanh-gaussian heads.
    """

    values: np.ndarray
    shapes: tuple[tuple[int, int, int], ...]
    log_std_len: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        expected = sum(r * c + b for r, c, b in self.shapes) + self.log_std_len
        if self.values.ndim != 1 or len(self.values) != expected:
            raise ValueError(f"expected {expected} parameters, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")

    def __len__(self) -> int:
        return len(self.values)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shapes, self.log_std_len)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (no copies) of each layer's (weight, bias)."""
        out = []
        off = 0
        for rows, cols, blen in self.shapes:
            w = self.values[off:off + rows * cols].reshape(rows, cols)
            off += rows * cols
            b = self.values[off:off + blen]
            off += blen
            out.append((w, b))
        return out

    def log_std(self) -> np.ndarray:
        if self.log_std_len == 0:
            return self.values[len(self.values):]
        return self.values[-self.log_std_len:]


@dataclass
class PolicyOutput:
    """Distribution parameters produced by a policy forward pass.

    Discrete: ``probs`` over actions. Continuous: ``mean`` (tanh-squashed)
    and strictly positive per-dimension ``std``.
    """

    kind: str
    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None


@dataclass
class AdamState:
    """First/second moment estimates and step counter for Adam."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def zeros(n: int, dtype=np.float64) -> "AdamState":
        return AdamState(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype))

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def init_params(spec: MlpSpec, seed: int, dtype=np.float64) -> ParamVector:
    """Deterministic init: scaled-uniform weights, zero biases.

    Weight entries are uniform in +-sqrt(6/(fan_in+fan_out)); the gaussian
    head's log-std block starts at ln(init_std).
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for rows, cols, blen in spec.layer_shapes():
        lim = math.sqrt(6.0 / (rows + cols))
        chunks.append(rng.uniform(-lim, lim, rows * cols))
        chunks.append(np.zeros(blen))
    if spec.log_std_len:
        chunks.append(np.full(spec.log_std_len, math.log(spec.init_std)))
    flat = np.concatenate(chunks).astype(dtype)
    return ParamVector(flat, spec.layer_shapes(), spec.log_std_len)


def _as_batch(obs, in_dim: int, dtype) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ValueError(f"observation dim {x.shape} does not match input size {in_dim}")
    return x, single


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ForwardCache:
    """One forward pass with stored activations, reusable for log-probs and
    for the backward pass of a weighted log-prob objective."""

    def __init__(self, params: ParamVector, obs, spec: MlpSpec):
        if params.shapes != spec.layer_shapes() or params.log_std_len != spec.log_std_len:
            raise ValueError("parameter layout does not match spec")
        x, self.single = _as_batch(obs, spec.in_dim, params.values.dtype)
        self.params = params
        self.spec = spec
        self.acts = [x]
        layers = params.layers()
        h = x
        for w, b in layers[:-1]:
            z = h @ w.T
            z += b
            h = np.tanh(z, out=z)
            self.acts.append(h)
        w, b = layers[-1]
        self.z = h @ w.T
        self.z += b
        self.probs = None
        self.mean = None
        self.std = None
        if spec.head == "softmax":
            self.probs = _softmax(self.z)
        elif spec.head == "tanh-gaussian":
            self.mean = np.tanh(self.z)
            self.std = np.exp(params.log_std())

    def output(self) -> PolicyOutput:
        if self.spec.head == "softmax":
            p = self.probs[0] if self.single else self.probs
            return PolicyOutput(kind="softmax", probs=p)
        if self.spec.head == "tanh-gaussian":
            m = self.mean[0] if self.single else self.mean
            return PolicyOutput(kind="tanh-gaussian", mean=m, std=self.std)
        v = self.z[:, 0]
        return PolicyOutput(kind="linear")  # pragma: no cover - heads use value()

    def value(self) -> np.ndarray:
        return self.z[:, 0]

    def logp(self, actions) -> np.ndarray:
        """Log-probability of each action row under the batch's distribution."""
        if self.spec.head == "softmax":
            a = np.asarray(actions, dtype=np.intp)
            if np.any(a < 0) or np.any(a >= self.spec.out_dim):
                raise ValueError("action index out of range")
            zmax = self.z.max(axis=1)
            lse = zmax + np.log(np.exp(self.z - zmax[:, None]).sum(axis=1))
            return self.z[np.arange(len(a)), a] - lse
        if self.spec.head == "tanh-gaussian":
            a = np.asarray(actions, dtype=self.z.dtype)
            if a.ndim == 1:
                a = a.reshape(-1, self.spec.out_dim)
            u = (a - self.mean) / self.std
            return -0.5 * (u * u).sum(axis=1) - np.log(self.std).sum() \
                - 0.5 * self.spec.out_dim * LOG_2PI
        raise ValueError("logp undefined for linear head")

    def weighted_grad(self, actions, weights) -> np.ndarray:
        """Flat gradient of mean_i[weights_i * log pi(actions_i | obs_i)]."""
        n = self.z.shape[0]
        w = np.asarray(weights, dtype=self.z.dtype) / n
        if self.spec.head == "softmax":
            a = np.asarray(actions, dtype=np.intp)
            dz = -self.probs * w[:, None]
            dz[np.arange(n), a] += w
            g_extra = None
        elif self.spec.head == "tanh-gaussian":
            a = np.asarray(actions, dtype=self.z.dtype)
            if a.ndim == 1:
                a = a.reshape(-1, self.spec.out_dim)
            inv_var = 1.0 / (self.std * self.std)
            dmean = (a - self.mean) * inv_var * w[:, None]
            dz = dmean * (1.0 - self.mean * self.mean)
            u2 = ((a - self.mean) / self.std) ** 2
            g_extra = ((u2 - 1.0) * w[:, None]).sum(axis=0)
        else:
            raise ValueError("weighted_grad undefined for linear head")
        return self._backward(dz, g_extra)

    def value_mse_grad(self, targets) -> tuple[np.ndarray, float]:
        """Flat gradient and value of mean_i[(v_i - targets_i)^2]."""
        if self.spec.head != "linear":
            raise ValueError("value_mse_grad requires linear head")
        t = np.asarray(targets, dtype=self.z.dtype)
        diff = self.z[:, 0] - t
        loss = float(np.mean(diff * diff))
        dz = (2.0 * diff / len(diff))[:, None]
        return self._backward(dz, None), loss

    def _backward(self, dz: np.ndarray, g_log_std: np.ndarray | None) -> np.ndarray:
        params = self.params
        layers = params.layers()
        flat = np.zeros(len(params.values), dtype=params.values.dtype)
        gview = ParamVector(flat, params.shapes, params.log_std_len)
        gl = gview.layers()
        d = dz
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            gw, gb = gl[li]
            np.matmul(d.T, self.acts[li], out=gw)
            d.sum(axis=0, out=gb)
            if li > 0:
                da = d @ w
                h = self.acts[li]
                da *= 1.0 - h * h
                d = da
        if params.log_std_len and g_log_std is not None:
            flat[-params.log_std_len:] = g_log_std
        return flat


def forward_policy(params: ParamVector, obs, spec: MlpSpec) -> PolicyOutput:
    """Run the policy network; obs may be a single vector or a batch."""
    return ForwardCache(params, obs, spec).output()


def forward_value(params: ParamVector, obs, spec: MlpSpec):
    """Run the value network; returns a float for 1-D obs, array for a batch."""
    cache = ForwardCache(params, obs, spec)
    v = cache.value()
    return float(v[0]) if cache.single else v


def log_prob(out: PolicyOutput, action) -> float:
    """Log-probability of one action under a single-observation PolicyOutput."""
    if out.kind == "softmax":
        a = int(action)
        if a < 0 or a >= len(out.probs):
            raise ValueError(f"action {a} out of range for {len(out.probs)} actions")
        return float(np.log(out.probs[a]))
    if out.kind == "tanh-gaussian":
        a = np.asarray(action, dtype=float).reshape(-1)
        u = (a - out.mean) / out.std
        return float(-0.5 * (u * u).sum() - np.log(out.std).sum() - 0.5 * len(a) * LOG_2PI)
    raise ValueError(f"log_prob undefined for head {out.kind!r}")


def weighted_logprob_grad(params: ParamVector, batch, spec: MlpSpec) -> ParamVector:
    """Exact gradient of mean_i[w_i * log pi(a_i|s_i)] over (obs, action, weight) triples."""
    if not batch:
        raise ValueError("batch must be nonempty")
    obs = np.stack([np.asarray(o, dtype=params.values.dtype) for o, _, _ in batch])
    weights = np.array([w for _, _, w in batch], dtype=params.values.dtype)
    if spec.head == "softmax":
        actions = np.array([a for _, a, _ in batch], dtype=np.intp)
    else:
        actions = np.stack([np.atleast_1d(np.asarray(a, dtype=params.values.dtype))
                            for _, a, _ in batch])
    cache = ForwardCache(params, obs, spec)
    flat = cache.weighted_grad(actions, weights)
    return ParamVector(flat, params.shapes, params.log_std_len)


def adam_step(params: ParamVector, grad: ParamVector, state: AdamState,
              lr: float) -> tuple[ParamVector, AdamState]:
    """One Adam descent step on the given gradient; returns fresh objects."""
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    if len(g) != len(params.values):
        raise ValueError("gradient length does not match parameters")
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    t = state.t + 1
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - lr * mhat / (np.sqrt(vhat) + state.eps)
    new_params = ParamVector(new_values, params.shapes, params.log_std_len)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def checkpoint_dump(spec: MlpSpec, params: ParamVector, state: AdamState) -> dict:
    """JSON-ready record of one network; round-trips bit-exactly."""
    return {
        "spec": spec.to_jsonable(),
        "dtype": str(params.values.dtype),
        "values": params.values.tolist(),
        "adam": {
            "m": state.m.tolist(),
            "v": state.v.tolist(),
            "t": state.t,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
        },
    }


def checkpoint_load(record: dict) -> tuple[MlpSpec, ParamVector, AdamState]:
    spec = MlpSpec.from_jsonable(record["spec"])
    dtype = np.dtype(record.get("dtype", "float64"))
    params = ParamVector(np.array(record["values"], dtype=dtype),
                         spec.layer_shapes(), spec.log_std_len)
    a = record["adam"]
    state = AdamState(np.array(a["m"], dtype=dtype), np.array(a["v"], dtype=dtype),
                      int(a["t"]), a["beta1"], a["beta2"], a["eps"])
    return spec, params, state
