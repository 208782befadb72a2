"""Small fully-connected policy/value network in numpy with hand-written backprop.

Two hidden layers feed a single output layer whose first ``policy_dim``
units are policy logits and whose last unit is the value.  Training
minimises squared value error + policy cross-entropy over legal slots + an
L2 penalty on every parameter, using RMSprop.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass

import numpy as np

CHECKPOINT_FORMAT = "gridcrew-net"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    policy_dim: int
    hidden_dims: tuple = (120, 120)
    learning_rate: float = 1e-4
    l2_coeff: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    activation: str = "relu"
    rms_decay: float = 0.9
    rms_eps: float = 1e-8

    def __post_init__(self):
        if self.input_dim < 1 or self.policy_dim < 1:
            raise ValueError("input_dim and policy_dim must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim, *self.hidden_dims, self.policy_dim + 1]


@dataclass
class Sample:
    state_encoding: np.ndarray
    policy_target: np.ndarray
    value_target: float      # already divided by the value scale
    legal_mask: np.ndarray


# ---------------------------------------------------------------------------
# Parameters and forward pass
# ---------------------------------------------------------------------------

def init_params(cfg: NetConfig) -> list:
    """Per-layer [W, b] with W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero biases."""
    rng = np.random.default_rng(cfg.seed)
    sizes = cfg.layer_sizes
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append([rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)])
    return params


def zeros_like_params(params) -> list:
    return [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]


def _act(h, activation):
    return np.maximum(h, 0.0) if activation == "relu" else np.tanh(h)


def _act_grad(pre, post, activation):
    return (pre > 0.0).astype(float) if activation == "relu" else 1.0 - post ** 2


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    z = np.array(logits, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params, X, activation):
    acts = [X]
    pres = []
    h = X
    for W, b in params[:-1]:
        pre = h @ W + b
        h = _act(pre, activation)
        pres.append(pre)
        acts.append(h)
    W, b = params[-1]
    out = h @ W + b
    return out, pres, acts


def forward(params, x, mask=None, activation: str = "relu"):
    """(p, v) for one input vector (or a batch); softmax restricted to ``mask`` when given."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite network input")
    out, _, _ = _forward_cache(params, x, activation)
    p = masked_softmax(out[..., :-1], mask)
    return p, (out[..., -1] if out.ndim > 1 else float(out[-1]))


def l2_norm_sq(params) -> float:
    return float(sum((W * W).sum() + (b * b).sum() for W, b in params))


def loss_and_grads(params, X, PI, Z, MASK, l2_coeff: float, activation: str = "relu"):
    """Mean batch loss parts (value, policy, l2) and the gradient of their sum."""
    B = X.shape[0]
    out, pres, acts = _forward_cache(params, X, activation)
    logits, v = out[:, :-1], out[:, -1]
    p = masked_softmax(logits, MASK)
    logp = np.where(MASK, np.log(np.where(MASK, p, 1.0)), 0.0)
    value_loss = float(((Z - v) ** 2).mean())
    policy_loss = float(-(PI * logp).sum(axis=1).mean())
    l2 = l2_coeff * l2_norm_sq(params) if l2_coeff else 0.0

    d_out = np.empty_like(out)
    # cross-entropy gradient assumes PI sums to 1 over the legal slots
    d_out[:, :-1] = np.where(MASK, p * PI.sum(axis=1, keepdims=True) - PI, 0.0) / B
    d_out[:, -1] = 2.0 * (v - Z) / B
    grads = zeros_like_params(params)
    delta = d_out
    for layer in range(len(params) - 1, -1, -1):
        W, b = params[layer]
        grads[layer][0] = acts[layer].T @ delta
        grads[layer][1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ W.T) * _act_grad(pres[layer - 1], acts[layer], activation)
    if l2_coeff:
        for g, prm in zip(grads, params):
            g[0] += 2.0 * l2_coeff * prm[0]
            g[1] += 2.0 * l2_coeff * prm[1]
    return {"value": value_loss, "policy": policy_loss, "l2": l2}, grads


def stack_batch(batch):
    X = np.stack([np.asarray(s.state_encoding, dtype=float) for s in batch])
    PI = np.stack([np.asarray(s.policy_target, dtype=float) for s in batch])
    Z = np.array([float(s.value_target) for s in batch])
    MASK = np.stack([np.asarray(s.legal_mask, dtype=bool) for s in batch])
    return X, PI, Z, MASK


def train_step(params, opt_state, batch, cfg: NetConfig):
    """One RMSprop update on ``batch``; returns (params', opt_state', loss parts)."""
    if not batch:
        raise ValueError("empty batch")
    X, PI, Z, MASK = stack_batch(batch)
    parts, grads = loss_and_grads(params, X, PI, Z, MASK, cfg.l2_coeff, cfg.activation)
    total = parts["value"] + parts["policy"] + parts["l2"]
    if not np.isfinite(total):
        out, _, _ = _forward_cache(params, X, cfg.activation)
        bad = [i for i in range(len(batch)) if not (np.all(np.isfinite(out[i])) and np.isfinite(Z[i]))]
        raise NonFiniteError(f"non-finite loss {parts}; offending samples {bad or 'unknown'}")
    new_params, new_opt = [], []
    for (W, b), (gW, gb), (sW, sb) in zip(params, grads, opt_state):
        sW = cfg.rms_decay * sW + (1.0 - cfg.rms_decay) * gW * gW
        sb = cfg.rms_decay * sb + (1.0 - cfg.rms_decay) * gb * gb
        new_params.append([W - cfg.learning_rate * gW / (np.sqrt(sW) + cfg.rms_eps),
                           b - cfg.learning_rate * gb / (np.sqrt(sb) + cfg.rms_eps)])
        new_opt.append([sW, sb])
    return new_params, new_opt, parts


# ---------------------------------------------------------------------------
# State encoding and the evaluator wrapper used by the search
# ---------------------------------------------------------------------------

def belief_width(grid, unit: str = "line") -> int:
    return len(grid.segments) if unit == "segment" else len(grid.lines)


def input_dim_for(scenario) -> int:
    return 1 + belief_width(scenario.grid, scenario.belief_unit)


def encode_state(state, grid=None, unit: str | None = None) -> np.ndarray:
    """[normalised position of the pending vehicle] ++ per-line (or per-segment) posteriors."""
    grid = grid or state.ctx.grid
    unit = unit or state.ctx.scenario.belief_unit
    n = len(grid.road.nodes)
    pos = grid.node_position[state.pending.position] / max(n - 1, 1)
    probs = state.belief.segment_posterior if unit == "segment" else state.belief.posterior
    return np.concatenate(([pos], probs))


def default_value_scale(scenario) -> float:
    """Customers times a rough horizon (expected repairs plus one pass over every road edge), in hours."""
    if scenario.value_scale:
        return float(scenario.value_scale)
    g = scenario.grid
    minutes = sum(ln.prior_fault_prob * ln.repair_time_minutes for ln in g.lines)
    minutes += sum(t for _, _, t in g.road.edges)
    return max(1.0, g.total_customers * minutes / 60.0)


class PolicyValueNet:
    """Parameters + optimiser state + config; also the evaluator interface for the search."""

    def __init__(self, cfg: NetConfig, value_scale: float = 1.0, params=None, opt_state=None, version: int = 0):
        self.cfg = cfg
        self.value_scale = float(value_scale)
        self.params = params if params is not None else init_params(cfg)
        self.opt_state = opt_state if opt_state is not None else zeros_like_params(self.params)
        self.version = version

    @classmethod
    def for_scenario(cls, scenario, **overrides) -> "PolicyValueNet":
        cfg = NetConfig(input_dim=input_dim_for(scenario), policy_dim=scenario.grid.policy_dim, **overrides)
        return cls(cfg, default_value_scale(scenario))

    def forward(self, x, mask=None):
        return forward(self.params, x, mask, self.cfg.activation)

    def evaluate(self, state, n_legal: int):
        mask = np.zeros(self.cfg.policy_dim, dtype=bool)
        mask[:n_legal] = True
        p, v = self.forward(encode_state(state), mask)
        return p, v * self.value_scale

    def train_step(self, batch) -> dict:
        self.params, self.opt_state, parts = train_step(self.params, self.opt_state, batch, self.cfg)
        self.version += 1
        return parts

    def snapshot(self) -> "PolicyValueNet":
        """Read-only copy for searchers (parameters are replaced, never mutated, by training)."""
        return PolicyValueNet(self.cfg, self.value_scale, self.params, self.opt_state, self.version)

    # -- checkpoints ---------------------------------------------------------
    def to_payload(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "value_scale": self.value_scale,
            "version": self.version,
            "params": [[W.tolist(), b.tolist()] for W, b in self.params],
            "opt_state": [[W.tolist(), b.tolist()] for W, b in self.opt_state],
        }

    def save(self, path) -> str:
        payload = self.to_payload()
        body = json.dumps(payload, sort_keys=True)
        digest = hashlib.sha256(body.encode()).hexdigest()
        with open(path, "w") as fh:
            json.dump({"sha256": digest, "payload": payload}, fh, sort_keys=True)
        return digest

    @classmethod
    def load(cls, path) -> "PolicyValueNet":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
        payload = doc.get("payload")
        if payload is None or payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
        body = json.dumps(payload, sort_keys=True)
        if hashlib.sha256(body.encode()).hexdigest() != doc.get("sha256"):
            raise CheckpointError(f"{path}: checksum mismatch")
        cfg = NetConfig(**payload["config"])
        params = [[np.array(W, dtype=float).reshape(a, b), np.array(bb, dtype=float)]
                  for (W, bb), a, b in zip(payload["params"], cfg.layer_sizes[:-1], cfg.layer_sizes[1:])]
        opt = [[np.array(W, dtype=float).reshape(a, b), np.array(bb, dtype=float)]
               for (W, bb), a, b in zip(payload["opt_state"], cfg.layer_sizes[:-1], cfg.layer_sizes[1:])]
        return cls(cfg, payload["value_scale"], params, opt, payload["version"])


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring of samples, uniform sampling with replacement, guarded by one lock."""

    def __init__(self, capacity: int = 20_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self._items: list = []
        self._next = 0
        self.pushed = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def push(self, sample: Sample) -> None:
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(sample)
            else:
                self._items[self._next] = sample
            self._next = (self._next + 1) % self.capacity
            self.pushed += 1

    def extend(self, samples) -> None:
        for s in samples:
            self.push(s)

    def sample(self, n: int) -> list:
        with self._lock:
            if not self._items:
                raise IndexError("sample from an empty replay buffer")
            idx = self.rng.integers(len(self._items), size=n)
            return [self._items[i] for i in idx]

    def contents(self) -> list:
        """Samples in insertion order (oldest first)."""
        with self._lock:
            if len(self._items) < self.capacity:
                return list(self._items)
            return self._items[self._next:] + self._items[: self._next]
