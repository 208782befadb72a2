"""Stochastic tree search with decision and chance nodes, guided by a policy/value evaluator.

Decision nodes hold a state whose pending vehicle must be dispatched; each
legal action leads to a chance node that resolves the damage status of the
traversed line.  Selection uses PUCT on min-max normalised Q values, leaves
are scored by the evaluator, and returns are backed up n-step style.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvState, Observation, chance_outcomes, expected_step_reward, transition


class SearchError(RuntimeError):
    pass


class MinMaxStats:
    """Running extrema of the raw Q values seen in one tree."""

    def __init__(self):
        self.min_q = math.inf
        self.max_q = -math.inf

    def update(self, q: float) -> None:
        if q < self.min_q:
            self.min_q = q
        if q > self.max_q:
            self.max_q = q

    def normalize(self, q: float) -> float:
        """Map q into [0, 1] using the observed range (clipped); 0 while the range is degenerate."""
        if self.max_q > self.min_q:
            return min(1.0, max(0.0, (q - self.min_q) / (self.max_q - self.min_q)))
        return 0.0


class UniformEvaluator:
    """Network-free evaluator: uniform prior, zero value."""

    def evaluate(self, state: EnvState, n_legal: int):
        return np.full(n_legal, 1.0 / n_legal), 0.0


@dataclass
class Edge:
    prior: float
    reward: float
    N: int = 0
    W: float = 0.0
    Q: float = 0.0
    chance: "RandomNode | None" = None


class RandomNode:
    """State-action pair; children keyed by the observation of the traversed line."""

    def __init__(self, outcomes):
        self.outcomes = outcomes          # [(prob, Observation)]
        self.children = {}                # Observation -> DecisionNode
        self.counts = {}                  # Observation -> N(S,a,o)

    def visits(self) -> int:
        return sum(self.counts.values())


class DecisionNode:
    def __init__(self, state: EnvState):
        self.state = state
        self.terminal = state.terminal
        self.actions: tuple = () if self.terminal else state.legal_actions()
        self.edges: dict = {}
        self.expanded = False

    def expand(self, priors: np.ndarray) -> None:
        ctx = self.state.ctx
        post = self.state.belief.posterior
        origin = self.state.pending.position
        for a, p in zip(self.actions, priors):
            self.edges[a] = Edge(prior=float(p), reward=expected_step_reward(ctx, post, origin, a))
        self.expanded = True

    @property
    def total_visits(self) -> int:
        return sum(e.N for e in self.edges.values())


@dataclass
class SearchResult:
    actions: tuple
    visit_counts: np.ndarray
    policy: np.ndarray
    root_q: np.ndarray
    value_target: float
    root: DecisionNode | None = field(default=None, repr=False)

    def best_action(self) -> int:
        """Most-visited action; ties go to the higher Q, then to the earlier action."""
        order = sorted(range(len(self.actions)), key=lambda i: (-self.visit_counts[i], -self.root_q[i], i))
        return self.actions[order[0]]

    def policy_vector(self, policy_dim: int) -> np.ndarray:
        out = np.zeros(policy_dim)
        out[: len(self.policy)] = self.policy
        return out

    def to_dict(self) -> dict:
        edges = self.root.edges if self.root is not None else {}
        return {
            "actions": list(self.actions),
            "N": [int(n) for n in self.visit_counts],
            "Q": [float(q) for q in self.root_q],
            "P": [edges[a].prior if a in edges else None for a in self.actions],
            "pi": [float(p) for p in self.policy],
            "z": self.value_target,
        }


def masked_priors(p_full: np.ndarray, n_legal: int) -> np.ndarray:
    """Keep the first ``n_legal`` policy slots and renormalise."""
    p = np.asarray(p_full[:n_legal], dtype=float)
    if not np.all(np.isfinite(p)):
        raise SearchError("network policy is not finite")
    s = p.sum()
    if s <= 0.0:
        return np.full(n_legal, 1.0 / n_legal)
    return p / s


def select_action(node: DecisionNode, minmax: MinMaxStats, c_puct: float, rng=None):
    """PUCT argmax with min-max normalised Q; ties broken uniformly with ``rng``."""
    if not node.expanded:
        raise SearchError("select_action on an unexpanded node")
    # floor at one visit so a fresh node is ordered by its priors
    sqrt_total = math.sqrt(max(1, node.total_visits))
    best, cands = -math.inf, []
    for a in node.actions:
        e = node.edges[a]
        q = minmax.normalize(e.Q)   # unvisited edges carry Q = 0
        score = q + c_puct * e.prior * sqrt_total / (1 + e.N)
        if score > best + 1e-12:
            best, cands = score, [a]
        elif score >= best - 1e-12:
            cands.append(a)
    if len(cands) == 1 or rng is None:
        return cands[0]
    return cands[int(rng.integers(len(cands)))]


def sample_observation(chance: RandomNode, rng):
    """Draw an observation from the chance node; returns (observation, child or None)."""
    outs = chance.outcomes
    if len(outs) == 1:
        o = outs[0][1]
    else:
        u = rng.random()
        acc = 0.0
        o = outs[-1][1]
        for p, obs in outs:
            acc += p
            if u < acc:
                o = obs
                break
    return o, chance.children.get(o)


def expand(parent_state: EnvState, action, observation: Observation, evaluator):
    """Create the decision node reached by (action, observation) and score it: returns (node, v_L)."""
    child = DecisionNode(transition(parent_state, action, observation).next_state)
    if child.terminal:
        child.expanded = True
        return child, 0.0
    p_full, v = evaluator.evaluate(child.state, len(child.actions))
    if not math.isfinite(v):
        raise SearchError("network value is not finite")
    child.expand(masked_priors(p_full, len(child.actions)))
    return child, float(v)


def backpropagate(path, v_leaf: float, gamma: float, minmax: MinMaxStats) -> None:
    """Back up G_l = r_l + gamma * G_{l+1} along ``path`` of (node, action, observation), starting from v_leaf."""
    g = v_leaf
    for node, a, obs in reversed(path):
        e = node.edges[a]
        g = e.reward + gamma * g
        e.N += 1
        e.W += g
        e.Q = e.W / e.N
        e.chance.counts[obs] = e.chance.counts.get(obs, 0) + 1
        minmax.update(e.Q)


def visit_policy(counts: np.ndarray, tau: float) -> np.ndarray:
    """pi_a proportional to N_a^(1/tau); tau == 0 puts all mass on the most-visited action."""
    counts = np.asarray(counts, dtype=float)
    if tau <= 0.0 or counts.sum() == 0:
        pi = np.zeros_like(counts)
        pi[int(np.argmax(counts))] = 1.0
        return pi
    with np.errstate(divide="ignore"):
        logits = np.log(counts) / tau
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def search(root_state: EnvState, evaluator=None, M: int = 30, c_puct: float = 1.25, gamma: float = 1.0,
           tau: float = 1.0, seed: int = 0, root_noise: tuple | None = None, keep_tree: bool = False) -> SearchResult:
    """Run ``M`` simulations from ``root_state`` and return visit statistics, pi and the value target."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if root_state.terminal:
        raise SearchError("search from a terminal state")
    evaluator = evaluator or UniformEvaluator()
    rng = np.random.default_rng(seed)
    root = DecisionNode(root_state.public() if root_state.damage is not None else root_state)
    p_full, _ = evaluator.evaluate(root.state, len(root.actions))
    priors = masked_priors(p_full, len(root.actions))
    if root_noise is not None:
        alpha, frac = root_noise
        priors = (1 - frac) * priors + frac * rng.dirichlet([alpha] * len(priors))
    root.expand(priors)
    minmax = MinMaxStats()

    for _ in range(M):
        node = root
        path = []
        while True:
            a = select_action(node, minmax, c_puct, rng)
            e = node.edges[a]
            if e.chance is None:
                e.chance = RandomNode(chance_outcomes(node.state, a))
            obs, child = sample_observation(e.chance, rng)
            path.append((node, a, obs))
            if child is None:
                child, v = expand(node.state, a, obs, evaluator)
                e.chance.children[obs] = child
                break
            if child.terminal:
                v = 0.0
                break
            node = child
        backpropagate(path, v, gamma, minmax)

    counts = np.array([root.edges[a].N for a in root.actions], dtype=float)
    q = np.array([root.edges[a].Q for a in root.actions])
    visited = counts > 0
    z = float(q[visited].max())
    return SearchResult(root.actions, counts, visit_policy(counts, tau), q, z, root if keep_tree else None)
