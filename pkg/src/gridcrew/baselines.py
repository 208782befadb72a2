"""Comparison policies: closed-loop UCT with random rollouts, open-loop UCT, and a greedy heuristic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvState, chance_outcomes, expected_step_reward, transition
from .mcts import MinMaxStats, RandomNode, sample_observation

ALGORITHMS = ("vanilla_mcts", "oluct", "greedy")


@dataclass(frozen=True)
class BaselineConfig:
    algorithm: str = "vanilla_mcts"
    sims: int = 200
    uct_c: float = math.sqrt(2.0)
    rollout_depth: int = 20
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown baseline {self.algorithm!r}")
        if self.algorithm != "greedy" and self.sims < 1:
            raise ValueError("sims must be >= 1 for tree search baselines")


def _check(state: EnvState):
    if state.terminal:
        raise ValueError("decision requested in a terminal state")


def _sample_step(state: EnvState, a, rng):
    """Draw the traversed line's status from the belief and apply it; returns (reward, next state)."""
    outs = chance_outcomes(state, a)
    if len(outs) == 1:
        obs = outs[0][1]
    else:
        obs = outs[1][1] if rng.random() < outs[1][0] else outs[0][1]
    step = transition(state, a, obs)
    return step.reward, step.next_state


def rollout(state: EnvState, depth: int, gamma: float, rng) -> float:
    """Discounted sum of expected-outage rewards under a uniform random policy."""
    total, disc = 0.0, 1.0
    for _ in range(depth):
        if state.terminal:
            break
        acts = state.legal_actions()
        a = acts[int(rng.integers(len(acts)))]
        r, state = _sample_step(state, a, rng)
        total += disc * r
        disc *= gamma
    return total


def _ucb_pick(actions, N, W, minmax: MinMaxStats, c: float, rng):
    """UCB1 on min-max normalised means; untried actions first (random among them)."""
    untried = [a for a in actions if N.get(a, 0) == 0]
    if untried:
        return untried[int(rng.integers(len(untried)))] if len(untried) > 1 else untried[0]
    log_total = math.log(sum(N[a] for a in actions))
    best, cands = -math.inf, []
    for a in actions:
        score = minmax.normalize(W[a] / N[a]) + c * math.sqrt(log_total / N[a])
        if score > best + 1e-12:
            best, cands = score, [a]
        elif score >= best - 1e-12:
            cands.append(a)
    return cands[0] if len(cands) == 1 else cands[int(rng.integers(len(cands)))]


def _most_visited(actions, N, W):
    return min(actions, key=lambda a: (-N.get(a, 0), -(W[a] / N[a]) if N.get(a) else 0.0, actions.index(a)))


class _UctNode:
    def __init__(self, state: EnvState):
        self.state = state
        self.actions = () if state.terminal else state.legal_actions()
        self.N: dict = {}
        self.W: dict = {}
        self.chance: dict = {}
        self.reward: dict = {}


def vanilla_mcts_decide(state: EnvState, config: BaselineConfig = BaselineConfig(), seed=None) -> int:
    """Closed-loop UCT over the decision/chance tree with random-rollout leaf values."""
    _check(state)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    root = _UctNode(state.public() if state.damage is not None else state)
    minmax = MinMaxStats()
    for _ in range(config.sims):
        node, path = root, []
        while True:
            a = _ucb_pick(node.actions, node.N, node.W, minmax, config.uct_c, rng)
            if a not in node.chance:
                node.chance[a] = RandomNode(chance_outcomes(node.state, a))
                node.reward[a] = expected_step_reward(node.state.ctx, node.state.belief.posterior,
                                                      node.state.pending.position, a)
            ch = node.chance[a]
            obs, child = sample_observation(ch, rng)
            path.append((node, a, obs))
            if child is None:
                child = _UctNode(transition(node.state, a, obs).next_state)
                ch.children[obs] = child
                value = rollout(child.state, config.rollout_depth, config.gamma, rng)
                break
            if child.state.terminal:
                value = 0.0
                break
            node = child
        g = value
        for nd, a, obs in reversed(path):
            g = nd.reward[a] + config.gamma * g
            nd.N[a] = nd.N.get(a, 0) + 1
            nd.W[a] = nd.W.get(a, 0.0) + g
            nd.chance[a].counts[obs] = nd.chance[a].counts.get(obs, 0) + 1
            minmax.update(nd.W[a] / nd.N[a])
    return _most_visited(root.actions, root.N, root.W)


class _OpenLoopNode:
    def __init__(self):
        self.N: dict = {}
        self.W: dict = {}
        self.children: dict = {}


def oluct_decide(state: EnvState, config: BaselineConfig = BaselineConfig(algorithm="oluct"), seed=None) -> int:
    """Open-loop UCT: tree nodes are action sequences; states are re-simulated on every pass."""
    _check(state)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    start = state.public() if state.damage is not None else state
    root = _OpenLoopNode()
    minmax = MinMaxStats()
    for _ in range(config.sims):
        node, s, path = root, start, []
        while True:
            acts = s.legal_actions()
            a = _ucb_pick(acts, node.N, node.W, minmax, config.uct_c, rng)
            r, s = _sample_step(s, a, rng)
            path.append((node, a, r))
            if s.terminal:
                value = 0.0
                break
            if a not in node.children:
                node.children[a] = _OpenLoopNode()
                value = rollout(s, config.rollout_depth, config.gamma, rng)
                break
            node = node.children[a]
        g = value
        for nd, a, r in reversed(path):
            g = r + config.gamma * g
            nd.N[a] = nd.N.get(a, 0) + 1
            nd.W[a] = nd.W.get(a, 0.0) + g
            minmax.update(nd.W[a] / nd.N[a])
    return _most_visited(start.legal_actions(), root.N, root.W)


def _zone_distances(state: EnvState, zone_id: str) -> dict:
    """All-pairs travel minutes inside one zone (Floyd-Warshall), cached on the context."""
    ctx = state.ctx
    cache = ctx.__dict__.setdefault("_zone_dist", {})
    if zone_id not in cache:
        g = ctx.grid
        nodes = sorted(g.zone_by_id[zone_id].nodes)
        idx = {n: i for i, n in enumerate(nodes)}
        d = np.full((len(nodes), len(nodes)), np.inf)
        np.fill_diagonal(d, 0.0)
        for a, b, t in g.road.edges:
            if a in idx and b in idx:
                d[idx[a], idx[b]] = d[idx[b], idx[a]] = min(d[idx[a], idx[b]], t)
        for k in range(len(nodes)):
            d = np.minimum(d, d[:, [k]] + d[[k], :])
        cache[zone_id] = (idx, d)
    return cache[zone_id]


def _line_customers(ctx) -> list:
    if "_line_customers" not in ctx.__dict__:
        g = ctx.grid
        ctx._line_customers = [
            sum(g.customers[g.customer_index[n]].customer_count for n in g.downstream_customers_of_line(ln.line_id))
            for ln in g.lines
        ]
    return ctx._line_customers


def greedy_scores(state: EnvState, by_customers: bool = True) -> dict:
    """Score of each legal move: best posterior x downstream customers per minute over unresolved lines.

    With ``by_customers=False`` the customer weight is dropped (used to finish off lines that feed nobody).
    """
    ctx, g = state.ctx, state.ctx.grid
    v = state.pending
    idx, dist = _zone_distances(state, v.zone_id)
    post = state.belief.posterior
    weights = _line_customers(ctx)
    eps = ctx.config.epsilon
    targets = []
    for i, ln in enumerate(g.lines):
        a, b = ln.endpoints
        # lines under the stopping threshold already count as resolved
        if post[i] >= eps and a in idx and b in idx:
            targets.append((a, b, g.road.travel_time(a, b), post[i] * (weights[i] if by_customers else 1.0)))
    scores = {}
    for d in ctx.legal(v.zone_id, v.position):
        leg = g.road.travel_time(v.position, d)
        best = 0.0
        for a, b, span, w in targets:
            if {a, b} == {v.position, d}:
                cost = leg
            else:
                cost = leg + min(dist[idx[d], idx[a]], dist[idx[d], idx[b]]) + span
            best = max(best, w / cost)
        scores[d] = best
    return scores


def greedy_decide(state: EnvState, config=None, seed=None) -> int:
    """Move toward the line with the best posterior x customers per travel minute; ties to the lowest node id."""
    _check(state)
    scores = greedy_scores(state)
    top = max(scores.values())
    if top <= 0.0:
        scores = greedy_scores(state, by_customers=False)
        top = max(scores.values())
    return min(d for d, s in scores.items() if s >= top - 1e-12)


def decider(config: BaselineConfig):
    """Adapter to the ``decide(state, decision_index)`` form used by episode runners."""
    fn = {"vanilla_mcts": vanilla_mcts_decide, "oluct": oluct_decide, "greedy": greedy_decide}[config.algorithm]

    def decide(state, t):
        return fn(state, config, seed=[config.seed, t])
    return decide
