"""Multi-vehicle repair-crew routing MDP.

The clock is in minutes.  A dispatched vehicle is busy for the travel time of
the road edge plus the repair time when the line it traverses turns out to be
damaged; its report is folded into the belief immediately so the next
dispatch decision sees it.  When the request queue empties, the clock jumps
to the next arrival and every vehicle arriving at that instant re-enters the
queue in priority order.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .belief import BeliefModel, BeliefState, LineStatus, update_on_calls
from .grid import DistributionGrid, Scenario, ScenarioValidationError, feasible_actions, check_call_consistency


class Observation(str, Enum):
    INTACT = "Intact"
    DAMAGED = "Damaged"
    NO_LINE = "NoLineOnEdge"


class IllegalAction(ValueError):
    pass


class EpisodeNotFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    epsilon: float = 0.02
    max_decisions: int = 200
    dynamic_calls: bool = False


class EnvContext:
    """Immutable per-scenario data shared by every state of an episode (and by search trees)."""

    def __init__(self, scenario: Scenario, config: EnvConfig | None = None, model: BeliefModel | None = None):
        self.scenario = scenario
        self.grid: DistributionGrid = scenario.grid
        self.config = config or EnvConfig(epsilon=scenario.epsilon, max_decisions=scenario.max_decisions)
        self.model = model or BeliefModel.from_scenario(scenario)
        g = self.grid
        self.repair_minutes = np.array([ln.repair_time_minutes for ln in g.lines])
        self.zone_of_vehicle = {v: g.zone_of_vehicle[v] for v in scenario.vehicle_depots}
        self._legal = {}
        for z in g.zones:
            for n in z.nodes:
                self._legal[(z.zone_id, n)] = tuple(sorted(feasible_actions(g, n, z)))
        self.nodes = g.road.nodes
        self.node_position = g.node_position

    def legal(self, zone_id: str, node: int) -> tuple:
        return self._legal[(zone_id, node)]


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    position: int
    busy_until: float
    zone_id: str
    priority: int


@dataclass(frozen=True)
class RoutingAction:
    vehicle_id: int
    destination: int


@dataclass(frozen=True)
class LogEntry:
    time: float
    vehicle: int
    origin: int
    destination: int
    line: str | None
    observation: str
    reward: float
    elapsed: float
    queue: tuple
    posterior_hash: str

    def as_dict(self) -> dict:
        return {
            "time": self.time, "vehicle": self.vehicle, "from": self.origin, "to": self.destination,
            "line": self.line, "observation": self.observation, "reward": self.reward,
            "elapsed": self.elapsed, "queue": list(self.queue), "posterior_hash": self.posterior_hash,
        }


@dataclass(frozen=True)
class EnvState:
    ctx: EnvContext
    clock: float
    vehicles: tuple            # VehicleState, ordered by priority
    belief: BeliefState
    request_queue: tuple       # idle vehicle ids, highest priority first
    episode_log: tuple = ()
    decisions: int = 0
    damage: frozenset | None = None   # hidden line indices; None inside search trees
    repairs: tuple = ()        # (line index, completion minute)
    seed: int = 0
    start: float = 0.0
    terminal: bool = False
    truncated: bool = False

    def vehicle(self, vehicle_id: int) -> VehicleState:
        for v in self.vehicles:
            if v.vehicle_id == vehicle_id:
                return v
        raise KeyError(vehicle_id)

    @property
    def pending(self) -> VehicleState:
        return self.vehicle(self.request_queue[0])

    def legal_actions(self) -> tuple:
        """Feasible destinations of the vehicle at the head of the request queue."""
        v = self.pending
        return self.ctx.legal(v.zone_id, v.position)

    def public(self) -> "EnvState":
        """Copy with the hidden damage removed (what a planner may look at)."""
        return replace(self, damage=None)

    @property
    def end_time(self) -> float:
        return max([self.clock] + [v.busy_until for v in self.vehicles])


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    elapsed: float
    next_state: EnvState
    terminal: bool


def is_terminal_belief(belief: BeliefState, epsilon: float) -> bool:
    return not bool((belief.posterior >= epsilon).any())


def _sample_damage(grid: DistributionGrid, rng) -> frozenset:
    p = np.array([ln.prior_fault_prob for ln in grid.lines])
    hits = rng.random(len(p)) < p
    return frozenset(int(i) for i in np.flatnonzero(hits))


def _dark_customers(grid: DistributionGrid, damage_idx) -> list:
    out = []
    for cn in grid.customers:
        seg = grid.segment_of_customer(cn.node_id)
        out.append(any(i in damage_idx for i in grid.cut_set[seg.segment_id]))
    return out


def _sample_calls(grid: DistributionGrid, damage_idx, rng) -> tuple:
    dark = _dark_customers(grid, damage_idx)
    draws = rng.random(len(grid.customers))
    return tuple(
        bool(d and u < 1.0 - (1.0 - cn.calling_prob) ** cn.customer_count)
        for cn, d, u in zip(grid.customers, dark, draws)
    )


def _consistent(grid, damage_idx, calls) -> bool:
    dark = _dark_customers(grid, damage_idx)
    return all(d or not c for d, c in zip(dark, calls))


def reset(scenario: Scenario, seed: int | None = None, config: EnvConfig | None = None,
          damage: Sequence[str] | None = None, calls: Sequence[bool] | None = None,
          ctx: EnvContext | None = None) -> EnvState:
    """Initial state: vehicles at depots, hidden damage and calls fixed or sampled, belief from priors + calls."""
    ctx = ctx or EnvContext(scenario, config)
    grid = scenario.grid
    seed = scenario.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    fixed_damage = damage if damage is not None else scenario.true_damage_set
    fixed_calls = calls if calls is not None else scenario.call_realization
    if fixed_damage is not None:
        damage_idx = frozenset(grid.line_index[l] for l in fixed_damage)
        if fixed_calls is None:
            call_t = _sample_calls(grid, damage_idx, rng)
        else:
            call_t = tuple(bool(c) for c in fixed_calls)
            check_call_consistency(grid, call_t, frozenset(fixed_damage))
    elif fixed_calls is None:
        damage_idx = _sample_damage(grid, rng)
        call_t = _sample_calls(grid, damage_idx, rng)
    else:
        call_t = tuple(bool(c) for c in fixed_calls)
        for _ in range(100_000):
            damage_idx = _sample_damage(grid, rng)
            if _consistent(grid, damage_idx, call_t):
                break
        else:
            raise ScenarioValidationError("call-consistency", "could not sample damage consistent with the calls")

    belief = ctx.model.initial_belief(call_t)
    vehicles = tuple(
        VehicleState(z.vehicle_id, scenario.vehicle_depots[z.vehicle_id], 0.0, z.zone_id, z.priority)
        for z in grid.zones
    )
    queue = tuple(v.vehicle_id for v in vehicles)
    return EnvState(ctx=ctx, clock=0.0, vehicles=vehicles, belief=belief, request_queue=queue,
                    damage=damage_idx, seed=seed,
                    terminal=is_terminal_belief(belief, ctx.config.epsilon))


def next_to_dispatch(state: EnvState) -> int:
    if not state.request_queue:
        raise IndexError("request queue is empty")
    return state.request_queue[0]


def _resolve_action(state: EnvState, action) -> tuple[VehicleState, int]:
    if state.terminal:
        raise IllegalAction("episode is over")
    head = next_to_dispatch(state)
    if isinstance(action, RoutingAction):
        if action.vehicle_id != head:
            raise IllegalAction(f"vehicle {action.vehicle_id} is not at the head of the queue (head: {head})")
        dest = action.destination
    else:
        dest = int(action)
    v = state.vehicle(head)
    if dest not in state.ctx.legal(v.zone_id, v.position):
        raise IllegalAction(f"vehicle {head} cannot move {v.position} -> {dest}")
    return v, dest


def expected_step_reward(ctx: EnvContext, posterior: np.ndarray, origin: int, destination: int) -> float:
    """Expected outage (customers) times travel + expected repair time, in customer-hours, negated."""
    grid = ctx.grid
    minutes = grid.road.travel_time(origin, destination)
    li = grid.line_on_edge(origin, destination)
    if li is not None:
        minutes += posterior[li] * ctx.repair_minutes[li]
    return -ctx.model.expected_outage(posterior) * minutes / 60.0


def reward(state: EnvState, action) -> float:
    v, dest = _resolve_action(state, action)
    return expected_step_reward(state.ctx, state.belief.posterior, v.position, dest)


def chance_outcomes(state: EnvState, action) -> list:
    """[(probability, Observation)] for the line the action traverses under the current belief."""
    v, dest = _resolve_action(state, action)
    li = state.ctx.grid.line_on_edge(v.position, dest)
    if li is None:
        return [(1.0, Observation.NO_LINE)]
    if state.belief.statuses[li] != LineStatus.UNVISITED:
        return [(1.0, Observation.INTACT)]
    p = float(state.belief.posterior[li])
    if p <= 0.0:
        return [(1.0, Observation.INTACT)]
    if p >= 1.0:
        return [(1.0, Observation.DAMAGED)]
    return [(1.0 - p, Observation.INTACT), (p, Observation.DAMAGED)]


def transition(state: EnvState, action, observation: Observation) -> StepOutcome:
    """Apply ``action`` assuming ``observation`` of the traversed line (used by planners and by step)."""
    ctx = state.ctx
    grid = ctx.grid
    v, dest = _resolve_action(state, action)
    origin = v.position
    belief = state.belief
    r = expected_step_reward(ctx, belief.posterior, origin, dest)
    travel = grid.road.travel_time(origin, dest)
    li = grid.line_on_edge(origin, dest)
    elapsed = travel
    repairs = state.repairs
    line_id = None
    if li is None:
        observation = Observation.NO_LINE
    else:
        line_id = grid.lines[li].line_id
        if observation == Observation.NO_LINE:
            raise ValueError("edge carries a line; observation must be Intact or Damaged")
        st = belief.statuses[li]
        if st != LineStatus.UNVISITED:
            observation = Observation.INTACT
        elif observation == Observation.DAMAGED:
            elapsed += ctx.repair_minutes[li]
            repairs = repairs + ((li, state.clock + elapsed),)
            # observed damaged and fixed on the spot
            statuses = belief.statuses[:li] + (int(LineStatus.REPAIRED),) + belief.statuses[li + 1:]
            belief = belief.with_statuses(statuses)
        else:
            statuses = belief.statuses[:li] + (int(LineStatus.INTACT),) + belief.statuses[li + 1:]
            belief = belief.with_statuses(statuses)
    belief = replace(belief, trajectory=belief.trajectory + ((v.vehicle_id, (origin, dest), state.clock),))

    moved = replace(v, position=dest, busy_until=state.clock + elapsed)
    vehicles = tuple(moved if x.vehicle_id == v.vehicle_id else x for x in state.vehicles)
    queue = state.request_queue[1:]
    clock = state.clock
    if not queue:
        clock = min(x.busy_until for x in vehicles)
        queue = tuple(x.vehicle_id for x in vehicles if x.busy_until <= clock)

    if ctx.config.dynamic_calls and state.damage is not None:
        belief = _arrive_calls(state, belief)

    entry = LogEntry(
        time=state.clock, vehicle=v.vehicle_id, origin=origin, destination=dest, line=line_id,
        observation=observation.value, reward=r, elapsed=elapsed, queue=state.request_queue,
        posterior_hash=f"{zlib.crc32(belief.posterior.tobytes()):08x}",
    )
    decisions = state.decisions + 1
    done = is_terminal_belief(belief, ctx.config.epsilon)
    truncated = not done and decisions >= ctx.config.max_decisions
    nxt = replace(state, clock=clock, vehicles=vehicles, belief=belief, request_queue=queue,
                  episode_log=state.episode_log + (entry,), decisions=decisions, repairs=repairs,
                  terminal=done or truncated, truncated=truncated)
    return StepOutcome(observation, r, elapsed, nxt, nxt.terminal)


def _arrive_calls(state: EnvState, belief: BeliefState) -> BeliefState:
    grid = state.ctx.grid
    repaired = {li for li, _ in state.repairs}
    live_damage = state.damage - repaired
    dark = _dark_customers(grid, live_damage)
    rng = np.random.default_rng([state.seed, state.decisions])
    draws = rng.random(len(grid.customers))
    new = tuple(
        old or (d and u < 1.0 - (1.0 - cn.calling_prob) ** cn.customer_count)
        for old, d, u, cn in zip(belief.calls, dark, draws, grid.customers)
    )
    return update_on_calls(belief, new)


def step(state: EnvState, action) -> StepOutcome:
    """Execute an action against the hidden damage set."""
    if state.damage is None:
        raise RuntimeError("state carries no hidden damage; use transition() for simulated steps")
    v, dest = _resolve_action(state, action)
    li = state.ctx.grid.line_on_edge(v.position, dest)
    if li is None:
        obs = Observation.NO_LINE
    elif li in state.damage and state.belief.statuses[li] == LineStatus.UNVISITED:
        obs = Observation.DAMAGED
    else:
        obs = Observation.INTACT
    return transition(state, action, obs)


# ---------------------------------------------------------------------------
# Outage accounting and logs
# ---------------------------------------------------------------------------

def outage_hours_from_log(grid: DistributionGrid, entries, damage_ids, start: float = 0.0,
                          end: float | None = None) -> float:
    """Actual customer-outage hours implied by a dispatch log and the true damage set.

    A customer is back when every damaged line in its cut set has been repaired;
    damage left unrepaired when the episode stops is charged up to ``end``.
    """
    finished = {}
    last = start
    for e in entries:
        d = e.as_dict() if isinstance(e, LogEntry) else e
        done_at = d["time"] + d["elapsed"]
        last = max(last, done_at)
        if d["observation"] == Observation.DAMAGED.value:
            finished[d["line"]] = done_at
    end = last if end is None else end
    damaged = set(damage_ids)
    total = 0.0
    for cn in grid.customers:
        seg = grid.segment_of_customer(cn.node_id)
        hits = [grid.lines[i].line_id for i in grid.cut_set[seg.segment_id] if grid.lines[i].line_id in damaged]
        if not hits:
            continue
        restored = max(finished.get(l, end) for l in hits)
        total += (restored - start) / 60.0 * cn.customer_count
    return total


def episode_outage_hours(state: EnvState) -> float:
    """Cumulative customer-outage hours of a finished episode."""
    if not state.terminal:
        raise EpisodeNotFinished("episode_outage_hours needs a terminal state")
    if state.damage is None:
        raise RuntimeError("state carries no hidden damage")
    damage_ids = [state.ctx.grid.lines[i].line_id for i in state.damage]
    return outage_hours_from_log(state.ctx.grid, state.episode_log, damage_ids, state.start, state.end_time)


def trajectory_string(state: EnvState, vehicle_id: int | None = None) -> str:
    """Route of one vehicle as ``0→1→2``; depot only when it never moved."""
    vid = vehicle_id if vehicle_id is not None else state.vehicles[0].vehicle_id
    depot = state.ctx.scenario.vehicle_depots[vid]
    nodes = [depot] + [e.destination for e in state.episode_log if e.vehicle == vid]
    return "→".join(str(n) for n in nodes)


def write_log_jsonl(state: EnvState, path) -> None:
    with open(path, "w") as fh:
        for e in state.episode_log:
            fh.write(json.dumps(e.as_dict(), sort_keys=True) + "\n")
