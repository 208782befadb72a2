"""Static distribution-grid and road-network model plus the scenario file format.

A scenario file is plain text split into ``[section]`` blocks.  Each block holds
``key = value`` pairs and/or whitespace separated table rows; ``#`` starts a
comment.  See ``docs/scenario_format.md`` for every field.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

DEFAULT_RHO = 0.05
DEFAULT_EPSILON = 0.02
DEFAULT_K_ENUM = 20
DEFAULT_MC_SAMPLES = 50_000

SECTIONS = (
    "scenario", "road", "lines", "segments", "customers",
    "zones", "vehicles", "damage", "calls",
)

DATA_DIR = Path(__file__).resolve().parent / "data"


class ScenarioError(ValueError):
    """Base class for scenario loading problems."""


class ScenarioParseError(ScenarioError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ScenarioValidationError(ScenarioError):
    def __init__(self, rule, message):
        self.rule = rule
        super().__init__(f"[{rule}] {message}")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoadNetwork:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]
    _adj: dict = field(init=False, repr=False, compare=False)
    _time: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: dict[int, list[int]] = {n: [] for n in self.nodes}
        times = {}
        for a, b, t in self.edges:
            adj[a].append(b)
            adj[b].append(a)
            times[(a, b)] = times[(b, a)] = float(t)
        object.__setattr__(self, "_adj", {n: tuple(sorted(v)) for n, v in adj.items()})
        object.__setattr__(self, "_time", times)

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self._adj[node]

    def travel_time(self, a: int, b: int) -> float:
        """Minutes to drive the road edge ``a``-``b``; KeyError if not adjacent."""
        return self._time[(a, b)]

    def has_edge(self, a: int, b: int) -> bool:
        return (a, b) in self._time


@dataclass(frozen=True)
class PowerLine:
    line_id: str
    circuit_id: str
    segment_id: str
    endpoints: tuple[int, int]  # (upstream, downstream)
    prior_fault_prob: float
    repair_time_minutes: float


@dataclass(frozen=True)
class Segment:
    segment_id: str
    circuit_id: str
    line_ids: tuple[str, ...]
    protective_device_node: int
    downstream_customer_nodes: frozenset  # customers fed directly by this segment
    parent: str | None


@dataclass(frozen=True)
class CustomerNode:
    node_id: int
    circuit_id: str
    customer_count: int
    calling_prob: float = DEFAULT_RHO


@dataclass(frozen=True)
class Zone:
    zone_id: str
    nodes: frozenset
    vehicle_id: int
    priority: int


@dataclass(frozen=True)
class DistributionGrid:
    road: RoadNetwork
    circuits: tuple[str, ...]
    segments: tuple[Segment, ...]
    lines: tuple[PowerLine, ...]
    customers: tuple[CustomerNode, ...]
    zones: tuple[Zone, ...]

    def __post_init__(self):
        object.__setattr__(self, "line_index", {ln.line_id: i for i, ln in enumerate(self.lines)})
        object.__setattr__(self, "segment_index", {s.segment_id: i for i, s in enumerate(self.segments)})
        object.__setattr__(self, "customer_index", {c.node_id: i for i, c in enumerate(self.customers)})
        object.__setattr__(self, "zone_by_id", {z.zone_id: z for z in self.zones})
        object.__setattr__(self, "zone_of_vehicle", {z.vehicle_id: z for z in self.zones})
        edge_line = {}
        for i, ln in enumerate(self.lines):
            a, b = ln.endpoints
            edge_line[(a, b)] = edge_line[(b, a)] = i
        object.__setattr__(self, "edge_line", edge_line)
        # segment -> tuple of ancestor segment ids including itself
        chain = {}
        by_id = {s.segment_id: s for s in self.segments}
        for s in self.segments:
            path, cur = [], s.segment_id
            while cur is not None:
                path.append(cur)
                cur = by_id[cur].parent
            chain[s.segment_id] = tuple(path)
        object.__setattr__(self, "segment_chain", chain)
        # lines whose fault de-energizes each segment (K_s)
        cut = {}
        for s in self.segments:
            cut[s.segment_id] = tuple(
                self.line_index[lid] for sid in chain[s.segment_id] for lid in by_id[sid].line_ids
            )
        object.__setattr__(self, "cut_set", cut)
        seg_customers = {s.segment_id: 0 for s in self.segments}
        for s in self.segments:
            for node in s.downstream_customer_nodes:
                seg_customers[s.segment_id] += self.customers[self.customer_index[node]].customer_count
        object.__setattr__(self, "segment_customers", seg_customers)
        object.__setattr__(self, "node_position", {n: i for i, n in enumerate(self.road.nodes)})

    def line(self, line_id: str) -> PowerLine:
        return self.lines[self.line_index[line_id]]

    def segment(self, segment_id: str) -> Segment:
        return self.segments[self.segment_index[segment_id]]

    def segment_of_customer(self, node_id: int) -> Segment:
        for s in self.segments:
            if node_id in s.downstream_customer_nodes:
                return s
        raise KeyError(node_id)

    def line_on_edge(self, a: int, b: int) -> int | None:
        """Index of the power line spanning road edge a-b, or None for road-only edges."""
        return self.edge_line.get((a, b))

    def circuit_lines(self, circuit_id: str) -> list[str]:
        return [ln.line_id for ln in self.lines if ln.circuit_id == circuit_id]

    def downstream_customers_of_line(self, line_id: str) -> frozenset:
        """Customer nodes that lose power when this line faults."""
        seg = self.line(line_id).segment_id
        return frozenset(
            node for s in self.segments if seg in self.segment_chain[s.segment_id]
            for node in s.downstream_customer_nodes
        )

    @property
    def total_customers(self) -> int:
        return sum(c.customer_count for c in self.customers)

    @property
    def policy_dim(self) -> int:
        """Largest feasible-action count over every (zone, node) pair."""
        return max(
            len(feasible_actions(self, n, z)) for z in self.zones for n in z.nodes
        )


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    grid: DistributionGrid
    true_damage_set: frozenset | None   # None -> sample from priors at reset
    call_realization: tuple | None      # per customer (grid order); None -> sample
    vehicle_depots: Mapping[int, int]
    rng_seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    max_decisions: int = 200
    k_enum: int = DEFAULT_K_ENUM
    mc_samples: int = DEFAULT_MC_SAMPLES
    belief_method: str = "auto"
    belief_unit: str = "line"           # state encoding granularity: line | segment
    value_scale: float | None = None
    notes: str = ""


# ---------------------------------------------------------------------------
# Grid operations
# ---------------------------------------------------------------------------

def affected_nodes(grid: DistributionGrid, fault_combination: Mapping[str, bool]) -> set[int]:
    """Customer nodes left without power when the devices of the faulted lines trip."""
    circuits = set()
    tripped = set()
    for line_id, faulted in fault_combination.items():
        if line_id not in grid.line_index:
            raise KeyError(f"unknown line id {line_id!r}")
        line = grid.line(line_id)
        circuits.add(line.circuit_id)
        if faulted:
            tripped.add(line.segment_id)
    if len(circuits) > 1:
        raise ValueError("fault combination spans more than one circuit")
    out = set()
    for s in grid.segments:
        if tripped.intersection(grid.segment_chain[s.segment_id]):
            out |= s.downstream_customer_nodes
    return out


def feasible_actions(grid: DistributionGrid, vehicle_position: int, zone) -> frozenset:
    """Road neighbours of ``vehicle_position`` that stay inside ``zone``."""
    if not isinstance(zone, Zone):
        zone = grid.zone_by_id[zone]
    if vehicle_position not in zone.nodes:
        raise ValueError(f"position {vehicle_position} is outside zone {zone.zone_id}")
    return frozenset(n for n in grid.road.neighbors(vehicle_position) if n in zone.nodes)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _resolve_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    if not p.suffix:
        bundled = DATA_DIR / f"{p.name}.scenario"
        if bundled.exists():
            return bundled
    raise FileNotFoundError(f"scenario file not found: {path}")


def bundled_path(name: str) -> Path:
    return DATA_DIR / name


def _read_sections(text: str, path) -> dict:
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioParseError(path, lineno, f"malformed section header {raw.strip()!r}")
            name = line[1:-1].strip()
            if name not in SECTIONS:
                raise ScenarioParseError(path, lineno, f"unknown section [{name}]")
            if name in sections:
                raise ScenarioParseError(path, lineno, f"duplicate section [{name}]")
            current = sections[name] = {"keys": {}, "rows": []}
            continue
        if current is None:
            raise ScenarioParseError(path, lineno, "content before first section header")
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key in current["keys"]:
                raise ScenarioParseError(path, lineno, f"duplicate key {key!r}")
            current["keys"][key] = (value, lineno)
        else:
            current["rows"].append((line.split(), lineno))
    return sections


def _num(tok, kind, path, lineno, what):
    try:
        return kind(tok)
    except ValueError:
        raise ScenarioParseError(path, lineno, f"field {what}: expected {kind.__name__}, got {tok!r}") from None


def parse_scenario(text: str, path="<string>") -> Scenario:
    sec = _read_sections(text, path)
    for required in ("road", "lines", "segments", "customers", "zones", "vehicles"):
        if required not in sec:
            raise ScenarioParseError(path, 0, f"missing section [{required}]")
    head = sec.get("scenario", {"keys": {}, "rows": []})["keys"]

    def hkey(name, kind, default):
        if name not in head:
            return default
        value, lineno = head[name]
        return _num(value, kind, path, lineno, f"scenario.{name}")

    rho = hkey("rho", float, DEFAULT_RHO)

    edges = []
    for toks, ln in sec["road"]["rows"]:
        if len(toks) != 3:
            raise ScenarioParseError(path, ln, "road row needs: node_a node_b travel_minutes")
        edges.append((_num(toks[0], int, path, ln, "road.node_a"),
                      _num(toks[1], int, path, ln, "road.node_b"),
                      _num(toks[2], float, path, ln, "road.travel_minutes")))
    extra_nodes = []
    if "nodes" in sec["road"]["keys"]:
        value, ln = sec["road"]["keys"]["nodes"]
        extra_nodes = [_num(t, int, path, ln, "road.nodes") for t in value.split()]
    node_set = set(extra_nodes) | {e[0] for e in edges} | {e[1] for e in edges}

    lines = []
    for toks, ln in sec["lines"]["rows"]:
        if len(toks) != 7:
            raise ScenarioParseError(path, ln, "lines row needs: line circuit segment from to prior repair_minutes")
        lines.append(PowerLine(
            line_id=toks[0], circuit_id=toks[1], segment_id=toks[2],
            endpoints=(_num(toks[3], int, path, ln, "lines.from"), _num(toks[4], int, path, ln, "lines.to")),
            prior_fault_prob=_num(toks[5], float, path, ln, "lines.prior"),
            repair_time_minutes=_num(toks[6], float, path, ln, "lines.repair_minutes"),
        ))

    devices = {}
    for toks, ln in sec["segments"]["rows"]:
        if len(toks) != 2:
            raise ScenarioParseError(path, ln, "segments row needs: segment device_node")
        if toks[0] in devices:
            raise ScenarioParseError(path, ln, f"duplicate segment {toks[0]!r}")
        devices[toks[0]] = _num(toks[1], int, path, ln, "segments.device_node")

    customers = []
    for toks, ln in sec["customers"]["rows"]:
        if len(toks) not in (3, 4):
            raise ScenarioParseError(path, ln, "customers row needs: node circuit count [rho]")
        customers.append(CustomerNode(
            node_id=_num(toks[0], int, path, ln, "customers.node"),
            circuit_id=toks[1],
            customer_count=_num(toks[2], int, path, ln, "customers.count"),
            calling_prob=_num(toks[3], float, path, ln, "customers.rho") if len(toks) == 4 else rho,
        ))

    zones = []
    for toks, ln in sec["zones"]["rows"]:
        if len(toks) < 4:
            raise ScenarioParseError(path, ln, "zones row needs: zone vehicle priority node...")
        zones.append(Zone(
            zone_id=toks[0],
            vehicle_id=_num(toks[1], int, path, ln, "zones.vehicle"),
            priority=_num(toks[2], int, path, ln, "zones.priority"),
            nodes=frozenset(_num(t, int, path, ln, "zones.nodes") for t in toks[3:]),
        ))

    depots = {}
    for toks, ln in sec["vehicles"]["rows"]:
        if len(toks) != 2:
            raise ScenarioParseError(path, ln, "vehicles row needs: vehicle depot_node")
        depots[_num(toks[0], int, path, ln, "vehicles.vehicle")] = _num(toks[1], int, path, ln, "vehicles.depot")

    damage = frozenset()
    if "damage" in sec:
        keys = sec["damage"]["keys"]
        if "mode" in keys and keys["mode"][0] == "sample":
            damage = None
        elif "mode" in keys and keys["mode"][0] not in ("fixed", "none"):
            raise ScenarioParseError(path, keys["mode"][1], f"damage.mode must be sample|fixed|none")
        if "lines" in keys:
            if damage is None:
                raise ScenarioParseError(path, keys["lines"][1], "damage.lines given with mode = sample")
            damage = frozenset(keys["lines"][0].split())

    calls = tuple(False for _ in customers)
    if "calls" in sec:
        keys = sec["calls"]["keys"]
        if "mode" in keys and keys["mode"][0] == "sample":
            calls = None
        if "called" in keys:
            value, ln = keys["called"]
            flags = [_num(t, int, path, ln, "calls.called") for t in value.split()]
            if any(f not in (0, 1) for f in flags):
                raise ScenarioParseError(path, ln, "calls.called entries must be 0 or 1")
            if len(flags) != len(customers):
                raise ScenarioParseError(path, ln, f"calls.called has {len(flags)} entries, expected {len(customers)}")
            calls = tuple(bool(f) for f in flags)

    value_scale = hkey("value_scale", float, None)
    scenario_id = head["id"][0] if "id" in head else Path(str(path)).stem
    grid = build_grid(node_set, edges, lines, devices, customers, zones)
    scenario = Scenario(
        scenario_id=scenario_id,
        grid=grid,
        true_damage_set=damage,
        call_realization=calls,
        vehicle_depots=dict(sorted(depots.items())),
        rng_seed=hkey("seed", int, 0),
        epsilon=hkey("epsilon", float, DEFAULT_EPSILON),
        max_decisions=hkey("max_decisions", int, 200),
        k_enum=hkey("k_enum", int, DEFAULT_K_ENUM),
        mc_samples=hkey("mc_samples", int, DEFAULT_MC_SAMPLES),
        belief_method=head["belief_method"][0] if "belief_method" in head else "auto",
        belief_unit=head["belief_unit"][0] if "belief_unit" in head else "line",
        value_scale=value_scale,
        notes=head["notes"][0] if "notes" in head else "",
    )
    validate_scenario(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file (bundled names such as ``eight_node`` also work)."""
    p = _resolve_path(path)
    return parse_scenario(p.read_text(), p)


def build_grid(node_set, edges, lines, devices, customers, zones) -> DistributionGrid:
    _check_road(node_set, edges)
    _check_lines(lines, devices, edges)
    down_line = {}  # (circuit, downstream node) -> line
    for ln in lines:
        key = (ln.circuit_id, ln.endpoints[1])
        if key in down_line:
            raise ScenarioValidationError(
                "radial", f"node {ln.endpoints[1]} is fed by two lines of circuit {ln.circuit_id}")
        down_line[key] = ln
    circuits = tuple(sorted({ln.circuit_id for ln in lines}))
    for c in circuits:
        roots = {ln.endpoints[0] for ln in lines if ln.circuit_id == c} - {
            ln.endpoints[1] for ln in lines if ln.circuit_id == c}
        if len(roots) != 1:
            raise ScenarioValidationError("radial", f"circuit {c} must have exactly one source node, found {sorted(roots)}")

    segments = []
    for sid, device in devices.items():
        members = [ln for ln in lines if ln.segment_id == sid]
        if not members:
            raise ScenarioValidationError("segment-nonempty", f"segment {sid} has no lines")
        circ = {ln.circuit_id for ln in members}
        if len(circ) != 1:
            raise ScenarioValidationError("segment-circuit", f"segment {sid} spans circuits {sorted(circ)}")
        circ = circ.pop()
        tops = [ln for ln in members
                if down_line.get((circ, ln.endpoints[0])) is None
                or down_line[(circ, ln.endpoints[0])].segment_id != sid]
        top_nodes = {ln.endpoints[0] for ln in tops}
        if top_nodes != {device}:
            raise ScenarioValidationError(
                "segment-device", f"segment {sid}: device node {device} must be the upstream end of its lines "
                f"(entry nodes {sorted(top_nodes)})")
        feeder = down_line.get((circ, device))
        segments.append((sid, circ, tuple(ln.line_id for ln in members), device,
                         feeder.segment_id if feeder is not None else None))

    cust_by_seg = {sid: set() for sid in devices}
    seen_nodes = set()
    for cn in customers:
        if cn.node_id in seen_nodes:
            raise ScenarioValidationError("customer-unique", f"customer node {cn.node_id} listed twice")
        seen_nodes.add(cn.node_id)
        if cn.node_id not in node_set:
            raise ScenarioValidationError("customer-node", f"customer node {cn.node_id} is not a road node")
        if cn.customer_count < 0:
            raise ScenarioValidationError("customer-count", f"customer node {cn.node_id} has negative count")
        if not 0.0 < cn.calling_prob <= 1.0:
            raise ScenarioValidationError("rho-range", f"calling probability at node {cn.node_id} must be in (0,1]")
        feeder = down_line.get((cn.circuit_id, cn.node_id))
        if feeder is None:
            raise ScenarioValidationError(
                "customer-segment", f"customer node {cn.node_id} is not fed by any line of circuit {cn.circuit_id}")
        cust_by_seg[feeder.segment_id].add(cn.node_id)

    segs = tuple(
        Segment(sid, circ, lids, dev, frozenset(cust_by_seg[sid]), parent)
        for sid, circ, lids, dev, parent in segments
    )
    road = RoadNetwork(tuple(sorted(node_set)), tuple((a, b, float(t)) for a, b, t in edges))
    _check_zones(road, lines, zones)
    return DistributionGrid(road, circuits, segs, tuple(lines), tuple(customers),
                            tuple(sorted(zones, key=lambda z: z.priority)))


def _check_road(node_set, edges):
    seen = set()
    for a, b, t in edges:
        if a == b:
            raise ScenarioValidationError("road-loop", f"road edge {a}-{b} is a self loop")
        if t <= 0:
            raise ScenarioValidationError("road-travel-positive", f"road edge {a}-{b} has travel time {t}")
        key = frozenset((a, b))
        if key in seen:
            raise ScenarioValidationError("road-duplicate", f"road edge {a}-{b} listed twice")
        seen.add(key)
    if not node_set:
        raise ScenarioValidationError("road-connected", "road network is empty")
    adj = {n: set() for n in node_set}
    for a, b, _ in edges:
        adj[a].add(b)
        adj[b].add(a)
    start = min(node_set)
    reached = _bfs(adj, start)
    if reached != node_set:
        raise ScenarioValidationError("road-connected", f"road nodes {sorted(node_set - reached)} are unreachable")


def _bfs(adj, start, allowed=None):
    reached = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        for m in adj[n]:
            if m not in reached and (allowed is None or m in allowed):
                reached.add(m)
                queue.append(m)
    return reached


def _check_lines(lines, devices, edges):
    road_edges = {frozenset((a, b)) for a, b, _ in edges}
    ids, spans = set(), set()
    for ln in lines:
        if ln.line_id in ids:
            raise ScenarioValidationError("line-unique", f"line {ln.line_id} listed twice")
        ids.add(ln.line_id)
        span = frozenset(ln.endpoints)
        if span not in road_edges:
            raise ScenarioValidationError(
                "line-on-road", f"line {ln.line_id} endpoints {ln.endpoints} are not joined by a road edge")
        if span in spans:
            raise ScenarioValidationError("one-line-per-edge", f"road edge {ln.endpoints} carries two lines")
        spans.add(span)
        if not 0.0 <= ln.prior_fault_prob <= 1.0:
            raise ScenarioValidationError("prior-range", f"line {ln.line_id} prior {ln.prior_fault_prob} not in [0,1]")
        if ln.repair_time_minutes <= 0:
            raise ScenarioValidationError("repair-positive", f"line {ln.line_id} repair time must be positive")
        if ln.segment_id not in devices:
            raise ScenarioValidationError("segment-declared", f"line {ln.line_id} names undeclared segment {ln.segment_id}")


def _check_zones(road: RoadNetwork, lines, zones):
    if not zones:
        raise ScenarioValidationError("zones-present", "at least one zone is required")
    vehicles = [z.vehicle_id for z in zones]
    if len(set(vehicles)) != len(vehicles):
        raise ScenarioValidationError("zone-vehicle", "each zone needs its own vehicle")
    ranks = [z.priority for z in zones]
    if len(set(ranks)) != len(ranks):
        raise ScenarioValidationError("priority-total-order", "vehicle priority ranks must be distinct")
    covered = set().union(*(z.nodes for z in zones))
    if covered != set(road.nodes):
        raise ScenarioValidationError("zone-cover", f"nodes {sorted(set(road.nodes) ^ covered)} not covered by zones")
    adj = {n: set(road.neighbors(n)) for n in road.nodes}
    for z in zones:
        if _bfs(adj, min(z.nodes), z.nodes) != set(z.nodes):
            raise ScenarioValidationError("zone-connected", f"zone {z.zone_id} is not connected")
    for z in zones:
        for other in zones:
            if other is z:
                continue
            for n in z.nodes & other.nodes:
                # a shared node has to sit on the boundary of both zones
                if not (adj[n] - z.nodes) or not (adj[n] - other.nodes):
                    raise ScenarioValidationError(
                        "zone-interior-disjoint", f"node {n} is interior to zone {z.zone_id} or {other.zone_id}")
    for ln in lines:
        a, b = ln.endpoints
        if not any(a in z.nodes and b in z.nodes for z in zones):
            raise ScenarioValidationError("line-reachable", f"line {ln.line_id} lies in no single zone")


def validate_scenario(scenario: Scenario) -> None:
    grid = scenario.grid
    zone_vehicles = {z.vehicle_id for z in grid.zones}
    if set(scenario.vehicle_depots) != zone_vehicles:
        raise ScenarioValidationError("vehicle-zone", "vehicles section must list exactly the zone vehicles")
    for v, depot in scenario.vehicle_depots.items():
        if depot not in grid.zone_of_vehicle[v].nodes:
            raise ScenarioValidationError("depot-in-zone", f"vehicle {v} depot {depot} outside its zone")
    if scenario.belief_method not in ("auto", "enumerate", "mc", "tree"):
        raise ScenarioValidationError("belief-method", f"unknown belief_method {scenario.belief_method!r}")
    if scenario.belief_unit not in ("line", "segment"):
        raise ScenarioValidationError("belief-unit", f"unknown belief_unit {scenario.belief_unit!r}")
    damage = scenario.true_damage_set
    if damage is not None:
        unknown = set(damage) - set(grid.line_index)
        if unknown:
            raise ScenarioValidationError("damage-lines", f"unknown damaged lines {sorted(unknown)}")
    calls = scenario.call_realization
    if calls is not None:
        check_call_consistency(grid, calls, damage)


def check_call_consistency(grid: DistributionGrid, calls, damage) -> None:
    """Raise if a calling node cannot be (or, with known damage, is not) de-energized."""
    for cn, called in zip(grid.customers, calls):
        if not called:
            continue
        if cn.customer_count == 0:
            raise ScenarioValidationError("call-consistency", f"node {cn.node_id} has no customers but called")
        seg = grid.segment_of_customer(cn.node_id)
        cut = grid.cut_set[seg.segment_id]
        if damage is None:
            if not any(grid.lines[i].prior_fault_prob > 0 for i in cut):
                raise ScenarioValidationError(
                    "call-consistency", f"call at node {cn.node_id} cannot be explained by any line fault")
        elif not any(grid.lines[i].line_id in damage for i in cut):
            raise ScenarioValidationError(
                "call-consistency", f"node {cn.node_id} called but stays energized under the damage set")


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def dump_scenario(scenario: Scenario) -> str:
    """Serialize a scenario back to the text format (deterministic output)."""
    g = scenario.grid
    out = ["# gridcrew scenario", "[scenario]", f"id = {scenario.scenario_id}"]
    rhos = {c.calling_prob for c in g.customers}
    rho = rhos.pop() if len(rhos) == 1 else DEFAULT_RHO
    out += [f"rho = {_fmt(rho)}", f"epsilon = {_fmt(scenario.epsilon)}", f"seed = {scenario.rng_seed}",
            f"belief_method = {scenario.belief_method}", f"belief_unit = {scenario.belief_unit}"]
    if scenario.max_decisions != 200:
        out.append(f"max_decisions = {scenario.max_decisions}")
    if scenario.k_enum != DEFAULT_K_ENUM:
        out.append(f"k_enum = {scenario.k_enum}")
    if scenario.mc_samples != DEFAULT_MC_SAMPLES:
        out.append(f"mc_samples = {scenario.mc_samples}")
    if scenario.value_scale is not None:
        out.append(f"value_scale = {_fmt(scenario.value_scale)}")
    if scenario.notes:
        out.append(f"notes = {scenario.notes}")
    out += ["", "[road]", "# node_a node_b travel_minutes"]
    out += [f"{a} {b} {_fmt(t)}" for a, b, t in g.road.edges]
    out += ["", "[lines]", "# line circuit segment from to prior repair_minutes"]
    out += [f"{ln.line_id} {ln.circuit_id} {ln.segment_id} {ln.endpoints[0]} {ln.endpoints[1]} "
            f"{_fmt(ln.prior_fault_prob)} {_fmt(ln.repair_time_minutes)}" for ln in g.lines]
    out += ["", "[segments]", "# segment device_node"]
    out += [f"{s.segment_id} {s.protective_device_node}" for s in g.segments]
    out += ["", "[customers]", "# node circuit customers [rho]"]
    for c in g.customers:
        extra = f" {_fmt(c.calling_prob)}" if c.calling_prob != rho else ""
        out.append(f"{c.node_id} {c.circuit_id} {c.customer_count}{extra}")
    out += ["", "[zones]", "# zone vehicle priority nodes..."]
    out += [f"{z.zone_id} {z.vehicle_id} {z.priority} " + " ".join(str(n) for n in sorted(z.nodes))
            for z in g.zones]
    out += ["", "[vehicles]", "# vehicle depot_node"]
    out += [f"{v} {d}" for v, d in scenario.vehicle_depots.items()]
    out += ["", "[damage]"]
    if scenario.true_damage_set is None:
        out.append("mode = sample")
    else:
        out += ["mode = fixed", "lines = " + " ".join(sorted(scenario.true_damage_set, key=g.line_index.get))]
    out += ["", "[calls]"]
    if scenario.call_realization is None:
        out.append("mode = sample")
    else:
        out.append("called = " + " ".join(str(int(c)) for c in scenario.call_realization))
    return "\n".join(out) + "\n"


def list_bundled() -> list[str]:
    return sorted(p.stem for p in DATA_DIR.glob("*.scenario"))


def as_fault_combination(grid: DistributionGrid, circuit: str, faulted: Iterable[str]) -> dict:
    faulted = set(faulted)
    return {lid: lid in faulted for lid in grid.circuit_lines(circuit)}

