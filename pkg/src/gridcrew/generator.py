"""Random radial test systems for stress tests and the larger bundled scenario.

Every generated system is a single radial feeder whose road network follows
the line spans (node degree capped), partitioned into protection segments,
customer nodes and connected vehicle zones that meet at shared boundary nodes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .grid import (CustomerNode, PowerLine, Scenario, Zone, build_grid, dump_scenario, parse_scenario,
                   validate_scenario)

TEMPLATES = {
    "radial7": dict(lines=7, segments=4, customers=5, zones=1),
    "ieee123": dict(lines=122, segments=62, customers=42, zones=4),
}


@dataclass(frozen=True)
class GenParams:
    lines: int = 7
    segments: int = 4
    customers: int = 5
    zones: int = 1
    max_degree: int = 3
    rho: float = 0.05
    repair_minutes: float = 60.0
    low_prior: tuple = (0.002, 0.015)
    high_prior: tuple = (0.03, 0.25)
    high_fraction: float = 0.35
    customer_range: tuple = (5, 40)
    travel_choices: tuple = (5, 10, 15, 20)
    belief_unit: str = "line"
    scenario_id: str = "generated"

    def __post_init__(self):
        if self.lines < 1:
            raise ValueError("lines must be >= 1")
        if not 1 <= self.segments <= self.lines:
            raise ValueError("segments must be between 1 and the number of lines")
        if not 0 <= self.customers <= self.lines:
            raise ValueError("customers must be between 0 and the number of lines")
        if self.zones < 1 or self.zones > max(1, self.lines // 3):
            raise ValueError("zones must be >= 1 and leave at least three lines per zone")
        if self.max_degree < 2:
            raise ValueError("max_degree must be >= 2")


def _tree(rng: random.Random, n_lines: int, max_degree: int) -> dict:
    """parent map of a random tree on nodes 0..n_lines, every node degree <= max_degree."""
    parent, degree = {}, {0: 0}
    for node in range(1, n_lines + 1):
        # prefer recent nodes so feeders grow long rather than bushy
        open_nodes = [n for n in degree if degree[n] < (max_degree if n else max_degree - 1)]
        recent = open_nodes[-4:]
        p = rng.choice(recent if rng.random() < 0.7 else open_nodes)
        parent[node] = p
        degree[p] += 1
        degree[node] = 1
    return parent


def _subtree_sizes(parent: dict, n_nodes: int, cut: set) -> dict:
    size = {n: 1 for n in range(n_nodes)}
    for n in range(n_nodes - 1, 0, -1):
        if n not in cut:
            size[parent[n]] += size[n]
    return size


def _zones(rng: random.Random, parent: dict, n_nodes: int, n_zones: int) -> list:
    children = {n: [] for n in range(n_nodes)}
    for c, p in parent.items():
        children[p].append(c)
    roots = [0]
    target = n_nodes / n_zones
    for _ in range(n_zones - 1):
        size = _subtree_sizes(parent, n_nodes, set(roots[1:]))
        cands = [n for n in range(1, n_nodes) if n not in roots and len(children[parent[n]]) + (parent[n] != 0) >= 2
                 and size[n] >= 3]
        # keep at least three nodes above the new root inside its current zone
        best = min(cands, key=lambda n: (abs(size[n] - target), n))
        roots.append(best)
    root_set = set(roots)
    owner = {0: 0}
    for n in range(1, n_nodes):
        owner[n] = n if n in root_set else owner[parent[n]]
    zones = []
    for r in roots:
        nodes = {n for n in range(n_nodes) if owner[n] == r}
        if r != 0:
            nodes.add(parent[r])
        zones.append((r, nodes))
    return zones


def generate(params: GenParams, seed: int) -> Scenario:
    rng = random.Random(seed)
    for _ in range(200):
        parent = _tree(rng, params.lines, params.max_degree)
        try:
            zones = _zones(rng, parent, params.lines + 1, params.zones)
        except ValueError:
            continue
        if all(len(nodes) >= 3 for _, nodes in zones) or params.zones == 1:
            break
    else:
        raise ValueError("could not build balanced zones; try fewer zones")
    n_nodes = params.lines + 1
    edges = [(parent[n], n, rng.choice(params.travel_choices)) for n in range(1, n_nodes)]

    root_lines = [n for n in range(1, n_nodes) if parent[n] == 0]
    if params.segments < len(root_lines):
        raise ValueError(f"need at least {len(root_lines)} segments for this tree")
    others = [n for n in range(1, n_nodes) if parent[n] != 0]
    heads = set(root_lines) | set(rng.sample(others, params.segments - len(root_lines)))
    seg_of, devices = {}, {}
    for n in range(1, n_nodes):
        if n in heads:
            seg_of[n] = f"S{len(devices) + 1}"
            devices[seg_of[n]] = parent[n]
        else:
            seg_of[n] = seg_of[parent[n]]

    lines = []
    for n in range(1, n_nodes):
        lo, hi = params.high_prior if rng.random() < params.high_fraction else params.low_prior
        lines.append(PowerLine(f"L{n}", "F1", seg_of[n], (parent[n], n), round(rng.uniform(lo, hi), 4),
                               float(params.repair_minutes)))
    cust_nodes = sorted(rng.sample(range(1, n_nodes), params.customers))
    customers = [CustomerNode(n, "F1", rng.randint(*params.customer_range), params.rho) for n in cust_nodes]
    zone_objs = [Zone(f"Z{k + 1}", frozenset(nodes), k + 1, k + 1) for k, (_, nodes) in enumerate(zones)]
    depots = {k + 1: (r if r == 0 else parent[r]) for k, (r, _) in enumerate(zones)}
    grid = build_grid(set(range(n_nodes)), edges, lines, devices, customers, zone_objs)
    scenario = Scenario(scenario_id=params.scenario_id, grid=grid, true_damage_set=None, call_realization=None,
                        vehicle_depots=depots, rng_seed=seed, belief_unit=params.belief_unit,
                        notes="generated")
    validate_scenario(scenario)
    return scenario


def generate_text(template: str, seed: int, **overrides) -> str:
    """Scenario file text for ``template`` (see TEMPLATES) with field overrides; deterministic in ``seed``."""
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}")
    fields = dict(TEMPLATES[template])
    fields.update({k: v for k, v in overrides.items() if v is not None})
    fields.setdefault("scenario_id", f"{template}_{seed}")
    text = dump_scenario(generate(GenParams(**fields), seed))
    parse_scenario(text)   # generated files must always load
    return text
