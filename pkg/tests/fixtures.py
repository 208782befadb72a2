"""Small scenario builders shared by the tests."""

import random

from gridcrew.grid import parse_scenario


def scenario_text(edges, lines, segments, customers, zones, vehicles, damage=None, calls=None,
                  header=None, extra_road=()):
    out = ["[scenario]", "id = fixture", "rho = 0.05"]
    for k, v in (header or {}).items():
        out.append(f"{k} = {v}")
    out.append("[road]")
    out += [f"{a} {b} {t}" for a, b, t in list(edges) + list(extra_road)]
    out.append("[lines]")
    out += [" ".join(str(x) for x in row) for row in lines]
    out.append("[segments]")
    out += [f"{s} {d}" for s, d in segments]
    out.append("[customers]")
    out += [" ".join(str(x) for x in row) for row in customers]
    out.append("[zones]")
    out += [" ".join(str(x) for x in row) for row in zones]
    out.append("[vehicles]")
    out += [f"{v} {d}" for v, d in vehicles]
    out.append("[damage]")
    out.append("mode = sample" if damage is None else "lines = " + " ".join(damage))
    out.append("[calls]")
    out.append("mode = sample" if calls is None else "called = " + " ".join(str(int(c)) for c in calls))
    return "\n".join(out) + "\n"


def chain3(priors=(0.2, 0.3, 0.4), counts=(3, 4, 5), damage=None, calls=None, repair=60, travel=(10, 10, 10),
           header=None):
    """Radial chain 0-1-2-3, one line and one segment per span, customers at 1, 2, 3."""
    edges = [(0, 1, travel[0]), (1, 2, travel[1]), (2, 3, travel[2])]
    lines = [("L1", "F1", "S1", 0, 1, priors[0], repair),
             ("L2", "F1", "S2", 1, 2, priors[1], repair),
             ("L3", "F1", "S3", 2, 3, priors[2], repair)]
    segs = [("S1", 0), ("S2", 1), ("S3", 2)]
    cust = [(1, "F1", counts[0]), (2, "F1", counts[1]), (3, "F1", counts[2])]
    return parse_scenario(scenario_text(edges, lines, segs, cust, [("Z1", 1, 1, 0, 1, 2, 3)], [(1, 0)],
                                        damage, calls, header))


def star2(p1=0.5, p2=0.5, n1=10, n2=10, t1=30, t2=30, repair=60, damage=None, calls=None, header=None):
    """Depot 0 with two spokes 0-1 (L1) and 0-2 (L2), each its own segment."""
    edges = [(0, 1, t1), (0, 2, t2)]
    lines = [("L1", "F1", "S1", 0, 1, p1, repair), ("L2", "F1", "S2", 0, 2, p2, repair)]
    segs = [("S1", 0), ("S2", 0)]
    cust = [(1, "F1", n1), (2, "F1", n2)]
    return parse_scenario(scenario_text(edges, lines, segs, cust, [("Z1", 1, 1, 0, 1, 2)], [(1, 0)],
                                        damage, calls, header))


def random_small_grid(rng: random.Random, max_lines=4):
    """Random radial circuit with <= max_lines lines, random segmentation and customers."""
    k = rng.randint(1, max_lines)
    parent = {}
    for node in range(1, k + 1):
        parent[node] = rng.randrange(0, node)
    edges = [(parent[n], n, rng.choice([5, 10, 15])) for n in range(1, k + 1)]
    # segment heads: root lines always start a segment
    seg_of = {}
    segments = []
    for n in range(1, k + 1):
        p = parent[n]
        if p == 0 or rng.random() < 0.5:
            sid = f"S{n}"
            segments.append((sid, p))
            seg_of[n] = sid
        else:
            seg_of[n] = seg_of[p]
    lines = [(f"L{n}", "F1", seg_of[n], parent[n], n, round(rng.uniform(0.0, 0.9), 3), 60)
             for n in range(1, k + 1)]
    cust_nodes = sorted(rng.sample(range(1, k + 1), rng.randint(1, k)))
    customers = [(n, "F1", rng.randint(0, 6), round(rng.uniform(0.05, 0.9), 3)) for n in cust_nodes]
    text = scenario_text(edges, lines, segments, customers,
                         [("Z1", 1, 1) + tuple(range(k + 1))], [(1, 0)])
    return parse_scenario(text)
