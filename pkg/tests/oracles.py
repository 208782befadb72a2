"""Independent reference computations used by the test-suite.

Nothing here imports the inference or search code under test; the oracles
work straight from the parsed grid tables with plain loops.
"""

import itertools
import math

from gridcrew.belief import LineStatus


def node_parent_lines(grid):
    """Map every node to the line feeding it (per circuit)."""
    feed = {}
    for ln in grid.lines:
        feed[(ln.circuit_id, ln.endpoints[1])] = ln
    return feed


def loses_power(grid, node, circuit, faulted_ids):
    """Walk from ``node`` to the source collecting the lines on the way.

    A faulted line trips the device at the head of its segment; the node goes
    dark when that head line lies on its supply path.
    """
    feed = node_parent_lines(grid)
    heads = set()
    for l in faulted_ids:
        seg = grid.segment(grid.line(l).segment_id)
        for lid in seg.line_ids:
            if grid.line(lid).endpoints[0] == seg.protective_device_node:
                heads.add(lid)
    path = set()
    cur = node
    while (circuit, cur) in feed:
        ln = feed[(circuit, cur)]
        path.add(ln.line_id)
        cur = ln.endpoints[0]
    return bool(heads & path)


def brute_force_posterior(grid, circuit, calls, observations=None, prior=None):
    """Bayes by full enumeration of line fault vectors with the silent-node convention."""
    observations = observations or {}
    prior = prior or {}
    line_ids = grid.circuit_lines(circuit)
    p = {l: prior.get(l, grid.line(l).prior_fault_prob) for l in line_ids}
    num = {l: 0.0 for l in line_ids}
    den = 0.0
    for bits in itertools.product((0, 1), repeat=len(line_ids)):
        mass = 1.0
        for l, b in zip(line_ids, bits):
            st = observations.get(l, LineStatus.UNVISITED)
            if st == LineStatus.INTACT:
                mass *= 1.0 if b == 0 else 0.0
            elif st in (LineStatus.DAMAGED, LineStatus.REPAIRED):
                mass *= 1.0 if b == 1 else 0.0
            else:
                mass *= p[l] if b else 1.0 - p[l]
        if mass == 0.0:
            continue
        faulted = [l for l, b in zip(line_ids, bits) if b]
        lik = 1.0
        for cn, called in zip(grid.customers, calls):
            if cn.circuit_id != circuit:
                continue
            out = loses_power(grid, cn.node_id, circuit, faulted)
            silent = (1.0 - cn.calling_prob) ** cn.customer_count
            if called and not out:
                lik = 0.0
                break
            if called:
                lik *= 1.0 - silent
            elif out:
                lik *= silent
        w = mass * lik
        den += w
        for l, b in zip(line_ids, bits):
            if b:
                num[l] += w
    if den == 0.0:
        return None
    result = {}
    for l in line_ids:
        st = observations.get(l, LineStatus.UNVISITED)
        if st in (LineStatus.INTACT, LineStatus.REPAIRED):
            result[l] = 0.0
        elif st == LineStatus.DAMAGED:
            result[l] = 1.0
        else:
            result[l] = num[l] / den
    return result


def enumerated_expected_outage(grid, posterior):
    """Expected de-energized customers with independent per-line fault probabilities."""
    line_ids = [ln.line_id for ln in grid.lines]
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(line_ids)):
        mass = 1.0
        for l, b in zip(line_ids, bits):
            mass *= posterior[l] if b else 1.0 - posterior[l]
        if mass == 0.0:
            continue
        faulted = [l for l, b in zip(line_ids, bits) if b]
        for cn in grid.customers:
            if loses_power(grid, cn.node_id, cn.circuit_id, faulted):
                total += mass * cn.customer_count
    return total


def outage_hours_from_records(grid, records, damage, start=0.0, end=None):
    """Customer-hours recomputed from JSON-style dispatch records only."""
    done = {}
    last = start
    for rec in records:
        finish = rec["time"] + rec["elapsed"]
        last = max(last, finish)
        if rec["observation"] == "Damaged":
            done[rec["line"]] = finish
    end = last if end is None else end
    total = 0.0
    for cn in grid.customers:
        broken = [l for l in damage if loses_power(grid, cn.node_id, cn.circuit_id, [l])]
        if not broken:
            continue
        restore = max(done.get(l, end) for l in broken)
        total += (restore - start) / 60.0 * cn.customer_count
    return total


def expectimax(state, depth, transition, legal, chance, reward_fn, terminal):
    """Exact expected return (gamma = 1) over plans that finish within ``depth`` decisions.

    A branch still open at the depth limit is worth -inf, so the returned
    action is optimal among policies that always terminate in time.
    """
    if terminal(state):
        return 0.0, None
    if depth == 0:
        return -math.inf, None
    best_value, best_action = -math.inf, None
    for a in legal(state):
        r = reward_fn(state, a)
        value = r
        for prob, outcome in chance(state, a):
            if prob == 0.0:
                continue
            child = transition(state, a, outcome)
            value += prob * expectimax(child, depth - 1, transition, legal, chance, reward_fn, terminal)[0]
        if value > best_value + 1e-12:
            best_value, best_action = value, a
    return best_value, best_action
