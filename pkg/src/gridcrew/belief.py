"""Bayesian fault belief from trouble calls and crew observations.

Calls only depend on which protective devices tripped, so the likelihood is a
function of the per-segment fault indicators (a segment is faulted when any of
its lines is).  Inference therefore runs over segment combinations and the
per-line posterior is recovered analytically: given its segment is faulted,
a free line is faulted with probability ``p_i / P(segment faulted)``.

Historical damage is what produced the calls, so a repaired line stays pinned
to "was faulted" inside the enumeration while its reported posterior is 0.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from .grid import DistributionGrid, Scenario, DEFAULT_K_ENUM, DEFAULT_MC_SAMPLES


class LineStatus(IntEnum):
    UNVISITED = 0
    INTACT = 1
    DAMAGED = 2
    REPAIRED = 3


class ZeroEvidence(ArithmeticError):
    """Calls are inconsistent with every fault combination that has prior mass."""


class CallMonotonicityError(ValueError):
    pass


def _combos(k: int) -> np.ndarray:
    idx = np.arange(2 ** k, dtype=np.int64)[:, None]
    return ((idx >> np.arange(k)) & 1).astype(bool)


@dataclass
class _Circuit:
    circuit_id: str
    seg_ids: list                 # grid segment indices, local order
    members: list                 # per local segment: grid line indices
    ancestors: np.ndarray         # (S, S) bool: [s, t] -> t upstream of (or equal to) s
    customers: list               # per local segment: list of (customer index, n, rho)
    parent: list = field(default_factory=list)     # per local segment: local parent index or -1
    children: list = field(default_factory=list)   # per local segment: local child indices
    order: list = field(default_factory=list)      # parents before children
    _enum_cache: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.seg_ids)

    def enumeration(self):
        if "combos" not in self._enum_cache:
            combos = _combos(self.size)
            affected = (combos.astype(np.float64) @ self.ancestors.T.astype(np.float64)) > 0
            self._enum_cache["combos"] = combos
            self._enum_cache["affected"] = affected
        return self._enum_cache["combos"], self._enum_cache["affected"]


class BeliefModel:
    """Precomputed inference structures for one grid, with a posterior cache.

    ``method`` is ``auto`` (enumerate circuits with at most ``k_enum``
    segments, importance-sample the rest), ``enumerate``, ``mc`` or ``tree``
    (exact sum-product over the radial protection tree, linear in the
    number of segments).
    """

    def __init__(self, grid: DistributionGrid, method: str = "auto", k_enum: int = DEFAULT_K_ENUM,
                 mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0, cache_size: int = 200_000):
        self.grid = grid
        self.method = method
        self.k_enum = k_enum
        self.mc_samples = mc_samples
        self.seed = seed
        self.cache_size = cache_size
        self._cache: dict = {}
        self._call_cache: dict = {}
        self.prior = np.array([ln.prior_fault_prob for ln in grid.lines], dtype=np.float64)
        self.n_lines = len(grid.lines)

        seg_local = {}
        self.circuits: list[_Circuit] = []
        for c in grid.circuits:
            seg_ids = [i for i, s in enumerate(grid.segments) if s.circuit_id == c]
            for j, si in enumerate(seg_ids):
                seg_local[si] = j
            S = len(seg_ids)
            anc = np.zeros((S, S), dtype=bool)
            for j, si in enumerate(seg_ids):
                for sid in grid.segment_chain[grid.segments[si].segment_id]:
                    anc[j, seg_local[grid.segment_index[sid]]] = True
            members = [[grid.line_index[l] for l in grid.segments[si].line_ids] for si in seg_ids]
            cust = []
            for si in seg_ids:
                rows = []
                for node in sorted(grid.segments[si].downstream_customer_nodes):
                    ci = grid.customer_index[node]
                    cn = grid.customers[ci]
                    rows.append((ci, cn.customer_count, cn.calling_prob))
                cust.append(rows)
            parent = [seg_local[grid.segment_index[grid.segments[si].parent]] if grid.segments[si].parent else -1
                      for si in seg_ids]
            children = [[k for k in range(S) if parent[k] == j] for j in range(S)]
            order = sorted(range(S), key=lambda j: int(anc[j].sum()))
            self.circuits.append(_Circuit(c, seg_ids, members, anc, cust, parent, children, order))
        self.line_segment = np.array([grid.segment_index[ln.segment_id] for ln in grid.lines])
        # cut-set membership for the expected-outage term
        self.cut_mask = np.zeros((len(grid.segments), self.n_lines), dtype=bool)
        self.segment_customers = np.zeros(len(grid.segments))
        for si, s in enumerate(grid.segments):
            self.cut_mask[si, list(grid.cut_set[s.segment_id])] = True
            self.segment_customers[si] = grid.segment_customers[s.segment_id]

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "BeliefModel":
        return cls(scenario.grid, method=scenario.belief_method, k_enum=scenario.k_enum,
                   mc_samples=scenario.mc_samples, seed=scenario.rng_seed)

    # -- call evidence ----------------------------------------------------

    def _call_factors(self, circ: _Circuit, calls: tuple):
        key = (circ.circuit_id, calls)
        hit = self._call_cache.get(key)
        if hit is not None:
            return hit
        aff = np.ones(circ.size)
        unaff = np.ones(circ.size)
        for j, rows in enumerate(circ.customers):
            for ci, n, rho in rows:
                silent = (1.0 - rho) ** n
                if calls[ci]:
                    aff[j] *= 1.0 - silent
                    unaff[j] = 0.0
                else:
                    aff[j] *= silent
        self._call_cache[key] = (aff, unaff)
        return aff, unaff

    # -- inference --------------------------------------------------------

    def _unit_probs(self, circ: _Circuit, prior: np.ndarray, statuses: Sequence[int]):
        u = np.empty(circ.size)
        pinned = np.zeros(circ.size, dtype=bool)
        for j, members in enumerate(circ.members):
            keep = 1.0
            for i in members:
                st = statuses[i]
                if st == LineStatus.DAMAGED or st == LineStatus.REPAIRED:
                    pinned[j] = True
                elif st == LineStatus.UNVISITED:
                    keep *= 1.0 - prior[i]
            u[j] = 1.0 if pinned[j] else 1.0 - keep
        return u, pinned

    def circuit_method(self, circ: _Circuit) -> str:
        if self.method == "auto":
            return "enumerate" if circ.size <= self.k_enum else "mc"
        return self.method

    def segment_fault_posterior(self, circ: _Circuit, u: np.ndarray, calls: tuple, method: str,
                                samples: int | None = None, rng=None) -> np.ndarray:
        """P(segment faulted | calls, observations) for each segment of ``circ``."""
        aff, unaff = self._call_factors(circ, calls)
        if method == "enumerate":
            combos, affected = circ.enumeration()
            lik = np.where(affected, aff, unaff).prod(axis=1)
            w = lik * np.where(combos, u, 1.0 - u).prod(axis=1)
            total = w.sum()
            if not total > 0.0:
                raise ZeroEvidence(f"circuit {circ.circuit_id}: no fault combination explains the calls")
            return (w @ combos) / total
        if method == "mc":
            n = samples or self.mc_samples
            rng = rng if rng is not None else np.random.default_rng(self.seed)
            draws = rng.random((n, circ.size)) < u
            affected = (draws.astype(np.float64) @ circ.ancestors.T.astype(np.float64)) > 0
            w = np.where(affected, aff, unaff).prod(axis=1)
            total = w.sum()
            if not total > 0.0:
                raise ZeroEvidence(f"circuit {circ.circuit_id}: every sampled combination has zero weight")
            return (w @ draws) / total
        if method == "tree":
            return _tree_posterior(circ, u, aff, unaff)
        raise ValueError(f"unknown method {method!r}")

    def posterior(self, calls: tuple, statuses: tuple, prior: np.ndarray | None = None,
                  method: str | None = None, samples: int | None = None, seed: int | None = None):
        """Per-line and per-segment posteriors for one (calls, statuses) pair.

        Returns ``(line_posterior, segment_posterior)``; the segment value is the
        probability that the segment currently holds an unrepaired fault.
        """
        use_cache = prior is None and method is None and samples is None and seed is None
        if use_cache:
            key = (calls, statuses)
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        prior_arr = self.prior if prior is None else np.asarray(prior, dtype=np.float64)
        line_post = np.zeros(self.n_lines)
        seg_post = np.zeros(len(self.grid.segments))
        for circ in self.circuits:
            u, pinned = self._unit_probs(circ, prior_arr, statuses)
            m = method or self.circuit_method(circ)
            rng = None
            if m == "mc":
                if seed is None:
                    blob = bytes(statuses) + bytes(int(c) for c in calls) + circ.circuit_id.encode()
                    rng = np.random.default_rng([self.seed, zlib.crc32(blob)])
                else:
                    rng = np.random.default_rng(seed)
            post = self.segment_fault_posterior(circ, u, calls, m, samples, rng)
            np.clip(post, 0.0, 1.0, out=post)   # rounding in the normalising sum can overshoot 1
            for j, members in enumerate(circ.members):
                free_keep = 1.0
                open_damage = False
                n_free = sum(1 for i in members if statuses[i] == LineStatus.UNVISITED)
                for i in members:
                    st = statuses[i]
                    if st == LineStatus.UNVISITED:
                        if pinned[j]:
                            line_post[i] = prior_arr[i]
                        elif n_free == 1:
                            line_post[i] = post[j]
                        elif u[j] > 0.0:
                            line_post[i] = min(1.0, post[j] * prior_arr[i] / u[j])
                        free_keep *= 1.0 - prior_arr[i]
                    elif st == LineStatus.DAMAGED:
                        line_post[i] = 1.0
                        open_damage = True
                si = circ.seg_ids[j]
                if open_damage:
                    seg_post[si] = 1.0
                elif pinned[j]:
                    seg_post[si] = 1.0 - free_keep
                else:
                    seg_post[si] = post[j]
        line_post.setflags(write=False)
        seg_post.setflags(write=False)
        if use_cache:
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = (line_post, seg_post)
        return line_post, seg_post

    def initial_belief(self, calls: Sequence[bool]) -> "BeliefState":
        calls = tuple(bool(c) for c in calls)
        statuses = tuple([int(LineStatus.UNVISITED)] * self.n_lines)
        post, seg = self.posterior(calls, statuses)
        return BeliefState(self, calls, statuses, post, seg, ())

    def expected_outage(self, line_post: np.ndarray) -> float:
        """Expected de-energized customers: sum over segments of P(any cut-set line faulted) * customers."""
        keep = np.where(self.cut_mask, 1.0 - line_post, 1.0).prod(axis=1)
        return float(((1.0 - keep) * self.segment_customers).sum())


def _tree_posterior(circ: _Circuit, u: np.ndarray, aff: np.ndarray, unaff: np.ndarray) -> np.ndarray:
    """Exact segment posteriors by two passes over the protection tree.

    beta_d[j]: mass of j's subtree given darkness d arriving from upstream;
    out_d[j]: mass of everything outside j's subtree with j's upstream darkness d.
    """
    S = circ.size
    beta0, beta1 = np.empty(S), np.empty(S)
    kids1 = np.ones(S)
    for j in reversed(circ.order):
        c0 = c1 = 1.0
        for k in circ.children[j]:
            c0 *= beta0[k]
            c1 *= beta1[k]
        kids1[j] = c1
        beta1[j] = aff[j] * c1
        beta0[j] = (1.0 - u[j]) * unaff[j] * c0 + u[j] * aff[j] * c1
    roots = [j for j in range(S) if circ.parent[j] < 0]
    Z = 1.0
    for r in roots:
        Z *= beta0[r]
    if not Z > 0.0:
        raise ZeroEvidence(f"circuit {circ.circuit_id}: no fault combination explains the calls")
    out0, out1 = np.zeros(S), np.zeros(S)
    for r in roots:
        rest = 1.0
        for q in roots:
            if q != r:
                rest *= beta0[q]
        out0[r] = rest
    for j in circ.order:
        kids = circ.children[j]
        for k in kids:
            ex0 = ex1 = 1.0
            for m in kids:
                if m != k:
                    ex0 *= beta0[m]
                    ex1 *= beta1[m]
            out1[k] = (out0[j] * u[j] + out1[j]) * aff[j] * ex1
            out0[k] = out0[j] * (1.0 - u[j]) * unaff[j] * ex0
    return np.minimum(1.0, (out0 + out1) * u * aff * kids1 / Z)


@dataclass(frozen=True)
class BeliefState:
    model: BeliefModel = field(repr=False, compare=False)
    calls: tuple
    statuses: tuple
    posterior: np.ndarray = field(compare=False)
    segment_posterior: np.ndarray = field(repr=False, compare=False)
    trajectory: tuple = ()   # (vehicle, (from, to), time) records

    @property
    def prior(self) -> np.ndarray:
        return self.model.prior

    def line_posterior(self, line_id: str) -> float:
        return float(self.posterior[self.model.grid.line_index[line_id]])

    def status(self, line_id: str) -> LineStatus:
        return LineStatus(self.statuses[self.model.grid.line_index[line_id]])

    def max_posterior(self) -> float:
        return float(self.posterior.max()) if len(self.posterior) else 0.0

    def with_statuses(self, statuses: tuple, trajectory: tuple | None = None) -> "BeliefState":
        post, seg = self.model.posterior(self.calls, statuses)
        return BeliefState(self.model, self.calls, statuses, post, seg,
                           self.trajectory if trajectory is None else trajectory)

    def to_dict(self) -> dict:
        g = self.model.grid
        return {
            "calls": [int(c) for c in self.calls],
            "status": {ln.line_id: LineStatus(s).name for ln, s in zip(g.lines, self.statuses)},
            "posterior": {ln.line_id: float(p) for ln, p in zip(g.lines, self.posterior)},
        }


def update_on_observation(belief: BeliefState, line: str | int, observed_damaged: bool) -> BeliefState:
    """Record a crew report for a traversed line and recompute every posterior."""
    i = line if isinstance(line, (int, np.integer)) else belief.model.grid.line_index[line]
    current = belief.statuses[i]
    if current in (LineStatus.INTACT, LineStatus.REPAIRED):
        return belief   # already known not to be faulted
    new = LineStatus.DAMAGED if observed_damaged else LineStatus.INTACT
    if current == new:
        return belief
    statuses = belief.statuses[:i] + (int(new),) + belief.statuses[i + 1:]
    return belief.with_statuses(statuses)


def repair(belief: BeliefState, line: str | int) -> BeliefState:
    i = line if isinstance(line, (int, np.integer)) else belief.model.grid.line_index[line]
    if belief.statuses[i] != LineStatus.DAMAGED:
        raise ValueError("only an observed-damaged line can be repaired")
    statuses = belief.statuses[:i] + (int(LineStatus.REPAIRED),) + belief.statuses[i + 1:]
    return belief.with_statuses(statuses)


def update_on_calls(belief: BeliefState, new_calls: Sequence[bool]) -> BeliefState:
    new_calls = tuple(bool(c) for c in new_calls)
    if len(new_calls) != len(belief.calls):
        raise ValueError("call record length mismatch")
    if any(old and not new for old, new in zip(belief.calls, new_calls)):
        raise CallMonotonicityError("a recorded call cannot be withdrawn")
    if new_calls == belief.calls:
        return belief
    post, seg = belief.model.posterior(new_calls, belief.statuses)
    return replace(belief, calls=new_calls, posterior=post, segment_posterior=seg)


# ---------------------------------------------------------------------------
# Stand-alone functional interface
# ---------------------------------------------------------------------------

def _calls_tuple(grid: DistributionGrid, calls) -> tuple:
    if isinstance(calls, Mapping):
        return tuple(bool(calls.get(c.node_id, False)) for c in grid.customers)
    calls = tuple(bool(c) for c in calls)
    if len(calls) != len(grid.customers):
        raise ValueError("calls must have one entry per customer node")
    return calls


def _statuses_tuple(grid: DistributionGrid, observations) -> tuple:
    statuses = [int(LineStatus.UNVISITED)] * len(grid.lines)
    for lid, st in (observations or {}).items():
        statuses[grid.line_index[lid]] = int(st)
    return tuple(statuses)


def _prior_array(grid: DistributionGrid, prior) -> np.ndarray:
    arr = np.array([ln.prior_fault_prob for ln in grid.lines], dtype=np.float64)
    for lid, p in (prior or {}).items():
        arr[grid.line_index[lid]] = p
    return arr


def _model_for(grid: DistributionGrid) -> BeliefModel:
    model = grid.__dict__.get("_belief_model")
    if model is None:
        model = BeliefModel(grid, method="auto", k_enum=DEFAULT_K_ENUM)
        object.__setattr__(grid, "_belief_model", model)
    return model


def call_likelihood(grid: DistributionGrid, circuit: str, fault_combination: Mapping[str, bool],
                    calls, rho: Mapping[int, float] | None = None, include_silent: bool = False) -> float:
    """p(calls | faults) for one circuit.

    With ``include_silent`` false this is the product over calling, de-energized
    nodes of ``1-(1-rho)^n`` (zero if a calling node keeps power).  With it true,
    silent de-energized nodes also contribute ``(1-rho)^n``.
    """
    from .grid import affected_nodes

    calls_t = _calls_tuple(grid, calls)
    out = affected_nodes(grid, fault_combination)
    value = 1.0
    for cn, called in zip(grid.customers, calls_t):
        if cn.circuit_id != circuit:
            continue
        r = rho[cn.node_id] if rho and cn.node_id in rho else cn.calling_prob
        silent = (1.0 - r) ** cn.customer_count
        if called:
            if cn.node_id not in out:
                return 0.0
            value *= 1.0 - silent
        elif include_silent and cn.node_id in out:
            value *= silent
    return value


def _circuit_result(grid, circuit, post) -> dict:
    return {lid: float(post[grid.line_index[lid]]) for lid in grid.circuit_lines(circuit)}


def posterior_exact(grid: DistributionGrid, circuit: str, calls, observations=None, prior=None,
                    k_enum: int = DEFAULT_K_ENUM) -> dict:
    """Exact posterior fault probability of every line of ``circuit`` by enumeration."""
    model = _model_for(grid)
    circ = next(c for c in model.circuits if c.circuit_id == circuit)
    if circ.size > k_enum:
        raise ValueError(f"circuit {circuit} has {circ.size} segments, above the enumeration limit {k_enum}")
    post, _ = model.posterior(_calls_tuple(grid, calls), _statuses_tuple(grid, observations),
                              prior=_prior_array(grid, prior), method="enumerate")
    return _circuit_result(grid, circuit, post)


def posterior_mc(grid: DistributionGrid, circuit: str, calls, observations=None, prior=None,
                 samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> dict:
    """Importance-sampled posterior: draw faults from the prior, weight by call likelihood."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    model = _model_for(grid)
    post, _ = model.posterior(_calls_tuple(grid, calls), _statuses_tuple(grid, observations),
                              prior=_prior_array(grid, prior), method="mc", samples=samples, seed=seed)
    return _circuit_result(grid, circuit, post)


def mc_standard_error(grid: DistributionGrid, circuit: str, calls, observations=None, prior=None,
                      samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> dict:
    """Delta-method standard error of :func:`posterior_mc` for each line."""
    model = _model_for(grid)
    calls_t = _calls_tuple(grid, calls)
    statuses = _statuses_tuple(grid, observations)
    prior_arr = _prior_array(grid, prior)
    circ = next(c for c in model.circuits if c.circuit_id == circuit)
    u, _ = model._unit_probs(circ, prior_arr, statuses)
    aff, unaff = model._call_factors(circ, calls_t)
    rng = np.random.default_rng(seed)
    draws = rng.random((samples, circ.size)) < u
    affected = (draws.astype(np.float64) @ circ.ancestors.T.astype(np.float64)) > 0
    w = np.where(affected, aff, unaff).prod(axis=1)
    wbar = w.mean()
    out = {}
    for j, members in enumerate(circ.members):
        est = (w * draws[:, j]).sum() / w.sum()
        resid = w * (draws[:, j] - est)
        se_seg = math.sqrt((resid ** 2).mean() / samples) / wbar
        for i in members:
            scale = prior_arr[i] / u[j] if u[j] > 0 and statuses[i] == LineStatus.UNVISITED else 0.0
            out[grid.lines[i].line_id] = se_seg * scale
    return out
