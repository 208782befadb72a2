"""Self-play episode generation and the off-line training loop.

Each self-play episode samples damage and calls from the scenario priors,
runs a guided search at every dispatch decision, stores (encoding, pi, z)
and moves by sampling pi.  Between episodes the network takes a few RMSprop
steps on uniform draws from the replay buffer.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as envmod
from .env import EnvConfig, EnvContext
from .grid import Scenario, ScenarioError, bundled_path
from .mcts import search
from .net import NetConfig, NonFiniteError, PolicyValueNet, ReplayBuffer, Sample, encode_state

METRICS_HEADER = ["episode", "train_steps", "eval_outage_hours", "value_loss", "policy_loss", "l2_loss",
                  "buffer_size", "wall_s"]


@dataclass(frozen=True)
class FaultCase:
    case_id: str
    damage: tuple       # line ids
    calls: tuple        # booleans in customer order


def load_cases(path, scenario: Scenario | None = None) -> list:
    """Parse a cases file: ``case_id  L1,L2|-  0101...`` per row, ``#`` comments."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and not p.suffix:
        p = bundled_path(f"{path}.cases")
    if not p.exists():
        raise ScenarioError(f"cases file not found: {path}")
    cases = []
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3 or any(c not in "01" for c in toks[2]):
            raise ScenarioError(f"{p}:{lineno}: expected 'case damaged_lines calls', got {raw!r}")
        damage = () if toks[1] == "-" else tuple(toks[1].split(","))
        calls = tuple(c == "1" for c in toks[2])
        if scenario is not None:
            if len(calls) != len(scenario.grid.customers):
                raise ScenarioError(f"{p}:{lineno}: {len(calls)} calls for {len(scenario.grid.customers)} customer nodes")
            unknown = set(damage) - set(scenario.grid.line_index)
            if unknown:
                raise ScenarioError(f"{p}:{lineno}: unknown lines {sorted(unknown)}")
        cases.append(FaultCase(toks[0], damage, calls))
    return cases


def sample_cases(scenario: Scenario, n: int, seed: int) -> list:
    """Fixed evaluation cases drawn from the priors (for scenarios without a cases file)."""
    ctx = EnvContext(scenario)
    out = []
    for i in range(n):
        s = envmod.reset(scenario, seed=seed * 7919 + i, ctx=ctx, damage=None, calls=None)
        damage = tuple(sorted(scenario.grid.lines[j].line_id for j in s.damage))
        out.append(FaultCase(str(i + 1), damage, s.belief.calls))
    return out


@dataclass
class TrainConfig:
    scenario: Scenario
    episodes: int = 2000
    sims_per_move: int = 30
    c_puct: float = 1.25
    gamma: float = 1.0
    tau_initial: float = 1.0
    tau_final: float = 1e-2
    tau_switch: int = 10
    hidden_dims: tuple = (120, 120)
    learning_rate: float = 1e-4
    l2_coeff: float = 1e-4
    batch_size: int = 32
    buffer_capacity: int = 20_000
    train_steps_per_episode: int = 32
    eval_every: int = 20
    eval_cases: list = field(default_factory=list)
    eval_sims: int | None = None
    max_decisions: int | None = None   # None: the scenario's cap
    seed: int = 0
    checkpoint_every: int = 0
    root_noise: tuple | None = (0.3, 0.25)   # (Dirichlet alpha, mix fraction) at self-play roots; None disables

    def __post_init__(self):
        for name in ("episodes", "sims_per_move", "batch_size", "buffer_capacity", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_decisions is not None and self.max_decisions < 1:
            raise ValueError("max_decisions must be >= 1")
        if self.train_steps_per_episode < 0:
            raise ValueError("train_steps_per_episode must be >= 0")
        if self.root_noise is not None:
            alpha, frac = self.root_noise
            if alpha <= 0 or not 0 <= frac <= 1:
                raise ValueError("root_noise needs alpha > 0 and 0 <= fraction <= 1")

    def tau(self, decision: int) -> float:
        return self.tau_initial if decision < self.tau_switch else self.tau_final

    def env_config(self) -> EnvConfig:
        return EnvConfig(epsilon=self.scenario.epsilon,
                         max_decisions=self.max_decisions or self.scenario.max_decisions)

    def make_net(self) -> PolicyValueNet:
        return PolicyValueNet.for_scenario(self.scenario, hidden_dims=self.hidden_dims,
                                           learning_rate=self.learning_rate, l2_coeff=self.l2_coeff,
                                           batch_size=self.batch_size, seed=self.seed)


@dataclass
class EpisodeRecord:
    samples: list
    outage_hours: float
    decisions: int
    truncated: bool
    wall_s: float
    final_state: object = None


def self_play_episode(scenario: Scenario, net: PolicyValueNet, config: TrainConfig, seed: int,
                      ctx: EnvContext | None = None) -> EpisodeRecord:
    """One self-play episode with sampled damage and calls; returns the training samples and outage."""
    t0 = time.perf_counter()
    ctx = ctx or EnvContext(scenario, config.env_config())
    rng = np.random.default_rng([seed, 1])
    state = envmod.reset(scenario, seed=seed, ctx=ctx)
    samples = []
    pdim = net.cfg.policy_dim
    while not state.terminal:
        t = state.decisions
        res = search(state, net, config.sims_per_move, config.c_puct, config.gamma, config.tau(t), seed=[seed, t],
                     root_noise=config.root_noise)
        mask = np.zeros(pdim, dtype=bool)
        mask[: len(res.actions)] = True
        samples.append(Sample(encode_state(state), res.policy_vector(pdim), res.value_target / net.value_scale, mask))
        a = res.actions[int(rng.choice(len(res.actions), p=res.policy))]
        state = envmod.step(state, a).next_state
    return EpisodeRecord(samples, envmod.episode_outage_hours(state), state.decisions, state.truncated,
                         time.perf_counter() - t0, state)


def play_episode(scenario: Scenario, decide, damage=None, calls=None, seed: int = 0,
                 ctx: EnvContext | None = None):
    """Run ``decide(state, decision_index) -> destination`` to the end; returns (final state, decision seconds)."""
    ctx = ctx or EnvContext(scenario)
    state = envmod.reset(scenario, seed=seed, ctx=ctx, damage=damage, calls=calls)
    spent = []
    while not state.terminal:
        t0 = time.perf_counter()
        a = decide(state, state.decisions)
        spent.append(time.perf_counter() - t0)
        state = envmod.step(state, a).next_state
    return state, spent


def agent_decider(net, sims: int, c_puct: float = 1.25, gamma: float = 1.0, seed: int = 0):
    """Most-visited action of a guided search (evaluation mode)."""
    def decide(state, t):
        return search(state, net, sims, c_puct, gamma, 0.0, seed=[seed, t]).best_action()
    return decide


def evaluate(scenario: Scenario, net, cases, sims: int, c_puct: float = 1.25, gamma: float = 1.0,
             seed: int = 0, ctx: EnvContext | None = None) -> list:
    """Greedy (most-visited) play on each fixed case; returns outage hours per case."""
    ctx = ctx or EnvContext(scenario)
    out = []
    for i, case in enumerate(cases):
        final, _ = play_episode(scenario, agent_decider(net, sims, c_puct, gamma, seed * 1000 + i),
                                case.damage, case.calls, seed, ctx)
        out.append(envmod.episode_outage_hours(final))
    return out


@dataclass
class TrainResult:
    net: PolicyValueNet
    metrics: list
    buffer: ReplayBuffer
    episodes: list = field(default_factory=list)   # (outage_hours, decisions, truncated) per self-play episode


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def train_loop(config: TrainConfig, net: PolicyValueNet | None = None, metrics_path=None, checkpoint_dir=None,
               timing: bool = True, progress=None) -> TrainResult:
    """Alternate self-play and network updates; evaluate every ``eval_every`` episodes."""
    scenario = config.scenario
    net = net or config.make_net()
    ctx = EnvContext(scenario, config.env_config())
    buffer = ReplayBuffer(config.buffer_capacity, seed=config.seed)
    eval_cases = config.eval_cases or sample_cases(scenario, 10, config.seed)
    eval_sims = config.eval_sims or config.sims_per_move
    t_start = time.perf_counter()
    metrics, history = [], []
    parts = {"value": float("nan"), "policy": float("nan"), "l2": float("nan")}
    fh = writer = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    try:
        for n in range(1, config.episodes + 1):
            rec = self_play_episode(scenario, net.snapshot(), config, seed=config.seed * 1_000_003 + n, ctx=ctx)
            buffer.extend(rec.samples)
            history.append((rec.outage_hours, rec.decisions, rec.truncated))
            for _ in range(config.train_steps_per_episode):
                try:
                    parts = net.train_step(buffer.sample(config.batch_size)) if len(buffer) else parts
                except NonFiniteError as exc:
                    raise NonFiniteError(f"episode {n}: {exc}") from exc
            if n % config.eval_every == 0 or n == config.episodes:
                hours = evaluate(scenario, net, eval_cases, eval_sims, config.c_puct, config.gamma,
                                 seed=config.seed, ctx=ctx)
                row = {"episode": n, "train_steps": net.version, "eval_outage_hours": float(np.mean(hours)),
                       "value_loss": parts["value"], "policy_loss": parts["policy"], "l2_loss": parts["l2"],
                       "buffer_size": len(buffer),
                       "wall_s": round(time.perf_counter() - t_start, 3) if timing else "NA"}
                metrics.append(row)
                if writer:
                    writer.writerow([_fmt(row[k]) for k in METRICS_HEADER])
                    fh.flush()
                if progress:
                    progress(row)
            if checkpoint_dir is not None and config.checkpoint_every and n % config.checkpoint_every == 0:
                net.save(Path(checkpoint_dir) / f"checkpoint_{n:06d}.json")
        if checkpoint_dir is not None:
            net.save(Path(checkpoint_dir) / "final.json")
    finally:
        if fh:
            fh.close()
    return TrainResult(net, metrics, buffer, history)
