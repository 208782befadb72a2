import numpy as np
import pytest

from gridcrew import env as E
from gridcrew.baselines import (BaselineConfig, decider, greedy_decide, greedy_scores, oluct_decide, rollout,
                                vanilla_mcts_decide)
from gridcrew.grid import load_scenario, parse_scenario

from fixtures import chain3, scenario_text, star2
from oracles import expectimax


def expectimax_values(state, depth=3):
    """Exact first-move values on a fixture whose plans finish within ``depth`` decisions."""
    def value(s, d):
        return expectimax(s, d, lambda st, a, o: E.transition(st, a, o).next_state, lambda st: st.legal_actions(),
                          E.chance_outcomes, E.reward, lambda st: st.terminal)[0]
    return {a: E.reward(state, a) + sum(p * value(E.transition(state, a, o).next_state, depth - 1)
                                        for p, o in E.chance_outcomes(state, a))
            for a in state.legal_actions()}


def dominant_star():
    sc = star2(p1=0.8, p2=0.2, n1=30, n2=5, t1=10, t2=20)
    return E.reset(sc, seed=0, damage=["L1"], calls=[1, 0]).public()


def test_vanilla_matches_expectimax():
    s = dominant_star()
    vals = expectimax_values(s)
    best = max(vals, key=vals.get)
    hits = sum(vanilla_mcts_decide(s, BaselineConfig(sims=200), seed=k) == best for k in range(100))
    assert hits >= 95


def test_oluct_matches_expectimax():
    s = dominant_star()
    vals = expectimax_values(s)
    best = max(vals, key=vals.get)
    hits = sum(oluct_decide(s, BaselineConfig("oluct", sims=200), seed=k) == best for k in range(100))
    assert hits >= 90


def test_single_simulation_returns_the_tried_action():
    s = E.reset(load_scenario("eight_node"), seed=0, damage=["L5"], calls=[0, 0, 1, 0, 0])
    s = E.step(s, 1).next_state
    for k in range(10):
        a = vanilla_mcts_decide(s, BaselineConfig(sims=1), seed=k)
        assert a in s.legal_actions()


def test_baselines_deterministic():
    s = E.reset(load_scenario("eight_node"), seed=0, damage=["L5"], calls=[0, 0, 1, 0, 0])
    for algo in ("vanilla_mcts", "oluct"):
        cfg = BaselineConfig(algo, sims=60)
        fn = vanilla_mcts_decide if algo == "vanilla_mcts" else oluct_decide
        assert fn(s, cfg, seed=5) == fn(s, cfg, seed=5)


def test_open_and_closed_loop_agree_when_deterministic():
    # posteriors pinned to 0 or 1 make every transition deterministic
    sc = chain3(priors=(0.0, 1.0, 0.0), damage=["L2"], calls=[0, 1, 1])
    s = E.reset(sc, seed=0).public()
    assert set(s.belief.posterior) <= {0.0, 1.0}
    for k in range(5):
        assert (vanilla_mcts_decide(s, BaselineConfig(sims=200), seed=k)
                == oluct_decide(s, BaselineConfig("oluct", sims=200), seed=k))


def test_oluct_returns_legal_actions_on_stochastic_fixture():
    s = E.reset(load_scenario("eight_node"), seed=3)
    for k in range(5):
        if s.terminal:
            break
        a = oluct_decide(s, BaselineConfig("oluct", sims=30), seed=k)
        assert a in s.legal_actions()
        s = E.step(s, a).next_state


def test_rollout_is_non_positive_and_bounded_by_depth():
    s = E.reset(load_scenario("eight_node"), seed=0, damage=["L5"], calls=[0, 0, 1, 0, 0]).public()
    rng = np.random.default_rng(0)
    assert rollout(s, 0, 1.0, rng) == 0.0
    assert rollout(s, 20, 1.0, rng) <= 0.0


def test_greedy_moves_onto_the_only_suspect_line():
    text = scenario_text([(0, 1, 10), (0, 2, 10)],
                         [("L1", "F1", "S1", 0, 1, 0.0, 60), ("L2", "F1", "S2", 0, 2, 0.4, 60)],
                         [("S1", 0), ("S2", 0)], [(1, "F1", 5), (2, "F1", 5)], [("Z1", 1, 1, 0, 1, 2)], [(1, 0)])
    s = E.reset(parse_scenario(text), seed=0, damage=["L2"], calls=[0, 1])
    assert greedy_decide(s) == 2


def test_greedy_tie_goes_to_lowest_node():
    s = E.reset(star2(p1=0.4, p2=0.4), seed=0, damage=[], calls=[0, 0])
    scores = greedy_scores(s)
    assert scores[1] == scores[2]
    assert greedy_decide(s) == 1


def test_greedy_divergence_from_expectimax():
    """Greedy ranks lines by posterior x customers per travel minute and ignores repair time.

    Spoke 1: posterior 0.74, 4 customers, 10 min away.  Spoke 2: posterior
    0.35, 11 customers, 20 min away.  Greedy heads for spoke 1 (score 0.30
    against 0.19), but a likely one-hour repair there keeps spoke 2's larger
    group dark, so the exact expected cost favours spoke 2 first.
    """
    s = E.reset(star2(p1=0.78, p2=0.49, n1=4, n2=11, t1=10, t2=20), seed=74, damage=[], calls=[0, 0]).public()
    vals = expectimax_values(s)
    best = max(vals, key=vals.get)
    assert best == 2 and vals[2] - vals[1] > 1.0
    assert greedy_decide(s) == 1


def test_decider_adapter_runs_an_episode():
    sc = load_scenario("eight_node")
    s = E.reset(sc, seed=0, damage=["L5"], calls=[0, 0, 1, 0, 0])
    decide = decider(BaselineConfig("greedy"))
    while not s.terminal:
        s = E.step(s, decide(s, s.decisions)).next_state
    assert not s.truncated
    assert E.episode_outage_hours(s) > 0


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        BaselineConfig("random")
    with pytest.raises(ValueError):
        BaselineConfig("oluct", sims=0)


def test_terminal_state_rejected():
    s = E.reset(chain3(priors=(0.0, 0.0, 0.0)), seed=0)
    with pytest.raises(ValueError):
        greedy_decide(s)
