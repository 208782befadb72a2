import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcrew.belief import (BeliefModel, CallMonotonicityError, LineStatus, ZeroEvidence, call_likelihood,
                             posterior_exact, posterior_mc, repair, update_on_calls, update_on_observation)
from gridcrew.generator import GenParams, generate
from gridcrew.grid import load_scenario

from fixtures import chain3, random_small_grid, scenario_text
from oracles import brute_force_posterior
from gridcrew.grid import parse_scenario


def _two_callers():
    # one segment feeding customer nodes 1 (n=2) and 2 (n=3)
    text = scenario_text([(0, 1, 10), (1, 2, 10)],
                         [("L1", "F1", "S1", 0, 1, 0.3, 60), ("L2", "F1", "S1", 1, 2, 0.3, 60)],
                         [("S1", 0)], [(1, "F1", 2), (2, "F1", 3)], [("Z1", 1, 1, 0, 1, 2)], [(1, 0)])
    return parse_scenario(text).grid


def test_call_likelihood_single_caller():
    text = scenario_text([(0, 1, 10)], [("L1", "F1", "S1", 0, 1, 0.3, 60)], [("S1", 0)], [(1, "F1", 1)],
                         [("Z1", 1, 1, 0, 1)], [(1, 0)])
    g = parse_scenario(text).grid
    assert call_likelihood(g, "F1", {"L1": True}, [1], {1: 0.05}) == pytest.approx(0.05, abs=1e-15)


def test_call_likelihood_energized_caller_is_zero():
    g = chain3().grid
    assert call_likelihood(g, "F1", {"L3": True}, [1, 0, 0]) == 0.0


def test_call_likelihood_two_callers():
    g = _two_callers()
    got = call_likelihood(g, "F1", {"L1": True}, [1, 1])
    assert got == pytest.approx((1 - 0.95 ** 2) * (1 - 0.95 ** 3), abs=1e-15)


def test_call_likelihood_monte_carlo_crosscheck():
    g = _two_callers()
    rng = np.random.default_rng(3)
    n = 400_000
    calls1 = (rng.random((n, 2)) < 0.05).any(axis=1)
    calls2 = (rng.random((n, 3)) < 0.05).any(axis=1)
    freq = float((calls1 & calls2).mean())
    exact = call_likelihood(g, "F1", {"L1": True}, [1, 1])
    assert abs(freq - exact) < 4 * np.sqrt(exact * (1 - exact) / n)


def test_silent_nodes_factor():
    g = chain3().grid
    # node 3 dark but silent contributes (1-rho)^n when requested
    lit = call_likelihood(g, "F1", {"L2": True}, [0, 1, 0], include_silent=True)
    assert lit == pytest.approx((1 - 0.95 ** 4) * 0.95 ** 5)


def _random_evidence(rng: random.Random, grid):
    calls = [rng.random() < 0.4 for _ in grid.customers]
    obs = {}
    for ln in grid.lines:
        r = rng.random()
        if r < 0.15:
            obs[ln.line_id] = LineStatus.INTACT
        elif r < 0.22:
            obs[ln.line_id] = LineStatus.DAMAGED
        elif r < 0.27:
            obs[ln.line_id] = LineStatus.REPAIRED
    return calls, obs


def _check_against_oracle(grid, calls, obs):
    want = brute_force_posterior(grid, "F1", calls, obs)
    if want is None:
        with pytest.raises(ZeroEvidence):
            posterior_exact(grid, "F1", calls, obs)
        return 0
    got = posterior_exact(grid, "F1", calls, obs)
    for lid in want:
        assert abs(got[lid] - want[lid]) <= 1e-12, (lid, got, want)
    return 1


def test_exact_matches_brute_force_many_configs():
    rng = random.Random(11)
    checked = 0
    for _ in range(120):
        grid = random_small_grid(rng).grid
        calls, obs = _random_evidence(rng, grid)
        checked += _check_against_oracle(grid, calls, obs)
    assert checked >= 50


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_exact_matches_brute_force_property(seed):
    rng = random.Random(seed)
    grid = random_small_grid(rng).grid
    calls, obs = _random_evidence(rng, grid)
    _check_against_oracle(grid, calls, obs)


def test_no_calls_matches_oracle_and_shift_is_small():
    g = chain3().grid
    got = posterior_exact(g, "F1", [0, 0, 0])
    want = brute_force_posterior(g, "F1", [0, 0, 0])
    for lid, p in want.items():
        assert got[lid] == pytest.approx(p, abs=1e-12)
        # silence only lowers fault odds, and only a little at small rho
        assert got[lid] <= g.line(lid).prior_fault_prob + 1e-15
        assert got[lid] >= g.line(lid).prior_fault_prob - 0.2


def test_zero_prior_line_stays_zero():
    g = chain3(priors=(0.0, 0.3, 0.4)).grid
    post = posterior_exact(g, "F1", [0, 1, 1])
    assert post["L1"] == 0.0


def test_observed_intact_is_zero():
    g = chain3().grid
    post = posterior_exact(g, "F1", [0, 1, 1], {"L2": LineStatus.INTACT})
    assert post["L2"] == 0.0


def test_unexplainable_calls_raise():
    g = chain3(priors=(0.0, 0.0, 0.4)).grid
    with pytest.raises(ZeroEvidence):
        posterior_exact(g, "F1", [1, 0, 0])


def _tree_vs_enum(grid, rng):
    model = BeliefModel(grid, method="enumerate")
    calls = tuple(rng.random() < 0.3 for _ in grid.customers)
    statuses = tuple(int(rng.choice([0, 0, 0, 0, 1, 2, 3])) for _ in grid.lines)
    try:
        want, want_seg = model.posterior(calls, statuses, method="enumerate")
    except ZeroEvidence:
        with pytest.raises(ZeroEvidence):
            model.posterior(calls, statuses, method="tree")
        return
    got, got_seg = model.posterior(calls, statuses, method="tree")
    np.testing.assert_allclose(got, want, atol=1e-12)
    np.testing.assert_allclose(got_seg, want_seg, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_tree_engine_matches_enumeration(seed):
    rng = random.Random(seed)
    segs = rng.randint(1, 10)
    params = GenParams(lines=rng.randint(max(segs, 3), 16), segments=segs, customers=rng.randint(1, 3),
                       zones=1, high_fraction=0.6)
    try:
        sc = generate(params, seed)
    except ValueError:
        return   # tree shape needs more root segments than drawn
    _tree_vs_enum(sc.grid, rng)


def test_tree_engine_on_eight_node():
    rng = random.Random(5)
    grid = load_scenario("eight_node").grid
    for _ in range(30):
        _tree_vs_enum(grid, rng)


def test_mc_close_to_exact():
    g = chain3().grid
    exact = posterior_exact(g, "F1", [0, 1, 1])
    mc = posterior_mc(g, "F1", [0, 1, 1], samples=200_000, seed=1)
    for lid in exact:
        assert abs(mc[lid] - exact[lid]) < 0.01


def test_mc_deterministic_for_seed():
    g = chain3().grid
    a = posterior_mc(g, "F1", [0, 1, 1], samples=5000, seed=9)
    b = posterior_mc(g, "F1", [0, 1, 1], samples=5000, seed=9)
    assert a == b


def test_mc_single_sample_is_binary():
    # one segment per line so the estimator returns a sampled indicator
    g = chain3(priors=(0.5, 0.5, 0.5)).grid
    for seed in range(20):
        try:
            post = posterior_mc(g, "F1", [0, 0, 1], samples=1, seed=seed)
        except ZeroEvidence:
            continue   # the single draw contradicted the call
        assert all(p in (0.0, 1.0) for p in post.values())


def test_mc_rejects_zero_samples():
    g = chain3().grid
    with pytest.raises(ValueError):
        posterior_mc(g, "F1", [0, 0, 0], samples=0)


def _belief(scenario, calls):
    return BeliefModel(scenario.grid, method="enumerate").initial_belief(calls)


def test_observe_intact_zeroes_line_and_recomputes_siblings():
    sc = chain3()
    b = _belief(sc, [0, 1, 1])
    b2 = update_on_observation(b, "L2", False)
    assert b2.line_posterior("L2") == 0.0
    want = brute_force_posterior(sc.grid, "F1", [0, 1, 1], {"L2": LineStatus.INTACT})
    for lid, p in want.items():
        assert b2.line_posterior(lid) == pytest.approx(p, abs=1e-12)


def test_observe_damaged_then_repair_stays_zero():
    sc = chain3()
    b = update_on_observation(_belief(sc, [0, 1, 1]), "L2", True)
    assert b.line_posterior("L2") == 1.0
    b = repair(b, "L2")
    assert b.line_posterior("L2") == 0.0
    b = update_on_observation(b, "L2", True)
    assert b.line_posterior("L2") == 0.0
    assert b.status("L2") == LineStatus.REPAIRED


def test_observing_the_explaining_line_drops_siblings():
    # only L3 explains the call at node 3 once L1 and L2 are ruled out
    sc = chain3()
    b = _belief(sc, [0, 0, 1])
    b = update_on_observation(b, "L1", False)
    b = update_on_observation(b, "L2", False)
    assert b.line_posterior("L3") == pytest.approx(1.0)
    b = update_on_observation(b, "L3", True)
    b = repair(b, "L3")
    assert b.max_posterior() == 0.0


def test_no_new_calls_unchanged():
    b = _belief(chain3(), [0, 1, 0])
    assert update_on_calls(b, (False, True, False)) is b


def test_new_call_raises_upstream_posterior():
    b = _belief(chain3(), [0, 0, 0])
    b2 = update_on_calls(b, [0, 0, 1])
    assert b2.line_posterior("L3") > b.line_posterior("L3")
    want = brute_force_posterior(chain3().grid, "F1", [0, 0, 1])
    assert b2.line_posterior("L3") == pytest.approx(want["L3"], abs=1e-12)


def test_duplicate_call_is_idempotent():
    b = update_on_calls(_belief(chain3(), [0, 0, 0]), [0, 0, 1])
    again = update_on_calls(b, [0, 0, 1])
    np.testing.assert_array_equal(again.posterior, b.posterior)


def test_calls_cannot_be_withdrawn():
    b = _belief(chain3(), [0, 0, 1])
    with pytest.raises(CallMonotonicityError):
        update_on_calls(b, [0, 0, 0])


def test_posteriors_within_unit_interval_on_ieee123():
    sc = load_scenario("ieee123_like")
    model = BeliefModel.from_scenario(sc)
    calls = tuple(i % 5 == 0 for i in range(len(sc.grid.customers)))
    try:
        b = model.initial_belief(calls)
    except ZeroEvidence:
        pytest.skip("calls pattern impossible on this grid")
    assert np.all(b.posterior >= 0.0) and np.all(b.posterior <= 1.0)
