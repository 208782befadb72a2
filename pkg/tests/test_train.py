import numpy as np
import pytest

from gridcrew import env as E
from gridcrew.grid import ScenarioError, load_scenario
from gridcrew.net import PolicyValueNet
from gridcrew.train import (METRICS_HEADER, TrainConfig, evaluate, load_cases, sample_cases, self_play_episode,
                            train_loop)

from fixtures import chain3, star2
from oracles import outage_hours_from_records


def test_bundled_cases_load():
    sc = load_scenario("eight_node")
    cases = load_cases("eight_node", sc)
    assert len(cases) == 10
    assert cases[0].damage == ("L5",) and cases[0].calls == (False, False, True, False, False)
    assert cases[9].damage == ("L3", "L4", "L7")


def test_cases_file_errors(tmp_path):
    sc = load_scenario("eight_node")
    bad = tmp_path / "bad.cases"
    bad.write_text("1 L9 00100\n")
    with pytest.raises(ScenarioError):
        load_cases(bad, sc)
    bad.write_text("1 L5 001\n")
    with pytest.raises(ScenarioError):
        load_cases(bad, sc)
    with pytest.raises(ScenarioError):
        load_cases(tmp_path / "missing.cases", sc)


def test_sampled_cases_are_consistent():
    sc = load_scenario("eight_node")
    for case in sample_cases(sc, 10, seed=3):
        E.reset(sc, seed=0, damage=list(case.damage), calls=list(case.calls))


def test_tau_schedule():
    cfg = TrainConfig(load_scenario("eight_node"))
    assert cfg.tau(0) == 1.0 and cfg.tau(9) == 1.0 and cfg.tau(10) == 0.01


@pytest.mark.parametrize("field, value", [("episodes", 0), ("sims_per_move", 0), ("batch_size", 0),
                                          ("root_noise", (0.0, 0.25))])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        TrainConfig(load_scenario("eight_node"), **{field: value})


def test_zero_prior_episode_is_empty():
    sc = chain3(priors=(0.0, 0.0, 0.0))
    cfg = TrainConfig(sc, sims_per_move=5)
    rec = self_play_episode(sc, cfg.make_net(), cfg, seed=1)
    assert rec.samples == [] and rec.outage_hours == 0.0 and rec.decisions == 0


def test_self_play_deterministic():
    sc = load_scenario("eight_node")
    cfg = TrainConfig(sc, sims_per_move=8)
    net = cfg.make_net()
    a = self_play_episode(sc, net, cfg, seed=11)
    b = self_play_episode(sc, net, cfg, seed=11)
    assert a.outage_hours == b.outage_hours and a.decisions == b.decisions
    for x, y in zip(a.samples, b.samples):
        np.testing.assert_array_equal(x.state_encoding, y.state_encoding)
        np.testing.assert_array_equal(x.policy_target, y.policy_target)
        assert x.value_target == y.value_target


def test_two_line_episode_terminates_and_outage_matches_log():
    sc = star2(p1=0.5, p2=0.3, n1=10, n2=6)
    cfg = TrainConfig(sc, sims_per_move=100)
    net = cfg.make_net()
    for seed in range(5):
        rec = self_play_episode(sc, net, cfg, seed=seed)
        final = rec.final_state
        assert final.terminal and not final.truncated
        assert final.belief.max_posterior() < sc.epsilon
        records = [e.as_dict() for e in final.episode_log]
        damage = [sc.grid.lines[i].line_id for i in final.damage]
        assert rec.outage_hours == pytest.approx(
            outage_hours_from_records(sc.grid, records, damage, end=final.end_time), abs=1e-9)


def test_samples_are_well_formed():
    sc = load_scenario("eight_node")
    cfg = TrainConfig(sc, sims_per_move=8)
    net = cfg.make_net()
    rec = self_play_episode(sc, net, cfg, seed=2)
    for s in rec.samples:
        assert s.state_encoding.shape == (8,)
        assert s.policy_target.sum() == pytest.approx(1.0)
        assert not s.policy_target[~s.legal_mask].any()
        assert s.value_target <= 0.0


def test_one_episode_fills_buffer_with_its_samples():
    sc = load_scenario("eight_node")
    cfg = TrainConfig(sc, episodes=1, sims_per_move=8, eval_every=1, eval_cases=load_cases("eight_node", sc)[:1],
                      train_steps_per_episode=1)
    res = train_loop(cfg, timing=False)
    rec = self_play_episode(sc, cfg.make_net(), cfg, seed=cfg.seed * 1_000_003 + 1)
    assert len(res.buffer) == len(rec.samples)
    assert res.net.version == 1


def test_metrics_file_and_determinism(tmp_path):
    sc = load_scenario("eight_node")
    cases = load_cases("eight_node", sc)[:2]

    def run(name):
        cfg = TrainConfig(sc, episodes=4, sims_per_move=6, eval_every=2, eval_cases=cases, seed=3)
        path = tmp_path / name
        train_loop(cfg, metrics_path=path, checkpoint_dir=tmp_path / (name + "_ck"), timing=False)
        return path.read_text()

    a, b = run("m1.csv"), run("m2.csv")
    assert a == b
    lines = a.splitlines()
    assert lines[0].split(",") == METRICS_HEADER
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "2" and lines[1].endswith(",NA")
    assert (tmp_path / "m1.csv_ck" / "final.json").exists()


def test_evaluate_returns_hours_per_case():
    sc = load_scenario("eight_node")
    net = PolicyValueNet.for_scenario(sc)
    cases = load_cases("eight_node", sc)[:3]
    hours = evaluate(sc, net, cases, sims=5)
    assert len(hours) == 3 and all(h > 0 for h in hours)
