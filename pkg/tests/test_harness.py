import csv
import json
import math

import numpy as np
import pytest

from gspdr import env as E
from gspdr import gsp as G
from gspdr import harness as H
from gspdr.ddpg import AgentParams, DDPGAgent, save_agent
from gspdr.errors import ConfigError, ShapeError, UsageError, ValidationError


def tiny(algorithm="ddpg", episodes=3, seeds=(0,), **agent):
    ap = dict(batch_size=16, learning_starts=48, buffer_size=2000, hidden=(16, 16))
    ap.update(agent)
    return H.RunConfig(
        algorithm=algorithm, episodes=episodes, seeds=list(seeds),
        env=E.EnvParams(horizon_steps=24),
        agent=AgentParams(**ap),
        gsp=G.PlannerConfig(num_levels=11, num_periods=4, nearby_radius=3, model_hidden=(16,),
                            model_steps=10, offline_episodes=4, offline_model_steps=20),
        save_checkpoints=True)


def test_config_round_trip_and_validation():
    cfg = tiny("gsp_online")
    back = H.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ValidationError):
        tiny("sarsa").validate()
    with pytest.raises(ValidationError):
        H.RunConfig(episodes=0).validate()
    with pytest.raises(ValidationError):
        H.RunConfig(seeds=[]).validate()


def test_train_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = tiny("gsp_online")
    H.train(cfg, tmp_path / "a")
    H.train(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    for name in ("config.json", "timing.csv", "seed_0/checkpoint.npz", "seed_0/graph.json",
                 "seed_0/graph_edges.csv", "seed_0/values_heatmap.csv"):
        assert (tmp_path / "a" / name).exists(), name
    header = a.decode().splitlines()[0].split(",")
    assert header == list(H.EpisodeMetrics.CSV_FIELDS)
    assert "wall_seconds" not in header


def test_satisfied_flag_matches_final_storage():
    res = H.train_seed(tiny("ddpg", episodes=4), 1)
    p = E.EnvParams(horizon_steps=24)
    for m in res.metrics:
        assert m.satisfied == p.satisfied(m.final_storage)
        assert m.total_steps == (m.episode + 1) * 24


def test_graph_counts_grow_online():
    res = H.train_seed(tiny("gsp_online", episodes=4, learning_starts=0), 0)
    nodes = [m.graph_nodes for m in res.metrics]
    assert nodes[0] > 0
    assert all(b >= a for a, b in zip(nodes, nodes[1:]))


def test_shaped_bonus_telescopes_with_unit_discount():
    res = H.train_seed(tiny("gsp_online", episodes=5, learning_starts=24, gamma=1.0), 2)
    active = [m for m in res.metrics if m.initial_potential != 0.0]
    assert active
    for m in res.metrics:
        assert abs(m.shaped_bonus + m.initial_potential) <= 1e-9


def test_offline_planner_is_frozen_and_np_uses_lookup():
    off = H.train_seed(tiny("gsp_offline", episodes=3), 0)
    assert off.planner.frozen and off.planner.version == 1
    nodes = {m.graph_nodes for m in off.metrics}
    assert len(nodes) == 1
    np_run = H.train_seed(tiny("gsp_online_np", episodes=3, learning_starts=0), 0)
    assert np_run.planner.mode == "lookup" and not np_run.planner.model_ready


def test_ddpg_has_no_planner_bookkeeping():
    res = H.train_seed(tiny("ddpg", episodes=2), 0)
    assert res.planner is None
    assert all(m.shaped_bonus == 0.0 and m.graph_nodes == 0 for m in res.metrics)


# ---------------------------------------------------------------- evaluate

def test_evaluate(tmp_path):
    H.train(tiny("ddpg", episodes=1), tmp_path)
    ck = tmp_path / "seed_0" / "checkpoint.npz"
    a = H.evaluate(ck, 2)
    assert a["trajectories"][0] == a["trajectories"][1]
    assert 0.0 <= a["satisfaction_rate"] <= 1.0
    with pytest.raises(UsageError):
        H.evaluate(ck, 0)
    with pytest.raises(ShapeError):
        H.evaluate(ck, 1, env_params=E.EnvParams(horizon_steps=24, forecast_len=4))


def test_evaluate_random_actor(tmp_path):
    p = E.EnvParams(horizon_steps=24)
    agent = DDPGAgent.create(p.obs_dim, 1, AgentParams(hidden=(8,)), np.random.default_rng(0))
    prices = E.generate_price_profile(0, 24).prices
    save_agent(agent, tmp_path / "c.npz", {"env": {"horizon_steps": 24}, "prices": list(prices)})
    out = H.evaluate(tmp_path / "c.npz", 1)
    assert out["episodes"] == 1 and "final_storage" in out


# ---------------------------------------------------------------- compare

def fake_run(path, returns_by_seed, horizon=72):
    path.mkdir(parents=True)
    (path / "config.json").write_text(json.dumps({"env": {"horizon_steps": horizon}}))
    with open(path / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "episode", "return"])
        for seed, rets in returns_by_seed.items():
            for e, r in enumerate(rets):
                w.writerow([seed, e, r])
    return path


def test_compare_statistics(tmp_path):
    per_seed = {0: [1.0, 0.0], 1: [2.0, 0.0], 2: [3.0, 0.0]}
    a = fake_run(tmp_path / "a", per_seed)
    b = fake_run(tmp_path / "b", per_seed)
    cmp = H.compare([a, b])
    assert cmp.mean["a"][0] == 2.0 and cmp.std["a"][0] == 1.0
    text = cmp.format()
    rows = [ln.split(",") for ln in text.splitlines() if not ln.startswith(("#", "episode"))]
    assert all(float(r[-1]) == 0.0 for r in rows)


def test_compare_errors(tmp_path):
    a = fake_run(tmp_path / "a", {0: [1.0, 2.0]})
    b = fake_run(tmp_path / "b", {0: [1.0, 2.0]}, horizon=48)
    with pytest.raises(ConfigError):
        H.compare([a, b])
    with pytest.raises(UsageError):
        H.compare([a])


def test_smooth_and_steps_to_threshold():
    assert H.smooth([1, 2, 3, 4, 5, 6], 5).tolist() == [1, 1.5, 2, 2.5, 3, 4]
    assert H.steps_to_threshold([0, 0, 10, 10], 5.0, 72, window=2) == 3 * 72  # smoothed [0, 0, 5, 10]
    assert math.isinf(H.steps_to_threshold([0, 1, 2], 100.0, 72))


def test_threshold_between_worst_and_best():
    curves = {"a": [[-10.0, -10.0, -2.0]], "b": [[-8.0, -6.0, -6.0]]}
    thr = H.threshold_from_curves(curves, 0.8, window=1)
    assert thr == pytest.approx(-10.0 + 0.8 * 8.0)


# ---------------------------------------------------------------- experiment helpers

def fake_result(seed, returns, satisfied):
    ms = [H.EpisodeMetrics(seed, e, (e + 1) * 72, r, 0.0, 0.0, s, 0.0, 0.0, 0.0, 0.0, False,
                           0, 0, 0.0, wall_seconds=0.1)
          for e, (r, s) in enumerate(zip(returns, satisfied))]
    return H.SeedResult(seed, ms, None, None)


def test_bootstrap_replicates_on_synthetic_curves():
    n = 20
    slow = [-20.0] * n
    fast = [-20.0] * 5 + [-5.0] * (n - 5)
    results = {
        "ddpg": [fake_result(s, slow, [False] * n) for s in range(5)],
        "gsp_online": [fake_result(s, fast, [True] * n) for s in range(5)],
        "gsp_offline": [fake_result(s, fast, [True] * n) for s in range(5)],
    }
    reps = H.bootstrap_replicates(results, n_replicates=5)
    assert all(r.faster and r.safer for r in reps)
    assert all(math.isinf(r.median_steps["ddpg"]) for r in reps)
    assert H.wall_ratio(results) == pytest.approx(1.0)


def test_terminal_values_monotone():
    grid = G.GoalGrid(num_levels=11, num_periods=3, horizon_steps=6)
    S = G.Subgoal
    tp = grid.terminal_period
    graph = G.GoalGraph()
    graph.values = {S(tp, 3): 0.0, S(tp, 5): 5.0, S(tp, 6): 5.0, S(tp, 7): 5.0}
    graph.nodes = set(graph.values)
    assert H.terminal_values_monotone(graph, grid, 0.5)
    graph.values[S(tp, 7)] = 1.0
    assert not H.terminal_values_monotone(graph, grid, 0.5)
    only_high = G.GoalGraph(values={S(tp, 5): 5.0, S(tp, 6): 5.0})
    assert not H.terminal_values_monotone(only_high, grid, 0.5)


def test_terminal_values_monotone_averages_seeds():
    grid = G.GoalGrid(num_levels=11, num_periods=3, horizon_steps=6)
    S = G.Subgoal
    tp = grid.terminal_period
    good = G.GoalGraph(values={S(tp, 3): 0.0, S(tp, 5): 4.0, S(tp, 6): 5.0})
    dip = G.GoalGraph(values={S(tp, 3): 0.0, S(tp, 5): 5.0, S(tp, 6): 4.5})
    # normalized: good -> [0, .8, 1], dip -> [0, 1, .9]; mean [0, .9, .95]
    assert not H.terminal_values_monotone(dip, grid, 0.5)
    assert H.terminal_values_monotone([good, dip], grid, 0.5)
