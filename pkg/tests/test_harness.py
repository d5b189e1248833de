"""Closed-loop episode runner: maneuver dispatch, semi-MDP accounting, loops."""

import csv
import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from drivestack.config import ExperimentConfig, IdmParams
from drivestack.dynamics import VehicleState
from drivestack.harness import (
    INTEGRATED,
    SEMI_INTEGRATED,
    SEQUENTIAL,
    VARIANTS,
    accelerate_index,
    compare_frameworks,
    episode_seed,
    evaluate,
    phase_plane_rows,
    run_episode,
    run_training,
    save_learning_curve,
    save_phase_plane,
)
from drivestack.metrics import (CHANGE_PHASE, KEEP_PHASE, EpisodeLog,
                                MetricNormalizers, metrics_from_csv)
from drivestack.planning import lane_change_time_bounds
from drivestack.traffic import Hdv, HighwayEnv

CFG = ExperimentConfig()
EXPERT = np.array(CFG.irl.expert_weights)


def small_cfg(**scenario_kw) -> ExperimentConfig:
    scenario_kw = {"horizon": 4.0, "hdv_count": 3, **scenario_kw}
    scenario = dataclasses.replace(CFG.scenario, **scenario_kw)
    agent = dataclasses.replace(CFG.agent, head_count=2, batch_size=16,
                                buffer_capacity=512, shared_layers=(16,),
                                head_layers=(8,), episodes=10)
    return dataclasses.replace(CFG, scenario=scenario, agent=agent)


def make_env(cfg: ExperimentConfig) -> HighwayEnv:
    return HighwayEnv(cfg.scenario, cfg.idm, cfg.mobil, cfg.reward,
                      cfg.vehicle)


def ego_state(cfg: ExperimentConfig, lane: int = 1,
              vx: float = 25.0) -> VehicleState:
    return VehicleState(vx=vx, vy=0.0, yaw=0.0, yaw_rate=0.0, x=100.0,
                        y=cfg.scenario.lane_center(lane))


def parked_hdv(cfg: ExperimentConfig, lane: int, x: float,
               speed: float) -> Hdv:
    """An HDV that holds its speed and never evaluates a lane change."""
    idm = dataclasses.replace(cfg.idm, desired_speed=max(speed, 0.1))
    return Hdv(x=x, y=cfg.scenario.lane_center(lane), speed=speed, lane=lane,
               idm=idm, next_check=1e9)


class TestVariants:
    def test_registry(self):
        assert set(VARIANTS) == {"integrated", "semi-integrated",
                                 "sequential"}
        assert len(INTEGRATED.catalog) == 12
        assert len(SEMI_INTEGRATED.catalog) == 4
        assert len(SEQUENTIAL.catalog) == 4
        assert INTEGRATED.planner_active
        assert SEMI_INTEGRATED.planner_active
        assert not SEQUENTIAL.planner_active
        assert SEQUENTIAL.fixed_duration == 2.0

    def test_accelerate_index(self):
        assert accelerate_index(INTEGRATED.catalog) == 1
        assert accelerate_index(SEQUENTIAL.catalog) == 0


class TestFreeFlow:
    def test_scripted_accelerator_reaches_top_speed(self):
        cfg = dataclasses.replace(
            CFG, scenario=dataclasses.replace(CFG.scenario, hdv_count=0))
        env = make_env(cfg)
        env.reset(0)
        idx = accelerate_index(INTEGRATED.catalog)
        result = run_episode(env, lambda obs: idx, INTEGRATED, cfg, EXPERT,
                             collect_log=True)
        assert not result.collision
        assert abs(env.ego.vx - cfg.scenario.v_max) < 1.0
        assert result.maneuvers == []
        assert len(result.log.rows) == 800


class TestForcedLaneChange:
    def forced_change(self, variant, cfg=None, vx=25.0, hdvs=()):
        cfg = cfg or small_cfg(hdv_count=0)
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg, lane=1, vx=vx), list(hdvs))
        calls = {"n": 0}
        change_idx = next(i for i, s in enumerate(variant.catalog)
                          if s.kind == "change" and s.preset == 1)
        hold_idx = next(i for i, s in enumerate(variant.catalog)
                        if s.kind == "keep" and s.speed_delta == 0.0
                        and s.preset == 1)

        def policy(obs):
            calls["n"] += 1
            return change_idx if calls["n"] == 1 else hold_idx

        result = run_episode(env, policy, variant, cfg, EXPERT,
                             collect_log=True)
        return env, result

    def test_exactly_one_maneuver_within_bounds(self):
        env, result = self.forced_change(INTEGRATED)
        assert len(result.maneuvers) == 1
        record = result.maneuvers[0]
        lo, hi = record.bounds
        assert lo - 1e-9 <= record.duration <= hi + 1e-9
        maneuver_ids = {row["maneuver"] for row in result.log.rows
                        if row["phase"] == CHANGE_PHASE}
        assert maneuver_ids == {1}

    def test_change_rows_span_the_duration(self):
        env, result = self.forced_change(INTEGRATED)
        record = result.maneuvers[0]
        ticks = math.ceil(record.duration / 0.1 - 1e-9)
        change_rows = [r for r in result.log.rows
                       if r["phase"] == CHANGE_PHASE]
        assert len(change_rows) == 2 * ticks

    def test_lands_on_adjacent_lane_center(self):
        env, result = self.forced_change(INTEGRATED)
        target = result.maneuvers[0].target_lane
        assert target in (0, 2)
        center = env.scenario.lane_center(target)
        assert abs(env.ego.y - center) < 0.05

    def test_direction_prefers_clear_lane(self):
        cfg = small_cfg(hdv_count=2)
        blocker = parked_hdv(cfg, lane=0, x=120.0, speed=25.0)
        env, result = self.forced_change(INTEGRATED, cfg=cfg,
                                         hdvs=[blocker])
        assert result.maneuvers[0].target_lane == 2

    def test_sequential_uses_fixed_duration_on_open_road(self):
        env, result = self.forced_change(SEQUENTIAL)
        assert result.maneuvers[0].duration == pytest.approx(2.0, abs=1e-12)

    def test_sequential_clamps_into_feasible_band(self):
        cfg = small_cfg(hdv_count=1)
        # Leader ahead tightens the band's upper end below 2 s while
        # leaving it above the handling floor (~1.7 s at 25 m/s).
        leader = parked_hdv(cfg, lane=1, x=100.0 + 4.5 + 31.0, speed=20.0)
        env, result = self.forced_change(SEQUENTIAL, cfg=cfg, vx=25.0,
                                         hdvs=[leader])
        record = result.maneuvers[0]
        assert record.duration < 2.0
        assert record.duration == pytest.approx(record.bounds[1], abs=1e-12)

    def test_integrated_duration_matches_external_selection(self):
        from drivestack.planning import (generate_candidates, path_features,
                                         select_path)
        cfg = small_cfg(hdv_count=0)
        vx = 25.0
        y0 = cfg.scenario.lane_center(1)
        bounds = lane_change_time_bounds(
            cfg.scenario.lane_width, vx, math.inf, vx, cfg.vehicle,
            cfg.planner, cfg.scenario.safe_spacing)
        for direction in (-1, 1):
            cands = generate_candidates(y0, direction * cfg.scenario.lane_width,
                                        vx, 100.0, bounds, cfg.planner)
            feats = np.array([path_features(p, np.zeros((0, 3)))
                              for p in cands])
            expected = cands[select_path(cands, feats, EXPERT)].duration
            env, result = self.forced_change(INTEGRATED, cfg=cfg, vx=vx)
            assert result.maneuvers[0].duration == pytest.approx(expected,
                                                                 abs=1e-12)


class TestChangeVetoes:
    def run_one_decision(self, cfg, hdvs, variant=INTEGRATED, vx=25.0):
        one_tick = dataclasses.replace(
            cfg, scenario=dataclasses.replace(cfg.scenario, horizon=0.1))
        env = make_env(one_tick)
        env.reset_manual(ego_state(one_tick, lane=1, vx=vx), list(hdvs))
        change_idx = next(i for i, s in enumerate(variant.catalog)
                          if s.kind == "change" and s.preset == 1)
        sunk = []
        result = run_episode(
            env, lambda obs: change_idx, variant, one_tick, EXPERT,
            transition_sink=lambda *args: sunk.append(args),
            collect_log=True)
        return result, sunk

    def test_infeasible_band_everywhere_falls_back_to_hold(self):
        cfg = small_cfg(hdv_count=3)
        # Leaders 16 m ahead in every lane at ego speed: keeping is safe but
        # the lane-change duration band is empty (upper < handling floor).
        hdvs = [parked_hdv(cfg, lane, x=100.0 + 4.5 + 16.0, speed=25.0)
                for lane in range(3)]
        result, sunk = self.run_one_decision(cfg, hdvs)
        assert result.maneuvers == []
        assert all(r["phase"] == KEEP_PHASE for r in result.log.rows)
        assert len(sunk) == 1
        assert sunk[0][5] == pytest.approx(CFG.agent.discount)

    def test_unsafe_follower_blocks_that_side(self):
        cfg = small_cfg(hdv_count=2)
        # Right lane band infeasible; left lane follower tailgating fast.
        right_leader = parked_hdv(cfg, lane=2, x=100.0 + 4.5 + 16.0,
                                  speed=25.0)
        tail = parked_hdv(cfg, lane=0, x=100.0 - 4.5 - 3.0, speed=30.0)
        result, _ = self.run_one_decision(cfg, [right_leader, tail])
        assert result.maneuvers == []
        relaxed = parked_hdv(cfg, lane=0, x=100.0 - 4.5 - 60.0, speed=20.0)
        result2, _ = self.run_one_decision(cfg, [right_leader, relaxed])
        assert len(result2.maneuvers) == 1
        assert result2.maneuvers[0].target_lane == 0


class TestSemiMdpAccounting:
    def test_keeping_discount_and_change_accumulation(self):
        cfg = small_cfg(hdv_count=0)
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg), [])
        variant = INTEGRATED
        change_idx = next(i for i, s in enumerate(variant.catalog)
                          if s.kind == "change" and s.preset == 1)
        hold_idx = accelerate_index(variant.catalog)
        calls = {"n": 0}

        def policy(obs):
            calls["n"] += 1
            return change_idx if calls["n"] == 3 else hold_idx

        sunk = []
        result = run_episode(
            env, policy, variant, cfg, EXPERT,
            transition_sink=lambda *args: sunk.append(args), collect_log=True)
        gamma = cfg.agent.discount
        ticks = math.ceil(result.maneuvers[0].duration / 0.1 - 1e-9)
        # two keeping decisions first
        assert sunk[0][5] == pytest.approx(gamma)
        assert sunk[1][5] == pytest.approx(gamma)
        # the lane-change transition: discount gamma^D and reward
        # sum of gamma^j per-tick rewards, recomputed from the log
        assert sunk[2][5] == pytest.approx(gamma ** ticks, rel=1e-12)
        rows = result.log.rows
        change_end_rewards = [
            rows[i]["reward"] for i in range(len(rows))
            if rows[i]["phase"] == CHANGE_PHASE and i % 2 == 1]
        assert len(change_end_rewards) == ticks
        expected = sum(gamma ** j * r
                       for j, r in enumerate(change_end_rewards))
        assert sunk[2][2] == pytest.approx(expected, rel=1e-9)

    def test_total_reward_is_undiscounted_tick_sum(self):
        cfg = small_cfg(hdv_count=0)
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg), [])
        idx = accelerate_index(INTEGRATED.catalog)
        result = run_episode(env, lambda obs: idx, INTEGRATED, cfg, EXPERT,
                             collect_log=True)
        rows = result.log.rows
        tick_rewards = [rows[i]["reward"] for i in range(1, len(rows), 2)]
        assert result.total_reward == pytest.approx(sum(tick_rewards),
                                                    rel=1e-9)


class TestSeedIsolation:
    def test_reset_is_policy_independent(self):
        env = make_env(CFG)
        env.reset(123)
        first = [(h.x, h.y, h.speed, h.lane) for h in env.hdvs]
        rng = np.random.default_rng(0)
        run_episode(env, lambda obs: int(rng.integers(12)), INTEGRATED, CFG,
                    EXPERT)
        env.reset(123)
        second = [(h.x, h.y, h.speed, h.lane) for h in env.hdvs]
        assert first == second

    def test_episode_seed_deterministic(self):
        assert episode_seed(7, 3) == episode_seed(7, 3)
        assert episode_seed(7, 3) != episode_seed(7, 4)
        assert episode_seed(7, 3) != episode_seed(8, 3)


class TestEmergencyFloor:
    def test_crawl_behind_near_stopped_leader(self):
        cfg = small_cfg(hdv_count=1, horizon=30.0)
        leader = parked_hdv(cfg, lane=1, x=100.0 + 4.5 + 120.0, speed=1.0)
        blockers = [parked_hdv(cfg, lane, x=100.0 + 4.5 + 10.0, speed=25.0)
                    for lane in (0, 2)]
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg, vx=25.0), [leader] + blockers)
        hold = next(i for i, s in enumerate(INTEGRATED.catalog)
                    if s.kind == "keep" and s.speed_delta == 0.0
                    and s.preset == 1)
        result = run_episode(env, lambda obs: hold, INTEGRATED, cfg, EXPERT,
                             collect_log=True)
        vx = result.log.column("vx")
        assert vx.min() >= 0.5
        assert env.ego.vx < 5.0
        assert not result.collision


class TestTraining:
    def test_deterministic_rerun(self):
        cfg = small_cfg()
        a = run_training(cfg, SEQUENTIAL, EXPERT, seed=5, episodes=3)
        b = run_training(cfg, SEQUENTIAL, EXPERT, seed=5, episodes=3)
        assert a.rows == b.rows
        assert np.array_equal(a.agent.online.parameters()[0],
                              b.agent.online.parameters()[0])

    def test_curve_rows_schema(self):
        cfg = small_cfg()
        result = run_training(cfg, INTEGRATED, EXPERT, seed=2, episodes=2)
        assert len(result.rows) == 2
        assert set(result.rows[0]) == {"episode", "reward", "collision",
                                       "mean_speed", "head", "epsilon"}
        assert result.rows[0]["episode"] == 0
        assert result.invalid_episodes == 0

    def test_null_training_curve_is_flat(self):
        scenario = dataclasses.replace(CFG.scenario, horizon=2.0, hdv_count=3)
        agent = dataclasses.replace(
            CFG.agent, head_count=2, learning_rate=0.0, batch_size=16,
            buffer_capacity=256, shared_layers=(16,), head_layers=(8,),
            episodes=200, epsilon_start=1.0, epsilon_end=1.0)
        cfg = dataclasses.replace(CFG, scenario=scenario, agent=agent)
        result = run_training(cfg, SEQUENTIAL, EXPERT, seed=11, episodes=200)
        rewards = [r["reward"] for r in result.rows]
        fit = stats.linregress(np.arange(len(rewards)), rewards)
        assert fit.pvalue > 0.05

    def test_learning_curve_csv_round_trip(self, tmp_path):
        cfg = small_cfg()
        result = run_training(cfg, SEQUENTIAL, EXPERT, seed=5, episodes=3)
        path = tmp_path / "curve.csv"
        save_learning_curve(result.rows, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        for raw, orig in zip(rows, result.rows):
            assert int(raw["episode"]) == orig["episode"]
            assert float(raw["reward"]) == pytest.approx(orig["reward"])
            assert int(raw["collision"]) == orig["collision"]


class TestEvaluation:
    def trained_stub(self, cfg):
        return run_training(cfg, SEQUENTIAL, EXPERT, seed=1, episodes=1).agent

    def test_report_shape_and_files(self, tmp_path):
        cfg = small_cfg()
        agent = self.trained_stub(cfg)
        report = evaluate(agent, cfg, SEQUENTIAL, EXPERT, seeds=(0, 1, 2),
                          out_dir=tmp_path)
        assert len(report.rewards) == 3
        assert 0.0 <= report.collision_rate <= 1.0
        assert set(report.indicator_means) == {
            "lon_tracking", "lon_cruising", "lon_effort",
            "lat_tracking", "lat_stability", "lat_effort"}
        for seed in (0, 1, 2):
            assert (tmp_path / f"episode_sequential_{seed}.csv").exists()

    def test_aggregates_permutation_invariant(self):
        cfg = small_cfg()
        agent = self.trained_stub(cfg)
        fwd = evaluate(agent, cfg, SEQUENTIAL, EXPERT, seeds=(3, 4, 5))
        rev = evaluate(agent, cfg, SEQUENTIAL, EXPERT, seeds=(5, 4, 3))
        assert fwd.mean_reward == pytest.approx(rev.mean_reward, rel=1e-12)
        assert fwd.collision_rate == rev.collision_rate
        assert dict(zip(fwd.seeds, fwd.rewards)) == pytest.approx(
            dict(zip(rev.seeds, rev.rewards)))

    def test_episode_csv_matches_in_loop_metrics(self, tmp_path):
        cfg = small_cfg(hdv_count=0, horizon=6.0)
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg), [])
        calls = {"n": 0}
        change_idx = 9

        def policy(obs):
            calls["n"] += 1
            return change_idx if calls["n"] == 2 else 1

        result = run_episode(env, policy, INTEGRATED, cfg, EXPERT,
                             collect_log=True)
        assert result.maneuvers
        path = tmp_path / "ep.csv"
        result.log.save(path)
        norm = MetricNormalizers.from_config(cfg.vehicle, cfg.scenario,
                                             cfg.limits)
        lon_file, lat_file = metrics_from_csv(path, norm)
        lon, lat = result.log.longitudinal(norm), result.log.lateral(norm)
        for a, b in ((lon_file, lon), (lat_file, lat)):
            for name in ("tracking", "effort", "samples"):
                assert getattr(a, name) == pytest.approx(
                    getattr(b, name), abs=1e-9)
        assert lat.defined


class TestPhasePlane:
    def test_rows_cover_change_periods(self, tmp_path):
        cfg = small_cfg(hdv_count=0)
        env = make_env(cfg)
        env.reset_manual(ego_state(cfg), [])
        calls = {"n": 0}

        def policy(obs):
            calls["n"] += 1
            return 9 if calls["n"] == 1 else 1

        result = run_episode(env, policy, INTEGRATED, cfg, EXPERT,
                             collect_log=True)
        rows = phase_plane_rows([result.log])
        n_change = sum(1 for r in result.log.rows
                       if r["phase"] == CHANGE_PHASE)
        assert len(rows) == n_change > 0
        out = tmp_path / "plane.csv"
        save_phase_plane([result.log], out)
        with open(out, newline="") as fh:
            read = list(csv.reader(fh))
        assert read[0] == ["beta", "yaw_rate"]
        assert len(read) == 1 + n_change


class TestCompareFrameworks:
    def test_tiny_budget_structure(self, tmp_path):
        cfg = small_cfg()
        comparison = compare_frameworks(
            cfg, train_seed=0, eval_seeds=(0, 1), episodes=2,
            path_weights=EXPERT, out_dir=tmp_path)
        assert set(comparison.reports) == set(VARIANTS)
        assert set(comparison.deltas) == {"integrated", "semi-integrated"}
        for tag in VARIANTS:
            assert (tmp_path / f"curve_{tag}.csv").exists()
            assert (tmp_path / f"phase_plane_{tag}.csv").exists()
        lines = comparison.summary_lines()
        assert any("reference deltas" in line for line in lines)
        delta = comparison.deltas["integrated"]
        assert set(delta) == {"velocity_pct", "reward_pct", "collision_delta"}
