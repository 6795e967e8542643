import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frenetplan.basis import TimeGrid
from frenetplan.errors import ParameterError, SpawnError
from frenetplan.sim import (OBS_DIM, ScenarioConfig, SimState, check_collision, load_scenario_config, observe,
                            predict_obstacles, rectangles_overlap, scenario_from_dict, scenario_to_dict,
                            spawn_scenario, step, write_trace_csv)


def _bare(cfg, nx=(), ny=(), nv=(), v_nom=None, ego=(0.0, 2.0, 0.0, 5.0, 0.0)):
    n = len(nx)
    return SimState(cfg=cfg, ego=np.array(ego, dtype=float), nx=np.array(nx, dtype=float),
                    ny=np.array(ny, dtype=float), nv=np.array(nv, dtype=float),
                    lane=np.zeros(n, dtype=int) if n else np.zeros(0, dtype=int),
                    v_nom=np.array(nv if v_nom is None else v_nom, dtype=float))


def test_spawn_deterministic():
    cfg = ScenarioConfig(n_lanes=4, density=2.5, seed=11)
    assert spawn_scenario(cfg).same_as(spawn_scenario(cfg))
    assert not spawn_scenario(cfg).same_as(spawn_scenario(ScenarioConfig(n_lanes=4, density=2.5, seed=12)))


def _mean_gap(state):
    gaps = []
    for k in np.unique(state.lane):
        xs = np.sort(state.nx[state.lane == k])
        gaps += list(np.diff(xs))
    return np.mean(gaps)


def test_density_shrinks_gaps():
    for seed in range(20):
        lo = spawn_scenario(ScenarioConfig(density=1.0, seed=seed))
        hi = spawn_scenario(ScenarioConfig(density=3.0, seed=seed))
        assert _mean_gap(hi) < _mean_gap(lo)


@given(seed=st.integers(0, 10_000), density=st.sampled_from([1.0, 1.5, 2.5, 3.0]), lanes=st.sampled_from([2, 4]))
def test_spawn_no_overlap_and_on_centrelines(seed, density, lanes):
    cfg = ScenarioConfig(n_lanes=lanes, density=density, seed=seed)
    s = spawn_scenario(cfg)
    assert not s.collided and not check_collision(s)
    assert np.all(np.isin(s.ny, cfg.lane_centres))
    assert np.all(s.nv <= s.v_nom)


def test_spawn_error_when_packing_impossible():
    with pytest.raises(SpawnError):
        spawn_scenario(ScenarioConfig(density=100.0, n_vehicles=30, seed=0))


def test_no_vehicles_never_collides():
    s = spawn_scenario(ScenarioConfig(n_vehicles=0))
    assert s.n_neighbors == 0
    for _ in range(100):
        s = step(s, 0.5, 0.0)
    assert not s.collided


def test_zero_controls_constant_velocity():
    cfg = ScenarioConfig(n_vehicles=0)
    s = _bare(cfg, ego=(0.0, 2.0, 0.0, 5.0, 0.0))
    for _ in range(10):
        s = step(s, 0.0, 0.0)
    assert s.ego[0] == pytest.approx(5.0, abs=1e-12) and s.ego[3] == 5.0 and s.ego[1] == 2.0
    assert s.t == pytest.approx(1.0)


def test_double_integrator_kinematics():
    s = _bare(ScenarioConfig(n_vehicles=0), ego=(0.0, 2.0, 0.0, 4.0, 0.0))
    s = step(s, 2.0, 1.0, dt=0.5)
    assert np.allclose(s.ego, [2.25, 2.125, np.arctan2(0.5, 5.0), 5.0, 0.5])


def test_free_neighbour_never_exceeds_nominal():
    cfg = ScenarioConfig(n_vehicles=0)
    s = _bare(cfg, nx=[30.0], ny=[2.0], nv=[1.0], v_nom=[6.0], ego=(0.0, 6.0, 0.0, 0.0, 0.0))
    top = 0.0
    for _ in range(600):
        s = step(s, 0.0, 0.0)
        top = max(top, s.nv[0])
    assert top <= 6.0 + 1e-6 and top > 5.5


def test_follower_brakes_behind_slow_leader():
    cfg = ScenarioConfig(n_vehicles=0)
    s = _bare(cfg, nx=[30.0, 45.0], ny=[2.0, 2.0], nv=[8.0, 1.0], v_nom=[8.0, 1.0],
              ego=(0.0, 6.0, 0.0, 0.0, 0.0))
    for _ in range(200):
        s = step(s, 0.0, 0.0)
        assert s.nx[1] - s.nx[0] > cfg.length
    assert s.nv[0] < 2.0


def test_coincident_collides_and_latches():
    cfg = ScenarioConfig(n_vehicles=0)
    s = _bare(cfg, nx=[0.5], ny=[2.0], nv=[5.0])
    s = step(s, 0.0, 0.0)
    assert s.collided
    s = _bare(cfg, nx=[0.5], ny=[2.0], nv=[5.0])
    s.collided = True
    s.nx = np.array([500.0])
    assert step(s, 0.0, 0.0).collided


def test_leaving_the_road_collides():
    cfg = ScenarioConfig(n_lanes=2, n_vehicles=0)
    s = _bare(cfg, ego=(0.0, 0.05, 0.0, 5.0, -1.0))
    assert step(s, 0.0, 0.0).collided


def test_rectangle_overlap():
    sq = lambda cx, cy: np.array([[cx + 1, cy + 1], [cx + 1, cy - 1], [cx - 1, cy - 1], [cx - 1, cy + 1]])
    assert rectangles_overlap(sq(0, 0), sq(1.5, 0))
    assert not rectangles_overlap(sq(0, 0), sq(2.5, 0))
    diamond = np.array([[0, 1.9], [1.9, 0], [0, -1.9], [-1.9, 0]]) + [3.0, 0.0]
    assert not rectangles_overlap(sq(0, 0), diamond + [0.5, 0])


def test_observe_layout():
    cfg = ScenarioConfig(n_lanes=2, n_vehicles=0)
    o = observe(_bare(cfg))
    assert o.shape == (OBS_DIM,)
    assert np.all(o[3:53] == 0)
    assert o[53] == -2.0 and o[54] == 6.0
    o = observe(_bare(cfg, nx=[10.0], ny=[2.0], nv=[3.0]))
    assert o[3] == 10.0 and o[4] == 0.0 and o[5] == 3.0 and o[7] == 1.0


def test_observe_keeps_ten_nearest():
    cfg = ScenarioConfig(n_lanes=2, n_vehicles=0)
    xs = np.arange(1, 13) * 10.0
    s = _bare(cfg, nx=xs[::-1], ny=[2.0] * 12, nv=[3.0] * 12)
    o = observe(s)
    dx = o[3:53:5]
    assert np.array_equal(dx, xs[:10])
    assert np.all(o[7:53:5] == 1.0)
    assert observe(s).tobytes() == o.tobytes()


def test_prediction():
    grid = TimeGrid(0.0, 10.0, 100)
    obs = np.zeros(OBS_DIM)
    obs[3:8] = 5.0, 1.0, 2.0, 0.0, 1.0
    obs[8:13] = 9.0, -4.0, 0.0, 0.0, 1.0
    xo, yo = predict_obstacles(obs, grid)
    assert xo.shape == (2, 100)
    k = int(np.argmin(np.abs(grid.times - 3.0)))
    assert xo[0, k] == pytest.approx(5.0 + 2.0 * grid.times[k])
    assert np.all(xo[1] == 9.0) and np.all(yo[1] == -4.0) and np.all(yo[0] == 1.0)
    assert predict_obstacles(np.zeros(OBS_DIM), grid)[0].shape == (0, 100)


def test_config_io(tmp_path):
    cfg = ScenarioConfig(n_lanes=4, density=1.5, seed=3)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(scenario_to_dict(cfg)))
    assert load_scenario_config(path) == cfg
    with pytest.raises(ParameterError):
        scenario_from_dict({"n_lanes": 2, "bogus": 1})
    with pytest.raises(ParameterError):
        scenario_from_dict({"idm": {"nope": 1}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParameterError):
        load_scenario_config(bad)


@pytest.mark.parametrize("kw", [dict(density=0.0), dict(sim_dt=0.0), dict(n_lanes=0), dict(ego_lane=5)])
def test_invalid_config(kw):
    with pytest.raises(ParameterError):
        ScenarioConfig(**kw)


def test_trace_csv(tmp_path):
    s = spawn_scenario(ScenarioConfig(n_vehicles=3))
    states = [s]
    for _ in range(4):
        states.append(step(states[-1], 0.0, 0.0))
    path = tmp_path / "trace.csv"
    write_trace_csv(path, states)
    lines = path.read_text().splitlines()
    assert len(lines) == 6 and lines[0].split(",")[-1] == "n2_xd"
    write_trace_csv(path, [])
    assert len(path.read_text().splitlines()) == 1
