import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gspdr import env as E
from gspdr.errors import ConfigError, ParseError, UsageError, ValidationError


@pytest.fixture
def params():
    return E.EnvParams()


@pytest.fixture
def profile(params):
    return E.generate_price_profile(0, params.horizon_steps)


def test_defaults_and_activation_time(params):
    assert params.horizon_steps == 72
    assert params.forecast_len == 12
    assert params.activation_time == params.horizon_steps - 4
    assert (params.c0, params.c1, params.c2) == (0.2, 1.0, 0.6)
    assert params.obs_dim == 16
    assert replace(params, observe_step_index=False).obs_dim == 15


@pytest.mark.parametrize("changes", [
    {"u_min": 0.1, "u_max": 0.05},
    {"u_min": 0.0},
    {"tracking_lag": 0.0},
    {"tracking_lag": 1.5},
    {"terminal_target": 2.0},
    {"penalty_weight": 0.0},
    {"activation_time": 72},
])
def test_param_invariants_rejected(changes):
    with pytest.raises(ValidationError):
        E.EnvParams(**changes)


def test_reset(params, profile):
    s = E.reset(params, profile, 0.5 * params.tank_capacity)
    assert s.tank_level == 0.5 and s.t == 0
    assert s.production == params.demand
    assert s.price_forecast == profile.prices[:params.forecast_len]
    assert E.reset(params, profile, params.tank_capacity).tank_level == params.tank_capacity
    with pytest.raises(ValidationError):
        E.reset(params, profile, 1.5)


def test_reset_short_profile(params):
    short = E.PriceProfile((1.0,) * (params.horizon_steps - 1))
    with pytest.raises(ConfigError):
        E.reset(params, short)


def test_liquefied_fraction_examples():
    assert E.liquefied_fraction(1.0, 1.0) == 0.0
    assert E.liquefied_fraction(2.0, 1.0) == 0.5
    assert E.liquefied_fraction(0.5, 1.0) == 0.0


def test_path_penalty_examples(params):
    ta = params.activation_time
    target = params.terminal_target
    late = E.EnvState(target - 0.2, 0.05, ta + 1, 0.0, (1.0,))
    assert E.path_penalty(late, params) == pytest.approx(-0.4, abs=1e-12)
    assert E.path_penalty(replace(late, t=ta), params) == 0.0
    assert E.path_penalty(replace(late, tank_level=target), params) == 0.0
    assert E.path_penalty(replace(late, tank_level=target + 0.1), params) == 0.0


def test_step_steady_state(profile):
    p = E.EnvParams(tracking_lag=1.0)
    s = E.reset(p, profile, 0.5)
    nxt, rb, done = E.step(s, p.demand, p, profile)
    assert nxt.tank_level == 0.5
    assert not done
    assert rb.elec == pytest.approx(-profile.prices[0] * (p.c0 + p.c1 * p.demand))


def test_step_double_demand_fills_by_demand(profile):
    p = E.EnvParams(tracking_lag=1.0, u_max=0.2)
    s = E.reset(p, profile, 0.3)
    nxt, _, _ = E.step(s, 2 * p.demand, p, profile)
    assert nxt.tank_level == pytest.approx(0.3 + p.demand * p.dt, abs=1e-15)


def test_empty_tank_records_shortfall(profile):
    # production drops to u_min = 0.035 against demand 0.05; 0.01 in the tank covers part of it
    p = E.EnvParams(tracking_lag=1.0)
    s = E.reset(p, profile, 0.01)
    nxt, _, _ = E.step(s, p.u_min, p, profile)
    assert nxt.tank_level == 0.0
    assert nxt.shortfall == pytest.approx(0.005, abs=1e-15)
    full = E.step(E.reset(p, profile, 0.5), p.u_min, p, profile)[0]
    assert full.shortfall == 0.0


def test_terminal_step(params, profile):
    s = E.EnvState(params.terminal_target + 0.1, params.demand, params.horizon_steps - 1, 0.0,
                   profile.window(params.horizon_steps - 1, params.forecast_len,
                                  params.horizon_steps))
    nxt, rb, done = E.step(s, params.demand, params, profile)
    assert done and nxt.t == params.horizon_steps
    assert rb.terminal == params.terminal_bonus
    with pytest.raises(UsageError):
        E.step(nxt, params.demand, params, profile)


def test_terminal_within_tolerance_below_target(profile):
    p = E.EnvParams(tracking_lag=1.0)
    below = p.terminal_target - 0.5 * p.terminal_tolerance
    s = E.EnvState(below, p.demand, p.horizon_steps - 1, 0.0, (1.0,) * p.forecast_len)
    _, rb, _ = E.step(s, p.demand, p, profile)
    assert rb.terminal == p.terminal_bonus
    s = replace(s, tank_level=p.terminal_target - 2 * p.terminal_tolerance)
    _, rb, _ = E.step(s, p.demand, p, profile)
    assert rb.terminal == 0.0
    assert rb.path < 0


def test_forecast_padding(params, profile):
    w = profile.window(params.horizon_steps - 3, 6, params.horizon_steps)
    last = profile.prices[params.horizon_steps - 1]
    assert w[:3] == profile.prices[-3:]
    assert w[3:] == (last, last, last)


def test_observation(params, profile):
    s = E.reset(params, profile)
    obs = E.observe(s, params)
    assert obs.shape == (params.obs_dim,)
    assert obs[0] == params.initial_level
    assert obs[1] == 0.0
    assert obs[-1] == 0.0


# ---------------------------------------------------------------- properties

states = st.builds(
    lambda level, prod, t: (level, prod, t),
    st.floats(0.0, 1.0), st.floats(0.0, 0.2), st.integers(0, 71))


@given(states, st.floats(-1.0, 1.0), st.floats(0.1, 1.0))
@settings(max_examples=300, deadline=None)
def test_step_invariants(sx, action, lag):
    level, prod, t = sx
    p = E.EnvParams(tracking_lag=lag)
    profile = E.generate_price_profile(1, p.horizon_steps)
    s = E.EnvState(level, prod, t, float(t % 24), profile.window(t, p.forecast_len, 72))
    u = p.setpoint_from_action(action)
    nxt, rb, done = E.step(s, u, p, profile)
    prod1 = nxt.production
    xi = E.liquefied_fraction(prod1, p.demand)
    evap = max(0.0, p.demand - prod1)

    assert 0.0 <= nxt.tank_level <= p.tank_capacity
    assert nxt.t == t + 1
    assert done == (t + 1 == p.horizon_steps)
    assert prod1 + evap >= p.demand - 1e-15
    assert not (xi * prod1 > 0 and evap > 0)
    raw = level + (xi * prod1 - evap) * p.dt
    if 0.0 <= raw <= p.tank_capacity:
        assert nxt.tank_level == raw
    assert rb.total == rb.elec + rb.path + rb.terminal
    assert rb.elec <= 0 and rb.path <= 0 and rb.terminal >= 0
    assert len(nxt.price_forecast) == p.forecast_len
    # Dirac transition
    again = E.step(s, u, p, profile)
    assert again[0] == nxt and again[1] == rb


@given(st.floats(-5.0, 5.0))
def test_setpoint_map_bounds(a):
    p = E.EnvParams()
    u = p.setpoint_from_action([a])
    assert p.u_min <= u <= p.u_max


def test_setpoint_map_endpoints():
    p = E.EnvParams()
    assert p.setpoint_from_action([-1.0]) == p.u_min
    assert p.setpoint_from_action([1.0]) == pytest.approx(p.u_max)


# ---------------------------------------------------------------- price profiles

def test_generate_constant_and_peak():
    flat = E.generate_price_profile(3, 24, base=1.3, amplitude=0.0, noise_std=0.0)
    assert flat.prices == (1.3,) * 24
    prof = E.generate_price_profile(3, 24, base=1.0, amplitude=0.5, noise_std=0.0)
    assert prof.prices[6] == pytest.approx(1.5, abs=1e-15)
    assert E.generate_price_profile(9, 72).prices == E.generate_price_profile(9, 72).prices


def test_generate_rejects_large_amplitude():
    with pytest.raises(ValidationError):
        E.generate_price_profile(0, 24, base=1.0, amplitude=1.0)


def test_load_plain(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("1.0\n2.0\n3.0")
    assert E.load_price_profile(f).prices == (1.0, 2.0, 3.0)


def test_load_bad_line(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("1.0\nabc\n3.0\n")
    with pytest.raises(ParseError, match="line 2"):
        E.load_price_profile(f)


def test_load_empty_and_negative(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("")
    with pytest.raises(ValidationError):
        E.load_price_profile(f)
    f.write_text("1.0\n-2.0\n")
    with pytest.raises(ValidationError):
        E.load_price_profile(f)


def test_csv_round_trip(tmp_path):
    prof = E.generate_price_profile(5, 72)
    f = tmp_path / "prices.csv"
    E.save_price_profile(prof, f)
    assert f.read_text().startswith("price\n")
    assert E.load_price_profile(f).prices == prof.prices


def test_csv_with_extra_columns(tmp_path):
    f = tmp_path / "prices.csv"
    f.write_text("hour,price\n0,1.5\n1,2.5\n")
    assert E.load_price_profile(f).prices == (1.5, 2.5)


def test_price_profile_rejects_nan():
    with pytest.raises(ValidationError):
        E.PriceProfile((1.0, math.nan))


def test_episode_rollout_shapes(params, profile):
    s = E.reset(params, profile)
    total = 0.0
    for _ in range(params.horizon_steps):
        s, rb, done = E.step(s, params.u_max, params, profile)
        total += rb.total
    assert done and np.isfinite(total)
