import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantjoint.distributions import rng_stream
from quantjoint.model import HazardGrid
from quantjoint.simulate import SCENARIOS, SimScenario, invert_hazard, scenario, simulate
from quantjoint.survival import cumulative_hazard

GRID = HazardGrid([0.0, 1.0, 3.0, 6.0], [0.3, 0.1, 0.6])


@settings(max_examples=300, deadline=None)
@given(u=st.floats(1e-6, 1.0), level=st.floats(-2, 2), slope=st.floats(-1.5, 1.5), entry=st.floats(0, 2))
def test_invert_hazard_round_trip(u, level, slope, entry):
    t = invert_hazard(u, level, slope, GRID, entry)
    if math.isinf(t):
        assert cumulative_hazard(entry, 6.0, GRID, 1.0, level, slope) < -math.log(u) * (1 + 1e-12)
    else:
        assert t >= entry
        h = cumulative_hazard(entry, t, GRID, 1.0, level, slope) if t > entry else 0.0
        assert h == pytest.approx(-math.log(u), rel=1e-9, abs=1e-15)


def test_invert_hazard_frozen():
    # constant hazard 0.3 on the first interval: t = -log(0.9) / 0.3
    assert invert_hazard(0.9, 0.0, 0.0, GRID) == pytest.approx(0.351201718859421, rel=1e-15)
    assert invert_hazard(1.0, 0.0, 0.0, GRID, 0.7) == 0.7
    with pytest.raises(ValueError):
        invert_hazard(0.0, 0.0, 0.0, GRID)


def test_simulate_deterministic():
    sc = scenario("default", n=40)
    a, ta = simulate(sc, rng_stream(3))
    b, tb = simulate(sc, rng_stream(3))
    assert a == b
    assert ta.to_json() == tb.to_json()
    c, _ = simulate(sc, rng_stream(4))
    assert c != a


def test_simulate_shapes_and_censoring():
    sc = scenario("default", n=60, n_visits=5, jitter=0.3, beta_s=(("x", 0.5),))
    data, truth = simulate(sc, rng_stream(11))
    assert data.n == 60 and len(data.longitudinal) == 300
    assert data.covariate_names == ("x",)
    for r in data.survival:
        assert 0.0 < r.exit <= sc.horizon
        assert r.event == (r.exit < sc.horizon)
    assert truth.gamma.shape == (60, 2)
    assert json.loads(truth.to_json())["alpha"] == sc.alpha


def test_drop_after_exit():
    data, _ = simulate(scenario("default", n=50, drop_after_exit=True), rng_stream(1))
    exits = {r.subject_id: r.exit for r in data.survival}
    assert all(r.time <= exits[r.subject_id] for r in data.longitudinal)


def test_all_censored_warns():
    sc = scenario("default", n=5, hazard_values=(1e-9,))
    with pytest.warns(RuntimeWarning, match="censored"):
        simulate(sc, rng_stream(0))


def test_median_of_ald_errors_is_zero():
    sc = SimScenario(n=400, n_visits=20, re_cov=((0.0, 0.0), (0.0, 0.0)), beta_l=(0.0, 0.0), tau=0.2)
    data, _ = simulate(sc, rng_stream(5))
    y = np.array([r.response for r in data.longitudinal])
    assert np.mean(y <= 0.0) == pytest.approx(0.2, abs=0.01)


def test_scenario_validation():
    with pytest.raises(ValueError):
        scenario("nope")
    with pytest.raises(ValueError):
        SimScenario(error="cauchy")
    with pytest.raises(ValueError):
        SimScenario(re_cov=((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(ValueError):
        SimScenario(horizon=9.0)
    assert set(SCENARIOS) == {"default", "symmetric", "hetero"}
