import pickle

import numpy as np
import pytest

from quantjoint.ald import QuantileLevel
from quantjoint.distributions import draw_inverse_wishart, rng_stream
from quantjoint.joint import (
    ChainState,
    SamplerError,
    SurvState,
    chain_seed,
    run_chain,
    run_quantile_battery,
)
from quantjoint.longitudinal import LongState
from quantjoint.model import (
    HazardGrid,
    JointDataset,
    LongitudinalRecord,
    McmcSettings,
    ModelSpec,
    PriorSpec,
    SurvivalRecord,
)
from quantjoint.simulate import invert_hazard, scenario, simulate


@pytest.fixture(scope="module")
def cohort():
    data, _ = simulate(scenario("default", n=40, n_visits=5), rng_stream(8))
    return data


def short(**kw):
    return ModelSpec(mcmc=McmcSettings(60, 10, 2, seed=3), grid_k=4, **kw)


def test_run_chain_shapes(cohort):
    s = run_chain(cohort, short())
    assert s.n_draws == 25
    assert s.names[:3] == ("beta_intercept", "beta_time", "sigma2")
    assert s.names[-1] == "alpha"
    assert "lambda_4" in s and "lambda_5" not in s
    assert np.all(s["sigma2"] > 0)
    assert s.random_effects_mean.shape == (40, 2)
    assert s.metadata["tau"] == 0.5
    assert s.final_state.iteration == 60
    with pytest.raises(KeyError):
        s["nope"]


def test_run_chain_deterministic(cohort):
    a = run_chain(cohort, short())
    b = run_chain(cohort, short())
    np.testing.assert_array_equal(a.draws, b.draws)
    c = run_chain(cohort, short(), seed=chain_seed(3, 1))
    assert not np.array_equal(a.draws, c.draws)


def test_long_quantile_and_mean_modes(cohort):
    lq = run_chain(cohort, ModelSpec(mode="long-quantile", mcmc=McmcSettings(40, 10, 1)))
    assert "alpha" not in lq and lq.n_draws == 30
    mj = run_chain(cohort, ModelSpec(mode="mean-joint", tau_levels=(), grid_k=3, mcmc=McmcSettings(40, 10, 1)))
    assert mj.metadata["tau"] is None and "alpha" in mj


def test_alpha_zero_leaves_longitudinal_draws_untouched(cohort):
    with_surv = run_chain(cohort, short(fixed_alpha=0.0))
    without = run_chain(cohort, short(fixed_alpha=0.0, skip_blocks={"lambda", "beta_s"}))
    cols = [i for i, n in enumerate(with_surv.names) if not n.startswith(("lambda", "alpha", "beta_s"))]
    np.testing.assert_array_equal(with_surv.draws[:, cols], without.draws[:, cols])
    assert np.all(with_surv["alpha"] == 0.0)
    assert not np.array_equal(with_surv["lambda_1"], without["lambda_1"])


def test_battery_matches_run_chain_and_jobs(cohort):
    spec = ModelSpec(tau_levels=(0.25, 0.75), mcmc=McmcSettings(30, 10, 1, seed=5), grid_k=3)
    serial = run_quantile_battery(cohort, spec, jobs=1)
    parallel = run_quantile_battery(cohort, spec, jobs=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.draws, b.draws)
    first = run_chain(cohort, spec.for_tau(0.25))
    np.testing.assert_array_equal(first.draws, serial[0].draws)
    assert [s.tau for s in serial] == [0.25, 0.75]


def test_sampler_error_context(cohort, monkeypatch):
    import quantjoint.joint as joint

    def broken(*a, **k):
        raise ValueError("boom")

    monkeypatch.setattr(joint, "update_weights", broken)
    with pytest.raises(SamplerError) as err:
        run_chain(cohort, short())
    assert err.value.block == "weights" and err.value.iteration == 1
    back = pickle.loads(pickle.dumps(err.value))
    assert back.block == "weights" and "boom" in str(back)


def test_progress_events(cohort):
    events = []
    run_chain(cohort, short(), progress=events.append, progress_every=20)
    assert [e.iteration for e in events] == [20, 40, 60]
    assert set(events[-1].block_seconds) >= {"alpha", "weights"}


def test_multiple_levels_need_battery(cohort):
    with pytest.raises(ValueError):
        run_chain(cohort, ModelSpec(tau_levels=(0.2, 0.8)))


# successive-conditional check: alternating one Gibbs sweep with a fresh draw of
# the data from the likelihood leaves the prior invariant


TIMES = np.array([0.0, 1.0, 2.0, 3.0])
HORIZON = 4.0
N_SUBJ = 3


def _gen_data(state, level, rng):
    lo, sv = state.long, state.surv
    recs, surv = [], []
    w = lo.w.reshape(N_SUBJ, TIMES.size)
    for i in range(N_SUBJ):
        mean = lo.beta_l[0] + lo.beta_l[1] * TIMES + lo.gamma[i, 0] + level.xi * w[i]
        y = mean + np.sqrt(lo.sigma2 * level.phi * w[i]) * rng.standard_normal(TIMES.size)
        recs += [LongitudinalRecord(str(i), float(t), float(v)) for t, v in zip(TIMES, y)]
        t_ev = invert_hazard(1.0 - rng.random(), sv.alpha * lo.gamma[i, 0], 0.0,
                             HazardGrid([0.0, HORIZON], sv.lam))
        surv.append(SurvivalRecord(str(i), 0.0, min(t_ev, HORIZON), t_ev <= HORIZON))
    return JointDataset(tuple(recs), tuple(surv))


def _prior_state(rng):
    beta = rng.standard_normal(2)
    sigma2 = 1.0 / rng.gamma(3.0, 0.5)
    re_cov = draw_inverse_wishart(5.0, np.eye(1), rng)
    gamma = np.zeros((N_SUBJ, 2))
    gamma[:, 0] = rng.normal(0.0, np.sqrt(re_cov[0, 0]), N_SUBJ)
    w = rng.exponential(sigma2, N_SUBJ * TIMES.size)
    lam = rng.gamma(3.0, 1.0 / 3.0, 1)
    alpha = rng.normal(0.0, np.sqrt(0.5))
    return ChainState(LongState(beta, gamma, sigma2, w, re_cov), SurvState(lam, np.zeros(0), alpha))


@pytest.mark.slow
def test_successive_conditional_prior_invariance():
    level = QuantileLevel(0.3)
    priors = PriorSpec(beta_mean=0.0, beta_cov=1.0, sigma2=(3.0, 2.0), lam=(3.0, 3.0), alpha=(0.0, 0.5),
                       re_cov=(5.0, 1.0))
    spec = ModelSpec(tau_levels=(level,), shared_effects=("intercept",), priors=priors,
                     mcmc=McmcSettings(1, 0, 1))
    grid = HazardGrid([0.0, HORIZON], [1.0])
    rng = rng_stream(77)
    state = _prior_state(rng)
    n_steps = 12000
    trace = np.empty((n_steps, 6))
    for step in range(n_steps):
        data = _gen_data(state, level, rng)
        s = run_chain(data, spec, seed=chain_seed(77, step), init=state, grid=grid)
        state = s.final_state
        trace[step] = [state.long.beta_l[0], state.long.beta_l[1], state.long.sigma2,
                       state.long.re_cov[0, 0], state.surv.lam[0], state.surv.alpha]
    from quantjoint.diagnostics import effective_sample_size
    from scipy import stats

    medians = [0.0, 0.0, stats.invgamma(3.0, scale=2.0).median(), stats.invgamma(2.5, scale=0.5).median(),
               stats.gamma(3.0, scale=1 / 3.0).median(), 0.0]
    for j, med in enumerate(medians):
        below = (trace[:, j] < med).astype(float)
        se = 0.5 / np.sqrt(effective_sample_size(below))
        assert abs(below.mean() - 0.5) < 4 * se + 0.01, (j, below.mean(), se)
