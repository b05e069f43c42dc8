import numpy as np
import pytest

from quantjoint.model import (
    DataValidationError,
    HazardGrid,
    JointDataset,
    LongitudinalRecord,
    McmcSettings,
    ModelSpec,
    PriorSpec,
    SurvivalRecord,
    build_designs,
    default_grid,
    read_dataset,
    write_longitudinal_csv,
    write_survival_csv,
)


def small_data():
    long = [
        LongitudinalRecord("2", 1.0, 3.0, {"sex": 1.0}),
        LongitudinalRecord("10", 0.0, 1.0, {"sex": 0.0}),
        LongitudinalRecord("2", 0.0, 2.5, {"sex": 1.0}),
        LongitudinalRecord("10", 2.0, 1.5, {"sex": 0.0}),
    ]
    surv = [SurvivalRecord("10", 0.0, 3.0, False), SurvivalRecord("2", 0.5, 2.0, True)]
    return JointDataset(tuple(long), tuple(surv))


def test_canonical_order():
    d = small_data()
    assert d.subject_ids == ("2", "10")
    assert [r.time for r in d.longitudinal] == [0.0, 1.0, 0.0, 2.0]
    assert d.covariate_names == ("sex",)


def test_csv_round_trip(tmp_path):
    d = small_data()
    write_longitudinal_csv(tmp_path / "l.csv", d.longitudinal)
    write_survival_csv(tmp_path / "s.csv", d.survival)
    back = read_dataset(tmp_path / "l.csv", tmp_path / "s.csv")
    assert back == d
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "id,time,y,sex"


@pytest.mark.parametrize("content,msg", [
    ("id,time\n1,0\n", "missing column"),
    ("id,time,y\n1,0,abc\n", "non-numeric"),
    ("id,time,y\n1,0,nan\n", "non-finite"),
])
def test_csv_errors(tmp_path, content, msg):
    (tmp_path / "l.csv").write_text(content)
    with pytest.raises(DataValidationError, match=msg):
        read_dataset(tmp_path / "l.csv")


def test_event_flag_validated(tmp_path):
    (tmp_path / "l.csv").write_text("id,time,y\n1,0,1.0\n")
    (tmp_path / "s.csv").write_text("id,entry,exit,event\n1,0,1,yes\n")
    with pytest.raises(DataValidationError, match="event"):
        read_dataset(tmp_path / "l.csv", tmp_path / "s.csv")


def test_dataset_validation():
    rec = LongitudinalRecord("1", 0.0, 1.0)
    with pytest.raises(DataValidationError, match="mismatch"):
        JointDataset((rec,), (SurvivalRecord("2", 0.0, 1.0, True),))
    with pytest.raises(DataValidationError, match="not before"):
        JointDataset((rec,), (SurvivalRecord("1", 1.0, 1.0, True),))
    with pytest.raises(DataValidationError, match="duplicate"):
        JointDataset((rec,), (SurvivalRecord("1", 0.0, 1.0, True), SurvivalRecord("1", 0.0, 2.0, True)))
    with pytest.raises(DataValidationError):
        JointDataset(())
    with pytest.raises(DataValidationError, match="covariate set"):
        JointDataset((rec, LongitudinalRecord("1", 1.0, 1.0, {"a": 1.0})))


def test_build_designs():
    d = small_data()
    spec = ModelSpec(l_covariates=("time", "sex"), s_covariates=("sex",))
    b = build_designs(d, spec)
    np.testing.assert_array_equal(b.x_long, [[1, 0, 1], [1, 1, 1], [1, 0, 0], [1, 2, 0]])
    assert b.long_names == ("intercept", "time", "sex")
    np.testing.assert_array_equal(b.row_start, [0, 2, 4])
    np.testing.assert_array_equal(b.x_surv, [[1.0], [0.0]])
    np.testing.assert_array_equal(b.event, [True, False])
    np.testing.assert_array_equal(b.z_shared, [[1, 0], [1, 1], [1, 0], [1, 2]])


def test_build_designs_errors():
    d = small_data()
    with pytest.raises(DataValidationError, match="unknown covariate"):
        build_designs(d, ModelSpec(l_covariates=("age",)))
    with pytest.raises(DataValidationError, match="survival records"):
        build_designs(JointDataset(d.longitudinal), ModelSpec())
    with pytest.raises(DataValidationError, match="baseline"):
        build_designs(d, ModelSpec(s_covariates=("time",)))


def test_default_grid_balances_events():
    rng = np.random.default_rng(0)
    exit_ = rng.uniform(0.1, 10, 200)
    event = rng.random(200) < 0.6
    long = tuple(LongitudinalRecord(str(i), 0.0, 0.0) for i in range(200))
    surv = tuple(SurvivalRecord(str(i), 0.0, float(exit_[i]), bool(event[i])) for i in range(200))
    g = default_grid(JointDataset(long, surv), 5)
    assert g.k == 5
    assert g.cuts[0] == 0.0 and g.cuts[-1] == pytest.approx(exit_.max())
    counts = np.histogram(exit_[event], g.cuts)[0]
    assert counts.max() - counts.min() <= 2


def test_default_grid_needs_events():
    d = JointDataset((LongitudinalRecord("1", 0.0, 0.0),), (SurvivalRecord("1", 0.0, 1.0, False),))
    with pytest.raises(DataValidationError, match="no events"):
        default_grid(d, 3)


def test_hazard_grid_validation():
    with pytest.raises(ValueError):
        HazardGrid([0.0], [])
    with pytest.raises(ValueError):
        HazardGrid([0.0, 1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        HazardGrid([0.0, 1.0], [0.0])
    assert HazardGrid([0.0, 1.0], [2.0]).with_values([3.0]).values[0] == 3.0


def test_spec_validation_and_fingerprint():
    with pytest.raises(ValueError):
        ModelSpec(mode="bogus")
    with pytest.raises(ValueError):
        ModelSpec(mode="mean-joint")  # default tau given
    with pytest.raises(ValueError):
        ModelSpec(shared_effects=())
    with pytest.raises(ValueError):
        McmcSettings(100, 100, 1)
    assert McmcSettings().n_stored == 1000
    a = ModelSpec()
    assert a.fingerprint() == ModelSpec().fingerprint()
    assert a.fingerprint() != ModelSpec(grid_k=4).fingerprint()
    assert ModelSpec(mode="mean-joint", tau_levels=()).to_dict()["tau"] == []
    assert a.for_tau(0.1).tau_levels[0].tau == 0.1


def test_prior_broadcast():
    p = PriorSpec(beta_mean=1.0, beta_cov=[1.0, 2.0])
    m, c = p.beta_moments(2)
    np.testing.assert_array_equal(m, [1.0, 1.0])
    np.testing.assert_array_equal(c, np.diag([1.0, 2.0]))
    with pytest.raises(ValueError):
        PriorSpec(sigma2=(0.0, 1.0))
    with pytest.raises(ValueError):
        PriorSpec(beta_cov=[[1.0, 2.0], [2.0, 1.0]]).beta_moments(2)
