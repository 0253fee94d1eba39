import numpy as np
import pytest

from wrsmref.estimator import CurrentReferenceGenerator
from wrsmref.fluxmap import default_synthetic_params, sample_grid, synth_flux


def test_get_set_params_round_trip():
    est = CurrentReferenceGenerator()
    params = est.get_params()
    assert params["pole_pairs"] == 2
    est.set_params(v_max=28.0, omega_max=4000.0)
    assert est.v_max == 28.0
    clone = CurrentReferenceGenerator(**est.get_params())
    assert clone.get_params() == est.get_params()


def test_set_params_rejects_unknown():
    with pytest.raises(ValueError, match="invalid parameter"):
        CurrentReferenceGenerator().set_params(voltage=3.0)


def test_predict_requires_fit():
    with pytest.raises(RuntimeError, match="not fitted"):
        CurrentReferenceGenerator().predict([[1.0, 500.0]])


def test_fit_predict_synthetic():
    est = CurrentReferenceGenerator(grid_counts=(3, 7, 7)).fit()
    assert est.n_regions_ > 0
    out = est.predict([[1.0, 500.0], [2.0, 900.0], [60.0, 500.0]])
    assert out.shape == (3, 3)
    assert np.isfinite(out[:2]).all()
    assert np.isnan(out[2]).all()  # infeasible request -> NaN row
    sol = est.solve(1.0, 500.0)
    assert np.allclose(sol.i, out[0])


def test_fit_with_explicit_samples():
    params = default_synthetic_params()
    samples = sample_grid([(0.0, 40.0), (-43.0, 43.0), (-43.0, 43.0)], (3, 5, 5),
                          lambda p: synth_flux(params, p))
    xs = np.array([s.i for s in samples])
    ys = np.array([s.lam for s in samples])
    est = CurrentReferenceGenerator(i_r_rated=40.0, i_s_rated=40.0).fit(xs, ys)
    out = est.predict(np.array([0.5, 400.0]))
    assert out.shape == (1, 3)
    assert np.isfinite(out).all()


def test_fit_requires_targets_with_samples():
    with pytest.raises(ValueError, match="flux linkages"):
        CurrentReferenceGenerator().fit(np.zeros((10, 3)))
