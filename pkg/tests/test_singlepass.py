import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavsqueeze import gaussian, singlepass as S
from cavsqueeze.params import reference_params, q_factor
from cavsqueeze.stochastic import TimeGrid

from conftest import rel

ANALYTIC_MIN = 0.118
NUMERIC_MIN = 0.121


def test_initial_variance_is_half(reference):
    var, _ = S.singlepass_variance(reference, 0.0)
    assert var == 0.5


def test_rate_ratio_is_cavity_enhancement(reference):
    _, ratio = S.singlepass_variance(reference, 1.0)
    assert ratio == pytest.approx(q_factor(reference), rel=1e-9)


@given(eta_d=st.floats(0.05, 1.0), n=st.floats(1e8, 1e13))
@settings(max_examples=30, deadline=None)
def test_rate_ratio_independent_of_ensemble(eta_d, n):
    p = reference_params(detector_efficiency=eta_d, n_atoms=n)
    _, ratio = S.singlepass_variance(p, 1.0)
    assert ratio == pytest.approx(q_factor(p), rel=1e-9)


def test_rejects_negative_time(reference):
    with pytest.raises(ValueError):
        S.singlepass_variance(reference, -1.0)


def test_detected_photon_rate(reference):
    sp = S.SinglePassParams.from_physical(reference)
    n = 1234.0
    expected = n**2 * sp.g**4 * reference.round_trip_time**2 * reference.photon_flux * reference.detector_efficiency / reference.detuning**2
    assert S.detected_photon_rate(reference, n) == pytest.approx(expected, rel=1e-12)
    assert S.detected_photon_rate(reference, 0.0) == 0.0


def test_few_photons_warns():
    with pytest.warns(UserWarning, match="classical probe"):
        S.SinglePassParams.from_physical(reference_params(photon_flux=1e11))


def test_lossless_ode_matches_closed_form():
    p = reference_params(spont_rate=0.0)
    c = S.singlepass_rate(p)
    grid = TimeGrid.span(0.0, 50 / c, 0.01 / c)
    series = S.singlepass_decay_integrate(p, grid)
    exact = S.singlepass_lossless_series(p, grid)
    np.testing.assert_allclose(series.v_diag[:, 1], exact.v_diag[:, 1], rtol=1e-6)
    closed, _ = S.singlepass_variance(p, grid.times)
    np.testing.assert_allclose(exact.v_diag[:, 1] / 2, closed, rtol=1e-15)


def test_lossy_minimum_reference_set(reference):
    series = S.singlepass_decay_integrate(reference, S.default_grid(reference))
    value, when = series.minimum()
    assert rel(value, NUMERIC_MIN) < 0.02
    assert 3.0 < when < 8.0
    assert series.dp_at[-1] > value


def test_analytic_minimum(reference):
    value, finite = S.singlepass_min(reference)
    assert finite
    assert rel(value, ANALYTIC_MIN) < 0.01
    numeric, _ = S.singlepass_decay_integrate(reference, S.default_grid(reference)).minimum()
    # the analytic form neglects the decay of the squeezing rate
    assert 1.0 < numeric / value < 1.04


def test_analytic_minimum_quarter_power(reference):
    a, _ = S.singlepass_min(reference)
    b, _ = S.singlepass_min(reference.replace(n_atoms=16 * reference.n_atoms))
    assert b / a == pytest.approx(0.5, rel=1e-12)


def test_no_minimum_without_emission():
    p = reference_params(spont_rate=0.0)
    assert S.singlepass_min(p) == (0.0, False)
    with pytest.raises(ValueError):
        S.default_grid(p)


def test_truncates_at_decay_horizon(reference):
    eta = S.SinglePassParams.from_physical(reference).decay_rate
    dt = 0.05
    grid = TimeGrid.span(0.0, 5 / eta, dt)
    with pytest.warns(UserWarning, match="truncated"):
        series = S.singlepass_decay_integrate(reference, grid)
    assert series.t[-1] <= 3 / eta
    assert series.t[-1] > 3 / eta - 2 * dt


def test_no_warning_within_horizon(reference):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        S.singlepass_decay_integrate(reference, TimeGrid.span(0.0, 0.1, 1e-4))


def test_cavity_beats_single_pass(reference):
    pred = gaussian.predicted_min_uncertainty(reference)
    value, _ = S.singlepass_min(reference)
    assert pred.singlepass == pytest.approx(value, rel=1e-12)
    assert pred.cavity < value / 4


def test_series_layout(reference):
    series = S.singlepass_lossless_series(reference, TimeGrid.span(0.0, 1.0, 0.1))
    assert np.all(np.isnan(series.v_diag[:, [0, 2, 3]]))
    assert series.source == "singlepass_lossless"
    assert np.all(np.diff(series.dp_at) < 0)
