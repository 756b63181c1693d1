import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavsqueeze.errors import InvalidParameterError
from cavsqueeze.params import (
    DetectionPort,
    alpha_of_t,
    alpha_sq_integral,
    cavity_amp_x,
    derive_couplings,
    effective_probe_time,
    reference_params,
    q_factor,
)

from conftest import rel

# Target values for the reference parameter set.
FIG2_G_TILDE_TAU = 2e-3
FIG2_KAPPA_TAU = 6e-3
FIG2_AX = 4.6e3
FIG2_SPIN_DECAY_TIME = 0.13
FIG2_ALPHA = 7.0e-7
FIG2_CONDITIONING_TIME = 2.7e4
FIG2_Q = 5e5
FIG2_EPSILON = 3.5e5

# Regression values of this implementation (frozen when the oracles were written).
FROZEN = {
    "g": 9469.402424644526,
    "epsilon": 352060.32184075844,
    "alpha_steady": 6.975471762534084e-07,
    "ax_steady": 4606.588659617806,
}


def test_reference_derived_couplings(reference):
    d = derive_couplings(reference)
    assert rel(d.g_tilde_steady * reference.round_trip_time, FIG2_G_TILDE_TAU) < 0.10
    assert rel(d.kappa * reference.round_trip_time, FIG2_KAPPA_TAU) < 0.10
    assert rel(d.ax_steady, FIG2_AX) < 0.02
    assert rel(1 / d.eta_steady, FIG2_SPIN_DECAY_TIME) < 0.05
    assert rel(d.alpha_steady, FIG2_ALPHA) < 0.01
    assert rel(1 / (4 * reference.measurement_rate * d.alpha_steady**2), FIG2_CONDITIONING_TIME) < 0.05
    assert rel(d.epsilon, FIG2_EPSILON) < 0.02
    assert rel(d.q_factor, FIG2_Q) < 0.05


def test_reference_frozen_regression(reference):
    d = derive_couplings(reference)
    for name, value in FROZEN.items():
        assert getattr(d, name) == pytest.approx(value, rel=1e-12)


def test_epsilon_definition(reference):
    d = derive_couplings(reference)
    g = d.g
    expected = reference.n_atoms * 0.5 * reference.spont_rate * g**2 / (reference.detuning**2 + reference.spont_rate**2 / 4)
    assert d.epsilon == pytest.approx(expected, rel=1e-14)


def test_no_spontaneous_emission_means_no_loss():
    d = derive_couplings(reference_params(spont_rate=0.0))
    assert d.epsilon == 0.0
    assert d.eta_steady == 0.0


def test_zero_flux_means_no_light():
    p = reference_params(photon_flux=0.0)
    d = derive_couplings(p)
    assert d.ax_steady == 0 and d.alpha_steady == 0 and d.g_tilde_steady == 0 and d.eta_steady == 0
    assert alpha_of_t(1e-6, p) == 0


@pytest.mark.parametrize("field", ["beam_area", "wavelength", "round_trip_time"])
def test_zero_geometry_rejected(field):
    with pytest.raises(InvalidParameterError):
        reference_params(**{field: 0.0})


@pytest.mark.parametrize(
    "overrides",
    [dict(n_atoms=0.5), dict(photon_flux=-1.0), dict(detector_efficiency=1.5), dict(kappa1=-1.0), dict(detuning=0.0)],
)
def test_invalid_values_rejected(overrides):
    with pytest.raises(InvalidParameterError):
        reference_params(**overrides)


def test_q_factor_transmission_symmetric():
    kappa, tau = 2 * math.pi * 3e6, 3e-10
    p = reference_params(detection_port=DetectionPort.TRANSMISSION, kappa1=kappa / 2, kappa2=kappa / 2)
    assert q_factor(p) == pytest.approx(4 / (kappa * tau) ** 2, rel=1e-14)


def test_q_factor_unity_at_kappa_tau_two():
    tau = 3e-10
    kappa = 2 / tau
    p = reference_params(detection_port=DetectionPort.TRANSMISSION, kappa1=kappa / 2, kappa2=kappa / 2)
    assert q_factor(p) == pytest.approx(1.0, rel=1e-14)


def test_reflection_equals_transmission_under_substitution():
    # reflection with loss rate a through the closed mirror and transmission with
    # the same rate through an output mirror share kappa, kappa_det and the drive
    a = 2 * math.pi * 3e6
    refl = reference_params(kappa1=a, kappa_loss=a)
    trans = reference_params(detection_port=DetectionPort.TRANSMISSION, kappa1=a, kappa2=a)
    assert refl.kappa == trans.kappa == 2 * a
    assert refl.kappa_det == a == trans.kappa_det
    d_r, d_t = derive_couplings(refl), derive_couplings(trans)
    for name in ("ax_steady", "alpha_steady", "g_tilde_steady", "eta_steady", "epsilon", "q_factor"):
        assert getattr(d_r, name) == getattr(d_t, name)
    t = np.linspace(0, 50 / a, 7)
    np.testing.assert_array_equal(alpha_of_t(t, refl), alpha_of_t(t, trans))


def test_reflection_q_uses_input_mirror(reference):
    expected = 16 * reference.kappa1**2 / (reference.kappa1**4 * reference.round_trip_time**2)
    assert q_factor(reference) == pytest.approx(expected, rel=1e-14)


def test_cavity_amp_x_values(reference):
    assert cavity_amp_x(0.0, reference) == 0.0
    k = reference.kappa
    ss = 2 * math.sqrt(reference.kappa1 * reference.photon_flux) / k
    assert cavity_amp_x(2 / k, reference) == pytest.approx((1 - math.exp(-1)) * ss, rel=1e-14)
    assert rel(cavity_amp_x(1.0, reference), FIG2_AX) < 0.02


def test_lossy_amplitude_uses_absorption(reference):
    d = derive_couplings(reference)
    lossy_ss = 2 * math.sqrt(reference.kappa1 * reference.photon_flux) / (reference.kappa + d.epsilon)
    assert cavity_amp_x(1.0, reference, lossy=True) == pytest.approx(lossy_ss, rel=1e-12)


def test_negative_time_rejected(reference):
    with pytest.raises(InvalidParameterError):
        cavity_amp_x(-1e-9, reference)


def test_alpha_values(reference):
    assert alpha_of_t(0.0, reference) == 0.0
    d = derive_couplings(reference)
    assert alpha_of_t(1.0, reference) == pytest.approx(d.alpha_steady, rel=1e-14)


def test_alpha_vanishes_for_overdamped_cavity():
    values = [derive_couplings(reference_params(kappa1=k)).alpha_steady for k in (1e7, 1e9, 1e11, 1e13)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-6 * values[0]


def test_buildup_monotone_and_converged(reference):
    k = reference.kappa
    t = np.linspace(0, 40 / k, 2001)
    ax, al = cavity_amp_x(t, reference), alpha_of_t(t, reference)
    assert np.all(np.diff(ax) >= 0) and np.all(np.diff(al) >= 0)
    d = derive_couplings(reference)
    assert rel(ax[-1], d.ax_steady) < 1e-6
    assert rel(al[-1], d.alpha_steady) < 1e-6


def test_effective_probe_time_limits():
    kappa = 3.0
    assert effective_probe_time(0.0, kappa) == 0.0
    t = 1e3 / kappa
    assert effective_probe_time(t, kappa) == pytest.approx(t - 11 / (2 * kappa), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(kt=st.floats(1e-6, 60.0))
def test_effective_probe_time_is_integral_of_alpha_squared(kt):
    from scipy.integrate import quad
    from scipy.special import gammainc

    # gammainc(2, x) = 1 - (1 + x) exp(-x) without the cancellation at small x
    kappa = 1.0
    expected, _ = quad(lambda s: gammainc(2, s / 2) ** 2, 0, kt, epsabs=0, epsrel=1e-12)
    assert effective_probe_time(kt, kappa) == pytest.approx(expected, rel=1e-10, abs=1e-300)


def test_tabulated_step_matches_closed_form(reference):
    k = reference.kappa
    table = ((0.0, 1e-3), (reference.photon_flux, reference.photon_flux))
    tab = reference.replace(flux_table=table)
    t = np.array([1 / k, 5 / k, 30 / k])
    np.testing.assert_allclose(cavity_amp_x(t, tab), cavity_amp_x(t, reference), rtol=1e-5)
    np.testing.assert_allclose(alpha_of_t(t, tab), alpha_of_t(t, reference), rtol=1e-5)
    assert alpha_sq_integral(0.0, 30 / k, tab) == pytest.approx(alpha_sq_integral(0.0, 30 / k, reference), rel=1e-5)


def test_scaling_invariance(reference):
    f = 10.0
    scaled = reference.replace(photon_flux=reference.photon_flux * f, n_atoms=reference.n_atoms * f, beam_area=reference.beam_area * f)
    a, b = derive_couplings(reference), derive_couplings(scaled)
    for name in ("g_tilde_steady", "eta_steady", "epsilon"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    n=st.floats(1e3, 1e14),
    phi=st.floats(1e8, 1e16),
    area=st.floats(1e-6, 1e-2),
    factor=st.floats(0.1, 100.0),
)
def test_scaling_invariance_property(n, phi, area, factor):
    p = reference_params(n_atoms=n, photon_flux=phi, beam_area=area)
    q = p.replace(n_atoms=n * factor, photon_flux=phi * factor, beam_area=area * factor)
    a, b = derive_couplings(p), derive_couplings(q)
    for name in ("g_tilde_steady", "eta_steady", "epsilon"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)


def test_dimensionless_products_positive(reference):
    d = derive_couplings(reference)
    for x in (d.g_tilde_steady * reference.round_trip_time, d.kappa * reference.round_trip_time,
              d.epsilon * reference.round_trip_time):
        assert 0 < x < 1
