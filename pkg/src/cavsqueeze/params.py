"""Physical configuration and derived couplings.

All quantities are SI; angular frequencies and rates are in rad/s or 1/s.
The probe flux is a step (zero for ``t < 0``, ``photon_flux`` afterwards)
unless a tabulated profile is supplied, in which case the drive integrals are
evaluated by trapezoid quadrature with a step no larger than the cavity round
trip time.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import constants
from scipy.signal import lfilter
from scipy.special import gammainc

from .errors import InvalidParameterError

__all__ = [
    "DetectionPort",
    "PhysicalParams",
    "DerivedCouplings",
    "reference_params",
    "derive_couplings",
    "q_factor",
    "cavity_amp_x",
    "alpha_of_t",
    "alpha_sq_integral",
    "effective_probe_time",
    "scattering_factor",
]


class DetectionPort(str, enum.Enum):
    TRANSMISSION = "transmission"
    REFLECTION = "reflection"


@dataclass(frozen=True)
class PhysicalParams:
    """Experimental configuration of the atoms, cavity and probe.

    ``flux_table`` optionally replaces the step profile by a piecewise-linear
    flux given as ``((t_0, ..., t_k), (phi_0, ..., phi_k))``.  The flux is
    zero before ``t_0`` and held at ``phi_k`` after ``t_k``.

    ``mode_volume_factor`` scales the mode volume ``V = factor * A * c * tau``;
    the default of 1 is the ring-cavity convention.
    """

    n_atoms: float
    photon_flux: float
    beam_area: float
    round_trip_time: float
    detuning: float
    wavelength: float
    spont_rate: float
    dipole_moment: float
    kappa1: float
    kappa2: float = 0.0
    kappa_loss: float = 0.0
    detector_efficiency: float = 1.0
    detection_port: DetectionPort = DetectionPort.TRANSMISSION
    mode_volume_factor: float = 1.0
    flux_table: Optional[tuple] = None

    def __post_init__(self):
        port = DetectionPort(self.detection_port)
        object.__setattr__(self, "detection_port", port)
        if self.flux_table is not None:
            times, values = self.flux_table
            times = tuple(float(x) for x in times)
            values = tuple(float(x) for x in values)
            if len(times) != len(values) or len(times) < 2:
                raise InvalidParameterError("flux_table needs matching time/value columns of length >= 2")
            if any(b <= a for a, b in zip(times, times[1:])) or times[0] < 0:
                raise InvalidParameterError("flux_table times must be increasing and non-negative")
            if min(values) < 0:
                raise InvalidParameterError("flux_table values must be non-negative")
            object.__setattr__(self, "flux_table", (times, values))
        self.validate()

    def validate(self):
        if not self.n_atoms >= 1:
            raise InvalidParameterError(f"n_atoms must be >= 1, got {self.n_atoms}")
        for name in ("beam_area", "round_trip_time", "wavelength", "mode_volume_factor"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value}")
        for name in ("photon_flux", "spont_rate", "dipole_moment", "kappa1", "kappa2", "kappa_loss"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameterError(f"{name} must be >= 0, got {value}")
        if self.detuning == 0 or not math.isfinite(self.detuning):
            raise InvalidParameterError("detuning must be finite and non-zero")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise InvalidParameterError("detector_efficiency must lie in [0, 1]")
        if self.kappa <= 0:
            raise InvalidParameterError("total cavity decay rate must be positive")

    @property
    def kappa(self):
        """Total cavity field decay rate for the configured detection port."""
        if self.detection_port is DetectionPort.REFLECTION:
            return self.kappa1 + self.kappa_loss
        return self.kappa1 + self.kappa2 + self.kappa_loss

    @property
    def kappa_det(self):
        """Decay rate through the mirror whose output is detected."""
        if self.detection_port is DetectionPort.REFLECTION:
            return self.kappa1
        return self.kappa2

    @property
    def measurement_rate(self):
        """``eta_d * kappa_det``."""
        return self.detector_efficiency * self.kappa_det

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def flux(self, t):
        """Photon flux at time ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        if self.flux_table is None:
            out = np.where(t >= 0, self.photon_flux, 0.0)
        else:
            times, values = self.flux_table
            out = np.interp(t, times, values, left=0.0, right=values[-1])
            out = np.where(t >= times[0], out, 0.0)
        return out if out.ndim else float(out)


def reference_params(**overrides):
    """Reference parameter set: cesium D2 line, reflection port, no intracavity loss."""
    base = dict(
        n_atoms=1e12,
        photon_flux=1e14,
        beam_area=2e-4,
        round_trip_time=3e-10,
        detuning=2 * math.pi * 1e10,
        wavelength=852e-9,
        spont_rate=3.1e7,
        dipole_moment=2.61e-29,
        kappa1=2 * math.pi * 3e6,
        kappa2=0.0,
        kappa_loss=0.0,
        detector_efficiency=1.0,
        detection_port=DetectionPort.REFLECTION,
    )
    base.update(overrides)
    return PhysicalParams(**base)


@dataclass(frozen=True)
class DerivedCouplings:
    omega: float
    mode_volume: float
    g: float
    kappa: float
    kappa_det: float
    epsilon: float
    ax_steady: float
    alpha_steady: float
    g_tilde_steady: float
    eta_steady: float
    q_factor: float


def _mode_volume(p):
    return p.mode_volume_factor * p.beam_area * constants.c * p.round_trip_time


def single_photon_coupling(p):
    """Single-photon Rabi coupling ``g = d E0 / hbar`` in 1/s."""
    omega = 2 * math.pi * constants.c / p.wavelength
    e0 = math.sqrt(constants.hbar * omega / (_mode_volume(p) * constants.epsilon_0))
    return p.dipole_moment * e0 / constants.hbar


def scattering_factor(p):
    """``(Gamma/2) g^2 / (Delta^2 + Gamma^2/4)``: spontaneous scattering per photon."""
    g = single_photon_coupling(p)
    return 0.5 * p.spont_rate * g**2 / (p.detuning**2 + 0.25 * p.spont_rate**2)


def photon_absorption_rate(p):
    """Intracavity photon absorption rate epsilon."""
    return p.n_atoms * scattering_factor(p)


def derive_couplings(p: PhysicalParams) -> DerivedCouplings:
    """Evaluate every derived rate and steady-state amplitude.

    Steady quantities refer to the lossless build-up ``<a_x> = 2 sqrt(kappa1 Phi)/kappa``
    and an undecayed spin ``<J_x>/hbar = N/2``.
    """
    p.validate()
    g = single_photon_coupling(p)
    kappa = p.kappa
    ax = 2 * math.sqrt(p.kappa1 * p.photon_flux) / kappa
    alpha = 2 * g**2 * ax / (kappa * p.detuning)
    g_tilde = (2 * g**2 / p.detuning) * math.sqrt(p.n_atoms / 2) * ax / math.sqrt(2)
    return DerivedCouplings(
        omega=2 * math.pi * constants.c / p.wavelength,
        mode_volume=_mode_volume(p),
        g=g,
        kappa=kappa,
        kappa_det=p.kappa_det,
        epsilon=photon_absorption_rate(p),
        ax_steady=ax,
        alpha_steady=alpha,
        g_tilde_steady=g_tilde,
        eta_steady=ax**2 * scattering_factor(p),
        q_factor=q_factor(p),
    )


def q_factor(p: PhysicalParams) -> float:
    """Cavity enhancement ``16 kappa1 kappa_det / (kappa^4 tau^2)`` of the squeezing rate."""
    return 16 * p.kappa1 * p.kappa_det / (p.kappa**4 * p.round_trip_time**2)


def _decay_rate(p, lossy):
    return p.kappa + photon_absorption_rate(p) if lossy else p.kappa


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise InvalidParameterError("time must be finite and >= 0")
    return t


def _as_output(x):
    x = np.asarray(x)
    return x if x.ndim else float(x)


def cavity_amp_x(t, p: PhysicalParams, lossy: bool = False):
    """Classical x-polarized intracavity amplitude ``<a_x(t)>``.

    With ``lossy=True`` the field decays at ``kappa + epsilon`` to include
    absorption by the atoms.
    """
    t = _check_time(t)
    if p.flux_table is not None:
        return _as_output(_tabulated_drive(p, lossy).ax(t))
    rate = _decay_rate(p, lossy)
    steady = 2 * math.sqrt(p.kappa1 * p.photon_flux) / rate
    return _as_output(steady * -np.expm1(-0.5 * rate * t))


def alpha_of_t(t, p: PhysicalParams):
    """Per-eigenstate y-mode amplitude ``alpha(t)`` (``alpha_n = n alpha``)."""
    t = _check_time(t)
    if p.flux_table is not None:
        return _as_output(_tabulated_drive(p, False).alpha(t))
    k = p.kappa
    chi = single_photon_coupling(p) ** 2 / p.detuning
    ax_inf = 2 * math.sqrt(p.kappa1 * p.photon_flux) / k
    return _as_output(chi * ax_inf * (2 / k) * _buildup(0.5 * k * t))


def effective_probe_time(t, kappa):
    """Probe time reduced by the cavity build-up, ``int_0^t alpha^2 / alpha_ss^2``."""
    t = np.asarray(t, dtype=float)
    kt = kappa * t
    closed = (
        t
        - 11 / (2 * kappa)
        + (2 * kt + 8) / kappa * np.exp(-kt / 2)
        - (kt**2 + 6 * kt + 10) / (4 * kappa) * np.exp(-kt)
    )
    # the closed form cancels catastrophically for small kt; the integrand is
    # smooth there, so fixed Gauss-Legendre quadrature is exact to rounding
    nodes, weights = np.polynomial.legendre.leggauss(24)
    kt_small = np.minimum(kt, 4.0)[..., None]
    x = 0.25 * kt_small * (nodes + 1)
    quad = 0.25 * kt_small[..., 0] / kappa * 2 * np.sum(weights * _buildup(x) ** 2, axis=-1)
    return _as_output(np.where(kt < 4.0, quad, closed))


def _buildup(x):
    """``1 - (1 + x) exp(-x)``: normalized y-mode build-up at ``x = kappa t / 2``."""
    return gammainc(2.0, x)


def alpha_sq_integral(t0, t1, p: PhysicalParams):
    """``int_{t0}^{t1} alpha(t')^2 dt'`` for the configured flux profile."""
    if t1 < t0:
        raise InvalidParameterError("integration bounds out of order")
    if p.flux_table is not None:
        mid = 0.5 * (t0 + t1)
        a0, am, a1 = alpha_of_t(np.array([t0, mid, t1]), p)
        return (t1 - t0) * (a0**2 + 4 * am**2 + a1**2) / 6
    alpha_ss = derive_couplings(p).alpha_steady
    return alpha_ss**2 * (effective_probe_time(t1, p.kappa) - effective_probe_time(t0, p.kappa))


class _TabulatedDrive:
    """Drive amplitudes for a tabulated flux, by trapezoid convolution.

    Both ``<a_x>`` and ``alpha`` obey ``y' = -(rate/2) y + source`` with a
    piecewise-smooth source; the trapezoid rule for the convolution is the
    recursion ``y[k+1] = r y[k] + (h/2)(r s[k] + s[k+1])`` with ``r = exp(-rate h/2)``.
    Past the last table entry the flux is constant and the exact solution is
    continued analytically.
    """

    def __init__(self, p, lossy):
        times, _ = p.flux_table
        self.rate = _decay_rate(p, lossy)
        self.chi = single_photon_coupling(p) ** 2 / p.detuning
        t_end = times[-1]
        n = max(2, int(math.ceil(t_end / p.round_trip_time)) + 1)
        self.grid = np.linspace(0.0, t_end, n)
        h = self.grid[1] - self.grid[0]
        r = math.exp(-0.5 * self.rate * h)
        source = math.sqrt(p.kappa1) * np.sqrt(p.flux(self.grid))
        # lfilter convolves the sequence with the kernel; shift so y[0] = 0
        self.ax_grid = _trap_conv(source, r, h)
        self.alpha_grid = _trap_conv(self.chi * self.ax_grid, r, h)
        self.t_end = t_end
        self.ax_inf = 2 * math.sqrt(p.kappa1 * p.flux(t_end)) / self.rate
        self.alpha_inf = 2 * self.chi * self.ax_inf / self.rate

    def ax(self, t):
        inside = np.interp(t, self.grid, self.ax_grid)
        s = np.maximum(t - self.t_end, 0.0)
        decay = np.exp(-0.5 * self.rate * s)
        outside = self.ax_inf + (self.ax_grid[-1] - self.ax_inf) * decay
        return np.where(t <= self.t_end, inside, outside)

    def alpha(self, t):
        inside = np.interp(t, self.grid, self.alpha_grid)
        s = np.maximum(t - self.t_end, 0.0)
        decay = np.exp(-0.5 * self.rate * s)
        outside = (
            self.alpha_inf
            + (self.alpha_grid[-1] - self.alpha_inf) * decay
            + self.chi * (self.ax_grid[-1] - self.ax_inf) * s * decay
        )
        return np.where(t <= self.t_end, inside, outside)


def _trap_conv(source, r, h):
    """Trapezoid approximation of ``int_0^t exp(-rate (t-t')/2) source(t') dt'`` on a grid."""
    out = lfilter([0.5 * h, 0.5 * h * r], [1.0, -r], source)
    # lfilter's first output already includes h/2 * s[0]; remove it so y(0) = 0
    out -= 0.5 * h * source[0] * r ** np.arange(len(source))
    return out


@lru_cache(maxsize=16)
def _tabulated_drive(p, lossy):
    return _TabulatedDrive(p, lossy)
