"""Free-space single-pass squeezing, the benchmark for the cavity.

Each segment of the probe beam (duration ``tau``) interacts once with the
ensemble, so the x amplitude seen by the atoms is ``sqrt(Phi tau)``.
Variances here use the convention ``Var(p_at) = 1/2`` for the coherent spin
state; :class:`~cavsqueeze.series.UncertaintySeries` output is converted to
the ``V = 2 Var`` normalization of :mod:`cavsqueeze.gaussian`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import params as _params
from .errors import IntegrationError
from .params import PhysicalParams
from .series import UncertaintySeries
from .stochastic import TimeGrid, integrate_ode

__all__ = [
    "SinglePassParams",
    "singlepass_variance",
    "singlepass_rate",
    "detected_photon_rate",
    "singlepass_decay_integrate",
    "singlepass_min",
    "singlepass_lossless_series",
    "default_grid",
]


CLASSICAL_FIELD_MIN = 100.0
HORIZON_DECAY_TIMES = 3.0


@dataclass(frozen=True)
class SinglePassParams:
    """Free-space probe: the cavity parameters without the mirrors."""

    n_atoms: float
    photon_flux: float
    round_trip_time: float
    detuning: float
    detector_efficiency: float
    g: float
    scatter: float

    @classmethod
    def from_physical(cls, p: PhysicalParams) -> "SinglePassParams":
        p.validate()
        sp = cls(
            n_atoms=p.n_atoms,
            photon_flux=p.photon_flux,
            round_trip_time=p.round_trip_time,
            detuning=p.detuning,
            detector_efficiency=p.detector_efficiency,
            g=_params.single_photon_coupling(p),
            scatter=_params.scattering_factor(p),
        )
        if sp.photons_per_segment < CLASSICAL_FIELD_MIN:
            warnings.warn(
                f"Phi*tau = {sp.photons_per_segment:.3g} photons per segment; "
                "the classical probe approximation needs Phi*tau >> 1",
                stacklevel=2,
            )
        return sp

    @property
    def photons_per_segment(self):
        return self.photon_flux * self.round_trip_time

    @property
    def squeezing_rate(self):
        """``N Phi g^4 tau^2 eta_d / Delta^2``, the coefficient of ``t`` in the lossless variance."""
        return (
            self.n_atoms * self.photon_flux * self.g**4 * self.round_trip_time**2
            * self.detector_efficiency / self.detuning**2
        )

    @property
    def decay_rate(self):
        """Spin decay rate ``eta`` for the single-pass field ``<a_x>^2 = Phi tau``."""
        return self.photons_per_segment * self.scatter


def _as_singlepass(p):
    return p if isinstance(p, SinglePassParams) else SinglePassParams.from_physical(p)


def singlepass_rate(p) -> float:
    return _as_singlepass(p).squeezing_rate


def singlepass_variance(p, t):
    """Lossless scaled variance ``1/2 (1 + c t)^-1`` and the cavity/single-pass rate ratio.

    Returns
    -------
    variance : float or ndarray
        ``Var(J_z)/(N/2)``.
    ratio : float
        Cavity squeezing-rate coefficient ``N eta_d kappa_det alpha_ss^2`` over
        the single-pass one; equals the cavity enhancement factor ``Q``.
        NaN when ``p`` carries no cavity.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    sp = _as_singlepass(p)
    var = 0.5 / (1 + sp.squeezing_rate * t)
    ratio = math.nan
    if isinstance(p, PhysicalParams):
        d = _params.derive_couplings(p)
        ratio = p.n_atoms * p.measurement_rate * d.alpha_steady**2 / sp.squeezing_rate
    return (var if var.ndim else float(var)), ratio


def detected_photon_rate(p, n: float) -> float:
    """y photons detected per unit time from Dicke eigenstate ``|n>``: ``n^2 g^4 tau^2 Phi eta_d / Delta^2``."""
    sp = _as_singlepass(p)
    return n**2 * sp.squeezing_rate / sp.n_atoms


def singlepass_decay_integrate(p, grid: TimeGrid) -> UncertaintySeries:
    """RK4 solution of the lossy single-pass variance equation.

    ``dVar/dt = -2 c Var^2 exp(-eta t) - eta Var / 3 + (2/3) eta exp(eta t)`` with
    ``Var(0) = 1/2``.  The grid is truncated at ``3/eta`` with a warning, beyond
    which the spin has decayed too far for the Gaussian treatment.
    """
    sp = _as_singlepass(p)
    c, eta = sp.squeezing_rate, sp.decay_rate
    if eta > 0 and grid.t1 > HORIZON_DECAY_TIMES / eta:
        horizon = HORIZON_DECAY_TIMES / eta
        warnings.warn(f"single-pass integration truncated at 3/eta = {horizon:.4g} s", stacklevel=2)
        grid = TimeGrid(grid.t0, grid.dt, int((horizon - grid.t0) // grid.dt))

    def rhs(t, y):
        decay = math.exp(-eta * t)
        return -2 * c * y * y * decay - eta * y / 3 + (2.0 / 3.0) * eta / decay

    try:
        times, ys = integrate_ode(rhs, np.array([0.5]), grid)
    except IntegrationError as exc:
        raise IntegrationError(f"single-pass variance diverged: {exc.detail}", step=exc.step) from exc
    var = ys[:, 0]
    if np.any(var <= 0):
        raise IntegrationError("single-pass variance became non-positive", step=int(np.argmax(var <= 0)))
    nan = np.full_like(var, np.nan)
    return UncertaintySeries(
        t=times,
        v_diag=np.column_stack([nan, 2 * var, nan, nan]),
        jx=0.5 * sp.n_atoms * np.exp(-eta * times),
        g_tilde=nan,
        eta=np.full_like(var, eta),
        source="singlepass",
    )


def singlepass_min(p):
    """Analytic lossy minimum ``(eta / (3 c))^(1/4)`` of ``Delta p_at``.

    Returns ``(value, finite)``; without spontaneous emission the uncertainty
    decreases for all time and ``(0.0, False)`` is returned.
    """
    sp = _as_singlepass(p)
    if sp.decay_rate == 0:
        return 0.0, False
    return (sp.decay_rate / (3 * sp.squeezing_rate)) ** 0.25, True


def singlepass_lossless_series(p, grid: TimeGrid) -> UncertaintySeries:
    """Closed-form lossless single-pass uncertainty on ``grid``."""
    sp = _as_singlepass(p)
    times = grid.times
    var = 0.5 / (1 + sp.squeezing_rate * times)
    nan = np.full_like(var, np.nan)
    return UncertaintySeries(
        t=times,
        v_diag=np.column_stack([nan, 2 * var, nan, nan]),
        jx=np.full_like(var, 0.5 * sp.n_atoms),
        g_tilde=nan,
        eta=np.zeros_like(var),
        source="singlepass_lossless",
    )


def default_grid(p, min_steps: int = 20000, max_steps: int = 2_000_000) -> TimeGrid:
    """Grid long enough to contain the lossy minimum.

    The span is ten times ``(c eta)^(-1/2)``, the scale on which squeezing and
    decay balance, capped at the ``3/eta`` horizon; the step resolves the
    initial squeezing rate ``2c``.
    """
    sp = _as_singlepass(p)
    c, eta = sp.squeezing_rate, sp.decay_rate
    if eta == 0:
        raise ValueError("no finite minimum without spontaneous emission")
    t_end = min(HORIZON_DECAY_TIMES / eta, 10.0 / math.sqrt(c * eta))
    n = int(min(max(min_steps, math.ceil(t_end * 20 * c)), max_steps))
    return TimeGrid.span(0.0, t_end, t_end / n)
