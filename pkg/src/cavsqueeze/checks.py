"""Scalar consistency checks of a parameter set against reference values."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from . import params as _params
from .gaussian import predicted_min_uncertainty
from .params import PhysicalParams


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    target: float
    rel_tol: float

    @property
    def rel_error(self):
        return abs(self.value - self.target) / abs(self.target)

    @property
    def passed(self):
        return self.rel_error <= self.rel_tol

    def as_dict(self):
        out = asdict(self)
        out.update(rel_error=self.rel_error, passed=self.passed)
        return out


# (name, target, relative tolerance); the one-significant-figure references get 10%
REFERENCE_VALUES = (
    ("g_tilde_tau", 2e-3, 0.10),
    ("kappa_tau", 6e-3, 0.10),
    ("photons_per_round_trip", 3e4, 1e-12),
    ("cavity_amp_x", 4.6e3, 0.02),
    ("conditioning_time", 2.7e4, 0.05),
    ("spin_decay_time", 0.13, 0.05),
    ("q_factor", 5e5, 0.05),
    ("singlepass_min_predicted", 0.118, 0.01),
    ("cavity_min_predicted", 0.0230, 0.01),
)


def scalar_values(p: PhysicalParams) -> dict:
    """Derived scalars in the units used for the reference values."""
    d = _params.derive_couplings(p)
    pred = predicted_min_uncertainty(p)
    return {
        "g_tilde_tau": d.g_tilde_steady * p.round_trip_time,
        "kappa_tau": d.kappa * p.round_trip_time,
        "photons_per_round_trip": p.photon_flux * p.round_trip_time,
        "cavity_amp_x": d.ax_steady,
        # single-atom time scale on which the measurement resolves J_z
        "conditioning_time": 1.0 / (4 * p.measurement_rate * d.alpha_steady**2),
        "spin_decay_time": 1.0 / d.eta_steady if d.eta_steady > 0 else float("inf"),
        "q_factor": d.q_factor,
        "singlepass_min_predicted": pred.singlepass,
        "cavity_min_predicted": pred.cavity,
    }


def scalar_checks(p: PhysicalParams) -> list[CheckResult]:
    values = scalar_values(p)
    return [CheckResult(name, values[name], target, tol) for name, target, tol in REFERENCE_VALUES]
