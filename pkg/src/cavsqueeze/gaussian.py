"""Gaussian description of the atoms and the y-polarized cavity mode.

The state is the quadrature mean ``(x_at, p_at, x_ph, p_ph)`` and the
covariance matrix ``V`` normalized so that vacuum and the coherent spin state
have ``V = I`` (``V = 2 Cov``; ``Delta p_at = sqrt(V22 / 2)``).  ``V`` obeys the
deterministic matrix Riccati equation ``dV/dt = G - D V - V E - V F V``; only
the mean is driven by the measurement.

With ``lossy=True`` spontaneous emission is included: the x field decays at
``kappa + epsilon``, ``<J_x>`` decays at ``eta(t)`` and the covariances
``V12, V13, V24, V34`` are projected to zero after every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from . import params as _params
from .errors import DecompositionError, IntegrationError, NumericalInstabilityError
from .exact_dicke import SpinMoments
from .params import PhysicalParams
from .series import UncertaintySeries
from .stochastic import MeasurementRecord, NoiseStream, TimeGrid, rk4_step
from . import singlepass as _singlepass

__all__ = [
    "CovarianceState",
    "RiccatiMatrices",
    "MinimumPrediction",
    "initial_state",
    "riccati_matrices",
    "step_covariance",
    "step_mean",
    "innovation",
    "propagate",
    "propagate_conditional",
    "default_schedule",
    "solve_mk",
    "closed_form_variances",
    "closed_form_diagonal",
    "predicted_min_uncertainty",
    "equivalent_atom_number",
    "conditional_mean_ensemble",
]

log = logging.getLogger(__name__)

ASYMMETRY_TOL = 1e-10
NEG_EIG_TOL = -1e-9
_ZEROED = ((0, 1), (0, 2), (1, 3), (2, 3))


@dataclass
class CovarianceState:
    mean: np.ndarray
    v: np.ndarray
    jx: float
    t: float = 0.0


@dataclass
class RiccatiMatrices:
    g_mat: np.ndarray
    d_mat: np.ndarray
    e_mat: np.ndarray
    f_mat: np.ndarray


def initial_state(p: PhysicalParams) -> CovarianceState:
    """Coherent spin state along x with the y mode in vacuum."""
    return CovarianceState(mean=np.zeros(4), v=np.eye(4), jx=p.n_atoms / 2, t=0.0)


class _Flow:
    """Time-dependent Riccati coefficients for one parameter set.

    ``steady=True`` freezes the x field at its lossless steady amplitude.
    """

    def __init__(self, p, lossy, steady=False):
        self.p = p
        self.lossy = lossy
        self.steady = steady
        g = _params.single_photon_coupling(p)
        self.coupling = 2 * g**2 / p.detuning / math.sqrt(2)
        self.scatter = _params.scattering_factor(p) if lossy else 0.0
        self.eps = _params.photon_absorption_rate(p) if lossy else 0.0
        self.kappa = p.kappa + self.eps
        self.rate = p.measurement_rate
        self.n_atoms = p.n_atoms
        self.fast_step = p.flux_table is None and not steady
        if self.fast_step:
            self.ax_inf = 2 * math.sqrt(p.kappa1 * p.photon_flux) / self.kappa
        self.ax_steady = _params.derive_couplings(p).ax_steady

    def ax(self, t):
        if self.steady:
            return self.ax_steady
        if self.fast_step:
            return -self.ax_inf * math.expm1(-0.5 * self.kappa * t)
        return _params.cavity_amp_x(t, self.p, lossy=self.lossy)

    def coefficients(self, t, jx):
        ax = self.ax(t)
        eta = ax * ax * self.scatter
        g_tilde = self.coupling * math.sqrt(max(jx, 0.0)) * ax
        return ax, eta, g_tilde

    def matrices(self, t, jx):
        _, eta, gt = self.coefficients(t, jx)
        k = self.kappa
        r = self.rate
        src = (self.n_atoms / jx) * eta if self.lossy else 0.0
        g_mat = np.diag([src, (2.0 / 3.0) * src, k - r, k])
        d_mat = np.array(
            [
                [eta / 2, 0.0, 0.0, -gt],
                [0.0, eta / 6, 0.0, 0.0],
                [0.0, -gt, k / 2 - r, 0.0],
                [0.0, 0.0, 0.0, k / 2],
            ]
        )
        f_mat = np.zeros((4, 4))
        f_mat[2, 2] = r
        return RiccatiMatrices(g_mat, d_mat, d_mat.T.copy(), f_mat)

    def rhs(self, t, y):
        """Flattened derivative of ``(V, jx)``."""
        v = y[:16].reshape(4, 4)
        jx = y[16]
        _, eta, gt = self.coefficients(t, jx)
        k, r = self.kappa, self.rate
        src = (self.n_atoms / jx) * eta if self.lossy else 0.0
        d = np.array(
            [
                [eta / 2, 0.0, 0.0, -gt],
                [0.0, eta / 6, 0.0, 0.0],
                [0.0, -gt, k / 2 - r, 0.0],
                [0.0, 0.0, 0.0, k / 2],
            ]
        )
        dv = d @ v
        out = np.empty(17)
        dvdt = -dv - dv.T - r * np.outer(v[:, 2], v[2, :])
        dvdt[0, 0] += src
        dvdt[1, 1] += (2.0 / 3.0) * src
        dvdt[2, 2] += k - r
        dvdt[3, 3] += k
        out[:16] = dvdt.ravel()
        out[16] = -eta * jx
        return out

    def drift_matrix(self, t, jx):
        """Mean-vector drift ``-(D + F)``."""
        m = self.matrices(t, jx)
        return -(m.d_mat + m.f_mat)


def riccati_matrices(p: PhysicalParams, t: float, lossy: bool = False, jx: Optional[float] = None,
                     steady: bool = False) -> RiccatiMatrices:
    """``G, D, E = D^T, F`` at time ``t`` for spin length ``jx = <J_x>/hbar``.

    ``jx`` defaults to the undecayed ``N/2``.
    """
    if jx is None:
        jx = p.n_atoms / 2
    if lossy and not jx > 0:
        raise ValueError("lossy coefficients need jx > 0")
    return _Flow(p, lossy, steady).matrices(t, jx)


def _pack(state):
    return np.concatenate([state.v.ravel(), [state.jx]])


def _project(v, lossy, step=None):
    asym = np.max(np.abs(v - v.T))
    if asym > ASYMMETRY_TOL * max(1.0, np.max(np.abs(v))):
        log.debug("covariance asymmetry %.3g before projection", asym)
    v = 0.5 * (v + v.T)
    if lossy:
        for i, j in _ZEROED:
            v[i, j] = v[j, i] = 0.0
    return v


def _check_pd(v, t, step=None):
    w = np.linalg.eigvalsh(v)
    if w[0] < NEG_EIG_TOL:
        raise NumericalInstabilityError(
            f"covariance lost positive definiteness at t={t:.6g}: min eigenvalue {w[0]:.3g}, "
            f"diag={np.diag(v)}",
            step=step,
        )


def _advance_cov(flow, t, y, dt, step=None):
    y = rk4_step(flow.rhs, t, y, dt)
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite covariance at t={t + dt:.6g}", step=step)
    v = _project(y[:16].reshape(4, 4), flow.lossy, step)
    y[:16] = v.ravel()
    return y


def step_covariance(state: CovarianceState, p: PhysicalParams, dt: float, lossy: bool = False,
                    steady: bool = False) -> CovarianceState:
    """Advance ``V`` and ``<J_x>`` by one RK4 step; the mean is left unchanged."""
    flow = _Flow(p, lossy, steady)
    y = _advance_cov(flow, state.t, _pack(state), dt)
    v = y[:16].reshape(4, 4).copy()
    _check_pd(v, state.t + dt)
    return replace(state, v=v, jx=float(y[16]), t=state.t + dt)


def step_mean(state: CovarianceState, dw: float, p: PhysicalParams, dt: float, lossy: bool = False,
              steady: bool = False) -> CovarianceState:
    """Euler-Maruyama step of the conditional mean with innovation ``dw``."""
    flow = _Flow(p, lossy, steady)
    return replace(state, mean=_mean_step(flow, state, dw, dt))


def _mean_step(flow, state, dw, dt):
    a = flow.drift_matrix(state.t, state.jx)
    kick = math.sqrt(flow.rate / 2) * (state.v[:, 2] - np.eye(4)[:, 2])
    return state.mean + a @ state.mean * dt + kick * dw


def innovation(state: CovarianceState, dy: float, p: PhysicalParams, dt: float) -> float:
    """Wiener increment implied by a recorded ``dy_s = sqrt(2 eta_d kappa_det) <x_ph> dt + dW``."""
    return dy - math.sqrt(2 * p.measurement_rate) * state.mean[2] * dt


def default_schedule(p: PhysicalParams, t_end: float, lossy: bool = False,
                     steady: bool = False) -> Sequence[TimeGrid]:
    """Two-stage step policy: ``0.1/kappa`` through the build-up, coarser afterwards.

    The build-up lasts ``40/kappa``.  Afterwards the step is the smaller of
    ``1/kappa`` and a tenth of the current squeezing time ``1/(2 N eta_d kappa_det alpha^2 V22)``
    evaluated with the undecayed coupling at ``V22 = 1/(1 + 40 N eta_d kappa_det alpha^2/kappa)``.
    """
    k = p.kappa + (_params.photon_absorption_rate(p) if lossy else 0.0)
    t_switch = 0.0 if steady else min(t_end, 40.0 / k)
    grids = []
    if t_switch > 0:
        grids.append(TimeGrid.span(0.0, t_switch, 0.1 / k))
    if t_end > t_switch:
        d = _params.derive_couplings(p)
        sq_rate = p.n_atoms * p.measurement_rate * d.alpha_steady**2
        v22 = 1.0 / (1.0 + sq_rate * max(t_switch, 0.0))
        dt = min(1.0 / k, 0.1 / max(2 * sq_rate * v22, 1e-300))
        grids.append(TimeGrid.span(t_switch, t_end, dt))
    return grids


def propagate(p: PhysicalParams, t_end: float, lossy: bool = False, steady: bool = False,
              schedule: Optional[Sequence[TimeGrid]] = None, record_every: int = 1,
              keep_full: bool = False, source: str = "") -> UncertaintySeries:
    """Integrate the Riccati flow from the coherent initial state to ``t_end``."""
    flow = _Flow(p, lossy, steady)
    grids = schedule if schedule is not None else default_schedule(p, t_end, lossy, steady)
    state = initial_state(p)
    y = _pack(state)
    ts, vs, jxs = [0.0], [state.v.copy()], [state.jx]
    step = 0
    for grid in grids:
        for k in range(grid.n_steps):
            t = grid.t0 + k * grid.dt
            y = _advance_cov(flow, t, y, grid.dt, step)
            step += 1
            last = k == grid.n_steps - 1
            if step % record_every == 0 or last:
                v = y[:16].reshape(4, 4)
                if v[1, 1] <= 0 or v[0, 0] <= 0:
                    _check_pd(v, t + grid.dt, step)
                ts.append(grid.t0 + (k + 1) * grid.dt)
                vs.append(v.copy())
                jxs.append(y[16])
    for v, t in zip(vs[:: max(1, len(vs) // 64)], ts[:: max(1, len(vs) // 64)]):
        _check_pd(v, t)
    _check_pd(vs[-1], ts[-1])
    ts = np.array(ts)
    vs = np.array(vs)
    jxs = np.array(jxs)
    coeff = np.array([flow.coefficients(t, j) for t, j in zip(ts, jxs)])
    return UncertaintySeries(
        t=ts,
        v_diag=np.diagonal(vs, axis1=1, axis2=2).copy(),
        jx=jxs,
        g_tilde=coeff[:, 2],
        eta=coeff[:, 1],
        source=source,
        v_full=vs if keep_full else None,
    )


def propagate_conditional(p: PhysicalParams, grid: TimeGrid, stream: Optional[NoiseStream] = None,
                          record: Optional[MeasurementRecord] = None, lossy: bool = False,
                          steady: bool = False):
    """Joint mean and covariance propagation along one measurement record.

    Either draws innovations from ``stream`` or converts the increments of a
    supplied ``record`` into innovations.  Returns ``(times, means, states_v, record)``.
    """
    if (stream is None) == (record is None):
        raise ValueError("pass exactly one of stream or record")
    flow = _Flow(p, lossy, steady)
    state = initial_state(p)
    y = _pack(state)
    means = np.empty((grid.n_steps + 1, 4))
    vs = np.empty((grid.n_steps + 1, 4, 4))
    means[0], vs[0] = state.mean, state.v
    dys = np.empty(grid.n_steps)
    dws = np.empty(grid.n_steps)
    for k in range(grid.n_steps):
        t = grid.t0 + k * grid.dt
        state.t = t
        if record is not None:
            dy = record.dy[k]
            dw = innovation(state, dy, p, grid.dt)
        else:
            dw = stream.wiener_increment(grid.dt)
            dy = math.sqrt(2 * p.measurement_rate) * state.mean[2] * grid.dt + dw
        dys[k], dws[k] = dy, dw
        new_mean = _mean_step(flow, state, dw, grid.dt)
        y = _advance_cov(flow, t, y, grid.dt, k)
        state.mean = new_mean
        state.v = y[:16].reshape(4, 4).copy()
        state.jx = float(y[16])
        means[k + 1], vs[k + 1] = state.mean, state.v
    return grid.times, means, vs, MeasurementRecord(grid.times[:-1], dys, dws)


def solve_mk(p: PhysicalParams, t, max_chunk: float = 1.0):
    """Covariance from the linear ``V = M K^-1`` decomposition at constant coupling.

    ``[M; K]`` is propagated exactly with the matrix exponential of the
    constant 8x8 generator ``[[-D, G], [F, E]]``; the pair is reset to
    ``(M K^-1, I)`` every ``max_chunk / kappa`` to keep ``K`` well conditioned.
    Accepts a scalar or an increasing array of times.
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and increasing")
    m = riccati_matrices(p, 0.0, lossy=False, steady=True)
    gen = np.block([[-m.d_mat, m.g_mat], [m.f_mat, m.e_mat]])
    h_max = max_chunk / p.kappa
    v = np.eye(4)
    now = 0.0
    out = []
    for target in times:
        while now < target:
            h = min(h_max, target - now)
            mk = expm(gen * h) @ np.vstack([v, np.eye(4)])
            k_mat = mk[4:]
            if np.linalg.cond(k_mat) > 1e12:
                raise DecompositionError(f"K became singular at t={now + h:.6g}")
            v = np.linalg.solve(k_mat.T, mk[:4].T).T
            now += h
        out.append(v.copy())
    out = np.array(out)
    return out[0] if np.ndim(t) == 0 else out


def closed_form_variances(p: PhysicalParams, t) -> SpinMoments:
    """Lossless variances for the step drive, including the build-up correction.

    Means are stochastic and reported as zero.
    """
    d = _params.derive_couplings(p)
    n = p.n_atoms
    i2 = d.alpha_steady**2 * _params.effective_probe_time(t, p.kappa)
    alpha = _params.alpha_of_t(t, p)
    s = n * p.measurement_rate * i2
    half = n / 2
    var_jz = half * 0.5 / (1 + s)
    var_jy = half * 0.5 * (1 + n * p.kappa * i2 + n * alpha**2)
    var_xph = 0.5 * (1 + n * alpha**2 + s) / (1 + s)
    zero = 0.0 * var_jz
    return SpinMoments(
        mean_jz=zero,
        var_jz=var_jz,
        mean_jy=zero,
        var_jy=var_jy,
        mean_xph=zero,
        mean_pph=zero,
        var_xph=var_xph,
        var_pph=zero + 0.5,
    )


def closed_form_diagonal(p: PhysicalParams, t):
    """Closed-form ``(V11, V22, V33, V44)`` in the ``V = I`` vacuum normalization."""
    m = closed_form_variances(p, t)
    half = p.n_atoms / 2
    return np.stack(
        np.broadcast_arrays(2 * m.var_jy / half, 2 * m.var_jz / half, 2 * m.var_xph, 2 * m.var_pph),
        axis=-1,
    )


class MinimumPrediction(NamedTuple):
    cavity: float
    singlepass: float
    finite: bool


def cavity_reduction_factor(p: PhysicalParams) -> float:
    """``((kappa + epsilon)^2 tau / (4 kappa_det))^(1/4)``."""
    k = p.kappa + _params.photon_absorption_rate(p)
    return (k**2 * p.round_trip_time / (4 * p.kappa_det)) ** 0.25


def predicted_min_uncertainty(p: PhysicalParams) -> MinimumPrediction:
    """Analytic single-pass minimum and its cavity rescaling.

    ``finite`` is False when there is no spontaneous emission; the minimum is
    then approached only as ``t -> infinity`` and both values are 0.
    """
    sp, finite = _singlepass.singlepass_min(p)
    if not finite:
        return MinimumPrediction(0.0, 0.0, False)
    return MinimumPrediction(sp * cavity_reduction_factor(p), sp, True)


def equivalent_atom_number(p: PhysicalParams, iterations: int = 50) -> float:
    """Cavity atom number whose predicted minimum equals the single-pass minimum of ``p``.

    Solves ``N_cav = N (kappa + epsilon(N_cav))^2 tau / (4 kappa_det)`` by
    fixed-point iteration; absorption grows with the atom number, so the
    reduction factor is evaluated at ``N_cav`` rather than at ``N``.
    """
    n_cav = p.n_atoms
    for _ in range(iterations):
        new = p.n_atoms * cavity_reduction_factor(p.replace(n_atoms=n_cav)) ** 4
        if abs(new - n_cav) <= 1e-14 * n_cav:
            break
        n_cav = new
    return new


def conditional_mean_ensemble(p: PhysicalParams, grid: TimeGrid, seed: int, n_records: int,
                              lossy: bool = False, steady: bool = False):
    """Conditional means for many records at once.

    The covariance does not depend on the record, so it is integrated once and
    the Euler-Maruyama mean update is vectorized over records, record ``j``
    drawing from ``NoiseStream(seed, j)``.

    Returns ``(times, means, vs)`` with ``means`` of shape ``(n_records, n_steps + 1, 4)``.
    """
    flow = _Flow(p, lossy, steady)
    dws = np.stack([NoiseStream(seed, j).increments(grid.dt, grid.n_steps) for j in range(n_records)])
    y = _pack(initial_state(p))
    mean = np.zeros((n_records, 4))
    means = np.empty((n_records, grid.n_steps + 1, 4))
    vs = np.empty((grid.n_steps + 1, 4, 4))
    means[:, 0] = mean
    vs[0] = np.eye(4)
    scale = math.sqrt(flow.rate / 2)
    for k in range(grid.n_steps):
        t = grid.t0 + k * grid.dt
        v = y[:16].reshape(4, 4)
        a = flow.drift_matrix(t, y[16])
        kick = scale * (v[:, 2] - np.eye(4)[:, 2])
        mean = mean + grid.dt * mean @ a.T + np.outer(dws[:, k], kick)
        y = _advance_cov(flow, t, y, grid.dt, k)
        means[:, k + 1] = mean
        vs[k + 1] = y[:16].reshape(4, 4)
    return grid.times, means, vs
