"""Exact conditional evolution in the symmetric Dicke subspace ``J = N/2``.

Given a classical x-polarized drive, the joint state of atoms and y mode stays
of the form ``sum_nm C_nm |n><m| (x) |n alpha><m alpha|``.  The coefficients
depend on the measurement record only through two running integrals,
``i1 = int alpha dy_s`` and ``i2 = int alpha^2 dt``, so :class:`DickeState`
keeps the initial log-coefficients and three scalar exponent accumulators
instead of rewriting an ``(N+1)^2`` matrix each step.  The current matrix is
materialized on demand; moments only need its diagonal and second
off-diagonal.

:func:`brute_force_evolve` integrates the linear stochastic master equation on
the truncated product space ``|n> (x) |Fock>`` directly.  It shares nothing
with the closed form except the parameters and the record and serves as its
oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from . import params as _params
from .errors import CapacityError, FockCutoffError, IntegrationError, InvalidParameterError
from .params import PhysicalParams
from .stochastic import MeasurementRecord, NoiseStream, TimeGrid

__all__ = [
    "DEFAULT_MAX_ATOMS",
    "DickeState",
    "SpinMoments",
    "BruteForceResult",
    "init_css",
    "advance",
    "sample_signal",
    "spin_moments",
    "signal_pdf",
    "run_trajectory",
    "ensemble_populations",
    "brute_force_evolve",
    "richardson",
]

DEFAULT_MAX_ATOMS = 4096
FOCK_LEAK_TOL = 1e-8


@dataclass
class SpinMoments:
    """First and second moments of the collective spin (units of hbar) and y-mode quadratures."""

    mean_jz: float
    var_jz: float
    mean_jy: float
    var_jy: float
    mean_xph: float
    mean_pph: float
    var_xph: float
    var_pph: float
    mean_jx: float = math.nan

    def scaled_var_jz(self, n_atoms):
        return self.var_jz / (n_atoms / 2)

    def scaled_var_jy(self, n_atoms):
        return self.var_jy / (n_atoms / 2)

    def heisenberg_product(self, n_atoms):
        """Product of scaled variances.

        Bounded below by ``(<J_x>/(N/2))^2 / 4``, which is 1/4 while the mean
        spin stays at its coherent-state length.
        """
        return self.scaled_var_jz(n_atoms) * self.scaled_var_jy(n_atoms)

    def uncertainty_margin(self):
        """``Var(J_z) Var(J_y) - <J_x>^2 / 4``; non-negative for any state."""
        return self.var_jz * self.var_jy - 0.25 * self.mean_jx**2


@dataclass
class DickeState:
    """Conditional joint state, single-owner and updated in place by :func:`advance`.

    ``steady=True`` means the drive is taken at its steady state from ``t = 0``:
    ``alpha(t) = alpha_ss`` and the y mode already holds ``|n alpha_ss>``.
    """

    n_atoms: int
    log_c0: np.ndarray
    t: float = 0.0
    alpha: float = 0.0
    ax: float = 0.0
    i1: float = 0.0
    i2: float = 0.0
    steady: bool = False
    # exponent = -dec (n-m)^2 + lin (n+m) - quad (n+m)^2
    dec: float = 0.0
    lin: float = 0.0
    quad: float = 0.0

    @property
    def ns(self):
        return np.arange(self.n_atoms + 1) - self.n_atoms / 2

    def _exponent(self, n, m):
        s = n + m
        return -self.dec * (n - m) ** 2 + self.lin * s - self.quad * s**2

    def log_diagonal(self):
        """Normalized ``log C_nn``."""
        ns = self.ns
        raw = np.diagonal(self.log_c0) + self._exponent(ns, ns)
        return raw - logsumexp(raw)

    def populations(self):
        return np.exp(self.log_diagonal())

    def log_offdiagonal(self, k):
        """Normalized ``log C_{n, n+k}`` for ``k >= 0``."""
        ns = self.ns
        norm = logsumexp(np.diagonal(self.log_c0) + self._exponent(ns, ns))
        n, m = ns[: len(ns) - k], ns[k:]
        return np.diagonal(self.log_c0, offset=k) + self._exponent(n, m) - norm

    @property
    def log_coeffs(self):
        """Full normalized log-coefficient matrix (``(N+1)^2`` memory)."""
        ns = self.ns
        raw = self.log_c0 + self._exponent(ns[:, None], ns[None, :])
        return raw - logsumexp(np.diagonal(raw))

    @property
    def coeffs(self):
        return np.exp(self.log_coeffs)

    def copy(self):
        clone = DickeState(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        clone.log_c0 = self.log_c0.copy()
        return clone

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n,C_nn\n")
            for n, c in zip(self.ns, self.populations()):
                fh.write(f"{n:.17g},{c:.17g}\n")

    def to_json(self, max_atoms=256):
        if self.n_atoms > max_atoms:
            raise CapacityError(f"full-matrix JSON export limited to n_atoms <= {max_atoms}")
        return json.dumps(
            {
                "n_atoms": self.n_atoms,
                "t": self.t,
                "alpha": self.alpha,
                "ax": self.ax,
                "i1": self.i1,
                "i2": self.i2,
                "n": self.ns.tolist(),
                "coeffs": self.coeffs.tolist(),
            }
        )


def _css_log_amplitudes(n_atoms):
    k = np.arange(n_atoms + 1)
    log_binom = gammaln(n_atoms + 1) - gammaln(k + 1) - gammaln(n_atoms - k + 1)
    return 0.5 * log_binom - 0.5 * n_atoms * math.log(2.0)


def init_css(n_atoms: int, p: Optional[PhysicalParams] = None, steady: bool = False,
             max_atoms: int = DEFAULT_MAX_ATOMS) -> DickeState:
    """Coherent spin state along x with the y mode in vacuum.

    With ``steady=True`` (requires ``p``) the cavity fields start at their
    steady amplitudes instead.
    """
    n_atoms = int(n_atoms)
    if n_atoms < 1:
        raise InvalidParameterError("n_atoms must be >= 1")
    if n_atoms > max_atoms:
        raise CapacityError(
            f"n_atoms={n_atoms} exceeds the dense Dicke cap of {max_atoms}; "
            "use the Gaussian covariance solver for large ensembles"
        )
    lb = _css_log_amplitudes(n_atoms)
    state = DickeState(n_atoms=n_atoms, log_c0=lb[:, None] + lb[None, :], steady=steady)
    if steady:
        if p is None:
            raise InvalidParameterError("steady initialization needs physical parameters")
        d = _params.derive_couplings(p)
        state.alpha, state.ax = d.alpha_steady, d.ax_steady
    return state


def _drive(p, t, steady):
    if steady:
        d = _params.derive_couplings(p)
        return d.alpha_steady, d.ax_steady
    return _params.alpha_of_t(t, p), _params.cavity_amp_x(t, p)


def advance(state: DickeState, dt: float, dy_s: float, p: PhysicalParams) -> DickeState:
    """Apply one measurement interval ``[t, t + dt]`` with signal increment ``dy_s``.

    The stochastic integral uses the left-point ``alpha(t)`` (Ito); the
    deterministic integral of ``alpha^2`` is exact for the step profile.
    Mutates and returns ``state``.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    if not math.isfinite(dy_s):
        raise InvalidParameterError(f"non-finite signal increment {dy_s!r}")
    t0, t1 = state.t, state.t + dt
    if state.steady:
        d_i2 = _params.derive_couplings(p).alpha_steady ** 2 * dt
    else:
        d_i2 = _params.alpha_sq_integral(t0, t1, p)
    d_i1 = state.alpha * dy_s
    rate = p.measurement_rate
    state.i1 += d_i1
    state.i2 += d_i2
    state.dec += 0.5 * p.kappa * d_i2
    state.lin += math.sqrt(rate) * d_i1
    state.quad += 0.5 * rate * d_i2
    state.t = t1
    state.alpha, state.ax = _drive(p, t1, state.steady)
    return state


def sample_signal(state: DickeState, dt: float, stream: NoiseStream, p: PhysicalParams) -> float:
    """Draw ``dy_s = 2 sqrt(eta_d kappa_det) alpha <n> dt + dW``."""
    mean_n = float(np.dot(state.ns, state.populations()))
    drift = 2 * math.sqrt(p.measurement_rate) * state.alpha * mean_n
    return drift * dt + stream.wiener_increment(dt)


def spin_moments(state: DickeState) -> SpinMoments:
    """Moments after tracing out the cavity field.

    Tracing out the y mode multiplies ``C_nm`` by the coherent-state overlap
    ``exp(-(n-m)^2 alpha^2 / 2)``; the x-mode overlap is 1 for a classical drive.
    """
    ns = state.ns
    pops = state.populations()
    mean_jz = float(np.dot(ns, pops))
    var_jz = float(np.dot(ns**2, pops) - mean_jz**2)

    j = state.n_atoms / 2
    jj = j * (j + 1)
    # <J_y^2> = (1/2)[sum_n C_nn (J(J+1) - n^2) - sum_n C_{n,n+2} <n+2|J_+^2|n>]
    diag_term = float(np.dot(pops, jj - ns**2))
    if state.n_atoms >= 2:
        n = ns[:-2]
        ladder = np.sqrt(np.maximum(jj - n * (n + 1), 0.0) * np.maximum(jj - (n + 1) * (n + 2), 0.0))
        c2 = np.exp(state.log_offdiagonal(2) - 2 * state.alpha**2)
        off_term = float(np.dot(c2, ladder))
    else:
        off_term = 0.0
    var_jy = 0.5 * (diag_term - off_term)
    n = ns[:-1]
    c1 = np.exp(state.log_offdiagonal(1) - 0.5 * state.alpha**2)
    mean_jx = float(np.dot(c1, np.sqrt(np.maximum(jj - n * (n + 1), 0.0))))

    # real symmetric coefficients: <J_y> and <p_ph> vanish identically
    alpha = state.alpha
    return SpinMoments(
        mean_jz=mean_jz,
        var_jz=var_jz,
        mean_jy=0.0,
        var_jy=var_jy,
        mean_xph=math.sqrt(2) * alpha * mean_jz,
        mean_pph=0.0,
        var_xph=0.5 + 2 * alpha**2 * var_jz,
        var_pph=0.5,
        mean_jx=mean_jx,
    )


def signal_pdf(state0: DickeState, p: PhysicalParams, t: float, y_s):
    """Density of the integrated signal ``Y_s`` after probing for ``t`` at steady drive.

    A mixture of unit-rate Gaussians centred on ``2 sqrt(eta_d kappa_det) n alpha t``
    weighted by the populations of ``state0``.
    """
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    alpha = _params.derive_couplings(p).alpha_steady
    y = np.asarray(y_s, dtype=float)
    centres = 2 * math.sqrt(p.measurement_rate) * state0.ns * alpha * t
    logw = state0.log_diagonal()
    z = -((y[..., None] - centres) ** 2) / (2 * t) + logw - 0.5 * math.log(2 * math.pi * t)
    out = np.exp(logsumexp(z, axis=-1))
    return out if out.ndim else float(out)


def run_trajectory(p: PhysicalParams, state: DickeState, grid: TimeGrid, stream: NoiseStream,
                   record: Optional[MeasurementRecord] = None):
    """Advance ``state`` over ``grid``, sampling the signal unless ``record`` is given.

    Returns ``(record, moments)`` where ``moments`` lists :class:`SpinMoments`
    at every grid time including the start.
    """
    moments = [spin_moments(state)]
    dys = np.empty(grid.n_steps)
    for k in range(grid.n_steps):
        if record is None:
            dy = sample_signal(state, grid.dt, stream, p)
        else:
            dy = record.dy[k]
        dys[k] = dy
        advance(state, grid.dt, dy, p)
        moments.append(spin_moments(state))
    return MeasurementRecord(grid.times[:-1], dys), moments


def ensemble_populations(p: PhysicalParams, n_atoms: int, grid: TimeGrid, seed: int,
                         n_trajectories: int, steady: bool = True):
    """Vectorized ensemble of trajectories, one noise stream per trajectory.

    Only the diagonal is tracked, which is all that ``<J_z>``, ``Var(J_z)``
    and the signal law depend on.

    Returns
    -------
    pops : ndarray, shape (n_trajectories, n_atoms + 1)
        Final normalized populations.
    mean_jz : ndarray, shape (n_trajectories, n_steps + 1)
    var_jz : ndarray, shape (n_trajectories, n_steps + 1)
    """
    state = init_css(n_atoms, p, steady=steady)
    ns = state.ns
    log_c0 = np.diagonal(state.log_c0)
    dws = np.stack([NoiseStream(seed, j).increments(grid.dt, grid.n_steps) for j in range(n_trajectories)])
    rate = p.measurement_rate
    lin = np.zeros(n_trajectories)
    quad = 0.0
    mean_hist = np.empty((n_trajectories, grid.n_steps + 1))
    var_hist = np.empty_like(mean_hist)
    times = grid.times

    def pops_now():
        raw = log_c0 + 2 * lin[:, None] * ns - 4 * quad * ns**2
        return np.exp(raw - logsumexp(raw, axis=1, keepdims=True))

    pops = pops_now()
    for k in range(grid.n_steps + 1):
        mean = pops @ ns
        mean_hist[:, k] = mean
        var_hist[:, k] = pops @ ns**2 - mean**2
        if k == grid.n_steps:
            break
        alpha, _ = _drive(p, times[k], steady)
        if steady:
            d_i2 = alpha**2 * grid.dt
        else:
            d_i2 = _params.alpha_sq_integral(times[k], times[k + 1], p)
        dy = 2 * math.sqrt(rate) * alpha * mean * grid.dt + dws[:, k]
        lin += math.sqrt(rate) * alpha * dy
        quad += 0.5 * rate * d_i2
        pops = pops_now()
    return pops, mean_hist, var_hist


@dataclass
class BruteForceResult:
    rho: np.ndarray
    moments: SpinMoments
    purity: float
    top_fock_population: float
    history: list = field(default_factory=list)


def _lowering(dim):
    return np.diag(np.sqrt(np.arange(1, dim)), 1)


def _coherent(amplitude, dim):
    """Fock amplitudes of the real coherent state ``|amplitude>``."""
    k = np.arange(dim)
    return np.exp(-0.5 * amplitude**2 - 0.5 * gammaln(k + 1)) * np.power(float(amplitude), k)


def _brute_moments(rho, n_atoms, fock):
    ns = np.arange(n_atoms + 1) - n_atoms / 2
    blocks = rho.reshape(n_atoms + 1, fock, n_atoms + 1, fock)
    rho_at = np.einsum("ikjk->ij", blocks)
    pops = np.diag(rho_at)
    mean_jz = float(pops @ ns)
    var_jz = float(pops @ ns**2 - mean_jz**2)
    j = n_atoms / 2
    raise_ = np.diag(np.sqrt(j * (j + 1) - ns[:-1] * (ns[:-1] + 1)), -1)  # <n+1|J_+|n>
    jy = (raise_ - raise_.T) / 2j
    mean_jy = float(np.real(np.trace(rho_at @ jy)))
    var_jy = float(np.real(np.trace(rho_at @ jy @ jy))) - mean_jy**2
    mean_jx = float(np.trace(rho_at @ (raise_ + raise_.T)) / 2)
    a = _lowering(fock)
    rho_f = np.einsum("ikil->kl", blocks)
    x = (a + a.T) / math.sqrt(2)
    p_op = (a - a.T) / (1j * math.sqrt(2))
    mean_x = float(np.trace(rho_f @ x))
    mean_p = float(np.real(np.trace(rho_f @ p_op)))
    return SpinMoments(
        mean_jz=mean_jz,
        var_jz=var_jz,
        mean_jy=mean_jy,
        var_jy=var_jy,
        mean_xph=mean_x,
        mean_pph=mean_p,
        var_xph=float(np.trace(rho_f @ x @ x)) - mean_x**2,
        var_pph=float(np.real(np.trace(rho_f @ p_op @ p_op))) - mean_p**2,
        mean_jx=mean_jx,
    )


def brute_force_evolve(n_atoms: int, fock_cutoff: int, p: PhysicalParams, record: MeasurementRecord,
                       steady: bool = True, keep_history: bool = False) -> BruteForceResult:
    """Integrate the linear stochastic master equation on ``|n> (x) |Fock>`` directly.

    The x mode is the classical amplitude ``<a_x(t)>``; the Hamiltonian is
    ``-i (g^2/Delta) <a_x> (a_y - a_y^+) J_z``.  Each step applies the
    measurement operator

        M = 1 + (-i H - kappa a^+ a / 2) dt + sqrt(r) a dy + (r/2) a^2 (dy^2 - dt)

    as ``rho -> M rho M^+ + (kappa - r) a rho a^+ dt`` with ``r = eta_d kappa_det``,
    then renormalizes the trace.  Expanded to first order this is the Euler
    step of the linear SME plus its second-order Ito correction (without that
    correction the strong error is ``O(sqrt(dt))`` and does not extrapolate);
    the sandwiched form keeps a pure state exactly pure when ``r = kappa``.

    Raises
    ------
    FockCutoffError
        If the top retained Fock level holds more than ``1e-8`` population.
    """
    if not 1 <= n_atoms <= 8:
        raise InvalidParameterError("brute-force oracle supports 1 <= n_atoms <= 8")
    dim = (n_atoms + 1) * fock_cutoff
    if dim > 2000:
        raise CapacityError(f"joint dimension {dim} too large for the brute-force oracle")

    ns = np.arange(n_atoms + 1) - n_atoms / 2
    a = np.kron(np.eye(n_atoms + 1), _lowering(fock_cutoff))
    ad = a.T
    n_op = ad @ a
    aa = a @ a
    jz = np.kron(np.diag(ns), np.eye(fock_cutoff))
    x_op = (a - ad) @ jz
    chi = _params.single_photon_coupling(p) ** 2 / p.detuning
    kappa = p.kappa
    rate = p.measurement_rate
    sr = math.sqrt(rate)

    lb = _css_log_amplitudes(n_atoms)
    d = _params.derive_couplings(p)
    field_amp = d.alpha_steady if steady else 0.0
    psi = np.concatenate([math.exp(lb[i]) * _coherent(ns[i] * field_amp, fock_cutoff) for i in range(n_atoms + 1)])
    rho = np.outer(psi, psi)
    rho /= np.trace(rho)

    dt = record.dt
    history = []
    top = slice(fock_cutoff - 1, None, fock_cutoff)
    eye = np.eye(dim)
    unobserved = kappa - rate
    for k, (t, dy) in enumerate(zip(record.t, record.dy)):
        rho_prev = rho
        ax = d.ax_steady if steady else _params.cavity_amp_x(t, p)
        m_op = eye + (-chi * ax * x_op - 0.5 * kappa * n_op) * dt + sr * dy * a + 0.5 * rate * (dy * dy - dt) * aa
        rho = m_op @ rho @ m_op.T
        if unobserved > 0:
            rho += unobserved * dt * (a @ rho_prev @ ad)
        rho = 0.5 * (rho + rho.T)
        tr = np.trace(rho)
        if not (np.isfinite(tr) and tr > 0):
            raise IntegrationError("brute-force trace became non-positive", step=k)
        rho /= tr
        leak = float(np.sum(np.diagonal(rho)[top]))
        if leak > FOCK_LEAK_TOL:
            raise FockCutoffError(f"top Fock level population {leak:.3g} exceeds {FOCK_LEAK_TOL:g}", step=k)
        if keep_history:
            history.append(_brute_moments(rho, n_atoms, fock_cutoff))
    leak = float(np.sum(np.diagonal(rho)[top]))
    return BruteForceResult(
        rho=rho,
        moments=_brute_moments(rho, n_atoms, fock_cutoff),
        purity=float(np.sum(rho * rho)),
        top_fock_population=leak,
        history=history,
    )


def richardson(fine, coarse, order=1):
    """Extrapolate two estimates at steps ``h`` and ``2h`` to ``h -> 0``."""
    w = 2.0**order
    return (w * np.asarray(fine) - np.asarray(coarse)) / (w - 1)
