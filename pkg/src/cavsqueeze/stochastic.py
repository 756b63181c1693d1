"""Seeded noise streams and fixed-step integrators.

Every random draw in the package goes through a :class:`NoiseStream`, so a
simulation is a pure function of its configuration and seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import IntegrationError, InvalidParameterError

__all__ = [
    "NoiseStream",
    "TimeGrid",
    "MeasurementRecord",
    "wiener_increment",
    "rk4_step",
    "integrate_ode",
    "integrate_sde",
]


class NoiseStream:
    """Gaussian white-noise source for one trajectory.

    Streams sharing a seed but differing in ``stream_id`` are statistically
    independent (numpy ``SeedSequence`` spawn keys). Draws are sequential, so
    ``increments(dt, n)`` returns exactly the values of ``n`` successive
    ``wiener_increment(dt)`` calls.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream_id,))
        self._rng = np.random.Generator(np.random.PCG64(seq))
        self.calls = 0

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id}, calls={self.calls})"

    def wiener_increment(self, dt: float) -> float:
        if not dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {dt}")
        self.calls += 1
        return math.sqrt(dt) * float(self._rng.standard_normal())

    def increments(self, dt: float, n: int) -> np.ndarray:
        if not dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {dt}")
        self.calls += n
        return math.sqrt(dt) * self._rng.standard_normal(n)


def wiener_increment(stream: NoiseStream, dt: float) -> float:
    """Draw one ``N(0, dt)`` increment from ``stream``."""
    return stream.wiener_increment(dt)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError("grid step must be positive")
        if self.n_steps < 0:
            raise InvalidParameterError("n_steps must be non-negative")

    @classmethod
    def span(cls, t0, t1, dt):
        """Grid covering ``[t0, t1]`` with step at most ``dt``."""
        if t1 < t0:
            raise InvalidParameterError("t1 must not precede t0")
        n = int(math.ceil((t1 - t0) / dt - 1e-9)) if t1 > t0 else 0
        return cls(t0, (t1 - t0) / n if n else dt, n)

    @property
    def t1(self):
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass
class MeasurementRecord:
    """Homodyne increments ``dy_s`` on a uniform grid.

    ``t[k]`` is the start of the interval over which ``dy[k]`` was collected.
    ``dw`` holds the underlying Wiener increments when they are known.
    """

    t: np.ndarray
    dy: np.ndarray
    dw: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.dy = np.asarray(self.dy, dtype=float)
        if self.dw is not None:
            self.dw = np.asarray(self.dw, dtype=float)
        if self.t.shape != self.dy.shape:
            raise InvalidParameterError("record times and increments differ in length")

    def __len__(self):
        return len(self.dy)

    @property
    def dt(self):
        if len(self.t) < 2:
            raise InvalidParameterError("record too short to infer its step")
        return float(self.t[1] - self.t[0])

    @property
    def integrated(self):
        """Integrated signal ``Y_s`` at the end of the record."""
        return float(np.sum(self.dy))

    def coarsen(self, factor: int) -> "MeasurementRecord":
        """Sum consecutive blocks of ``factor`` increments."""
        if factor < 1 or len(self) % factor:
            raise InvalidParameterError(f"cannot coarsen {len(self)} increments by {factor}")
        dw = None if self.dw is None else self.dw.reshape(-1, factor).sum(axis=1)
        return MeasurementRecord(self.t[::factor], self.dy.reshape(-1, factor).sum(axis=1), dw)

    def to_csv(self, path, header_lines: Sequence[str] = ()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "dy_s"])
            for t, dy in zip(self.t, self.dy):
                writer.writerow([f"{t:.17g}", f"{dy:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            rows = [line for line in fh if not line.startswith("#")]
        reader = csv.DictReader(rows)
        data = [(float(r["t"]), float(r["dy_s"])) for r in reader]
        t, dy = zip(*data) if data else ((), ())
        return cls(np.array(t), np.array(dy))


def _check_finite(y, step):
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite state or derivative", step=step)


def rk4_step(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_ode(f: Callable, y0, grid: TimeGrid):
    """Fixed-step RK4 integration.

    Returns
    -------
    times : ndarray, shape (n_steps + 1,)
    ys : ndarray, shape (n_steps + 1, *y0.shape)

    Raises
    ------
    IntegrationError
        If a derivative or state becomes non-finite; ``err.step`` is the
        offending step index.
    """
    y = np.array(y0, dtype=float)
    out = np.empty((grid.n_steps + 1,) + y.shape)
    out[0] = y
    t = grid.t0
    # overflow is reported through IntegrationError rather than a RuntimeWarning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.n_steps):
            y = rk4_step(f, t, y, grid.dt)
            _check_finite(y, k)
            t = grid.t0 + (k + 1) * grid.dt
            out[k + 1] = y
    return grid.times, out


def integrate_sde(
    drift: Callable,
    diffusion: Callable,
    y0,
    grid: TimeGrid,
    stream: Union[NoiseStream, Sequence[NoiseStream]],
    signal: Optional[Callable] = None,
):
    """Euler-Maruyama integration of ``dy = drift dt + diffusion dW`` with scalar noise.

    Passing a sequence of streams integrates an ensemble: ``y0`` then has a
    leading path axis, each path draws from its own stream, and ``drift``,
    ``diffusion`` must broadcast over that axis.

    ``signal(t, y)`` is the drift of the recorded homodyne current,
    ``dy_s = signal dt + dW``; without it the record holds ``dW`` itself.

    Returns ``(times, ys, record)``; for ensembles ``record`` is a list with
    one :class:`MeasurementRecord` per path.
    """
    ensemble = not isinstance(stream, NoiseStream)
    streams = list(stream) if ensemble else [stream]
    y = np.array(y0, dtype=float)
    if ensemble and y.shape[0] != len(streams):
        raise InvalidParameterError("ensemble y0 needs one row per stream")
    dws = np.stack([s.increments(grid.dt, grid.n_steps) for s in streams], axis=-1)
    out = np.empty((grid.n_steps + 1,) + y.shape)
    out[0] = y
    dys = np.empty_like(dws)
    times = grid.times
    for k in range(grid.n_steps):
        t = times[k]
        dw = dws[k] if ensemble else dws[k, 0]
        dy = dw if signal is None else signal(t, y) * grid.dt + dw
        dys[k] = dy
        shape = (-1,) + (1,) * (y.ndim - 1) if ensemble else ()
        y = y + drift(t, y) * grid.dt + diffusion(t, y) * np.reshape(dw, shape)
        _check_finite(y, k)
        out[k + 1] = y
    records = [MeasurementRecord(times[:-1], dys[:, j], dws[:, j]) for j in range(len(streams))]
    return times, out, records if ensemble else records[0]
