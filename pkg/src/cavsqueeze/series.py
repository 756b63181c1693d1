"""Uncertainty time series shared by the cavity and single-pass solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .io import write_table

CSV_COLUMNS = ("t", "V11", "V22", "V33", "V44", "dx_at", "dp_at", "jx", "g_tilde", "eta")


@dataclass
class UncertaintySeries:
    """Diagonal covariance entries (``V = 2 Cov``, vacuum ``V_ii = 1``) on a time grid.

    Entries a solver does not model are NaN.
    """

    t: np.ndarray
    v_diag: np.ndarray  # shape (n, 4)
    jx: np.ndarray
    g_tilde: np.ndarray
    eta: np.ndarray
    source: str = ""
    v_full: Optional[np.ndarray] = None

    @property
    def dp_at(self):
        return np.sqrt(self.v_diag[:, 1] / 2)

    @property
    def dx_at(self):
        return np.sqrt(self.v_diag[:, 0] / 2)

    def minimum(self):
        """``(dp_at_min, t_min)``, refined by a parabola through the three lowest samples."""
        y = self.dp_at
        k = int(np.nanargmin(y))
        if 0 < k < len(y) - 1:
            t3, y3 = self.t[k - 1 : k + 2], y[k - 1 : k + 2]
            c = np.polyfit(t3 - t3[1], y3, 2)
            if c[0] > 0:
                s = -c[1] / (2 * c[0])
                if abs(s) <= t3[2] - t3[1]:
                    return float(np.polyval(c, s)), float(t3[1] + s)
        return float(y[k]), float(self.t[k])

    def rows(self):
        dx, dp = self.dx_at, self.dp_at
        for k in range(len(self.t)):
            yield (self.t[k], *self.v_diag[k], dx[k], dp[k], self.jx[k], self.g_tilde[k], self.eta[k])

    def to_csv(self, path, header_lines: Sequence[str] = (), fmt: str = "csv"):
        rows = ((*row, self.source) for row in self.rows())
        return write_table(path, CSV_COLUMNS + ("source",), rows, header_lines, fmt)
