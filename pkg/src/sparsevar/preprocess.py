"""Differencing and ACF/PACF diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalBreakdown, TooShort, ZeroVariance


def difference(series) -> np.ndarray:
    """First difference along the time (last) axis."""
    x = np.asarray(series, dtype=float)
    if x.shape[-1] < 2:
        raise TooShort("differencing needs at least two time points")
    return np.diff(x, axis=-1)


def acf(x, max_lag: int = 40) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag with the biased (1/T) autocovariance."""
    x = np.asarray(x, dtype=float).ravel()
    T = x.size
    if max_lag >= T:
        raise TooShort(f"max lag {max_lag} needs more than {T} samples")
    xc = x - x.mean()
    c0 = xc @ xc / T
    if c0 <= 0:
        raise ZeroVariance("series has zero variance")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = (xc[:-h] @ xc[h:]) / T / c0
    return out


def pacf(x, max_lag: int = 40) -> np.ndarray:
    """Partial autocorrelation at lags 1..max_lag via Durbin-Levinson on ``acf``."""
    r = acf(x, max_lag)
    out = np.empty(max_lag)
    phi = np.zeros(0)
    v = 1.0
    for h in range(1, max_lag + 1):
        if v <= 1e-14:
            raise NumericalBreakdown(f"Durbin-Levinson denominator vanished at lag {h}")
        k = (r[h] - phi @ r[h - 1:0:-1]) / v
        phi = np.append(phi - k * phi[::-1], k)
        v *= 1.0 - k * k
        out[h - 1] = k
    return out


def five_number(values: np.ndarray) -> np.ndarray:
    """Per-column (min, q1, median, q3, max) of a (n, L) array; shape (5, L)."""
    return np.quantile(np.asarray(values, dtype=float), [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)


@dataclass
class DiagnosticSeries:
    """ACF/PACF for one channel across epochs, plus boxplot summaries per lag."""

    channel: object
    acf: np.ndarray   # (n_epochs, L + 1)
    pacf: np.ndarray  # (n_epochs, L)
    differenced: bool = False

    @property
    def acf_summary(self) -> np.ndarray:
        return five_number(self.acf)

    @property
    def pacf_summary(self) -> np.ndarray:
        return five_number(self.pacf)

    def rows(self):
        L = self.pacf.shape[1]
        for e in range(self.acf.shape[0]):
            for lag in range(L + 1):
                yield {"epoch": e, "channel": self.channel, "lag": lag,
                       "acf": float(self.acf[e, lag]),
                       "pacf": float(self.pacf[e, lag - 1]) if lag else ""}

    def summary_rows(self):
        names = ("min", "q1", "median", "q3", "max")
        a, p = self.acf_summary, self.pacf_summary
        for lag in range(a.shape[1]):
            row = {"channel": self.channel, "lag": lag, "differenced": int(self.differenced)}
            row.update({f"acf_{n}": float(a[i, lag]) for i, n in enumerate(names)})
            row.update({f"pacf_{n}": (float(p[i, lag - 1]) if lag else "") for i, n in enumerate(names)})
            yield row


def diagnose(epochs, channel: int, max_lag: int = 40, differenced: bool = False,
             channel_name=None) -> DiagnosticSeries:
    """ACF/PACF of one channel in every epoch; differencing is applied per epoch."""
    rows_a, rows_p = [], []
    for ep in epochs:
        x = np.asarray(ep, dtype=float)[channel]
        if differenced:
            x = difference(x)
        rows_a.append(acf(x, max_lag))
        rows_p.append(pacf(x, max_lag))
    return DiagnosticSeries(channel if channel_name is None else channel_name,
                            np.array(rows_a), np.array(rows_p), differenced)
