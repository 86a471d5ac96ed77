"""Frequency-domain dependence measures for a fitted or true VAR model.

Frequencies are in Hz; a sampling rate ``fs`` maps them to cycles/sample as
``f / fs``.  PDC matrices are indexed ``[receiver, sender]``, so entry (u, v)
is the flow v -> u and every column sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (EmptyBand, InvalidSpec, NonStationaryModel, SingularSpectrum, SingularTransfer,
                     ZeroAutoSpectrum, ZeroColumn)
from .model import check_stationarity


def _phi(model) -> np.ndarray:
    phi = getattr(model, "phi", None)
    if phi is None:
        phi = getattr(model, "phi_hat", model)
    phi = np.asarray(phi, dtype=float)
    return phi[None] if phi.ndim == 2 else phi


@dataclass
class FrequencyGrid:
    sampling_rate: float
    frequencies: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if self.sampling_rate <= 0:
            raise InvalidSpec("sampling rate must be positive")
        if f.size == 0 or f.min() < 0 or f.max() > self.sampling_rate / 2 + 1e-12:
            raise InvalidSpec("frequencies must lie in [0, fs/2]")
        if np.any(np.diff(f) <= 0):
            raise InvalidSpec("frequencies must be strictly increasing")
        self.frequencies = f

    @classmethod
    def regular(cls, sampling_rate: float = 1000.0, resolution: float = 1.0) -> "FrequencyGrid":
        n = int(np.floor(sampling_rate / 2 / resolution + 1e-9))
        return cls(sampling_rate, resolution * np.arange(n + 1))

    @property
    def resolution(self) -> float:
        f = self.frequencies
        return float(f[1] - f[0]) if f.size > 1 else 0.0

    def __len__(self):
        return self.frequencies.size


@dataclass(frozen=True)
class Band:
    name: str
    lo: float
    hi: float
    closed: bool = False  # include hi (used for the top band)

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise InvalidSpec(f"band {self.name}: need 0 <= lo < hi")

    def mask(self, frequencies: np.ndarray) -> np.ndarray:
        f = np.asarray(frequencies)
        upper = f <= self.hi if self.closed else f < self.hi
        return (f >= self.lo) & upper


CANONICAL_BANDS = (
    Band("delta", 0.0, 4.0),
    Band("theta", 4.0, 8.0),
    Band("alpha", 8.0, 12.0),
    Band("beta", 12.0, 32.0),
    Band("gamma", 32.0, 50.0, closed=True),
)


def bands_by_name(names: Sequence[str]) -> list:
    lookup = {b.name: b for b in CANONICAL_BANDS}
    try:
        return [lookup[n] for n in names]
    except KeyError as exc:
        raise InvalidSpec(f"unknown band {exc.args[0]!r}") from None


def transfer_function(model, grid: FrequencyGrid) -> np.ndarray:
    """A(f) = I - sum_l phi_l exp(-2 pi i f l / fs), shape (F, P, P)."""
    phi = _phi(model)
    d, P, _ = phi.shape
    lags = np.arange(1, d + 1)
    z = np.exp(-2j * np.pi * np.outer(grid.frequencies / grid.sampling_rate, lags))  # (F, d)
    return np.eye(P)[None] - np.einsum("fl,luv->fuv", z, phi)


@dataclass
class SpectralMatrix:
    values: np.ndarray  # (F, P, P) complex Hermitian
    frequencies: np.ndarray
    metadata: dict = field(default_factory=dict)


def spectral_density(model, grid: FrequencyGrid, scale: float = 1.0) -> SpectralMatrix:
    """f(w) = scale * A(w)^-1 Sigma A(w)^-H for a stationary model."""
    if check_stationarity(model) >= 1.0:
        raise NonStationaryModel("spectral density needs a stationary model")
    A = transfer_function(model, grid)
    if np.any(np.linalg.cond(A) > 1e12):
        raise SingularTransfer("transfer function is numerically singular")
    H = np.linalg.inv(A)
    f = scale * H @ np.asarray(model.sigma, dtype=float) @ np.conj(np.swapaxes(H, 1, 2))
    f = (f + np.conj(np.swapaxes(f, 1, 2))) / 2
    return SpectralMatrix(f, grid.frequencies.copy(), {"scale": scale, "sampling_rate": grid.sampling_rate})


def _values(f):
    return f.values if isinstance(f, SpectralMatrix) else np.asarray(f)


def coherency(f, u: int, v: int):
    """f_uv / sqrt(f_uu f_vv) at every frequency of ``f``."""
    f = _values(f)
    fuu, fvv = f[..., u, u].real, f[..., v, v].real
    if np.any(fuu <= 0) or np.any(fvv <= 0):
        raise ZeroAutoSpectrum(f"auto-spectrum of channel {u} or {v} is not positive")
    return f[..., u, v] / np.sqrt(fuu * fvv)


def coherence(f, u: int, v: int):
    return np.abs(coherency(f, u, v)) ** 2


def partial_coherence_matrix(f) -> np.ndarray:
    """|C|^2 with C = -h g h, g = f^-1, h = diag(g_pp^-1/2)."""
    f = _values(f)
    if np.any(np.linalg.cond(f) > 1e12):
        raise SingularSpectrum("spectral matrix is numerically singular")
    g = np.linalg.inv(f)
    h = 1.0 / np.sqrt(np.diagonal(g, axis1=-2, axis2=-1).real)
    C = -h[..., :, None] * g * h[..., None, :]
    return np.abs(C) ** 2


def partial_coherence(f, u: int, v: int):
    return partial_coherence_matrix(f)[..., u, v]


@dataclass
class PdcMatrix:
    """PDC values, shape (n_index, P, P); ``index`` holds frequencies or band names."""

    values: np.ndarray
    index: list
    channel_names: Optional[list] = None

    def rows(self):
        P = self.values.shape[1]
        names = self.channel_names or list(range(P))
        for i, key in enumerate(self.index):
            for u in range(P):
                for v in range(P):
                    yield {"freq_or_band": key, "receiver": names[u], "sender": names[v],
                           "value": float(self.values[i, u, v])}

    def to_dict(self) -> dict:
        return {"orientation": "receiver_row_sender_column", "index": list(self.index),
                "channel_names": self.channel_names, "values": self.values.tolist()}


def pdc(model, grid: FrequencyGrid) -> PdcMatrix:
    """pi^2_uv(w) = |A_uv(w)|^2 / sum_m |A_mv(w)|^2."""
    power = np.abs(transfer_function(model, grid)) ** 2
    colsum = power.sum(axis=1, keepdims=True)
    if np.any(colsum == 0):
        raise ZeroColumn("transfer function has an all-zero column")
    return PdcMatrix(power / colsum, grid.frequencies.tolist())


def band_average(values: np.ndarray, frequencies, band: Band) -> np.ndarray:
    """Mean of per-frequency matrices over the grid points inside ``band``."""
    mask = band.mask(frequencies)
    if not mask.any():
        raise EmptyBand(f"no grid frequency falls in band {band.name} [{band.lo}, {band.hi})")
    return np.asarray(values)[mask].mean(axis=0)


def band_pdc(model, grid: FrequencyGrid, bands: Sequence[Band] = CANONICAL_BANDS) -> PdcMatrix:
    per_freq = pdc(model, grid)
    vals = np.stack([band_average(per_freq.values, grid.frequencies, b) for b in bands])
    return PdcMatrix(vals, [b.name for b in bands])
