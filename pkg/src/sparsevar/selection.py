"""Lag-order selection with AIC, BIC and HQC computed from least-squares fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidLag, ShapeMismatch, SingularSigma
from .estimators import build_problem, fit_lse

CRITERIA = ("aic", "bic", "hqc")


def compute_sse(series, phi_hat, d: int) -> np.ndarray:
    """Sum over t = d+1..T of r_t r_t' with r_t = X_t - sum_l phi_hat[l-1] X_{t-l}."""
    x = np.asarray(series, dtype=float)
    phi = np.asarray(phi_hat, dtype=float)
    if phi.ndim == 2:
        phi = phi[None]
    if x.ndim != 2 or phi.shape != (d, x.shape[0], x.shape[0]):
        raise ShapeMismatch(f"phi_hat shape {phi.shape} does not match d={d}, P={x.shape[0]}")
    T = x.shape[1]
    if T <= d:
        raise InvalidLag(f"series length {T} must exceed d={d}")
    r = x[:, d:].copy()
    for lag in range(1, d + 1):
        r -= phi[lag - 1] @ x[:, d - lag:T - lag]
    sse = r @ r.T
    return (sse + sse.T) / 2


def logdet_floored(sigma: np.ndarray) -> float:
    """log|sigma| with eigenvalues floored at 1e-12 * trace / P."""
    w = np.linalg.eigvalsh(sigma)
    tr = float(np.sum(w))
    if not np.isfinite(tr) or tr <= 0:
        raise SingularSigma("residual covariance has non-positive trace")
    floor = 1e-12 * tr / sigma.shape[0]
    return float(np.sum(np.log(np.maximum(w, floor))))


@dataclass
class OrderSelectionReport:
    candidates: np.ndarray
    sse: list
    sigma_hat: list
    logdet: np.ndarray
    aic: np.ndarray
    bic: np.ndarray
    hqc: np.ndarray
    T: int
    common_window: bool = False
    chosen: dict = field(default_factory=dict)

    def rows(self):
        for i, d in enumerate(self.candidates):
            yield {"d": int(d), "logdet_sigma": self.logdet[i], "aic": self.aic[i],
                   "bic": self.bic[i], "hqc": self.hqc[i]}

    def to_dict(self) -> dict:
        return {"T": self.T, "common_window": self.common_window,
                "chosen": {k: int(v) for k, v in self.chosen.items()},
                "table": list(self.rows())}


def _argmin_smallest(values: np.ndarray, candidates: np.ndarray) -> int:
    best = np.min(values)
    return int(np.min(candidates[values == best]))


def select_order(series, candidates: Iterable[int] = range(1, 13), common_window: bool = False
                 ) -> OrderSelectionReport:
    """Fit LSE at each candidate order and score it.

    AIC = log|S| + 2 P^2 d / T, BIC = log|S| + log(T) P^2 d / T,
    HQC = log|S| + 2 log(log T) P^2 d / T, where S = SSE(d) / (T - d) is
    estimated on t = d+1..T.  With ``common_window`` every candidate uses the
    targets t = d_max+1..T instead (and divides by T - d_max).
    """
    x = np.asarray(series, dtype=float)
    P, T = x.shape
    cands = np.array(sorted(set(int(c) for c in candidates)))
    if cands.size == 0 or cands.min() < 1:
        raise InvalidLag("candidate orders must be positive")
    d_max = int(cands.max())
    if d_max >= T / 2:
        raise InvalidLag(f"largest candidate d={d_max} must be below T/2={T / 2}")
    sses, sigmas, logdets = [], [], []
    for d in cands:
        problem = build_problem(x, d)
        if common_window:
            problem = problem.subset(slice(0, T - d_max))
        res = fit_lse(problem).residuals
        sse = res.T @ res
        sse = (sse + sse.T) / 2
        sigma = sse / problem.m
        sses.append(sse)
        sigmas.append(sigma)
        logdets.append(logdet_floored(sigma))
    logdet = np.array(logdets)
    k = P ** 2 * cands / T
    aic = logdet + 2 * k
    bic = logdet + np.log(T) * k
    hqc = logdet + 2 * np.log(np.log(T)) * k
    chosen = {name: _argmin_smallest(vals, cands) for name, vals in zip(CRITERIA, (aic, bic, hqc))}
    return OrderSelectionReport(cands, sses, sigmas, logdet, aic, bic, hqc, T, common_window, chosen)
