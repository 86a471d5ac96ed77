"""Residual bootstrap for VAR fits and block-permutation KS tests between epoch classes."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .connectivity import CANONICAL_BANDS, FrequencyGrid, band_pdc
from .errors import DegenerateLabels, EmptySample, InsufficientReplicates, SparseVarError
from .estimators import FitResult, build_problem, fit
from .model import propagate

logger = logging.getLogger(__name__)


@dataclass
class BootstrapEnsemble:
    draws: np.ndarray                    # (B, d, P, P)
    pdc_draws: Optional[np.ndarray] = None  # (B, n_bands, P, P)
    bands: Optional[list] = None
    failed: list = field(default_factory=list)
    seed: Optional[int] = None
    level: float = 0.95

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    def quantiles(self, level: Optional[float] = None):
        return empirical_ci(self.draws, level or self.level)

    def rows(self):
        B, d, P, _ = self.draws.shape
        for b in range(B):
            for lag in range(d):
                for u in range(P):
                    for v in range(P):
                        yield {"replicate": b, "lag": lag + 1, "receiver": u, "sender": v,
                               "value": float(self.draws[b, lag, u, v])}


def _replicate(series: np.ndarray, res: FitResult, rng: np.random.Generator, **fit_kw) -> FitResult:
    d = res.d
    R = res.residuals
    T = series.shape[1]
    eps = np.zeros((series.shape[0], T))
    eps[:, d:] = R[rng.integers(0, R.shape[0], size=T - d)].T
    trial = propagate(res.phi_hat, eps, series[:, :d])
    return fit(build_problem(trial, d), res.method, res.lam, **fit_kw)


def bootstrap(series, res: FitResult, B: int = 1000, seed: int = 0, grid: Optional[FrequencyGrid] = None,
              bands=CANONICAL_BANDS, threads: int = 1, **fit_kw) -> BootstrapEnsemble:
    """Residual bootstrap of a single-epoch fit.

    Each replicate keeps the first d observations, draws T - d residuals with
    replacement, runs the fitted recursion and refits with the original
    method, d and lambda.  Replicate b uses its own generator spawned from
    ``seed``, so results do not depend on ``threads``.  Failed replicates
    are recorded in ``failed`` and left as NaN.
    """
    if B < 1:
        raise InsufficientReplicates("B must be at least 1")
    x = np.asarray(series, dtype=float)
    if res.residuals.shape[0] != x.shape[1] - res.d:
        raise EmptySample("fit residuals do not match the series length")
    streams = np.random.SeedSequence(seed).spawn(B)
    d, P = res.d, res.P
    draws = np.full((B, d, P, P), np.nan)
    pdc_draws = None if grid is None else np.full((B, len(bands), P, P), np.nan)
    failed = []

    def one(b):
        try:
            rep = _replicate(x, res, np.random.default_rng(streams[b]), **fit_kw)
        except SparseVarError as exc:
            return b, None, exc
        return b, rep, None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(one, range(B)))
    else:
        outcomes = [one(b) for b in range(B)]
    for b, rep, exc in outcomes:
        if rep is None:
            logger.warning("bootstrap replicate %d failed: %s", b, exc)
            failed.append({"replicate": b, "error": f"{type(exc).__name__}: {exc}"})
            continue
        draws[b] = rep.phi_hat
        if grid is not None:
            pdc_draws[b] = band_pdc(rep, grid, bands).values
    return BootstrapEnsemble(draws, pdc_draws, None if grid is None else [b.name for b in bands],
                             failed, seed)


def empirical_ci(draws, level: float = 0.95):
    """Nearest-rank percentile interval and median per entry.

    Returns (lower, median, upper); the lower bound is the ceil(B (1-level)/2)-th
    order statistic.  Failed (NaN) replicates are ignored.
    """
    if isinstance(draws, BootstrapEnsemble):
        draws = draws.draws
    draws = np.asarray(draws, dtype=float)
    ok = ~np.isnan(draws.reshape(draws.shape[0], -1)).any(axis=1)
    draws = draws[ok]
    B = draws.shape[0]
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    need = int(np.ceil(2.0 / (1.0 - level) - 1e-9))
    if B < need:
        raise InsufficientReplicates(f"{B} replicates; a {level:.0%} interval needs at least {need}")
    alpha = (1.0 - level) / 2
    # nearest rank k = ceil(B p); the guard absorbs rounding in B p (e.g. 40 * 0.025)
    ranks = [max(int(np.ceil(B * p - 1e-9)), 1) - 1 for p in (alpha, 0.5, 1.0 - alpha)]
    s = np.sort(draws, axis=0)
    return s[ranks[0]], s[ranks[1]], s[ranks[2]]


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| for the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS statistic needs two nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _ks_many(values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """KS statistic between values[mask] and values[~mask] for each row of ``masks``."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    m = masks[:, order]
    ends = np.append(v[1:] != v[:-1], True)  # evaluate the ECDFs after each run of ties
    na = m.sum(axis=1, keepdims=True)
    nb = m.shape[1] - na
    ca = np.cumsum(m, axis=1)[:, ends]
    cb = np.arange(1, v.size + 1)[ends][None, :] - ca
    return np.max(np.abs(ca / na - cb / nb), axis=1)


def block_groups(n: int, group_size: int) -> np.ndarray:
    """(n_groups, group_size) epoch indices of consecutive blocks.

    A short final block is padded by cycling through its own epochs.
    """
    if group_size < 1:
        raise ValueError("group_size must be positive")
    n_groups = -(-n // group_size)
    idx = np.arange(n_groups * group_size)
    last_start = (n_groups - 1) * group_size
    tail = n - last_start
    pad = idx >= n
    idx[pad] = last_start + (idx[pad] - last_start) % tail
    return idx.reshape(n_groups, group_size)


@dataclass
class KsTestResult:
    statistic: float
    p_value: float
    n_perm: int
    group_size: int
    n_groups: int
    n_a: int
    n_b: int
    smoothed: bool = False
    label: Optional[str] = None

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n_perm": self.n_perm,
                "group_size": self.group_size, "n_groups": self.n_groups,
                "n_a": self.n_a, "n_b": self.n_b, "smoothed": self.smoothed, "label": self.label}


def block_permutation_test(values, labels: Sequence, positive=None, group_size: int = 5,
                           n_perm: int = 10_000, seed: int = 0, smoothed: bool = False):
    """KS test between two epoch classes with a block-permutation null.

    ``values`` is (n_epochs,) or (n_epochs, k) in temporal order; a 2-D input
    gives one result per column, all sharing the same permutations.
    ``positive`` names the class treated as the minority ("OutSeq"); by
    default the less frequent label.  Each permutation marks
    ceil(n_positive / group_size) random blocks as the pseudo-positive class
    and compares them against the remaining blocks.  The p-value is the
    fraction of permuted statistics >= the observed one, or
    (count + 1) / (n_perm + 1) when ``smoothed``.
    """
    vals = np.asarray(values, dtype=float)
    single = vals.ndim == 1
    if single:
        vals = vals[:, None]
    labels = np.asarray(labels)
    n = vals.shape[0]
    if labels.shape[0] != n:
        raise DegenerateLabels("need one label per epoch")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size != 2:
        raise DegenerateLabels(f"need exactly two label classes, got {classes.tolist()}")
    if positive is None:
        positive = classes[np.argmin(counts)]
    is_pos = labels == positive
    n_pos = int(is_pos.sum())
    if n_pos == 0 or n_pos == n:
        raise DegenerateLabels("one label class is empty")

    groups = block_groups(n, group_size)
    n_groups = groups.shape[0]
    n_sel = -(-n_pos // group_size)
    if n_sel >= n_groups:
        raise DegenerateLabels("positive class would take every block")
    rng = np.random.default_rng(seed)
    picks = np.argsort(rng.random((n_perm, n_groups)), axis=1)[:, :n_sel]
    block_masks = np.zeros((n_perm, n_groups), dtype=bool)
    np.put_along_axis(block_masks, picks, True, axis=1)
    masks = np.repeat(block_masks, group_size, axis=1)  # over padded epoch positions
    flat = groups.ravel()

    out = []
    for j in range(vals.shape[1]):
        col = vals[:, j]
        observed = ks_statistic(col[is_pos], col[~is_pos])
        perm = _ks_many(col[flat], masks)
        count = int(np.sum(perm >= observed - 1e-12))
        p = (count + 1) / (n_perm + 1) if smoothed else count / n_perm
        out.append(KsTestResult(observed, p, n_perm, group_size, n_groups, n_pos, n - n_pos, smoothed,
                                str(positive)))
    return out[0] if single else out
