"""End-to-end helpers: per-epoch fitting and method comparison against a known truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .estimators import FitResult, build_problem, cross_validate, fit, lambda_grid, select_lambda
from .io import RunConfig
from .preprocess import difference
from .selection import select_order


def fit_var(series, cfg: Optional[RunConfig] = None, d: Optional[int] = None, lam: Optional[float] = None,
            method: Optional[str] = None) -> FitResult:
    """Fit one epoch.

    Default flow: lag order by ``cfg.criterion`` over d_min..d_max from LSE
    fits, then lambda by K-fold CV of the LASSO at that order, then the
    requested estimator.  With ``cfg.cv_joint`` (d, lambda) are chosen
    together by CV.  Given ``d`` or ``lam`` skip the matching search.
    """
    cfg = cfg or RunConfig()
    method = method or cfg.estimator
    x = np.asarray(series, dtype=float)
    if cfg.difference:
        x = difference(x)
    info: dict = {}
    if cfg.cv_joint and method != "lse" and (d is None or lam is None):
        orders = [d] if d is not None else range(cfg.d_min, cfg.d_max + 1)
        cands = [(k, float(v)) for k in orders
                 for v in lambda_grid(build_problem(x, k), cfg.n_lambda, cfg.lambda_ratio)]
        cv = cross_validate(x, cands, K=cfg.cv_folds, seed=cfg.seed, rule=cfg.cv_rule,
                            folds=cfg.cv_fold_scheme, tol=cfg.tol, max_iter=cfg.max_iter)
        d, lam = cv.chosen
        info["cv"] = cv
    if d is None:
        report = select_order(x, range(cfg.d_min, cfg.d_max + 1))
        d = report.chosen[cfg.criterion]
        info["order"] = report
    if method != "lse" and lam is None:
        cv = select_lambda(x, d, K=cfg.cv_folds, seed=cfg.seed, n_lambda=cfg.n_lambda,
                           ratio=cfg.lambda_ratio, rule=cfg.cv_rule, folds=cfg.cv_fold_scheme,
                           tol=cfg.tol, max_iter=cfg.max_iter)
        lam = cv.chosen[1]
        info["cv"] = cv
    kw = {} if method == "lse" else {"tol": cfg.tol, "max_iter": cfg.max_iter}
    res = fit(build_problem(x, d), method, lam, **kw)
    res.info.update(info)
    return res


def squared_error(truth_phi: np.ndarray, est_phi: np.ndarray) -> float:
    """sum over lags and entries of (truth - estimate)^2; missing lags count as zero."""
    a, b = np.asarray(truth_phi, dtype=float), np.asarray(est_phi, dtype=float)
    d = max(a.shape[0], b.shape[0])
    pa = np.zeros((d,) + a.shape[1:])
    pb = np.zeros((d,) + b.shape[1:])
    pa[:a.shape[0]] = a
    pb[:b.shape[0]] = b
    return float(np.sum((pa - pb) ** 2))


def zero_specificity(truth_phi: np.ndarray, est_phi: np.ndarray) -> float:
    """Fraction of truly-zero coefficients estimated exactly zero."""
    zero = np.asarray(truth_phi) == 0
    if not zero.any():
        return 1.0
    return float(np.mean(np.asarray(est_phi)[zero] == 0))


@dataclass
class Comparison:
    methods: list
    errors: dict                    # method -> per-replicate squared error
    specificity: dict               # method -> per-replicate specificity
    abs_diff: dict                  # method -> mean |truth - estimate|, (d, P, P)
    lambdas: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    def mse(self, method: str) -> float:
        """Total squared error averaged over replicates."""
        return float(np.mean(self.errors[method]))

    def median(self, method: str) -> float:
        return float(np.median(self.errors[method]))

    def table(self):
        for m in self.methods:
            yield {"method": m, "mse": self.mse(m), "median_error": self.median(m),
                   "specificity": float(np.mean(self.specificity[m])), "replicates": len(self.errors[m])}


def compare_methods(replicates: Sequence[np.ndarray], truth, methods=("lse", "lasso", "lassle"),
                    cfg: Optional[RunConfig] = None, keep_fits: bool = False) -> Comparison:
    """Fit every replicate with each method at the true lag order.

    LASSO and LASSLE share the lambda chosen by CV on each replicate, so the
    LASSLE support is exactly the LASSO support.
    """
    cfg = cfg or RunConfig()
    d = truth.d
    errors = {m: [] for m in methods}
    spec = {m: [] for m in methods}
    absd = {m: np.zeros_like(truth.phi) for m in methods}
    fits = {m: [] for m in methods}
    lambdas = []
    for x in replicates:
        problem = build_problem(x, d)
        lam = None
        if any(m != "lse" for m in methods):
            lam = select_lambda(x, d, K=cfg.cv_folds, seed=cfg.seed, n_lambda=cfg.n_lambda,
                                ratio=cfg.lambda_ratio, rule=cfg.cv_rule, folds=cfg.cv_fold_scheme,
                                tol=cfg.tol, max_iter=cfg.max_iter).chosen[1]
        lambdas.append(lam)
        for m in methods:
            kw = {} if m == "lse" else {"tol": cfg.tol, "max_iter": cfg.max_iter}
            res = fit(problem, m, lam, **kw)
            errors[m].append(squared_error(truth.phi, res.phi_hat))
            spec[m].append(zero_specificity(truth.phi, res.phi_hat))
            absd[m] += np.abs(truth.phi - res.phi_hat)
            if keep_fits:
                fits[m].append(res)
    n = max(len(lambdas), 1)
    return Comparison(list(methods), errors, spec, {m: v / n for m, v in absd.items()}, lambdas,
                      fits if keep_fits else {})
