"""Least squares, LASSO by cyclical coordinate descent, K-fold CV and the two-step LASSLE fit.

All estimators work on the stacked regression form of a VAR(d)::

    Y (m x P) = X (m x q) B (q x P) + E,   m = T - d,  q = P d

where row i of Y is X_t' for t = T - i (descending time) and the matching row
of X is (X_{t-1}', ..., X_{t-d}').  Column k of B holds the coefficients of
response channel k, so ``phi[l][k, v] == B[l * P + v, k]``.

The LASSO criterion is the unscaled one, ``||y - X b||^2 + lam * ||b||_1``.
Software that minimises ``(1 / 2m) ||y - X b||^2 + alpha ||b||_1`` uses
``alpha = lam / (2 m)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, InvalidLag, NoConvergence, SingularDesign, SingularDesignWarning

COND_LIMIT = 1e12
KKT_TOL = 1e-8  # stationarity slack of a converged LASSO fit, as a fraction of lam


@dataclass
class RegressionProblem:
    Y: np.ndarray
    X: np.ndarray
    d: int

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def P(self) -> int:
        return self.Y.shape[1]

    def subset(self, rows) -> "RegressionProblem":
        return RegressionProblem(self.Y[rows], self.X[rows], self.d)


def build_problem(series, d: int) -> RegressionProblem:
    """Stack a (P, T) series, or a list of epochs, into regression form.

    Epochs in a list contribute their own rows; no regressor ever reaches
    across an epoch boundary.
    """
    if isinstance(series, (list, tuple)):
        parts = [build_problem(s, d) for s in series]
        return RegressionProblem(np.vstack([p.Y for p in parts]),
                                 np.vstack([p.X for p in parts]), d)
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None]
    T = x.shape[1]
    if d < 1 or d >= T:
        raise InvalidLag(f"lag order d={d} requires 1 <= d < T={T}")
    targets = np.arange(T - 1, d - 1, -1)
    Y = x[:, targets].T
    X = np.hstack([x[:, targets - lag].T for lag in range(1, d + 1)])
    return RegressionProblem(np.ascontiguousarray(Y), np.ascontiguousarray(X), d)


def coef_to_phi(B: np.ndarray, d: int) -> np.ndarray:
    q, P = B.shape
    return B.T.reshape(P, d, P).transpose(1, 0, 2).copy()


def phi_to_coef(phi: np.ndarray) -> np.ndarray:
    d, P, _ = phi.shape
    return phi.transpose(1, 0, 2).reshape(P, d * P).T.copy()


@dataclass
class FitResult:
    phi_hat: np.ndarray
    support: np.ndarray
    residuals: np.ndarray
    method: str
    lam: Optional[float]
    d: int
    converged: bool = True
    n_iter: int = 0
    flags: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.phi_hat.shape[1]

    @property
    def coef(self) -> np.ndarray:
        return phi_to_coef(self.phi_hat)

    @property
    def sigma_hat(self) -> np.ndarray:
        r = self.residuals
        return r.T @ r / max(r.shape[0], 1)

    def to_model(self):
        from .model import VarModel

        s = self.sigma_hat
        return VarModel(self.phi_hat, (s + s.T) / 2, {"method": self.method, "lambda": self.lam})

    def to_dict(self, include_residuals: bool = True) -> dict:
        out = {
            "method": self.method,
            "lambda": self.lam,
            "d": self.d,
            "P": self.P,
            "phi_hat": self.phi_hat.tolist(),
            "support": self.support.astype(int).tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "flags": list(self.flags),
        }
        if include_residuals:
            out["residuals"] = self.residuals.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        d, P = int(data["d"]), int(data["P"])
        phi = np.asarray(data["phi_hat"], dtype=float).reshape(d, P, P)
        residuals = np.asarray(data.get("residuals", np.empty((0, P))), dtype=float).reshape(-1, P)
        return cls(phi, np.asarray(data["support"], dtype=bool).reshape(P, d * P), residuals,
                   data["method"], data["lambda"], d, bool(data.get("converged", True)),
                   int(data.get("n_iter", 0)), list(data.get("flags", [])))


def _result(problem: RegressionProblem, B: np.ndarray, method: str, lam, support=None, **kw) -> FitResult:
    if support is None:
        support = (B != 0).T
    return FitResult(coef_to_phi(B, problem.d), np.asarray(support, dtype=bool),
                     problem.Y - problem.X @ B, method, lam, problem.d, **kw)


def _lstsq(X: np.ndarray, Y: np.ndarray, strict: bool):
    """Least squares through QR; falls back to SVD min-norm when ill-conditioned."""
    if X.shape[1] == 0:
        return np.zeros((0,) + Y.shape[1:]), False
    Q, R = np.linalg.qr(X)
    s = np.linalg.svd(R, compute_uv=False)
    cond_gram = np.inf if s[-1] == 0 else (s[0] / s[-1]) ** 2
    if X.shape[0] >= X.shape[1] and cond_gram < COND_LIMIT:
        from scipy.linalg import solve_triangular

        return solve_triangular(R, Q.T @ Y), False
    if strict:
        raise SingularDesign(f"Gram matrix condition number {cond_gram:.3g} exceeds {COND_LIMIT:g}")
    return np.linalg.lstsq(X, Y, rcond=None)[0], True


def fit_lse(problem: RegressionProblem) -> FitResult:
    """Ordinary least squares for every response column at once."""
    B, _ = _lstsq(problem.X, problem.Y, strict=True)
    return _result(problem, B, "lse", None, support=np.ones((problem.P, problem.q), dtype=bool))


def soft_threshold(z, gamma):
    """sign(z) * max(|z| - gamma, 0)."""
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("gamma must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


class _Gram:
    """Unit-norm column scaling plus cross products shared by every response."""

    def __init__(self, problem: RegressionProblem):
        X, Y = problem.X, problem.Y
        norms = np.sqrt(np.einsum("ij,ij->j", X, X))
        self.zero = norms == 0
        self.norms = np.where(self.zero, 1.0, norms)
        Z = X / self.norms
        self.G = Z.T @ Z
        self.G[np.diag_indices_from(self.G)] = 1.0
        self.C = Z.T @ Y
        self.yy = np.einsum("ij,ij->j", Y, Y)

    def threshold(self, lam: float) -> np.ndarray:
        thr = lam / (2.0 * self.norms)
        thr[self.zero] = np.inf
        return thr

    def objective(self, gamma: np.ndarray, R: np.ndarray, lam: float) -> np.ndarray:
        # ||y - Z g||^2 = yy - 2 g'c + g'G g and G g = C - R
        pen = lam * np.sum(np.abs(gamma) / self.norms[:, None], axis=0)
        return self.yy - np.sum(gamma * self.C, axis=0) - np.sum(gamma * R, axis=0) + pen


def _cd_loops(G, C, gamma, thr, scale, tol, kkt_tol, max_iter):
    """Scalar-loop form of ``_coordinate_descent``; compiled with numba when available."""
    q, P = gamma.shape
    R = np.empty_like(C)

    def refresh():
        for i in range(q):
            for k in range(P):
                acc = C[i, k]
                for j in range(q):
                    acc -= G[i, j] * gamma[j, k]
                R[i, k] = acc

    refresh()
    for cycle in range(1, max_iter + 1):
        change = 0.0
        for j in range(q):
            t = thr[j]
            for k in range(P):
                old = gamma[j, k]
                rho = R[j, k] + old
                if rho > t:
                    new = rho - t
                elif rho < -t:
                    new = rho + t
                else:
                    new = 0.0
                delta = new - old
                if delta != 0.0:
                    for i in range(q):
                        R[i, k] -= G[i, j] * delta
                    gamma[j, k] = new
                    change = max(change, abs(delta) * scale[j])
        if change < tol:
            refresh()
            gap = 0.0
            for j in range(q):
                t = thr[j]
                if not np.isfinite(t):
                    continue
                for k in range(P):
                    g = gamma[j, k]
                    if g > 0:
                        v = abs(R[j, k] - t)
                    elif g < 0:
                        v = abs(R[j, k] + t)
                    else:
                        v = max(abs(R[j, k]) - t, 0.0)
                    gap = max(gap, v / t)
            if gap <= kkt_tol:
                return cycle, True
    return max_iter, False


try:
    from numba import njit

    _cd_compiled = njit(nogil=True)(_cd_loops)
except ImportError:  # pragma: no cover - exercised only without numba
    _cd_compiled = None


def _coordinate_descent(gram: _Gram, lam: float, gamma: np.ndarray, tol: float, max_iter: int,
                        history: Optional[list] = None):
    """Cyclic coordinate descent on all response columns simultaneously.

    ``gamma`` holds coefficients of the unit-norm design.  The loop stops once
    the largest coefficient change (in original units) over a full cycle is
    below ``tol`` and the subgradient conditions hold to ``KKT_TOL * lam``.
    Returns (gamma, cycles, converged).
    """
    G, C = gram.G, gram.C
    thr = gram.threshold(lam)
    scale = 1.0 / gram.norms
    gamma = np.array(gamma, dtype=float, order="C", copy=True)
    if history is None and _cd_compiled is not None:
        cycles, ok = _cd_compiled(G, C, gamma, thr, scale, float(tol), KKT_TOL, int(max_iter))
        return gamma, cycles, ok
    R = C - G @ gamma
    q = G.shape[0]
    if history is not None:
        history.append(gram.objective(gamma, R, lam))
    for cycle in range(1, max_iter + 1):
        change = np.zeros(gamma.shape[1])
        for j in range(q):
            old = gamma[j]
            rho = R[j] + old
            new = np.sign(rho) * np.maximum(np.abs(rho) - thr[j], 0.0)
            delta = new - old
            if delta.any():
                R -= np.outer(G[:, j], delta)
                gamma[j] = new
                np.maximum(change, np.abs(delta) * scale[j], out=change)
        if history is not None:
            history.append(gram.objective(gamma, R, lam))
        if change.max() < tol:
            R = C - G @ gamma  # drop drift from the incremental updates
            if _kkt_gap(gamma, R, thr) <= KKT_TOL:
                return gamma, cycle, True
    return gamma, max_iter, False


def _kkt_gap(gamma: np.ndarray, R: np.ndarray, thr: np.ndarray) -> float:
    """Largest subgradient violation relative to lam (R_j = z_j' residual)."""
    live = np.isfinite(thr)
    if not live.any():
        return 0.0
    g, r, t = gamma[live], R[live], thr[live][:, None]
    gap = np.where(g != 0, np.abs(r - t * np.sign(g)), np.maximum(np.abs(r) - t, 0.0))
    return float(np.max(gap / t))


def fit_lasso(problem: RegressionProblem, lam: float, tol: float = 1e-7, max_iter: int = 10_000,
              warm_start: Optional[np.ndarray] = None, track_objective: bool = False) -> FitResult:
    """Minimise ||y_k - X b_k||^2 + lam ||b_k||_1 for each response k.

    Non-convergence within ``max_iter`` cycles emits a ``NoConvergence``
    warning and sets ``converged=False``; the last iterate is returned.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    gram = _Gram(problem)
    gamma0 = np.zeros((problem.q, problem.P)) if warm_start is None else warm_start * gram.norms[:, None]
    history = [] if track_objective else None
    gamma, cycles, ok = _coordinate_descent(gram, lam, gamma0, tol, max_iter, history)
    B = gamma / gram.norms[:, None]
    flags = []
    if not ok:
        flags.append("no_convergence")
        warnings.warn(f"coordinate descent did not converge in {max_iter} cycles", NoConvergence)
    res = _result(problem, B, "lasso", float(lam), converged=ok, n_iter=cycles, flags=flags)
    if history is not None:
        res.info["objective_history"] = np.array(history)
    return res


def lambda_max(problem: RegressionProblem) -> float:
    """Smallest lam giving an all-zero solution for every response."""
    return float(2.0 * np.max(np.abs(problem.X.T @ problem.Y)))


def lambda_grid(problem: RegressionProblem, n: int = 50, ratio: float = 1e-3) -> np.ndarray:
    top = lambda_max(problem)
    if top == 0:
        top = 1.0
    return np.geomspace(top, top * ratio, n)


def lasso_path(problem: RegressionProblem, lambdas: Sequence[float], tol: float = 1e-7,
               max_iter: int = 10_000) -> list:
    """Coefficient matrices B (q x P) along ``lambdas`` (any order), warm-started
    from the previous solution in decreasing-lam order."""
    gram = _Gram(problem)
    lambdas = np.asarray(lambdas, dtype=float)
    order = np.argsort(-lambdas, kind="stable")
    out = [None] * len(lambdas)
    gamma = np.zeros((problem.q, problem.P))
    for i in order:
        gamma, _, ok = _coordinate_descent(gram, lambdas[i], gamma, tol, max_iter)
        if not ok:
            warnings.warn(f"coordinate descent did not converge at lam={lambdas[i]:.4g}", NoConvergence)
        out[i] = gamma / gram.norms[:, None]
    return out


def fit_lassle(problem: RegressionProblem, lam: float, tol: float = 1e-7, max_iter: int = 10_000) -> FitResult:
    """LASSO picks the support of each response, then least squares refits on it.

    Coefficients outside the LASSO support stay exactly zero; an empty
    support gives a zero column.  An ill-conditioned restricted design is
    solved by minimum-norm least squares and flagged.
    """
    lasso = fit_lasso(problem, lam, tol, max_iter)
    support = lasso.support
    B = np.zeros((problem.q, problem.P))
    flags = list(lasso.flags)
    for k in range(problem.P):
        cols = np.flatnonzero(support[k])
        if cols.size == 0:
            continue
        b, fallback = _lstsq(problem.X[:, cols], problem.Y[:, k], strict=False)
        if fallback:
            flags.append(f"min_norm_refit:{k}")
            warnings.warn(f"singular restricted design for response {k}; using minimum-norm solution",
                          SingularDesignWarning)
        B[cols, k] = b
    return _result(problem, B, "lassle", float(lam), support=support, converged=lasso.converged,
                   n_iter=lasso.n_iter, flags=flags, info={"lasso_phi": lasso.phi_hat})


def fit(problem: RegressionProblem, method: str, lam: Optional[float] = None, **kw) -> FitResult:
    if method == "lse":
        return fit_lse(problem)
    if lam is None:
        raise ValueError(f"method {method!r} needs a lambda")
    if method == "lasso":
        return fit_lasso(problem, lam, **kw)
    if method == "lassle":
        return fit_lassle(problem, lam, **kw)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CvReport:
    candidates: list
    errors: np.ndarray
    fold_errors: np.ndarray
    chosen: tuple
    chosen_index: int
    K: int
    seed: int
    folds: str = "random"
    rule: str = "min"

    @property
    def min_index(self) -> int:
        return _argmin_tiebreak(self.candidates, self.errors)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "seed": self.seed,
            "folds": self.folds,
            "rule": self.rule,
            "chosen": {"d": int(self.chosen[0]), "lambda": float(self.chosen[1])},
            "grid": [{"d": int(d), "lambda": float(lam), "error": float(e)}
                     for (d, lam), e in zip(self.candidates, self.errors)],
        }


def _argmin_tiebreak(candidates, errors) -> int:
    # lowest error, then larger lam, then smaller d, then first listed
    keys = [(float(e), -float(lam), int(d), i) for i, ((d, lam), e) in enumerate(zip(candidates, errors))]
    return min(keys)[3]


def _fold_ids(m: int, K: int, rng: np.random.Generator, folds: str) -> np.ndarray:
    if folds == "random":
        ids = np.empty(m, dtype=int)
        for k, chunk in enumerate(np.array_split(rng.permutation(m), K)):
            ids[chunk] = k
        return ids
    if folds == "block":
        ids = np.empty(m, dtype=int)
        for k, chunk in enumerate(np.array_split(np.arange(m), K)):
            ids[chunk] = k
        return ids
    raise ValueError(f"unknown fold scheme {folds!r}")


def cross_validate(data, candidates: Sequence[tuple], K: int = 5, seed: int = 0, folds: str = "random",
                   rule: str = "min", tol: float = 1e-7, max_iter: int = 10_000,
                   allow_underdetermined: bool = False) -> CvReport:
    """K-fold CV of the LASSO one-step-ahead prediction error over (d, lam) pairs.

    Rows of the regression problem for each d are assigned to folds from a
    generator seeded with ``seed``.  The error of a cell is the mean over
    folds of the held-out mean squared error per scalar element.

    ``rule="min"`` picks the lowest error (ties: larger lam, then smaller d).
    ``rule="1se"`` picks the largest lam, then smallest d, whose error is
    within one standard error of that minimum.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    candidates = [(int(d), float(lam)) for d, lam in candidates]
    if not candidates:
        raise ValueError("no candidates")
    errors = np.empty(len(candidates))
    fold_errors = np.empty((len(candidates), K))
    by_d: dict = {}
    for i, (d, lam) in enumerate(candidates):
        by_d.setdefault(d, {}).setdefault(lam, []).append(i)
    for d, lam_map in sorted(by_d.items()):
        problem = build_problem(data, d)
        ids = _fold_ids(problem.m, K, np.random.default_rng(seed), folds)
        lams = list(lam_map)
        for k in range(K):
            train, test = ids != k, ids == k
            if train.sum() <= problem.q and not allow_underdetermined:
                raise InsufficientData(f"fold {k} leaves {train.sum()} training rows for q={problem.q}")
            path = lasso_path(problem.subset(train), lams, tol, max_iter)
            Xt, Yt = problem.X[test], problem.Y[test]
            for lam, B in zip(lams, path):
                err = np.mean((Yt - Xt @ B) ** 2)
                for i in lam_map[lam]:
                    fold_errors[i, k] = err
    errors[:] = fold_errors.mean(axis=1)
    best = _argmin_tiebreak(candidates, errors)
    if rule == "min":
        chosen = best
    elif rule == "1se":
        se = fold_errors[best].std(ddof=1) / np.sqrt(K)
        ok = [i for i in range(len(candidates)) if errors[i] <= errors[best] + se]
        chosen = min(ok, key=lambda i: (-candidates[i][1], candidates[i][0], i))
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    return CvReport(candidates, errors, fold_errors, candidates[chosen], chosen, K, seed, folds, rule)


def select_lambda(data, d: int, K: int = 5, seed: int = 0, n_lambda: int = 50, ratio: float = 1e-3,
                  rule: str = "min", folds: str = "random", **kw) -> CvReport:
    """CV over the default geometric lam grid at a fixed lag order."""
    grid = lambda_grid(build_problem(data, d), n_lambda, ratio)
    return cross_validate(data, [(d, lam) for lam in grid], K=K, seed=seed, rule=rule, folds=folds, **kw)
