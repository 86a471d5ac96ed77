"""VAR(d) model container, stationarity check, simulation and ground-truth networks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidLength, InvalidSpec, NonStationaryModel, ShapeMismatch

NOISE_FAMILIES = ("gaussian", "student_t", "shifted_chi2")
NETWORK_KINDS = ("cluster", "scale_free")


@dataclass
class VarModel:
    """X_t = phi[0] X_{t-1} + ... + phi[d-1] X_{t-d} + eps_t, eps_t ~ (0, sigma).

    ``phi`` is stored as a (d, P, P) array; ``phi[l-1][u, v]`` is the effect of
    channel v at lag l on channel u.
    """

    phi: np.ndarray
    sigma: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 2:
            phi = phi[None]
        if phi.ndim != 3 or phi.shape[0] < 1 or phi.shape[1] != phi.shape[2]:
            raise ShapeMismatch(f"phi must have shape (d, P, P), got {phi.shape}")
        P = phi.shape[1]
        if P < 1:
            raise ShapeMismatch("P must be positive")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (P, P):
            raise ShapeMismatch(f"sigma must be {P}x{P}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-10):
            raise ShapeMismatch("sigma is not symmetric")
        if P and np.linalg.eigvalsh(sigma).min() < -1e-10:
            raise ShapeMismatch("sigma is not positive semidefinite")
        self.phi = phi
        self.sigma = sigma

    @property
    def P(self) -> int:
        return self.phi.shape[1]

    @property
    def d(self) -> int:
        return self.phi.shape[0]

    @property
    def stationary(self) -> bool:
        return check_stationarity(self) < 1.0

    def permuted(self, order: Sequence[int]) -> "VarModel":
        """Relabel channels so that new channel i is old channel ``order[i]``."""
        idx = np.asarray(order)
        return VarModel(self.phi[:, idx][:, :, idx], self.sigma[np.ix_(idx, idx)],
                        dict(self.metadata))

    def to_dict(self) -> dict:
        return {
            "P": self.P,
            "d": self.d,
            "phi": self.phi.tolist(),
            "sigma": self.sigma.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VarModel":
        phi = np.asarray(data["phi"], dtype=float).reshape(data["d"], data["P"], data["P"])
        return cls(phi, np.asarray(data["sigma"], dtype=float), dict(data.get("metadata", {})))


def companion_matrix(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    d, P, _ = phi.shape
    comp = np.zeros((P * d, P * d))
    comp[:P] = np.concatenate(list(phi), axis=1)
    if d > 1:
        comp[P:, :-P] = np.eye(P * (d - 1))
    return comp


def check_stationarity(model) -> float:
    """Spectral radius of the companion matrix; the process is stationary iff < 1."""
    phi = model.phi if isinstance(model, VarModel) else np.asarray(model, dtype=float)
    if phi.ndim == 2:
        phi = phi[None]
    if not np.any(phi):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(phi)))))


@dataclass
class NoiseSpec:
    """Innovation distribution, applied i.i.d. over time.

    ``gaussian`` uses ``cov`` (the model's sigma when left as None).  The two
    heavy-tailed/skewed families are drawn independently per channel and
    already have mean 0 and variance 0.1.
    """

    family: str = "gaussian"
    cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise InvalidSpec(f"unknown noise family {self.family!r}")

    def sample(self, rng: np.random.Generator, n: int, P: int,
               default_cov: Optional[np.ndarray] = None) -> np.ndarray:
        """Return an (n, P) array of innovations."""
        if self.family == "student_t":
            return np.sqrt(0.06) * rng.standard_t(5, size=(n, P))
        if self.family == "shifted_chi2":
            return np.sqrt(0.0125) * rng.chisquare(4, size=(n, P)) - np.sqrt(0.2)
        cov = self.cov if self.cov is not None else default_cov
        cov = 0.1 * np.eye(P) if cov is None else np.asarray(cov, dtype=float)
        if cov.shape != (P, P):
            raise ShapeMismatch(f"noise covariance must be {P}x{P}")
        # symmetric square root tolerates singular (PSD) covariances
        w, V = np.linalg.eigh(cov)
        root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        return rng.standard_normal((n, P)) @ root


def propagate(phi: np.ndarray, innovations: np.ndarray, init: Optional[np.ndarray] = None) -> np.ndarray:
    """Run the VAR recursion.

    ``innovations`` is (P, n); the first d columns are replaced by ``init``
    (zeros by default) and every later column t becomes
    sum_l phi[l-1] @ X[:, t-l] + innovations[:, t].
    """
    phi = np.asarray(phi, dtype=float)
    d, P, _ = phi.shape
    X = np.array(innovations, dtype=float, copy=True)
    n = X.shape[1]
    X[:, :d] = 0.0 if init is None else np.asarray(init, dtype=float).reshape(P, d)
    # stacked coefficients act on the reversed window [X_{t-1}, ..., X_{t-d}]
    stacked = np.concatenate(list(phi), axis=1)
    for t in range(d, n):
        window = X[:, t - d:t][:, ::-1].T.reshape(-1)
        X[:, t] += stacked @ window
    return X


def simulate(model: VarModel, noise: Optional[NoiseSpec] = None, T: int = 1000,
             seed: int = 0, burn_in: int = 500, init: Optional[np.ndarray] = None) -> np.ndarray:
    """Simulate a (P, T) trajectory.

    The recursion starts from ``init`` (P x d, zeros by default) and the first
    ``burn_in`` samples are dropped.  Output depends only on the arguments.
    """
    if noise is None:
        noise = NoiseSpec("gaussian")
    if T <= model.d:
        raise InvalidLength(f"T={T} must exceed the lag order d={model.d}")
    if burn_in < 0:
        raise InvalidLength("burn_in must be nonnegative")
    radius = check_stationarity(model)
    if radius >= 1.0:
        raise NonStationaryModel(f"companion spectral radius {radius:.6g} >= 1")
    rng = np.random.default_rng(seed)
    total = T + burn_in
    eps = noise.sample(rng, total, model.P, default_cov=model.sigma).T
    return propagate(model.phi, eps, init)[:, burn_in:]


def theoretical_autocovariance(model: VarModel) -> np.ndarray:
    """Stationary Gamma(0) = cov(X_t) from the companion-form discrete Lyapunov equation."""
    from scipy.linalg import solve_discrete_lyapunov

    comp = companion_matrix(model.phi)
    Q = np.zeros_like(comp)
    Q[:model.P, :model.P] = model.sigma
    return solve_discrete_lyapunov(comp, Q)[:model.P, :model.P]


@dataclass
class NetworkSpec:
    """Ground-truth coefficient structure.

    cluster: channels split into ``n_regions`` regions (equal partition unless
    ``regions`` is given); entries inside a region are nonzero with
    probability ``within_density``; region pairs in ``connected`` get cross
    entries with probability ``cross_density``.  scale_free: off-diagonal
    entries nonzero with probability ``probability``.  Nonzeros are
    +/-``magnitude`` with a fair random sign; ``diagonal`` is added to the
    lag-1 diagonal.
    """

    kind: str = "cluster"
    P: int = 10
    d: int = 1
    n_regions: int = 4
    regions: Optional[Sequence[Sequence[int]]] = None
    connected: Sequence[tuple] = ((0, 3),)
    within_density: float = 1.0
    cross_density: float = 0.5
    probability: float = 0.05
    magnitude: float = 0.1
    diagonal: float = 0.5
    noise_variance: float = 0.1

    def region_list(self) -> list:
        if self.regions is not None:
            return [np.asarray(r, dtype=int) for r in self.regions]
        return [np.asarray(r, dtype=int) for r in np.array_split(np.arange(self.P), self.n_regions)]

    def validate(self):
        if self.kind not in NETWORK_KINDS:
            raise InvalidSpec(f"unknown network kind {self.kind!r}")
        if self.P < 2 or self.d < 1:
            raise InvalidSpec("need P >= 2 and d >= 1")
        if self.kind == "cluster":
            regions = self.region_list()
            if not regions or any(len(r) == 0 for r in regions):
                raise InvalidSpec("cluster regions must be nonempty")
            members = np.concatenate(regions)
            if np.unique(members).size != members.size or members.min() < 0 or members.max() >= self.P:
                raise InvalidSpec("regions must be disjoint channel indices in [0, P)")
            for a, b in self.connected:
                if not (0 <= a < len(regions) and 0 <= b < len(regions)):
                    raise InvalidSpec(f"region pair {(a, b)} out of range")
            for p in (self.within_density, self.cross_density):
                if not 0.0 <= p <= 1.0:
                    raise InvalidSpec("densities must lie in [0, 1]")
        elif not 0.0 <= self.probability <= 1.0:
            raise InvalidSpec("probability must lie in [0, 1]")


def _support(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    P = spec.P
    if spec.kind == "scale_free":
        mask = rng.random((P, P)) < spec.probability
        np.fill_diagonal(mask, False)
        return mask
    mask = np.zeros((P, P), dtype=bool)
    regions = spec.region_list()
    for r in regions:
        mask[np.ix_(r, r)] = rng.random((len(r), len(r))) < spec.within_density
    for a, b in spec.connected:
        ra, rb = regions[a], regions[b]
        mask[np.ix_(ra, rb)] = rng.random((len(ra), len(rb))) < spec.cross_density
        mask[np.ix_(rb, ra)] = rng.random((len(rb), len(ra))) < spec.cross_density
    return mask


def generate_network(spec: NetworkSpec, seed: int = 0, max_rescale: int = 500) -> VarModel:
    """Draw a ground-truth VarModel.

    Each lag gets an independent support draw and independent signs.  For the
    cluster kind every within-region diagonal entry is nonzero at lag 1 and
    the diagonal ends up at diagonal +/- magnitude; for scale_free the lag-1
    diagonal is exactly ``diagonal``.  Non-stationary draws are shrunk by the
    smallest power of 0.95 giving a spectral radius below 0.98.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    P, d = spec.P, spec.d
    phi = np.zeros((d, P, P))
    for lag in range(d):
        mask = _support(spec, rng)
        if spec.kind == "cluster" and lag == 0:
            np.fill_diagonal(mask, True)
        signs = np.where(rng.random((P, P)) < 0.5, -1.0, 1.0)
        phi[lag] = np.where(mask, signs * spec.magnitude, 0.0)
    if spec.kind == "scale_free":
        np.fill_diagonal(phi[0], spec.diagonal)
    else:
        phi[0][np.diag_indices(P)] += spec.diagonal

    metadata = {"kind": spec.kind, "seed": seed, "rescale_factor": 1.0, "rescale_power": 0}
    if spec.kind == "cluster":
        metadata["regions"] = [r.tolist() for r in spec.region_list()]
        metadata["connected"] = [list(p) for p in spec.connected]
    else:
        metadata["probability"] = spec.probability

    if check_stationarity(phi) >= 1.0:
        for k in range(1, max_rescale + 1):
            if check_stationarity(phi * 0.95 ** k) < 0.98:
                break
        else:
            raise InvalidSpec("could not rescale network to stationarity")
        phi = phi * 0.95 ** k
        metadata["rescale_factor"] = 0.95 ** k
        metadata["rescale_power"] = k
    return VarModel(phi, spec.noise_variance * np.eye(P), metadata)
