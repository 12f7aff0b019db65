"""Covariance-matched Gaussian twins of the feature families.

The twin replaces feature rows x by g ~ N(0, Sigma) with Sigma = E[x x^T]
conditional on the frozen weights. Sigma is obtained in one of four modes:

* ``linear-exact``: Sigma = nu * (sigma_half sigma_half^T), available in
  closed form for the linear family.
* ``hermite-exact``: for random features, entry (i, j) is the Hermite
  series sum_k c_k^2 (w_i^T w_j)^k of the mean-zero activation.
* ``monte-carlo``: (1/n_cov) Phi^T Phi over a fresh featurized batch.
* ``empirical``: same estimator evaluated on the batch under study.

Estimated covariances are indefinite at machine precision, so factors come
from an eigendecomposition with eigenvalues clipped at zero plus optional
relative jitter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
import numpy as np

from ermu.errors import InvalidArgumentError
from ermu.features import FeatureModel, featurize, sample_covariates
from ermu.seeds import derive_seed, rng_from

COV_MODES = ("hermite-exact", "monte-carlo", "empirical", "linear-exact")

_COV_CHUNK = 4096


@dataclass(frozen=True)
class GaussianEquivalent:
    """Sampler state for the Gaussian twin: a factor L with L L^T ~= Sigma."""

    cov_mode: str
    factor: np.ndarray
    jitter: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cov_mode not in COV_MODES:
            raise InvalidArgumentError(f"unknown covariance mode {self.cov_mode!r}")

    @property
    def p(self) -> int:
        return self.factor.shape[0]

    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T


def rf_covariance_hermite(W: np.ndarray, coeffs: np.ndarray, order: int) -> np.ndarray:
    """Random-features covariance from an orthonormal-Hermite expansion.

    Entry (i, j) is sum_{k=1..order} c_k^2 rho^k with rho = w_i^T w_j. Valid
    for unit-norm columns and mean-zero activations (c_0 = 0).
    """
    W = np.asarray(W, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if order < 1:
        raise InvalidArgumentError(f"order must be >= 1, got {order}")
    norms = np.linalg.norm(W, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise InvalidArgumentError("columns of W must have unit norm")
    if len(coeffs) > 0 and abs(coeffs[0]) > 1e-10:
        raise InvalidArgumentError("activation must be mean-zero (c_0 = 0)")
    upto = min(order, len(coeffs) - 1)
    rho = np.clip(W.T @ W, -1.0, 1.0)
    sigma = np.zeros_like(rho)
    rho_pow = np.ones_like(rho)
    for k in range(1, upto + 1):
        rho_pow = rho_pow * rho
        sigma += coeffs[k] ** 2 * rho_pow
    return sigma


def mc_covariance(
    model: FeatureModel, n_cov: int, seed: int, chunk: int = _COV_CHUNK
) -> np.ndarray:
    """(1/n_cov) Phi^T Phi over a fresh featurized batch, accumulated in chunks.

    Chunks carry their own derived seeds and are reduced in ascending index
    order, so the result is bit-stable for a given (model, n_cov, seed).
    """
    if n_cov < 1:
        raise InvalidArgumentError(f"n_cov must be positive, got {n_cov}")
    if n_cov < model.p:
        warnings.warn(
            f"covariance estimate from n_cov={n_cov} < p={model.p} samples is rank-deficient",
            stacklevel=2,
        )
    acc = np.zeros((model.p, model.p))
    done = 0
    index = 0
    while done < n_cov:
        take = min(chunk, n_cov - done)
        Z = sample_covariates(model, take, derive_seed(seed, "cov-chunk", index)).Z
        Phi = featurize(model, Z)
        acc += Phi.T @ Phi
        done += take
        index += 1
    return acc / n_cov


def empirical_covariance(X: np.ndarray) -> np.ndarray:
    """Second-moment matrix X^T X / n of an observed batch."""
    X = np.asarray(X, dtype=np.float64)
    return (X.T @ X) / X.shape[0]


def factor_covariance(cov: np.ndarray, jitter_rel: float = 0.0) -> np.ndarray:
    """PSD factor L = U diag(sqrt(clip(lambda, 0))) of a symmetric matrix.

    Relative jitter (times trace/p) is added to the diagonal before the
    eigendecomposition; negative eigenvalues are clipped at zero.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidArgumentError(f"covariance must be square, got {cov.shape}")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > 1e-10 * scale:
        raise InvalidArgumentError("covariance is not symmetric within 1e-10 relative")
    sym = 0.5 * (cov + cov.T)
    if jitter_rel > 0.0:
        sym = sym + (jitter_rel * np.trace(sym) / sym.shape[0]) * np.eye(sym.shape[0])
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_gaussian(equiv: GaussianEquivalent, n: int, seed: int) -> np.ndarray:
    """n x p batch with rows L xi, xi ~ N(0, I_p)."""
    if n < 1:
        raise InvalidArgumentError(f"n must be positive, got {n}")
    xi = rng_from(seed, "gaussian-rows").standard_normal((n, equiv.p))
    return xi @ equiv.factor.T


def linear_exact_equivalent(model: FeatureModel, jitter_rel: float = 0.0) -> GaussianEquivalent:
    """Closed-form twin of the linear family: factor sqrt(nu) * sigma_half."""
    if model.family != "linear-independent":
        raise InvalidArgumentError("linear-exact mode applies to the linear family only")
    return GaussianEquivalent(
        cov_mode="linear-exact",
        factor=np.sqrt(model.nu) * model.sigma_half,
        jitter=jitter_rel,
        provenance={"nu": model.nu},
    )


def hermite_exact_equivalent(
    model: FeatureModel, order: int, jitter_rel: float = 1e-10
) -> GaussianEquivalent:
    if model.family != "random-features":
        raise InvalidArgumentError("hermite-exact mode applies to random features only")
    coeffs = model.activation.coefficients(order)
    cov = rf_covariance_hermite(model.W, coeffs, order)
    return GaussianEquivalent(
        cov_mode="hermite-exact",
        factor=factor_covariance(cov, jitter_rel),
        jitter=jitter_rel,
        provenance={"order": order},
    )


def monte_carlo_equivalent(
    model: FeatureModel, n_cov: int, seed: int, jitter_rel: float = 1e-10
) -> GaussianEquivalent:
    cov = mc_covariance(model, n_cov, seed)
    return GaussianEquivalent(
        cov_mode="monte-carlo",
        factor=factor_covariance(cov, jitter_rel),
        jitter=jitter_rel,
        provenance={"n_cov": n_cov, "seed": seed},
    )


def empirical_equivalent(X: np.ndarray, jitter_rel: float = 1e-10) -> GaussianEquivalent:
    cov = empirical_covariance(X)
    return GaussianEquivalent(
        cov_mode="empirical",
        factor=factor_covariance(cov, jitter_rel),
        jitter=jitter_rel,
        provenance={"n_rows": int(np.asarray(X).shape[0])},
    )
