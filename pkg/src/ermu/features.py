"""Feature families and their featurization maps.

Three families are supported:

* ``random-features``: x = sigma(W^T z) with z ~ N(0, I_d) and the columns
  of W frozen on the unit sphere. The activation is mean-zero under N(0,1).
* ``neural-tangent``: x = (z sigma'(w_1^T z), ..., z sigma'(w_m^T z)),
  the first-order feature map of a two-layer network at initialization,
  flattened as m blocks of length d (p = m d). The activation derivative
  satisfies E[sigma'(G)] = 0 and E[G sigma'(G)] = 0.
* ``linear-independent``: x = Sigma^{1/2} xbar with xbar having i.i.d.
  zero-mean unit-variance subgaussian entries.

Weight matrices are sampled once per configuration and reused across
trials; all sampling takes explicit seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermeval

from ermu.errors import InvalidArgumentError
from ermu.quadrature import gaussian_expectation, hermite_coefficients
from ermu.seeds import rng_from

_INV_SQRT_E = math.exp(-0.5)

ENTRY_LAWS = ("rademacher", "uniform", "laplace", "gaussian")


@dataclass(frozen=True)
class Activation:
    """Scalar activation with closed-form derivative.

    ``custom-hermite`` evaluates a finite expansion sum_k c_k he_k(t) in the
    orthonormal (unit-variance) Hermite basis, which gives the covariance
    oracle a closed form.
    """

    kind: str = "tanh-rf"
    hermite_coeffs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("tanh-rf", "shifted-sine-nt", "custom-hermite"):
            raise InvalidArgumentError(f"unknown activation kind {self.kind!r}")
        if self.kind == "custom-hermite":
            if not self.hermite_coeffs:
                raise InvalidArgumentError("custom-hermite requires hermite_coeffs")
            object.__setattr__(self, "hermite_coeffs", tuple(float(c) for c in self.hermite_coeffs))

    def value(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "tanh-rf":
            return np.tanh(t)
        if self.kind == "shifted-sine-nt":
            return np.sin(t) - _INV_SQRT_E * t
        return self._hermite_eval(t, derivative=False)

    def derivative(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "tanh-rf":
            return 1.0 - np.tanh(t) ** 2
        if self.kind == "shifted-sine-nt":
            return np.cos(t) - _INV_SQRT_E
        return self._hermite_eval(t, derivative=True)

    def _hermite_eval(self, t: np.ndarray, derivative: bool) -> np.ndarray:
        coeffs = np.asarray(self.hermite_coeffs, dtype=np.float64)
        # he_k = He_k / sqrt(k!), and He_k' = k He_{k-1}, so he_k' = sqrt(k) he_{k-1}
        scaled = coeffs / np.sqrt([math.factorial(k) for k in range(len(coeffs))])
        if derivative:
            if len(scaled) == 1:
                return np.zeros_like(t)
            deriv = scaled[1:] * np.arange(1, len(scaled))
            return hermeval(t, deriv)
        return hermeval(t, scaled)

    def coefficients(self, order: int, n_nodes: int = 200) -> np.ndarray:
        """Orthonormal-Hermite coefficients of the activation up to ``order``."""
        if self.kind == "custom-hermite":
            stored = np.asarray(self.hermite_coeffs, dtype=np.float64)
            out = np.zeros(order + 1)
            upto = min(order + 1, len(stored))
            out[:upto] = stored[:upto]
            return out
        return hermite_coefficients(self.value, order, n_nodes=n_nodes)

    def moment_checks(self, n_nodes: int = 100) -> dict[str, float]:
        """Quadrature values of the moment conditions each family relies on."""
        out = {"mean_sigma": gaussian_expectation(self.value, n_nodes)}
        out["mean_sigma_prime"] = gaussian_expectation(self.derivative, n_nodes)
        out["mean_g_sigma_prime"] = gaussian_expectation(
            lambda x: x * self.derivative(x), n_nodes
        )
        return out


@dataclass(frozen=True)
class FeatureModel:
    """Frozen description of one feature family.

    For ``random-features`` W is d x p; for ``neural-tangent`` W is d x m and
    p = m d; for ``linear-independent`` only ``sigma_half`` (p x p) and the
    entry law matter.
    """

    family: str
    d: int
    p: int
    m: int = 0
    W: Optional[np.ndarray] = None
    sigma_half: Optional[np.ndarray] = None
    activation: Optional[Activation] = None
    nu: float = 1.0
    entry_law: str = "rademacher"

    def __post_init__(self):
        if self.family == "random-features":
            if self.W is None or self.W.shape != (self.d, self.p):
                raise InvalidArgumentError("random-features requires W of shape (d, p)")
            if self.activation is None:
                raise InvalidArgumentError("random-features requires an activation")
        elif self.family == "neural-tangent":
            if self.m <= 0 or self.p != self.m * self.d:
                raise InvalidArgumentError("neural-tangent requires p = m * d")
            if self.W is None or self.W.shape != (self.d, self.m):
                raise InvalidArgumentError("neural-tangent requires W of shape (d, m)")
            if self.activation is None:
                raise InvalidArgumentError("neural-tangent requires an activation")
        elif self.family == "linear-independent":
            if self.sigma_half is None or self.sigma_half.shape != (self.p, self.p):
                raise InvalidArgumentError("linear family requires square sigma_half")
            if self.entry_law not in ENTRY_LAWS:
                raise InvalidArgumentError(f"unknown entry law {self.entry_law!r}")
        else:
            raise InvalidArgumentError(f"unknown family {self.family!r}")

    @property
    def covariate_dim(self) -> int:
        """Number of columns expected in a covariate batch."""
        return self.p if self.family == "linear-independent" else self.d


@dataclass(frozen=True)
class CovariateBatch:
    """Covariate rows plus the seed that produced them."""

    Z: np.ndarray
    seed: int


def sample_sphere_weights(d: int, count: int, seed: int) -> np.ndarray:
    """d x count matrix whose columns are uniform on the unit sphere in R^d."""
    if d < 1 or count < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got d={d}, count={count}")
    rng = rng_from(seed, "sphere")
    W = rng.standard_normal((d, count))
    norms = np.linalg.norm(W, axis=0)
    # A zero draw has probability zero; guard against it anyway.
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        W[:, bad] = rng.standard_normal((d, int(bad.sum())))
        norms = np.linalg.norm(W, axis=0)
    return W / norms


def sample_covariates(model: FeatureModel, n: int, seed: int) -> CovariateBatch:
    """Draw the raw covariate batch the family consumes (z or xbar rows)."""
    if model.family == "linear-independent":
        Z = sample_linear_covariates(model.p, n, model.entry_law, seed)
    else:
        Z = rng_from(seed, "covariates").standard_normal((n, model.d))
    return CovariateBatch(Z=Z, seed=seed)


def sample_linear_covariates(p: int, n: int, entry_law: str, seed: int) -> np.ndarray:
    """n x p matrix of i.i.d. zero-mean unit-variance entries from the named law."""
    if p < 1 or n < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got p={p}, n={n}")
    rng = rng_from(seed, "entries", entry_law)
    if entry_law == "rademacher":
        return (2.0 * rng.integers(0, 2, size=(n, p)) - 1.0).astype(np.float64)
    if entry_law == "uniform":
        half_width = math.sqrt(3.0)
        return rng.uniform(-half_width, half_width, size=(n, p))
    if entry_law == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=(n, p))
    if entry_law == "gaussian":
        return rng.standard_normal((n, p))
    raise InvalidArgumentError(f"unknown entry law {entry_law!r}")


def featurize(model: FeatureModel, Z: np.ndarray) -> np.ndarray:
    """Map covariate rows through the family's featurization, one row per sample."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.covariate_dim:
        raise InvalidArgumentError(
            f"covariates have {Z.shape[1] if Z.ndim == 2 else '?'} columns, "
            f"model expects {model.covariate_dim}"
        )
    if model.family == "random-features":
        return model.activation.value(Z @ model.W)
    if model.family == "neural-tangent":
        # Block j of each row is z * sigma'(w_j^T z); reshape(m, d).T recovers
        # the d x m T-matrix layout used by the operator-norm projection.
        S = model.activation.derivative(Z @ model.W)  # n x m
        n = Z.shape[0]
        return (S[:, :, None] * Z[:, None, :]).reshape(n, model.p)
    return Z @ model.sigma_half.T


def draw_features(model: FeatureModel, n: int, seed: int) -> np.ndarray:
    """Fresh featurized batch: sample covariates, then featurize."""
    return featurize(model, sample_covariates(model, n, seed).Z)


def nt_theta_matrix(theta: np.ndarray, d: int, m: int) -> np.ndarray:
    """Reshape a length-(m d) parameter vector to its d x m block matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != m * d:
        raise InvalidArgumentError(f"expected length {m * d}, got {theta.size}")
    return theta.reshape(m, d).T


def random_features_model(d: int, p: int, activation: Activation, seed: int) -> FeatureModel:
    return FeatureModel(
        family="random-features",
        d=d,
        p=p,
        W=sample_sphere_weights(d, p, seed),
        activation=activation,
    )


def neural_tangent_model(d: int, m: int, activation: Activation, seed: int) -> FeatureModel:
    return FeatureModel(
        family="neural-tangent",
        d=d,
        p=m * d,
        m=m,
        W=sample_sphere_weights(d, m, seed),
        activation=activation,
    )


def linear_model(
    sigma_half: np.ndarray, entry_law: str = "rademacher", nu: float = 1.0
) -> FeatureModel:
    sigma_half = np.asarray(sigma_half, dtype=np.float64)
    return FeatureModel(
        family="linear-independent",
        d=sigma_half.shape[0],
        p=sigma_half.shape[0],
        sigma_half=sigma_half,
        nu=nu,
        entry_law=entry_law,
    )
