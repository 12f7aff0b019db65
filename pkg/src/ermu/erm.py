"""Constrained regularized empirical risk minimization.

A problem bundles a scalar loss, a labeling rule, a ground-truth parameter
matrix, a regularizer, and a symmetric convex constraint set. Parameters are
p x k matrices whose columns are constrained individually; predictions pass
through a fixed linear head, so the loss sees a scalar score per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ermu.errors import InvalidArgumentError, LinearSolveError
from ermu.features import nt_theta_matrix
from ermu.seeds import derive_seed, rng_from
from ermu.solver import PgdConfig, pgd_minimize

LOSS_KINDS = ("logistic", "huber", "squared", "pseudo-huber")
ETA_KINDS = ("linear", "clipped-linear", "sign-smooth")
NOISE_LAWS = ("gaussian", "rademacher")
CONSTRAINT_KINDS = ("l2-ball", "nt-operator-ball", "linf-ball")


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


@dataclass(frozen=True)
class Loss:
    """Scalar loss on (score, label). All kinds except squared are Lipschitz."""

    kind: str = "huber"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}")
        if self.kind in ("huber", "pseudo-huber") and self.delta <= 0:
            raise InvalidArgumentError("huber delta must be positive")

    @property
    def non_lipschitz(self) -> bool:
        return self.kind == "squared"

    @property
    def convex(self) -> bool:
        return True

    def value(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "squared":
            return (u - y) ** 2
        if self.kind == "logistic":
            return np.logaddexp(0.0, -y * u)
        t = u - y
        if self.kind == "huber":
            a = np.abs(t)
            return np.where(a <= self.delta, 0.5 * t * t, self.delta * (a - 0.5 * self.delta))
        return self.delta**2 * (np.sqrt(1.0 + (t / self.delta) ** 2) - 1.0)

    def grad(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Derivative with respect to the score u."""
        if self.kind == "squared":
            return 2.0 * (u - y)
        if self.kind == "logistic":
            return -y * _sigmoid(-y * u)
        t = u - y
        if self.kind == "huber":
            return np.clip(t, -self.delta, self.delta)
        return t / np.sqrt(1.0 + (t / self.delta) ** 2)

    def lipschitz_bound(self, u_bound: float, y_bound: float) -> float:
        """Modulus of u -> loss(u, y) over |u| <= u_bound, |y| <= y_bound."""
        if self.kind == "squared":
            return 2.0 * (u_bound + y_bound)
        if self.kind == "logistic":
            return max(1.0, y_bound)
        return self.delta


@dataclass(frozen=True)
class Labeler:
    """Label rule y = eta(v, eps) with subgaussian noise of scale tau."""

    eta_kind: str = "linear"
    tau: float = 0.0
    noise_law: str = "gaussian"
    clip_bound: float = 1.0
    smoothing: float = 0.1

    def __post_init__(self):
        if self.eta_kind not in ETA_KINDS:
            raise InvalidArgumentError(f"unknown labeler kind {self.eta_kind!r}")
        if self.noise_law not in NOISE_LAWS:
            raise InvalidArgumentError(f"unknown noise law {self.noise_law!r}")
        if self.tau < 0:
            raise InvalidArgumentError("tau must be nonnegative")
        if self.eta_kind == "sign-smooth" and self.smoothing <= 0:
            raise InvalidArgumentError("sign-smooth needs a positive smoothing scale")

    def draw_noise(self, n: int, seed: int) -> np.ndarray:
        rng = rng_from(seed, "label-noise", self.noise_law)
        if self.noise_law == "gaussian":
            return rng.standard_normal(n)
        return (2.0 * rng.integers(0, 2, size=n) - 1.0).astype(np.float64)

    def label(self, v: np.ndarray, eps: np.ndarray) -> np.ndarray:
        if self.eta_kind == "linear":
            return v + self.tau * eps
        if self.eta_kind == "clipped-linear":
            return np.clip(v, -self.clip_bound, self.clip_bound) + self.tau * eps
        return np.tanh(v / self.smoothing) + self.tau * eps

    @property
    def lipschitz_modulus(self) -> float:
        """Joint (v, eps) modulus in the Euclidean norm."""
        lv = 1.0 / self.smoothing if self.eta_kind == "sign-smooth" else 1.0
        return math.hypot(lv, self.tau)


@dataclass(frozen=True)
class ConstraintSet:
    """Symmetric convex constraint applied to each parameter column.

    * ``l2-ball``: Euclidean ball of radius R (R may be inf).
    * ``linf-ball``: coordinate bound R / sqrt(p).
    * ``nt-operator-ball``: bound R / sqrt(d) on the operator norm of the
      d x m reshaping of the column.
    """

    kind: str = "l2-ball"
    R: float = 1.0
    p: int = 0
    d: int = 0
    m: int = 0

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise InvalidArgumentError(f"unknown constraint kind {self.kind!r}")
        if self.R < 0:
            raise InvalidArgumentError("radius must be nonnegative")
        if self.kind == "linf-ball" and self.p <= 0:
            raise InvalidArgumentError("linf-ball needs the ambient dimension p")
        if self.kind == "nt-operator-ball" and (self.d <= 0 or self.m <= 0):
            raise InvalidArgumentError("nt-operator-ball needs block dimensions d, m")

    def project_column(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "l2-ball":
            if not np.isfinite(self.R):
                return theta
            norm = float(np.linalg.norm(theta))
            if norm <= self.R:
                return theta
            return theta * (self.R / norm) if norm > 0 else theta
        if self.kind == "linf-ball":
            bound = self.R / math.sqrt(self.p)
            return np.clip(theta, -bound, bound)
        bound = self.R / math.sqrt(self.d)
        T = nt_theta_matrix(theta, self.d, self.m)
        U, s, Vt = np.linalg.svd(T, full_matrices=False)
        if s.size == 0 or s[0] <= bound:
            return theta
        T_clipped = (U * np.clip(s, None, bound)) @ Vt
        return T_clipped.T.reshape(-1)

    def contains_column(self, theta: np.ndarray, tol: float = 1e-10) -> bool:
        if self.kind == "l2-ball":
            return not np.isfinite(self.R) or float(np.linalg.norm(theta)) <= self.R + tol
        if self.kind == "linf-ball":
            return float(np.abs(theta).max(initial=0.0)) <= self.R / math.sqrt(self.p) + tol
        T = nt_theta_matrix(theta, self.d, self.m)
        top = float(np.linalg.svd(T, compute_uv=False)[0]) if T.size else 0.0
        return top <= self.R / math.sqrt(self.d) + tol

    def diameter(self) -> float:
        """Euclidean diameter of the set, used for suboptimality bounds."""
        if self.kind == "l2-ball":
            return 2.0 * self.R
        if self.kind == "linf-ball":
            return 2.0 * self.R  # sqrt(p) * R / sqrt(p)
        return 2.0 * self.R * math.sqrt(min(self.d, self.m) / self.d)


def project_constraint(cset: ConstraintSet, theta: np.ndarray) -> np.ndarray:
    """Project a vector or p x k matrix onto the set, column by column."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        return cset.project_column(theta)
    out = np.empty_like(theta)
    for j in range(theta.shape[1]):
        out[:, j] = cset.project_column(theta[:, j])
    return out


def constraint_contains(cset: ConstraintSet, theta: np.ndarray, tol: float = 1e-10) -> bool:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        return cset.contains_column(theta, tol)
    return all(cset.contains_column(theta[:, j], tol) for j in range(theta.shape[1]))


@dataclass(frozen=True)
class Regularizer:
    kind: str = "ridge"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ridge", "none"):
            raise InvalidArgumentError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be nonnegative")

    @property
    def strong_convexity_mu(self) -> float:
        return 2.0 * self.lam if self.kind == "ridge" else 0.0

    def value(self, theta: np.ndarray) -> float:
        if self.kind == "none" or self.lam == 0.0:
            return 0.0
        return self.lam * float(np.sum(theta * theta))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "none" or self.lam == 0.0:
            return np.zeros_like(theta)
        return 2.0 * self.lam * theta


@dataclass(frozen=True)
class ErmProblem:
    """Loss + labeler + ground truth + regularizer + constraint."""

    loss: Loss
    labeler: Labeler
    theta_star: np.ndarray  # p x k_star
    regularizer: Regularizer
    constraint: ConstraintSet
    k: int = 1
    head: tuple[float, ...] = (1.0,)
    star_head: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        ts = np.asarray(self.theta_star, dtype=np.float64)
        if ts.ndim == 1:
            ts = ts[:, None]
        object.__setattr__(self, "theta_star", ts)
        if len(self.head) != self.k:
            raise InvalidArgumentError("head weights must have length k")
        sh = self.star_head if self.star_head is not None else (1.0,) * ts.shape[1]
        if len(sh) != ts.shape[1]:
            raise InvalidArgumentError("star head weights must match theta_star columns")
        object.__setattr__(self, "star_head", tuple(float(v) for v in sh))

    @property
    def p(self) -> int:
        return self.theta_star.shape[0]

    @property
    def k_star(self) -> int:
        return self.theta_star.shape[1]

    def scores(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim == 1:
            theta = theta[:, None]
        return (X @ theta) @ np.asarray(self.head)

    def target_scores(self, X: np.ndarray) -> np.ndarray:
        return (X @ self.theta_star) @ np.asarray(self.star_head)


@dataclass
class ErmSolution:
    theta_hat: np.ndarray
    objective: float
    grad_map_norm: float
    iterations: int
    restarts_used: int
    flags: list[str] = field(default_factory=list)

    def suboptimality_bound(self, cset: ConstraintSet) -> float:
        """First-order bound on the objective gap for a convex problem."""
        return self.grad_map_norm * cset.diameter() + 1e-14


def labels_from_noise(problem: ErmProblem, X: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Labels y_i = eta(theta_star scores, eps_i) with caller-supplied noise."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != problem.p:
        raise InvalidArgumentError(f"X has {X.shape[1]} columns, theta_star has {problem.p} rows")
    if len(eps) != X.shape[0]:
        raise InvalidArgumentError("noise vector length must match the batch")
    return problem.labeler.label(problem.target_scores(X), np.asarray(eps, dtype=np.float64))


def generate_labels(problem: ErmProblem, X: np.ndarray, seed: int) -> np.ndarray:
    """Labels with noise drawn deterministically from ``seed``."""
    eps = problem.labeler.draw_noise(np.asarray(X).shape[0], seed)
    return labels_from_noise(problem, X, eps)


def data_risk(problem: ErmProblem, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Average loss term only, without the regularizer."""
    return float(np.mean(problem.loss.value(problem.scores(theta, X), y)))


def data_risk_grad(
    problem: ErmProblem, theta: np.ndarray, X: np.ndarray, y: np.ndarray
) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    squeeze = theta.ndim == 1
    if squeeze:
        theta = theta[:, None]
    g = problem.loss.grad(problem.scores(theta, X), y)
    grad = (X.T @ g)[:, None] * (np.asarray(problem.head)[None, :] / X.shape[0])
    return grad[:, 0] if squeeze else grad


def train_risk(problem: ErmProblem, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """(1/n) sum loss(theta^T x_i, y_i) + r(theta)."""
    return data_risk(problem, theta, X, y) + problem.regularizer.value(np.asarray(theta))


def train_risk_grad(
    problem: ErmProblem, theta: np.ndarray, X: np.ndarray, y: np.ndarray
) -> np.ndarray:
    return data_risk_grad(problem, theta, X, y) + problem.regularizer.grad(
        np.asarray(theta, dtype=np.float64)
    )


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    tol: float = 1e-8
    restarts: int = 1
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    init_step: float = 1.0
    step_growth: float = 2.0

    def pgd(self) -> PgdConfig:
        return PgdConfig(
            max_iters=self.max_iters,
            tol=self.tol,
            armijo_shrink=self.armijo_shrink,
            armijo_slope=self.armijo_slope,
            init_step=self.init_step,
            step_growth=self.step_growth,
        )


def solve_erm(
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
    warm_start: Optional[np.ndarray] = None,
    seed: int = 0,
) -> ErmSolution:
    """Projected gradient descent over the constraint set, best of ``restarts``.

    Restart 0 starts from the warm start (zero by default); later restarts
    start from projected Gaussian draws. Ties are broken by restart index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError("empty design matrix")
    if X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("X and y row counts differ")

    def objective(theta):
        return train_risk(problem, theta, X, y)

    def gradient(theta):
        return train_risk_grad(problem, theta, X, y)

    def project(theta):
        return project_constraint(problem.constraint, theta)

    shape = (problem.p, problem.k)
    best = None
    for r in range(max(1, cfg.restarts)):
        if r == 0:
            x0 = np.zeros(shape) if warm_start is None else np.asarray(warm_start, dtype=np.float64).reshape(shape)
            x0 = project(x0)
        else:
            rng = rng_from(seed, "restart", r)
            x0 = project(rng.standard_normal(shape))
        state = pgd_minimize(objective, gradient, project, x0, cfg.pgd())
        if best is None or state.value < best[0]:
            best = (state.value, r, state)
    value, _, state = best
    theta_hat = state.x
    flags = list(state.flags)
    # Re-evaluate so the reported objective is exactly the risk at theta_hat.
    objective_value = train_risk(problem, theta_hat, X, y)
    return ErmSolution(
        theta_hat=theta_hat,
        objective=objective_value,
        grad_map_norm=state.grad_map_norm,
        iterations=state.iterations,
        restarts_used=max(1, cfg.restarts),
        flags=flags,
    )


def solve_ridge_closed_form(
    X: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    """Minimizer of (1/n) ||X theta - y||^2 + lam ||theta||^2 via normal equations."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    A = X.T @ X / n + lam * np.eye(p)
    b = X.T @ y / n
    try:
        theta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.trace(A)) / p)
        try:
            theta = np.linalg.solve(A + jitter * np.eye(p), b)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"normal equations singular beyond jitter: {exc}") from exc
    residual = A @ theta - b
    scale = max(1.0, float(np.linalg.norm(b)))
    if np.linalg.norm(residual) > 1e-8 * scale:
        raise LinearSolveError(
            f"normal equations solved poorly (residual {np.linalg.norm(residual):.3e})"
        )
    objective = float(np.mean((X @ theta - y) ** 2) + lam * np.dot(theta, theta))
    return theta, objective


class FeatureSampler:
    """Test-time sampler that draws covariates and featurizes them."""

    def __init__(self, model):
        self.model = model

    def draw(self, n: int, seed: int) -> np.ndarray:
        from ermu.features import draw_features

        return draw_features(self.model, n, seed)


class GaussianSampler:
    """Test-time sampler for the Gaussian twin."""

    def __init__(self, equiv):
        self.equiv = equiv

    def draw(self, n: int, seed: int) -> np.ndarray:
        from ermu.gaussian import sample_gaussian

        return sample_gaussian(self.equiv, n, seed)


class FixedSampler:
    """Replays a frozen batch; used for degenerate and unit-test paths."""

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X, dtype=np.float64)

    def draw(self, n: int, seed: int) -> np.ndarray:
        if n > self.X.shape[0]:
            raise InvalidArgumentError("fixed sampler exhausted")
        return self.X[:n]


def test_risk(
    problem: ErmProblem,
    theta: np.ndarray,
    sampler,
    n_test: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of E[loss(theta^T x, eta(theta_star^T x, eps))].

    Returns (estimate, jackknife standard error); for the mean the jackknife
    SE coincides with s / sqrt(n).
    """
    if n_test < 1:
        raise InvalidArgumentError("n_test must be positive")
    X = sampler.draw(n_test, derive_seed(seed, "test-draws"))
    eps = problem.labeler.draw_noise(n_test, derive_seed(seed, "test-noise"))
    y = labels_from_noise(problem, X, eps)
    vals = problem.loss.value(problem.scores(theta, X), y)
    return mean_with_jackknife_se(vals)


def mean_with_jackknife_se(vals: np.ndarray) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=np.float64)
    n = vals.size
    mean = float(vals.mean())
    if n < 2:
        return mean, 0.0
    centered = vals - mean
    se = math.sqrt(float(np.dot(centered, centered)) / (n * (n - 1)))
    return mean, se
