"""Softmin free energy over finite candidate sets and interpolation paths.

The free energy of a candidate set {Theta_1..Theta_M} at inverse temperature
beta is

    f = -(1 / (n beta)) * log sum_m exp(-beta n R_n(Theta_m))

computed with a max shift so the exponent never overflows. The n-scaled
exponent is the convention under which the finite-set bound
min - log(M)/(n beta) <= f <= min closes, and f is non-decreasing in beta
with derivative H / (beta^2 n) for H the Shannon entropy of the softmin
weights.

A true covering net of the constraint set is exponentially large; candidate
sets here are random nets or clouds around a solver solution. Every property
asserted holds for arbitrary finite candidate sets, so the substitution is
sound for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ermu.erm import ErmProblem, labels_from_noise, project_constraint
from ermu.errors import InvalidArgumentError
from ermu.seeds import rng_from


@dataclass(frozen=True)
class CandidateSet:
    """Finite set of feasible parameter matrices (M x p x k array)."""

    points: np.ndarray
    construction: str = "random-net"
    alpha: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 2:
            pts = pts[:, :, None]
        if pts.ndim != 3 or pts.shape[0] < 1:
            raise InvalidArgumentError("candidate set needs at least one p x k point")
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.shape[0]


def random_net(problem: ErmProblem, M: int, seed: int, scale: float = 1.0) -> CandidateSet:
    """M projected Gaussian draws inside the constraint set."""
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    rng = rng_from(seed, "random-net")
    pts = np.empty((M, problem.p, problem.k))
    for i in range(M):
        draw = scale * rng.standard_normal((problem.p, problem.k)) / math.sqrt(problem.p)
        pts[i] = project_constraint(problem.constraint, draw)
    return CandidateSet(points=pts, construction="random-net", alpha=scale)


def solution_cloud(
    problem: ErmProblem, theta_hat: np.ndarray, M: int, alpha: float, seed: int
) -> CandidateSet:
    """The solution plus M-1 perturbations at radii alpha, alpha/2, alpha/4, ...

    The radius schedule cycles so the cloud probes several resolutions around
    the solver solution; every point is projected back into the set.
    """
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    if theta_hat.ndim == 1:
        theta_hat = theta_hat[:, None]
    rng = rng_from(seed, "solution-cloud")
    pts = np.empty((M, theta_hat.shape[0], theta_hat.shape[1]))
    pts[0] = project_constraint(problem.constraint, theta_hat)
    n_levels = 8
    for i in range(1, M):
        radius = alpha / (2.0 ** ((i - 1) % n_levels))
        direction = rng.standard_normal(theta_hat.shape)
        norm = np.linalg.norm(direction)
        if norm > 0:
            direction *= radius / norm
        pts[i] = project_constraint(problem.constraint, theta_hat + direction)
    return CandidateSet(points=pts, construction="solution-cloud", alpha=alpha)


def candidate_risks(
    candidates: CandidateSet, problem: ErmProblem, X: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Empirical risk of every candidate, vectorized over the set."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pts = candidates.points
    head = np.asarray(problem.head)
    # scores[m, i] = head . (Theta_m^T x_i)
    scores = np.einsum("ip,mpk,k->mi", X, pts, head, optimize=True)
    losses = problem.loss.value(scores, y[None, :]).mean(axis=1)
    regs = problem.regularizer.lam * np.einsum("mpk->m", pts * pts) if problem.regularizer.kind == "ridge" else np.zeros(len(pts))
    return losses + regs


def softmin_free_energy(values: np.ndarray, n: int, beta: float) -> float:
    """Max-shifted log-sum-exp softmin of risk values."""
    if beta <= 0:
        raise InvalidArgumentError("beta must be positive")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidArgumentError("empty candidate set")
    vmin = float(values.min())
    logsum = float(np.log(np.sum(np.exp(-beta * n * (values - vmin)))))
    return vmin - logsum / (n * beta)


def free_energy(
    candidates: CandidateSet,
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    beta: float,
) -> float:
    values = candidate_risks(candidates, problem, X, y)
    return softmin_free_energy(values, np.asarray(X).shape[0], beta)


@dataclass(frozen=True)
class InterpolationPath:
    """Sine/cosine interpolation U_t = sin(t) X + cos(t) G on [0, pi/2].

    The label noise is drawn once and reused at every point so the labels
    vary only through U_t.
    """

    X: np.ndarray
    G: np.ndarray
    grid: tuple[float, ...]
    eps: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        G = np.asarray(self.G, dtype=np.float64)
        if X.shape != G.shape:
            raise InvalidArgumentError("X and G must share a shape")
        grid = tuple(float(t) for t in self.grid)
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise InvalidArgumentError("grid must be sorted ascending")
        if grid and (grid[0] < -1e-12 or grid[-1] > math.pi / 2 + 1e-12):
            raise InvalidArgumentError("grid must lie in [0, pi/2]")
        eps = np.asarray(self.eps, dtype=np.float64)
        if eps.shape[0] != X.shape[0]:
            raise InvalidArgumentError("noise vector must match the row count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "eps", eps)

    def matrix_at(self, t: float) -> np.ndarray:
        s, c = math.sin(t), math.cos(t)
        # sin/cos of the float nearest pi/2 are not exactly (1, 0); snap so
        # the endpoints reproduce the pure matrices bit-for-bit.
        if abs(s) < 1e-15:
            s = 0.0
        if abs(c) < 1e-15:
            c = 0.0
        return s * self.X + c * self.G


def free_energy_path(
    path: InterpolationPath,
    candidates: CandidateSet,
    problem: ErmProblem,
    beta: float,
) -> list[tuple[float, float]]:
    """Free energy along the path, with labels regenerated at each t."""
    out = []
    n = path.X.shape[0]
    for t in path.grid:
        U = path.matrix_at(t)
        y_t = labels_from_noise(problem, U, path.eps)
        values = candidate_risks(candidates, problem, U, y_t)
        out.append((t, softmin_free_energy(values, n, beta)))
    return out


def path_slope_bound(
    path: InterpolationPath,
    candidates: CandidateSet,
    problem: ErmProblem,
) -> float:
    """Runtime bound on |df/dt| from data norms and Lipschitz moduli.

    d/dt U_t has rows cos(t) x_i - sin(t) g_i, so each row norm is at most
    ||x_i|| + ||g_i||; the loss and labeler moduli and the candidate radii
    turn that into a slope bound for the softmin (a softmin of functions
    with a common Lipschitz bound inherits it).
    """
    row_budget = np.linalg.norm(path.X, axis=1) + np.linalg.norm(path.G, axis=1)
    theta_norm = float(max(np.linalg.norm(candidates.points[i]) for i in range(candidates.M)))
    star_norm = float(np.linalg.norm(problem.theta_star @ np.asarray(problem.star_head)))
    head_norm = float(np.linalg.norm(np.asarray(problem.head)))
    score_bound = (theta_norm * head_norm + star_norm) * float(row_budget.max(initial=0.0))
    y_bound = problem.labeler.lipschitz_modulus * (score_bound + float(np.abs(path.eps).max(initial=0.0)) + 1.0)
    loss_lip = problem.loss.lipschitz_bound(score_bound, y_bound)
    sensitivity = theta_norm * head_norm + problem.labeler.lipschitz_modulus * star_norm
    return loss_lip * sensitivity * float(row_budget.mean()) + 1e-12


@dataclass
class SandwichReport:
    betas: list[float]
    values: list[float]
    minimum: float
    lower_bounds: list[float]
    sandwich_ok: bool
    monotone_ok: bool
    offending_betas: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.sandwich_ok and self.monotone_ok


def entropy_sandwich_check(
    candidates: CandidateSet,
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    beta_grid: Sequence[float],
) -> SandwichReport:
    """Check min - log(M)/(n beta) <= f(beta) <= min and monotonicity in beta."""
    betas = [float(b) for b in beta_grid]
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidArgumentError("beta grid must be ascending")
    values = candidate_risks(candidates, problem, X, y)
    n = np.asarray(X).shape[0]
    vmin = float(values.min())
    logM = math.log(candidates.M)
    fs, lowers, offending = [], [], []
    for beta in betas:
        f = softmin_free_energy(values, n, beta)
        lower = vmin - logM / (n * beta)
        fs.append(f)
        lowers.append(lower)
        if not (lower <= f <= vmin):
            offending.append(beta)
    monotone_ok = all(f2 >= f1 - 1e-13 for f1, f2 in zip(fs, fs[1:]))
    return SandwichReport(
        betas=betas,
        values=fs,
        minimum=vmin,
        lower_bounds=lowers,
        sandwich_ok=not offending,
        monotone_ok=monotone_ok,
        offending_betas=offending,
    )
