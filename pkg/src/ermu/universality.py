"""Matched Monte Carlo trials for a feature family and its Gaussian twin.

A trial draws one featurized batch X and one Gaussian batch G with matched
covariance, reuses the same label-noise vector for both arms, solves the
constrained ERM on each, and records optimal train risks plus Monte Carlo
test risks at the two solutions. Campaign-level statistics (bootstrap CIs of
the train gap, bounded-Lipschitz gaps, KS distances) operationalize the
claim that the two arms agree asymptotically.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ermu.erm import (
    ConstraintSet,
    ErmProblem,
    Labeler,
    Loss,
    Regularizer,
    SolverConfig,
    data_risk,
    data_risk_grad,
    labels_from_noise,
    project_constraint,
    solve_erm,
    train_risk,
    train_risk_grad,
    mean_with_jackknife_se,
)
from ermu.errors import InvalidArgumentError, SolverDivergedError
from ermu.features import (
    Activation,
    FeatureModel,
    draw_features,
    linear_model,
    neural_tangent_model,
    random_features_model,
)
from ermu.gaussian import (
    GaussianEquivalent,
    empirical_equivalent,
    hermite_exact_equivalent,
    linear_exact_equivalent,
    monte_carlo_equivalent,
    sample_gaussian,
)
from ermu.seeds import derive_seed, rng_from
from ermu.solver import pgd_minimize

FAMILY_KINDS = ("random-features", "neural-tangent", "linear-independent", "control-gaussian")


@dataclass(frozen=True)
class FamilySpec:
    """Config-level description of one feature family in a campaign."""

    id: str
    kind: str
    activation: str = ""
    hermite_coeffs: tuple[float, ...] = ()
    entry_law: str = "rademacher"
    nu: float = 1.0
    gamma_p: float = 0.75
    gamma_d_over_p: float = 0.5
    gamma_tilde: float = 1.0
    radius: float = 3.0
    constraint: str = ""
    cov_mode: str = ""
    hermite_order: int = 41
    cov_samples_per_dim: int = 50
    jitter_rel: float = 1e-10
    theta_star_scale: float = 1.0
    sizes: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise InvalidArgumentError(f"unknown family kind {self.kind!r}")
        defaults = {
            "random-features": ("tanh-rf", "linf-ball", "monte-carlo"),
            "neural-tangent": ("shifted-sine-nt", "nt-operator-ball", "monte-carlo"),
            "linear-independent": ("", "linf-ball", "linear-exact"),
            "control-gaussian": ("", "linf-ball", "linear-exact"),
        }[self.kind]
        if not self.activation:
            object.__setattr__(self, "activation", defaults[0])
        if not self.constraint:
            object.__setattr__(self, "constraint", defaults[1])
        if not self.cov_mode:
            object.__setattr__(self, "cov_mode", defaults[2])

    def build_activation(self) -> Optional[Activation]:
        if self.kind in ("linear-independent", "control-gaussian"):
            return None
        if self.activation == "custom-hermite":
            return Activation(kind="custom-hermite", hermite_coeffs=self.hermite_coeffs)
        return Activation(kind=self.activation)

    def resolve_size(self, base: int) -> dict:
        """Resolve (n, p, d, m) from a ladder entry.

        RF and linear ladders are in n; the neural-tangent ladder is in d
        (m = round(gamma_tilde d), p = m d, n = round(p / gamma_p)). Explicit
        ``sizes`` entries override the derived n.
        """
        if self.kind == "neural-tangent":
            d = int(base)
            m = max(1, round(self.gamma_tilde * d))
            p = m * d
            n = max(1, round(p / self.gamma_p))
        else:
            n = int(base)
            p = max(1, round(self.gamma_p * n))
            d = max(2, round(self.gamma_d_over_p * p)) if self.kind == "random-features" else p
            m = 0
        for override in self.sizes:
            if (self.kind == "neural-tangent" and override.get("d") == base) or (
                self.kind != "neural-tangent" and override.get("n") == base
            ):
                n = int(override.get("n", n))
                d = int(override.get("d", d))
                if self.kind == "neural-tangent":
                    m = max(1, round(self.gamma_tilde * d))
                    p = m * d
        return {"n": n, "p": p, "d": d, "m": m}


@dataclass(frozen=True)
class ProblemSpec:
    loss: str = "huber"
    loss_delta: float = 1.0
    labeler: str = "linear"
    tau: float = 0.5
    noise_law: str = "gaussian"
    clip_bound: float = 1.0
    smoothing: float = 0.1
    regularizer: str = "ridge"
    lam: float = 0.1
    k: int = 1


@dataclass(frozen=True)
class FamilyInstance:
    """One (family, size) cell: frozen weights, twin sampler, problem."""

    spec: FamilySpec
    n: int
    p: int
    d: int
    m: int
    model: FeatureModel
    equiv: Optional[GaussianEquivalent]  # None means per-trial empirical
    problem: ErmProblem

    @property
    def family_id(self) -> str:
        return self.spec.id


def _theta_star(cset: ConstraintSet, p: int, scale: float, seed: int) -> np.ndarray:
    rng = rng_from(seed, "theta-star")
    if cset.kind == "linf-ball":
        signs = 2.0 * rng.integers(0, 2, size=p) - 1.0
        theta = signs * (scale / math.sqrt(p))
    elif cset.kind == "nt-operator-ball":
        T = rng.standard_normal((cset.d, cset.m))
        top = float(np.linalg.svd(T, compute_uv=False)[0])
        T *= (scale / math.sqrt(cset.d)) / top
        theta = T.T.reshape(-1)
    else:
        direction = rng.standard_normal(p)
        theta = direction * (scale / float(np.linalg.norm(direction)))
    return project_constraint(cset, theta)


def build_instance(
    spec: FamilySpec, problem_spec: ProblemSpec, base_size: int, master_seed: int
) -> FamilyInstance:
    if problem_spec.loss == "squared":
        warnings.warn(
            "squared loss is not globally Lipschitz; admitted for the ridge baseline only",
            stacklevel=2,
        )
    dims = spec.resolve_size(base_size)
    n, p, d, m = dims["n"], dims["p"], dims["d"], dims["m"]
    w_seed = derive_seed(master_seed, spec.id, n, "weights")
    activation = spec.build_activation()
    if spec.kind == "random-features":
        model = random_features_model(d, p, activation, w_seed)
    elif spec.kind == "neural-tangent":
        model = neural_tangent_model(d, m, activation, w_seed)
    elif spec.kind == "linear-independent":
        model = linear_model(np.eye(p), entry_law=spec.entry_law, nu=spec.nu)
    else:  # control: both arms standard Gaussian, independently sampled
        model = linear_model(np.eye(p), entry_law="gaussian", nu=1.0)

    if spec.cov_mode == "linear-exact":
        equiv = linear_exact_equivalent(model)
    elif spec.cov_mode == "hermite-exact":
        equiv = hermite_exact_equivalent(model, spec.hermite_order, spec.jitter_rel)
    elif spec.cov_mode == "monte-carlo":
        n_cov = max(p, spec.cov_samples_per_dim * p)
        equiv = monte_carlo_equivalent(
            model, n_cov, derive_seed(master_seed, spec.id, n, "covariance"), spec.jitter_rel
        )
    elif spec.cov_mode == "empirical":
        equiv = None
    else:
        raise InvalidArgumentError(f"unknown covariance mode {spec.cov_mode!r}")

    cset = ConstraintSet(kind=spec.constraint, R=spec.radius, p=p, d=d, m=max(m, 1))
    theta_star = _theta_star(
        cset, p, spec.theta_star_scale, derive_seed(master_seed, spec.id, n, "theta-star")
    )
    problem = ErmProblem(
        loss=Loss(kind=problem_spec.loss, delta=problem_spec.loss_delta),
        labeler=Labeler(
            eta_kind=problem_spec.labeler,
            tau=problem_spec.tau,
            noise_law=problem_spec.noise_law,
            clip_bound=problem_spec.clip_bound,
            smoothing=problem_spec.smoothing,
        ),
        theta_star=theta_star,
        regularizer=Regularizer(kind=problem_spec.regularizer, lam=problem_spec.lam),
        constraint=cset,
        k=problem_spec.k,
        head=(1.0,) * problem_spec.k,
    )
    return FamilyInstance(
        spec=spec, n=n, p=p, d=d, m=m, model=model, equiv=equiv, problem=problem
    )


@dataclass
class TrialRow:
    """One CSV row: a single arm of a coupled trial.

    ``theta_hat`` is an in-memory reference for callers that post-process
    solutions; it never enters the CSV stream.
    """

    family: str
    n: int
    p: int
    trial: int
    seed: int
    train_opt: float
    test_x: float
    test_x_se: float
    test_g: float
    test_g_se: float
    iters: int
    flags: str
    theta_hat: Optional[np.ndarray] = None

    CSV_HEADER = "family,n,p,trial,seed,train_opt,test_x,test_x_se,test_g,test_g_se,iters,flags"

    @property
    def arm(self) -> str:
        for token in self.flags.split(";"):
            if token.startswith("arm:"):
                return token[4:]
        return "?"

    @property
    def quarantined(self) -> bool:
        return "quarantined" in self.flags.split(";")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def trial_row_to_csv(row: TrialRow) -> list[str]:
    return [
        row.family,
        str(row.n),
        str(row.p),
        str(row.trial),
        str(row.seed),
        _fmt(row.train_opt),
        _fmt(row.test_x),
        _fmt(row.test_x_se),
        _fmt(row.test_g),
        _fmt(row.test_g_se),
        str(row.iters),
        row.flags,
    ]


def trial_row_from_csv(fields: Sequence[str]) -> TrialRow:
    return TrialRow(
        family=fields[0],
        n=int(fields[1]),
        p=int(fields[2]),
        trial=int(fields[3]),
        seed=int(fields[4]),
        train_opt=float(fields[5]),
        test_x=float(fields[6]),
        test_x_se=float(fields[7]),
        test_g=float(fields[8]),
        test_g_se=float(fields[9]),
        iters=int(fields[10]),
        flags=fields[11],
    )


def run_single_trial(
    instance: FamilyInstance,
    trial: int,
    master_seed: int,
    solver_cfg: SolverConfig,
    n_test: int,
) -> tuple[TrialRow, TrialRow]:
    """Run the coupled X/G pair for one trial; never raises on solver failure."""
    spec, n, p = instance.spec, instance.n, instance.p
    problem = instance.problem
    trial_seed = derive_seed(master_seed, spec.id, n, trial)
    eps = problem.labeler.draw_noise(n, derive_seed(trial_seed, "eps"))

    X = draw_features(instance.model, n, derive_seed(trial_seed, "covariates"))
    equiv = instance.equiv if instance.equiv is not None else empirical_equivalent(X, spec.jitter_rel)
    G = sample_gaussian(equiv, n, derive_seed(trial_seed, "gaussian-arm"))

    y_x = labels_from_noise(problem, X, eps)
    y_g = labels_from_noise(problem, G, eps)

    test_seed = derive_seed(trial_seed, "test")
    X_test = G_test = eps_test = None
    if n_test > 0:
        X_test = draw_features(instance.model, n_test, derive_seed(test_seed, "x"))
        G_test = sample_gaussian(equiv, n_test, derive_seed(test_seed, "g"))
        eps_test = problem.labeler.draw_noise(n_test, derive_seed(test_seed, "noise"))

    rows = []
    for arm, data, labels in (("x", X, y_x), ("g", G, y_g)):
        flags = [f"arm:{arm}"]
        theta_hat = None
        try:
            sol = solve_erm(
                problem, data, labels, solver_cfg, seed=derive_seed(trial_seed, "solver", arm)
            )
            theta_hat = sol.theta_hat
            train_opt = sol.objective
            iters = sol.iterations
            flags.extend(sol.flags)
            if n_test > 0:
                tx, tx_se = _risk_on(problem, sol.theta_hat, X_test, eps_test)
                tg, tg_se = _risk_on(problem, sol.theta_hat, G_test, eps_test)
            else:
                tx = tx_se = tg = tg_se = float("nan")
                flags.append("no-test")
        except SolverDivergedError as exc:
            train_opt = tx = tx_se = tg = tg_se = float("nan")
            iters = exc.iteration
            flags.append("quarantined")
        rows.append(
            TrialRow(
                family=spec.id,
                n=n,
                p=p,
                trial=trial,
                seed=trial_seed,
                train_opt=train_opt,
                test_x=tx,
                test_x_se=tx_se,
                test_g=tg,
                test_g_se=tg_se,
                iters=iters,
                flags=";".join(flags),
                theta_hat=theta_hat,
            )
        )
    return rows[0], rows[1]


def _risk_on(problem, theta, batch, eps) -> tuple[float, float]:
    labels = labels_from_noise(problem, batch, eps)
    vals = problem.loss.value(problem.scores(theta, batch), labels)
    return mean_with_jackknife_se(vals)


def _trial_chunk(args):
    instance, trials, master_seed, solver_cfg, n_test = args
    out = []
    for t in trials:
        out.append((t, run_single_trial(instance, t, master_seed, solver_cfg, n_test)))
    return out


def run_trials(
    instances: Sequence[FamilyInstance],
    trials: int,
    master_seed: int,
    solver_cfg: SolverConfig = SolverConfig(),
    n_test: int = 2000,
    threads: int = 1,
) -> list[TrialRow]:
    """All trials for all instances, deterministically ordered.

    Work is split into per-instance trial chunks executed by a process pool
    when ``threads`` > 1; results are sorted by (instance order, trial, arm)
    so the output stream does not depend on scheduling.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    tasks = []
    for idx, inst in enumerate(instances):
        chunk = max(1, math.ceil(trials / max(1, threads)))
        for start in range(0, trials, chunk):
            trial_ids = list(range(start, min(trials, start + chunk)))
            tasks.append((idx, (inst, trial_ids, master_seed, solver_cfg, n_test)))

    results: dict[tuple[int, int], tuple[TrialRow, TrialRow]] = {}
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for (idx, _), chunk_result in zip(tasks, pool.map(_trial_chunk, [t[1] for t in tasks])):
                for t, pair in chunk_result:
                    results[(idx, t)] = pair
    else:
        for idx, args in tasks:
            for t, pair in _trial_chunk(args):
                results[(idx, t)] = pair

    rows: list[TrialRow] = []
    for idx in range(len(instances)):
        for t in range(trials):
            pair = results[(idx, t)]
            rows.extend(pair)
    return rows


# ---------------------------------------------------------------------------
# Perturbed risks and near-minimizer sweeps
# ---------------------------------------------------------------------------


class FrozenTestRisk:
    """Deterministic surrogate for the twin-model test risk.

    Holds a frozen Gaussian batch and noise draws; evaluating at theta is a
    plain empirical risk, so perturbed objectives stay deterministic in theta.
    """

    def __init__(self, problem: ErmProblem, equiv: GaussianEquivalent, n_test: int, seed: int):
        if n_test < 1:
            raise InvalidArgumentError("n_test must be positive for a frozen surrogate")
        self.problem = problem
        self.G = sample_gaussian(equiv, n_test, derive_seed(seed, "frozen-g"))
        eps = problem.labeler.draw_noise(n_test, derive_seed(seed, "frozen-eps"))
        self.y = labels_from_noise(problem, self.G, eps)

    def value(self, theta: np.ndarray) -> float:
        return data_risk(self.problem, theta, self.G, self.y)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return data_risk_grad(self.problem, theta, self.G, self.y)


class ConstantTestRisk:
    """Degenerate surrogate with constant value; gradient is zero."""

    def __init__(self, value: float):
        self._value = float(value)

    def value(self, theta: np.ndarray) -> float:
        return self._value

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(theta, dtype=np.float64))


@dataclass
class PerturbedRiskSweep:
    s_values: list[float]
    base_opt: float
    opt_values: dict[float, float]
    D: dict[float, float]
    test_at_theta0: float
    solver_gap: float
    quarantined: list[float] = field(default_factory=list)

    def sandwich_ok(self, slack: float = 0.0) -> bool:
        for s in self.s_values:
            if s <= 0 or s not in self.D or -s not in self.D:
                continue
            if not (self.D[s] <= self.test_at_theta0 + slack):
                return False
            if not (self.D[-s] >= self.test_at_theta0 - slack):
                return False
        return True


def _validate_s_grid(s_grid: Sequence[float]) -> list[float]:
    values = sorted(float(s) for s in s_grid)
    if any(s == 0.0 for s in values):
        raise InvalidArgumentError("s grid must exclude zero")
    pos = sorted(s for s in values if s > 0)
    neg = sorted(-s for s in values if s < 0)
    if pos != neg:
        raise InvalidArgumentError("s grid must be symmetric around zero")
    return values


def _solve_composite(
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    surrogate,
    s: float,
    cfg: SolverConfig,
    warm_start: np.ndarray,
    seed: int,
) -> tuple[np.ndarray, float, float]:
    """Minimize train risk + s * surrogate over the constraint set."""

    def objective(theta):
        return train_risk(problem, theta, X, y) + s * surrogate.value(theta)

    def gradient(theta):
        return train_risk_grad(problem, theta, X, y) + s * surrogate.grad(theta)

    def project(theta):
        return project_constraint(problem.constraint, theta)

    best = None
    for r in range(max(1, cfg.restarts)):
        if r == 0:
            x0 = project(np.asarray(warm_start, dtype=np.float64).copy())
        else:
            x0 = project(rng_from(seed, "restart", r).standard_normal(warm_start.shape))
        state = pgd_minimize(objective, gradient, project, x0, cfg.pgd())
        if best is None or state.value < best[0]:
            best = (state.value, r, state)
    _, _, state = best
    return state.x, state.value, state.grad_map_norm


def perturbed_sweep(
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    equiv: Optional[GaussianEquivalent],
    s_grid: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    n_test: int = 2000,
    seed: int = 0,
    surrogate=None,
) -> PerturbedRiskSweep:
    """Minimize train risk + s * frozen twin test risk over a symmetric s grid.

    D(s) = (opt_s - opt_0) / s. Every perturbed solve is warm-started at the
    base solution, so with a monotone solver the convex sandwich
    D(s) <= surrogate(theta_0) <= D(-s) holds by construction up to solver
    tolerance.
    """
    s_values = _validate_s_grid(s_grid)
    if surrogate is None:
        if equiv is None:
            raise InvalidArgumentError("need a Gaussian twin or an explicit surrogate")
        surrogate = FrozenTestRisk(problem, equiv, n_test, derive_seed(seed, "surrogate"))
    base = solve_erm(problem, X, y, cfg, seed=derive_seed(seed, "solve-base"))
    theta0 = base.theta_hat
    test_ref = surrogate.value(theta0)
    solver_gap = base.suboptimality_bound(problem.constraint)
    opt_values: dict[float, float] = {}
    D: dict[float, float] = {}
    quarantined: list[float] = []
    for s in s_values:
        try:
            _, opt_s, gm = _solve_composite(
                problem, X, y, surrogate, s, cfg, theta0, derive_seed(seed, "solve-s", repr(s))
            )
            opt_values[s] = opt_s
            D[s] = (opt_s - base.objective) / s
            solver_gap = max(solver_gap, gm * problem.constraint.diameter())
        except SolverDivergedError:
            quarantined.append(s)
    return PerturbedRiskSweep(
        s_values=s_values,
        base_opt=base.objective,
        opt_values=opt_values,
        D=D,
        test_at_theta0=test_ref,
        solver_gap=solver_gap,
        quarantined=quarantined,
    )


@dataclass
class NearMinimizerResult:
    t_level: float
    achieved_test: float
    residual: float
    feasible: bool
    base_train_opt: float


def min_test_over_near_minimizers(
    problem: ErmProblem,
    X: np.ndarray,
    y: np.ndarray,
    equiv: Optional[GaussianEquivalent],
    t_levels: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    n_test: int = 2000,
    seed: int = 0,
    surrogate=None,
    penalty_weights: Sequence[float] = (10.0, 100.0, 1000.0, 10000.0),
    residual_tol: float = 1e-3,
) -> list[NearMinimizerResult]:
    """Approximately minimize the twin test risk subject to train risk <= t.

    Quadratic-penalty continuation warm-started at the unconstrained ERM
    solution; levels are processed in ascending order and each level also
    inherits the previous level's point, which keeps the reported minima
    monotone in t up to solver tolerance.
    """
    if surrogate is None:
        if equiv is None:
            raise InvalidArgumentError("need a Gaussian twin or an explicit surrogate")
        surrogate = FrozenTestRisk(problem, equiv, n_test, derive_seed(seed, "surrogate"))
    base = solve_erm(problem, X, y, cfg, seed=derive_seed(seed, "solve-base"))
    theta_hat = base.theta_hat
    results: list[NearMinimizerResult] = []
    carried: Optional[np.ndarray] = None

    def project(theta):
        return project_constraint(problem.constraint, theta)

    for t in sorted(float(t) for t in t_levels):
        if t < base.objective - 1e-12:
            results.append(
                NearMinimizerResult(
                    t_level=t,
                    achieved_test=float("nan"),
                    residual=float("nan"),
                    feasible=False,
                    base_train_opt=base.objective,
                )
            )
            continue
        candidates = [theta_hat] if carried is None else [carried, theta_hat]
        best_point = None
        for x0 in candidates:
            point = np.asarray(x0, dtype=np.float64).copy()
            for w in penalty_weights:

                def objective(theta, _w=w):
                    excess = max(0.0, train_risk(problem, theta, X, y) - t)
                    return surrogate.value(theta) + _w * excess * excess

                def gradient(theta, _w=w):
                    excess = max(0.0, train_risk(problem, theta, X, y) - t)
                    g = surrogate.grad(theta)
                    if excess > 0.0:
                        g = g + (2.0 * _w * excess) * train_risk_grad(problem, theta, X, y)
                    return g

                state = pgd_minimize(objective, gradient, project, point, cfg.pgd())
                point = state.x
            test_val = surrogate.value(point)
            residual = max(0.0, train_risk(problem, point, X, y) - t)
            if residual <= residual_tol and (best_point is None or test_val < best_point[0]):
                best_point = (test_val, residual, point)
        # theta_hat itself is feasible whenever t >= base objective.
        base_test = surrogate.value(theta_hat)
        if best_point is None or base_test < best_point[0]:
            best_point = (base_test, 0.0, theta_hat)
        test_val, residual, point = best_point
        carried = point
        results.append(
            NearMinimizerResult(
                t_level=t,
                achieved_test=test_val,
                residual=residual,
                feasible=residual <= residual_tol,
                base_train_opt=base.objective,
            )
        )
    return results
