"""ERM problems: labels, risks, solver, projections, test risk."""

import math

import numpy as np
import pytest

from ermu.erm import (
    ConstraintSet,
    ErmProblem,
    FixedSampler,
    GaussianSampler,
    Labeler,
    Loss,
    Regularizer,
    SolverConfig,
    constraint_contains,
    data_risk,
    generate_labels,
    labels_from_noise,
    project_constraint,
    solve_erm,
    solve_ridge_closed_form,
    test_risk as eval_test_risk,
    train_risk,
    train_risk_grad,
)
from ermu.errors import InvalidArgumentError
from ermu.gaussian import GaussianEquivalent
from ermu.seeds import rng_from


def make_problem(p, loss="squared", lam=0.0, tau=0.0, constraint=None, theta_star=None, **kw):
    return ErmProblem(
        loss=Loss(loss, **({"delta": kw["delta"]} if "delta" in kw else {})),
        labeler=Labeler(eta_kind=kw.get("eta", "linear"), tau=tau,
                        noise_law=kw.get("noise_law", "gaussian"),
                        smoothing=kw.get("smoothing", 0.1)),
        theta_star=theta_star if theta_star is not None else np.zeros((p, 1)),
        regularizer=Regularizer("ridge" if lam else "none", lam),
        constraint=constraint or ConstraintSet("l2-ball", R=float("inf")),
    )


class TestGenerateLabels:
    def test_noiseless_linear(self):
        p = 4
        theta_star = np.zeros((p, 1))
        theta_star[0, 0] = 1.0
        problem = make_problem(p, theta_star=theta_star)
        X = np.zeros((1, p))
        X[0, 0] = 3.0
        assert generate_labels(problem, X, seed=0)[0] == 3.0

    def test_sign_smooth_approximates_sign(self):
        theta_star = np.ones((1, 1))
        problem = make_problem(1, theta_star=theta_star, eta="sign-smooth", smoothing=1e-3)
        v = np.array([[0.1], [-0.25], [2.0]])
        y = generate_labels(problem, v, seed=0)
        assert np.allclose(y, np.sign(v[:, 0]), atol=1e-10)

    def test_noise_variance(self):
        p = 3
        theta_star = rng_from(1, "ts").standard_normal((p, 1))
        problem = make_problem(p, theta_star=theta_star, tau=1.0)
        X = rng_from(2, "x").standard_normal((100_000, p))
        y = generate_labels(problem, X, seed=7)
        clean = problem.target_scores(X)
        assert abs(np.var(y - clean) - 1.0) <= 0.03

    def test_shared_noise_couples_arms(self):
        p = 5
        theta_star = rng_from(3, "ts").standard_normal((p, 1))
        problem = make_problem(p, theta_star=theta_star, tau=0.7)
        eps = problem.labeler.draw_noise(50, seed=11)
        X = rng_from(4, "x").standard_normal((50, p))
        G = rng_from(5, "g").standard_normal((50, p))
        eps_x = (labels_from_noise(problem, X, eps) - problem.target_scores(X)) / 0.7
        eps_g = (labels_from_noise(problem, G, eps) - problem.target_scores(G)) / 0.7
        assert np.allclose(eps_x, eps_g)

    def test_dimension_mismatch(self):
        problem = make_problem(3)
        with pytest.raises(InvalidArgumentError):
            generate_labels(problem, np.zeros((2, 4)), seed=0)


class TestTrainRisk:
    def test_interpolation_gives_zero(self):
        p = 3
        theta_star = rng_from(6, "ts").standard_normal((p, 1))
        problem = make_problem(p, theta_star=theta_star)
        X = rng_from(7, "x").standard_normal((10, p))
        y = generate_labels(problem, X, seed=0)
        assert train_risk(problem, theta_star, X, y) == pytest.approx(0.0, abs=1e-24)

    def test_logistic_at_zero(self):
        problem = make_problem(2, loss="logistic")
        X = rng_from(8, "x").standard_normal((6, 2))
        y = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
        assert train_risk(problem, np.zeros((2, 1)), X, y) == pytest.approx(math.log(2.0))

    def test_hand_instance(self):
        # x = (1, 0), y = 2, theta = (1, 0), squared loss, lambda = 0.5:
        # (1 - 2)^2 + 0.5 * 1 = 1.5
        problem = make_problem(2, lam=0.5)
        value = train_risk(problem, np.array([1.0, 0.0]), np.array([[1.0, 0.0]]), np.array([2.0]))
        assert value == pytest.approx(1.5, abs=1e-15)


class TestGradients:
    @pytest.mark.parametrize("loss", ["logistic", "huber", "squared", "pseudo-huber"])
    @pytest.mark.parametrize("lam", [0.0, 0.2])
    def test_matches_central_differences(self, loss, lam):
        p = 7
        rng = rng_from(9, "grad", loss, int(lam * 10))
        theta_star = rng.standard_normal((p, 1)) / math.sqrt(p)
        problem = make_problem(p, loss=loss, lam=lam, tau=0.4, theta_star=theta_star)
        X = rng.standard_normal((25, p))
        y = generate_labels(problem, X, seed=13)
        h = 1e-5
        for _ in range(20):
            theta = rng.standard_normal((p, 1)) * 0.5
            g = train_risk_grad(problem, theta, X, y)
            direction = rng.standard_normal((p, 1))
            direction /= np.linalg.norm(direction)
            fd = (
                train_risk(problem, theta + h * direction, X, y)
                - train_risk(problem, theta - h * direction, X, y)
            ) / (2 * h)
            analytic = float(np.sum(g * direction))
            assert abs(fd - analytic) <= 1e-5 * max(1.0, abs(fd))


class TestProjection:
    def test_identity_on_members(self):
        rng = rng_from(10, "proj")
        for cset in (
            ConstraintSet("l2-ball", R=2.0),
            ConstraintSet("linf-ball", R=2.0, p=6),
            ConstraintSet("nt-operator-ball", R=2.0, d=3, m=2, p=6),
        ):
            theta = project_constraint(cset, rng.standard_normal(6))
            assert np.allclose(project_constraint(cset, theta), theta)
            assert constraint_contains(cset, theta)

    def test_l2_radial_scaling(self):
        cset = ConstraintSet("l2-ball", R=1.0)
        assert np.allclose(project_constraint(cset, np.array([3.0, 4.0])), [0.6, 0.8])

    def test_linf_clamps(self):
        cset = ConstraintSet("linf-ball", R=2.0, p=4)
        bound = 1.0  # R / sqrt(p)
        out = project_constraint(cset, np.array([3.0, -0.5, -9.0, 0.2]))
        assert np.allclose(out, [bound, -0.5, -bound, 0.2])

    def test_operator_ball_clips_singular_values(self):
        c = 0.5
        d = m = 2
        cset = ConstraintSet("nt-operator-ball", R=c * math.sqrt(d), d=d, m=m, p=4)
        T = np.diag([2 * c, c])
        theta = T.T.reshape(-1)
        out = project_constraint(cset, theta)
        T_out = out.reshape(m, d).T
        s = np.linalg.svd(T_out, compute_uv=False)
        assert np.allclose(s, [c, c])

    def test_nonexpansive_on_l2_ball(self):
        rng = rng_from(11, "nonexp")
        cset = ConstraintSet("l2-ball", R=1.0)
        for _ in range(100):
            a, b = rng.standard_normal(5), rng.standard_normal(5)
            pa, pb = project_constraint(cset, a), project_constraint(cset, b)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


class TestSolveErm:
    def test_huge_ridge_sends_theta_to_zero(self):
        p = 4
        rng = rng_from(12, "ridge")
        problem = make_problem(p, loss="huber", lam=1e6)
        X = rng.standard_normal((30, p))
        y = rng.standard_normal(30)
        sol = solve_erm(problem, X, y, SolverConfig())
        assert np.linalg.norm(sol.theta_hat) <= 1e-5
        assert sol.objective == pytest.approx(data_risk(problem, np.zeros((p, 1)), X, y), rel=1e-6)

    def test_matches_normal_equations_small(self):
        rng = rng_from(13, "ne")
        X = rng.standard_normal((5, 2))
        y = rng.standard_normal(5)
        problem = make_problem(2, lam=0.3)
        sol = solve_erm(problem, X, y, SolverConfig(tol=1e-12))
        theta_cf, obj_cf = solve_ridge_closed_form(X, y, 0.3)
        assert np.abs(sol.theta_hat[:, 0] - theta_cf).max() <= 1e-8

    def test_zero_radius_returns_origin(self):
        problem = make_problem(3, lam=0.1, constraint=ConstraintSet("l2-ball", R=0.0))
        rng = rng_from(14, "zr")
        sol = solve_erm(problem, rng.standard_normal((10, 3)), rng.standard_normal(10), SolverConfig())
        assert np.all(sol.theta_hat == 0.0)

    def test_feasibility_of_solution(self):
        rng = rng_from(15, "feas")
        cset = ConstraintSet("linf-ball", R=0.5, p=6)
        problem = make_problem(6, loss="huber", lam=0.01, constraint=cset)
        sol = solve_erm(problem, rng.standard_normal((40, 6)), rng.standard_normal(40), SolverConfig())
        assert constraint_contains(cset, sol.theta_hat, tol=1e-10)

    def test_objective_equals_reevaluated_risk(self):
        rng = rng_from(16, "obj")
        problem = make_problem(4, loss="huber", lam=0.1)
        X, y = rng.standard_normal((25, 4)), rng.standard_normal(25)
        sol = solve_erm(problem, X, y, SolverConfig())
        assert sol.objective == pytest.approx(train_risk(problem, sol.theta_hat, X, y), abs=1e-12)

    def test_empty_data_rejected(self):
        problem = make_problem(3)
        with pytest.raises(InvalidArgumentError):
            solve_erm(problem, np.zeros((0, 3)), np.zeros(0), SolverConfig())

    def test_restart_ties_prefer_lowest_index(self):
        # Constant-zero data: every restart reaches the same objective.
        problem = make_problem(2, loss="huber", lam=0.5, constraint=ConstraintSet("l2-ball", R=1.0))
        X, y = np.zeros((5, 2)), np.zeros(5)
        sol = solve_erm(problem, X, y, SolverConfig(restarts=4), seed=21)
        assert sol.restarts_used == 4
        assert np.allclose(sol.theta_hat, 0.0, atol=1e-8)

    def test_two_head_smoke(self):
        # k = 2 columns with a fixed linear head; gradient and solver agree
        # with the equivalent single-column problem theta_eff = theta @ head.
        p = 5
        rng = rng_from(23, "k2")
        theta_star = rng.standard_normal((p, 1)) / math.sqrt(p)
        problem = ErmProblem(
            loss=Loss("huber"),
            labeler=Labeler(tau=0.3),
            theta_star=theta_star,
            regularizer=Regularizer("ridge", 0.1),
            constraint=ConstraintSet("l2-ball", R=2.0),
            k=2,
            head=(0.8, 0.6),
        )
        X = rng.standard_normal((40, p))
        y = generate_labels(problem, X, seed=9)
        sol = solve_erm(problem, X, y, SolverConfig(), seed=2)
        assert sol.theta_hat.shape == (p, 2)
        assert constraint_contains(problem.constraint, sol.theta_hat)
        assert sol.objective == pytest.approx(train_risk(problem, sol.theta_hat, X, y), abs=1e-12)
        # finite-difference gradient check in the matrix variable
        h = 1e-5
        theta = rng.standard_normal((p, 2)) * 0.3
        g = train_risk_grad(problem, theta, X, y)
        d = rng.standard_normal((p, 2))
        d /= np.linalg.norm(d)
        fd = (
            train_risk(problem, theta + h * d, X, y) - train_risk(problem, theta - h * d, X, y)
        ) / (2 * h)
        assert abs(fd - float(np.sum(g * d))) <= 1e-6 * max(1.0, abs(fd))


class TestClosedForm:
    def test_identity_design_no_ridge(self):
        y = rng_from(17, "y").standard_normal(6)
        theta, obj = solve_ridge_closed_form(np.eye(6), y, 0.0)
        assert np.allclose(theta, y, atol=1e-12)
        assert obj == pytest.approx(0.0, abs=1e-20)

    def test_zero_targets(self):
        X = rng_from(18, "x").standard_normal((8, 3))
        theta, obj = solve_ridge_closed_form(X, np.zeros(8), 0.5)
        assert np.allclose(theta, 0.0)
        assert obj == 0.0

    def test_local_minimality_probe(self):
        rng = rng_from(19, "probe")
        X = rng.standard_normal((6, 4))
        y = rng.standard_normal(6)
        lam = 0.2
        theta, obj = solve_ridge_closed_form(X, y, lam)

        def objective(t):
            return float(np.mean((X @ t - y) ** 2) + lam * np.dot(t, t))

        for _ in range(100):
            delta = rng.standard_normal(4)
            delta *= 1e-3 / np.linalg.norm(delta)
            assert objective(theta + delta) >= obj - 1e-15

    def test_gradient_residual_small(self):
        rng = rng_from(20, "resid")
        X = rng.standard_normal((50, 10))
        y = rng.standard_normal(50)
        theta, _ = solve_ridge_closed_form(X, y, 0.1)
        grad = 2.0 * (X.T @ (X @ theta - y) / 50 + 0.1 * theta)
        assert np.linalg.norm(grad) <= 1e-10


class TestTestRisk:
    def test_constant_loss_values_give_zero_se(self):
        # Frozen nonzero covariates with tau = 0 make every loss value equal.
        p = 3
        theta_star = np.ones((p, 1))
        problem = make_problem(p, theta_star=theta_star)
        x0 = np.ones((500, p))
        theta = np.zeros((p, 1))
        est, se = eval_test_risk(problem, theta, FixedSampler(x0), 500, seed=0)
        assert est == pytest.approx(9.0)  # (0 - 3)^2
        assert se == 0.0

    def test_pure_noise_regression(self):
        # theta = theta_star = e1, g ~ N(0, I), tau = 1:
        # E[(G - (G + eps))^2] = E[eps^2] = 1.
        p = 2
        theta_star = np.zeros((p, 1))
        theta_star[0, 0] = 1.0
        problem = make_problem(p, theta_star=theta_star, tau=1.0)
        equiv = GaussianEquivalent(cov_mode="linear-exact", factor=np.eye(p))
        est, se = eval_test_risk(problem, theta_star, GaussianSampler(equiv), 20_000, seed=3)
        assert abs(est - 1.0) <= 3.0 * se

    def test_two_seeds_agree_within_combined_se(self):
        p = 4
        rng = rng_from(22, "cal")
        theta_star = rng.standard_normal((p, 1)) / 2
        problem = make_problem(p, loss="huber", theta_star=theta_star, tau=0.5)
        equiv = GaussianEquivalent(cov_mode="linear-exact", factor=np.eye(p))
        theta = rng.standard_normal((p, 1)) / 2
        hits = 0
        for rep in range(100):
            e1, s1 = eval_test_risk(problem, theta, GaussianSampler(equiv), 2000, seed=1000 + rep)
            e2, s2 = eval_test_risk(problem, theta, GaussianSampler(equiv), 2000, seed=5000 + rep)
            if abs(e1 - e2) <= 4.0 * math.hypot(s1, s2):
                hits += 1
        assert hits >= 95
