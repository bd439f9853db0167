import numpy as np
import pytest

from afosim.blocks import BlockLayout, BoxSet, OutputMap
from afosim.metrics import solve_minimizer
from afosim.objective import (
    EpochSchedule,
    QuadraticEpoch,
    epoch_constants,
    eval_J,
    eval_f,
    grad_block,
    grad_f,
    grad_g,
)


def scalar_epoch(Q=1.0, q=0.0, P=1.0, theta=0.0, t=0.0, offset=0.0):
    return QuadraticEpoch(
        t=t,
        Q=np.array([[Q]]),
        q=np.array([q]),
        P=np.array([[P]]),
        theta=np.array([theta]),
        constant_offset=offset,
    )


class TestQuadraticEpoch:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="Q"):
            QuadraticEpoch(
                t=0.0,
                Q=np.array([[1.0, 0.5], [0.0, 1.0]]),
                q=np.zeros(2),
                P=np.eye(1),
                theta=np.zeros(1),
            )

    def test_rejects_indefinite_P(self):
        with pytest.raises(ValueError, match="P"):
            QuadraticEpoch(
                t=0.0,
                Q=np.eye(1),
                q=np.zeros(1),
                P=np.array([[-1.0]]),
                theta=np.zeros(1),
            )

    def test_linear_output_cost_normalization(self):
        # g(y) = 0.5 y' P y + p' y must be reproduced exactly by the target form
        rng = np.random.default_rng(0)
        P = np.diag([2.0, 5.0])
        p = np.array([1.0, -3.0])
        ep = QuadraticEpoch.from_linear_output_cost(
            t=0.0, Q=np.eye(3), q=np.zeros(3), P=P, p=p
        )
        for _ in range(10):
            y = rng.normal(size=2)
            direct = 0.5 * y @ P @ y + p @ y
            assert eval_J(ep, np.zeros(3), y) == pytest.approx(direct, abs=1e-12)


class TestEvalJ:
    def test_hand_value(self):
        ep = QuadraticEpoch(
            t=0.0, Q=2 * np.eye(2), q=np.zeros(2), P=2 * np.eye(2), theta=np.zeros(2)
        )
        x = np.ones(2)
        y = np.ones(2)
        assert eval_f(ep, x) == pytest.approx(2.0)
        assert eval_J(ep, x, y) == pytest.approx(4.0)

    def test_zero_point_gives_offset(self):
        ep = scalar_epoch(offset=1.25)
        assert eval_J(ep, np.zeros(1), np.zeros(1)) == pytest.approx(1.25)

    def test_dimension_mismatch(self):
        ep = scalar_epoch()
        with pytest.raises(ValueError):
            eval_J(ep, np.zeros(2), np.zeros(1))


class TestGradBlock:
    def test_scalar_hand_value(self):
        # f = x^2/2, g = (y-1)^2/2, C = 1: at x=2, y=0 the block gradient is 2 + (0-1)
        layout = BlockLayout.uniform(1, 1, 1)
        omap = OutputMap(np.eye(1), layout)
        ep = scalar_epoch(theta=1.0)
        g = grad_block(ep, omap, 0, np.array([2.0]), np.array([0.0]))
        assert g == pytest.approx([1.0])

    def test_zero_at_consistent_minimizer(self):
        rng = np.random.default_rng(1)
        layout = BlockLayout((2, 1), (1, 1))
        omap = OutputMap(rng.normal(size=(2, 3)), layout)
        A = rng.normal(size=(3, 3))
        ep = QuadraticEpoch(
            t=0.0, Q=A.T @ A + np.eye(3), q=rng.normal(size=3), P=np.eye(2), theta=rng.normal(size=2)
        )
        H = ep.Q + omap.entries.T @ ep.P @ omap.entries
        c = ep.q - omap.entries.T @ (ep.P @ ep.theta)
        x_star = np.linalg.solve(H, -c)  # unconstrained interior minimizer
        y_star = omap.entries @ x_star
        for i in range(2):
            g = grad_block(ep, omap, i, x_star, y_star)
            assert np.linalg.norm(g) < 1e-9

    def test_g_gradient_vanishes_at_target(self):
        layout = BlockLayout.uniform(2, 1, 1)
        omap = OutputMap(np.eye(2), layout)
        ep = QuadraticEpoch(t=0.0, Q=np.eye(2), q=np.zeros(2), P=np.eye(2), theta=np.array([0.7, -0.2]))
        x = np.array([1.5, -2.0])
        g0 = grad_block(ep, omap, 0, x, ep.theta.copy())
        assert g0 == pytest.approx([x[0]])

    def test_invalid_agent(self):
        layout = BlockLayout.uniform(1, 1, 1)
        omap = OutputMap(np.eye(1), layout)
        with pytest.raises(ValueError):
            grad_block(scalar_epoch(), omap, 3, np.zeros(1), np.zeros(1))


class TestEpochSchedule:
    def test_etas_cumulative(self):
        eps = tuple(scalar_epoch(t=float(t)) for t in range(3))
        es = EpochSchedule(sources=eps, kappas=(4, 8, 4), B=2)
        assert es.etas == (4, 12, 16)
        assert es.horizon == 16
        assert es.r_values == (2, 4, 2)

    def test_kappa_must_be_multiple_of_B(self):
        with pytest.raises(ValueError):
            EpochSchedule(sources=(scalar_epoch(),), kappas=(5,), B=2)

    def test_kappa_at_least_B(self):
        with pytest.raises(ValueError):
            EpochSchedule(sources=(scalar_epoch(),), kappas=(0,), B=2)


class TestEpochConstants:
    def _setup(self, n=2, m=2, seed=0):
        rng = np.random.default_rng(seed)
        layout = BlockLayout.uniform(n, 1, m // n if m % n == 0 else 1)
        return layout, rng

    def test_scaled_identity_values(self):
        layout = BlockLayout.uniform(2, 1, 1)
        omap = OutputMap(np.eye(2), layout)
        box = BoxSet.cube(2, -1.0, 1.0)
        ep = QuadraticEpoch(t=0.0, Q=2 * np.eye(2), q=np.zeros(2), P=2 * np.eye(2), theta=np.zeros(2))
        ec = epoch_constants(ep, None, box, omap, oracle=solve_minimizer)
        assert ec.L_x == pytest.approx(2.0)
        assert ec.L_y == pytest.approx(2.0)
        assert ec.L == pytest.approx(2.0 * np.sqrt(2.0), rel=1e-12)
        assert ec.p_strong == pytest.approx(2.0)
        assert ec.sigma == 0.0
        assert ec.L_t == 0.0
        assert ec.Delta == 0.0

    def test_identical_prev_epoch_gives_zero_drift(self):
        layout = BlockLayout.uniform(1, 1, 1)
        omap = OutputMap(np.eye(1), layout)
        box = BoxSet.cube(1, -1.0, 1.0)
        ep = QuadraticEpoch(t=1.0, Q=np.eye(1), q=np.zeros(1), P=np.eye(1), theta=np.zeros(1))
        prev = QuadraticEpoch(t=0.0, Q=np.eye(1), q=np.zeros(1), P=np.eye(1), theta=np.zeros(1))
        ec = epoch_constants(ep, prev, box, omap, oracle=solve_minimizer)
        assert ec.sigma == pytest.approx(0.0, abs=1e-9)
        assert ec.L_t == pytest.approx(0.0, abs=1e-12)
        assert ec.Delta == pytest.approx(1.0)

    def test_scalar_gradient_bound(self):
        # |grad f| = |x| <= 1 on [-1, 1]
        layout = BlockLayout.uniform(1, 1, 1)
        omap = OutputMap(np.eye(1), layout)
        box = BoxSet.cube(1, -1.0, 1.0)
        ec = epoch_constants(scalar_epoch(), None, box, omap, oracle=solve_minimizer)
        assert ec.M_x == pytest.approx(1.0)

    def test_combined_lipschitz_dominates(self):
        rng = np.random.default_rng(4)
        layout = BlockLayout.uniform(2, 2, 1)
        omap = OutputMap(rng.normal(size=(2, 4)), layout)
        box = BoxSet.cube(4, -2.0, 2.0)
        A = rng.normal(size=(4, 4))
        ep = QuadraticEpoch(
            t=0.0, Q=A.T @ A + np.eye(4), q=rng.normal(size=4), P=3 * np.eye(2), theta=np.zeros(2)
        )
        ec = epoch_constants(ep, None, box, omap, oracle=solve_minimizer)
        assert ec.L >= max(ec.L_x, omap.norm * ec.L_y) - 1e-12


class TestGradientCertification:
    """Randomized certificates for the derivative and constant definitions."""

    def _random_problem(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 3, 2
        layout = BlockLayout((2, 1), (1, 1))
        omap = OutputMap(rng.normal(size=(m, n)), layout)
        box = BoxSet.cube(n, -1.5, 1.5)
        A = rng.normal(size=(n, n))
        Ap = rng.normal(size=(m, m))
        ep = QuadraticEpoch(
            t=0.0,
            Q=A.T @ A + np.eye(n),
            q=rng.normal(size=n),
            P=Ap.T @ Ap + np.eye(m),
            theta=rng.normal(size=m),
        )
        return rng, layout, omap, box, ep

    def test_finite_difference_agreement(self):
        rng, _, omap, box, ep = self._random_problem(0)
        h = 1e-5
        for _ in range(20):
            x = rng.normal(size=3)
            y = rng.normal(size=2)
            dx = rng.normal(size=3)
            dy = rng.normal(size=2)
            analytic = grad_f(ep, x) @ dx + grad_g(ep, y) @ dy
            plus = eval_J(ep, x + h * dx, y + h * dy)
            minus = eval_J(ep, x - h * dx, y - h * dy)
            numeric = (plus - minus) / (2 * h)
            assert numeric == pytest.approx(analytic, rel=1e-5, abs=1e-8)

    def test_lipschitz_and_bound_certificates(self):
        rng, _, omap, box, ep = self._random_problem(1)
        ec = epoch_constants(ep, None, box, omap, oracle=solve_minimizer)
        y_img = lambda x: omap.entries @ x
        for _ in range(1000):
            x1 = box.lower + rng.random(3) * (box.upper - box.lower)
            x2 = box.lower + rng.random(3) * (box.upper - box.lower)
            assert np.linalg.norm(grad_f(ep, x1) - grad_f(ep, x2)) <= ec.L_x * np.linalg.norm(x1 - x2) + 1e-9
            y1, y2 = y_img(x1), y_img(x2)
            assert np.linalg.norm(grad_g(ep, y1) - grad_g(ep, y2)) <= ec.L_y * np.linalg.norm(y1 - y2) + 1e-9
            gx1 = grad_f(ep, x1) + omap.entries.T @ grad_g(ep, y1)
            gx2 = grad_f(ep, x2) + omap.entries.T @ grad_g(ep, y2)
            joint = np.linalg.norm(np.concatenate([x1 - x2, y1 - y2]))
            assert np.linalg.norm(gx1 - gx2) <= ec.L * joint + 1e-9
            assert np.linalg.norm(grad_f(ep, x1)) <= ec.M_x + 1e-9
            assert np.linalg.norm(grad_g(ep, y1)) <= ec.M_y + 1e-9

    def test_strong_convexity(self):
        rng, _, omap, box, ep = self._random_problem(2)
        ec = epoch_constants(ep, None, box, omap, oracle=solve_minimizer)
        for _ in range(200):
            x1 = box.lower + rng.random(3) * (box.upper - box.lower)
            x2 = box.lower + rng.random(3) * (box.upper - box.lower)
            lhs = eval_f(ep, x2)
            rhs = (
                eval_f(ep, x1)
                + grad_f(ep, x1) @ (x2 - x1)
                + 0.5 * ec.p_strong * np.linalg.norm(x2 - x1) ** 2
            )
            assert lhs >= rhs - 1e-9
