"""Tests for trainer.py"""

import unittest

import numpy as np

from losscape.activations import make_activation
from losscape.construct import build_wide_layer, interpolate_output_layer
from losscape.losses import LabeledDataset, RegressionLoss, objective
from losscape.network import Architecture, init_params, random_params
from losscape.trainer import (
    HISTORY_COLUMNS,
    TrainConfig,
    TrainConfigError,
    TrainStatus,
    initial_params,
    is_critical,
    minimize,
    train_network,
    validate_targets,
)


class TestTrainConfig(unittest.TestCase):
    """Test case for training settings."""

    def test_defaults(self) -> None:
        """Test the default step policy."""
        cfg = TrainConfig()
        self.assertEqual(cfg.max_iters, 20_000)
        self.assertEqual(cfg.eps_crit, 1e-7)
        self.assertEqual(cfg.seed, 0)

    def test_invalid_settings(self) -> None:
        """Test that every setting is range-checked."""
        invalid = [
            {"max_iters": 0},
            {"eps_crit": 0.0},
            {"initial_step": -1.0},
            {"shrink": 1.0},
            {"sufficient_decrease": 0.6},
            {"step_growth": 0.5},
            {"max_backtracks": 0},
            {"init_scale": 0.0},
        ]
        for settings in invalid:
            with self.assertRaises(TrainConfigError, msg=str(settings)):
                TrainConfig(**settings)  # type: ignore[arg-type]


class TestMinimize(unittest.TestCase):
    """Test case for steepest descent with backtracking."""

    def setUp(self) -> None:
        """Set up test fixtures."""
        self.A = np.diag([1.0, 10.0])
        self.theta0 = np.array([1.0, 1.0])

    def quadratic(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        return float(0.5 * theta @ self.A @ theta), self.A @ theta

    def test_converges_on_quadratic(self) -> None:
        """Test convergence to the minimizer of a convex quadratic."""
        result = minimize(self.quadratic, self.theta0, TrainConfig(eps_crit=1e-8))
        self.assertEqual(result.status, TrainStatus.CONVERGED)
        self.assertLessEqual(result.grad_norm, 1e-8)
        np.testing.assert_allclose(result.theta, 0.0, atol=1e-8)

    def test_history_is_monotone(self) -> None:
        """Test that accepted steps never increase the objective."""
        result = minimize(self.quadratic, self.theta0, TrainConfig(eps_crit=1e-8))
        values = [record.objective for record in result.history]
        self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))
        self.assertEqual(result.history[0].step, 0.0)

        frame = result.history_frame()
        self.assertEqual(list(frame.columns), HISTORY_COLUMNS)
        self.assertEqual(len(frame), len(result.history))
        self.assertEqual(int(frame["iteration"].iloc[-1]), result.iterations)

    def test_iteration_cap(self) -> None:
        """Test the maxiter status after a single step."""
        result = minimize(self.quadratic, self.theta0, TrainConfig(max_iters=1))
        self.assertEqual(result.status, TrainStatus.MAXITER)
        self.assertEqual(result.iterations, 1)
        self.assertLess(result.objective, self.quadratic(self.theta0)[0])

    def test_non_finite_start(self) -> None:
        """Test that a non-finite start diverges immediately."""
        result = minimize(
            lambda theta: (float("inf"), np.zeros_like(theta)),
            self.theta0,
            TrainConfig(),
        )
        self.assertEqual(result.status, TrainStatus.DIVERGED)
        self.assertEqual(len(result.history), 1)

    def test_diverged_keeps_last_finite_iterate(self) -> None:
        """Test that only non-finite trial steps give diverged."""

        def cliff(theta: np.ndarray) -> tuple[float, np.ndarray]:
            if np.array_equal(theta, self.theta0):
                return self.quadratic(theta)
            return float("nan"), theta

        result = minimize(cliff, self.theta0, TrainConfig())
        self.assertEqual(result.status, TrainStatus.DIVERGED)
        np.testing.assert_array_equal(result.theta, self.theta0)

    def test_stalled(self) -> None:
        """Test that a gradient pointing uphill stalls the line search."""

        def wrong_sign(theta: np.ndarray) -> tuple[float, np.ndarray]:
            value, gradient = self.quadratic(theta)
            return value, -gradient

        result = minimize(wrong_sign, self.theta0, TrainConfig())
        self.assertEqual(result.status, TrainStatus.STALLED)
        np.testing.assert_array_equal(result.theta, self.theta0)

    def test_overflowing_trial_point_is_not_evaluated(self) -> None:
        """Test that trial points with infinite entries are shrunk before evaluation."""
        evaluated = []

        def steep(theta: np.ndarray) -> tuple[float, np.ndarray]:
            evaluated.append(theta.copy())
            return float(np.sum(np.abs(theta))), np.full_like(theta, 1e300)

        result = minimize(steep, np.zeros(1), TrainConfig(initial_step=1e10))
        self.assertTrue(all(np.all(np.isfinite(theta)) for theta in evaluated))
        self.assertGreater(len(evaluated), 1)
        self.assertEqual(result.status, TrainStatus.STALLED)
        np.testing.assert_array_equal(result.theta, np.zeros(1))


class TestTraining(unittest.TestCase):
    """Test case for training networks."""

    def setUp(self) -> None:
        """Set up test fixtures."""
        self.rng = np.random.default_rng(40)
        self.tanh = make_activation("tanh")
        self.sigmoid = make_activation("sigmoid")
        self.X = np.array([[-1.0], [0.0], [1.0]])
        self.data = LabeledDataset(X=self.X, Y=np.array([[-0.3], [0.2], [0.4]]))
        self.loss = RegressionLoss("squared")

    def test_validate_targets(self) -> None:
        """Test the interior window per activation kind."""
        self.assertTrue(validate_targets(np.full((2, 1), 0.5), self.sigmoid))
        with self.assertLogs("losscape.trainer", level="WARNING"):
            self.assertFalse(validate_targets(np.array([[0.99]]), self.sigmoid))
        self.assertTrue(validate_targets(np.array([[-0.8]]), self.tanh))
        softplus = make_activation("softplus")
        self.assertTrue(validate_targets(np.array([[3.0]]), softplus))
        with self.assertLogs("losscape.trainer", level="WARNING"):
            self.assertFalse(validate_targets(np.array([[-1.0]]), softplus))

    def test_is_critical(self) -> None:
        """Test criticality at an interpolating point and at a random point."""
        W, b, _ = build_wide_layer(self.X, 2, self.tanh, self.rng)
        params = init_params(Architecture((1, 2, 1), self.tanh), self.rng)
        params = params.replace_layer(1, W, b)
        fitted = interpolate_output_layer(params, self.X, self.data.Y)
        check = is_critical(fitted, self.data, self.loss, 1e-7)
        self.assertTrue(check.critical)
        self.assertLessEqual(check.grad_norm, 1e-7)

        noisy = random_params(Architecture((1, 2, 1), self.tanh), self.rng)
        self.assertFalse(is_critical(noisy, self.data, self.loss, 1e-7).critical)

    def test_initial_params_are_seeded(self) -> None:
        """Test that equal seeds give equal starting points."""
        arch = Architecture((1, 4, 1), self.tanh)
        first = initial_params(arch, TrainConfig(seed=3))
        second = initial_params(arch, TrainConfig(seed=3))
        for W1, W2 in zip(first.weights, second.weights):
            np.testing.assert_array_equal(W1, W2)

    def test_train_network_reports_its_iterate(self) -> None:
        """Test that the returned network and result agree and Phi decreased."""
        arch = Architecture((1, 4, 1), self.tanh)
        cfg = TrainConfig(max_iters=3000, eps_crit=1e-6, seed=1)
        params0 = initial_params(arch, cfg)
        params, result = train_network(params0, self.data, self.loss, cfg)

        self.assertNotEqual(result.status, TrainStatus.DIVERGED)
        self.assertAlmostEqual(
            objective(params, self.data, self.loss), result.objective, places=12
        )
        self.assertLessEqual(result.objective, objective(params0, self.data, self.loss))
        check = is_critical(params, self.data, self.loss, cfg.eps_crit)
        self.assertEqual(check.critical, result.status == TrainStatus.CONVERGED)

    def test_independent_inputs_reach_zero_loss(self) -> None:
        """Test ten seeded runs on four independent inputs reach Phi <= 1e-6."""
        rng = np.random.default_rng(5)
        data = LabeledDataset(
            X=rng.standard_normal((4, 5)), Y=rng.uniform(0.2, 0.8, size=(4, 1))
        )
        arch = Architecture((5, 8, 1), self.sigmoid)
        for seed in range(10):
            cfg = TrainConfig(max_iters=50_000, seed=seed)
            params0 = initial_params(arch, cfg)
            params, result = train_network(params0, data, self.loss, cfg)
            self.assertEqual(result.status, TrainStatus.CONVERGED, f"seed {seed}")
            self.assertLessEqual(result.objective, 1e-6, f"seed {seed}")
            check = is_critical(params, data, self.loss, cfg.eps_crit)
            self.assertTrue(check.critical, f"seed {seed}")
            self.assertEqual(check.grad_norm, result.grad_norm)


if __name__ == "__main__":
    unittest.main()
