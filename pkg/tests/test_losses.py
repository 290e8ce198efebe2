"""Tests for losses.py"""

import math
import unittest

import numpy as np

from losscape.activations import make_activation
from losscape.losses import (
    REGRESSION_LOSS_NAMES,
    DatasetError,
    LabeledDataset,
    LossError,
    RegressionLoss,
    SeparableLoss,
    audit_loss,
    global_minimum_reference,
    make_loss,
    objective,
    objective_regression,
    objective_separable,
    regression_loss_eval,
    separable_loss_eval,
    squared_hinge,
)
from losscape.network import Architecture, NetworkParams, forward, random_params


def all_regression_losses() -> list[RegressionLoss]:
    return [
        RegressionLoss("squared"),
        RegressionLoss("pseudo_huber", delta=1.0),
        RegressionLoss("pseudo_huber", delta=0.3),
        RegressionLoss("cauchy", delta=1.0),
        RegressionLoss("cauchy", delta=-2.0),
        RegressionLoss("blake_zisserman", delta=1.0),
        RegressionLoss("blake_zisserman", delta=0.01),
        RegressionLoss("corrupted_gaussian", mix=0.5, width=3.0),
        RegressionLoss("corrupted_gaussian", mix=0.9, width=10.0),
    ]


class TestLossKinds(unittest.TestCase):
    """Test case for loss values, derivatives and the stationary-point audit."""

    def setUp(self) -> None:
        """Set up test fixtures."""
        self.rng = np.random.default_rng(5)
        self.losses = all_regression_losses()

    def test_regression_loss_examples(self) -> None:
        """Test closed-form values at simple residuals."""
        squared = RegressionLoss("squared")
        self.assertEqual(regression_loss_eval(squared, 0.0), (0.0, 0.0))
        huber = RegressionLoss("pseudo_huber", delta=1.0)
        value, slope = regression_loss_eval(huber, 1.0)
        self.assertAlmostEqual(value, 2 * (math.sqrt(2) - 1), places=12)
        self.assertAlmostEqual(slope, 2 / math.sqrt(2), places=12)
        cauchy = RegressionLoss("cauchy", delta=1.0)
        self.assertEqual(regression_loss_eval(cauchy, 0.0), (0.0, 0.0))

    def test_every_kind_is_covered(self) -> None:
        """Test that the fixture exercises every regression kind."""
        names = {loss.name for loss in self.losses}
        self.assertEqual(names, set(REGRESSION_LOSS_NAMES))

    def test_derivative_matches_central_differences(self) -> None:
        """Test l' against central differences at random residuals."""
        a = self.rng.uniform(-10.0, 10.0, size=1000)
        h = 1e-6
        for loss in self.losses:
            plus, _ = loss.evaluate(a + h)
            minus, _ = loss.evaluate(a - h)
            _, slope = loss.evaluate(a)
            error = float(np.max(np.abs(slope - (plus - minus) / (2 * h))))
            self.assertLessEqual(error, 1e-6, loss.describe())

    def test_corrupted_gaussian_is_stable(self) -> None:
        """Test that the mixture stays finite where exp(-a^2) underflows."""
        loss = RegressionLoss("corrupted_gaussian", mix=0.5, width=2.0)
        value, slope = loss.evaluate(np.array([40.0, -60.0]))
        self.assertTrue(np.all(np.isfinite(value)))
        self.assertTrue(np.all(np.isfinite(slope)))
        self.assertGreater(float(value[0]), 0.0)

    def test_minimum_value(self) -> None:
        """Test l(0) for shifted and unshifted kinds."""
        self.assertEqual(RegressionLoss("squared").minimum_value(), 0.0)
        self.assertAlmostEqual(
            RegressionLoss("blake_zisserman", delta=1.0).minimum_value(), -math.log(2.0)
        )

    def test_invalid_parameters(self) -> None:
        """Test parameter domains of every kind."""
        with self.assertRaises(LossError):
            RegressionLoss("pseudo_huber", delta=0.0)
        with self.assertRaises(LossError):
            RegressionLoss("blake_zisserman", delta=-1.0)
        with self.assertRaises(LossError):
            RegressionLoss("cauchy", delta=0.0)
        with self.assertRaises(LossError):
            RegressionLoss("corrupted_gaussian", mix=1.5)
        with self.assertRaises(LossError):
            RegressionLoss("corrupted_gaussian", width=0.0)
        with self.assertRaises(LossError):
            make_loss("hinge")

    def test_separable_loss_eval(self) -> None:
        """Test the l1/l2 pair on both sides of zero."""
        self.assertEqual(separable_loss_eval(-2.0, True), (4.0, -4.0))
        self.assertEqual(separable_loss_eval(3.0, True), (0.0, 0.0))
        self.assertEqual(separable_loss_eval(2.0, False), (4.0, 4.0))
        self.assertEqual(separable_loss_eval(-2.0, False), (0.0, 0.0))

    def test_separable_loss_signs(self) -> None:
        """Test non-negativity and the sign of the slopes away from zero."""
        a = np.linspace(-5.0, 5.0, 1001)
        l1, d1 = SeparableLoss().evaluate(a, True)
        l2, d2 = SeparableLoss().evaluate(a, False)
        self.assertTrue(np.all(l1 >= 0) and np.all(l2 >= 0))
        self.assertTrue(np.all(d1[a < 0] < 0))
        self.assertTrue(np.all(d2[a > 0] > 0))

    def test_audit_passes_for_every_kind(self) -> None:
        """Test that stationary points of every kind are global minima on [-20, 20]."""
        for loss in self.losses:
            result = audit_loss(loss)
            message = f"{loss.describe()}: {result.first_violation}"
            self.assertTrue(result.passed, message)
            self.assertEqual(result.violations, 0)

    def test_audit_reports_grid_minimum(self) -> None:
        """Test the reported minimum of the squared loss."""
        result = audit_loss(RegressionLoss("squared"), np.linspace(-1.0, 1.0, 201))
        self.assertAlmostEqual(result.grid_minimum, 0.0, places=20)


class TestObjectives(unittest.TestCase):
    """Test case for datasets and training objectives."""

    def setUp(self) -> None:
        """Set up test fixtures."""
        self.rng = np.random.default_rng(21)
        self.sigmoid = make_activation("sigmoid")
        self.tanh = make_activation("tanh")

    def test_dataset_rejects_identical_samples(self) -> None:
        """Test the no-identical-samples check."""
        X = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
        with self.assertRaises(DatasetError) as cm:
            LabeledDataset(X=X, Y=np.zeros((3, 1)))
        self.assertEqual(str(cm.exception), "Samples 0 and 2 are identical")

    def test_dataset_rejects_mismatched_rows(self) -> None:
        """Test that X and Y need the same number of samples."""
        with self.assertRaises(DatasetError):
            LabeledDataset(X=np.zeros((2, 1)) + [[0.0], [1.0]], Y=np.zeros((3, 1)))

    def test_from_classes_encoding(self) -> None:
        """Test one-vs-rest targets with the default and a custom encoding."""
        X = np.arange(6.0).reshape(3, 2)
        data = LabeledDataset.from_classes(X, [0, 1, 1])
        np.testing.assert_array_equal(data.Y, [[1.0, -1.0], [-1.0, 1.0], [-1.0, 1.0]])
        self.assertTrue(data.is_classification)
        np.testing.assert_array_equal(
            data.in_class_mask(), [[True, False], [False, True], [False, True]]
        )

        soft = LabeledDataset.from_classes(X, [2, 0, 1], label_encoding=(0.9, 0.1))
        np.testing.assert_array_equal(soft.Y[0], [0.1, 0.1, 0.9])

    def test_dataset_rejects_inconsistent_labels(self) -> None:
        """Test that Y must follow the label encoding of the classes."""
        X = np.arange(4.0).reshape(2, 2)
        with self.assertRaises(DatasetError):
            LabeledDataset(
                X=X,
                Y=np.array([[1.0, -1.0], [1.0, -1.0]]),
                classes=np.array([0, 1]),
            )
        with self.assertRaises(DatasetError):
            LabeledDataset.from_classes(X, [0, 2], num_classes=2)

    def test_objective_regression_examples(self) -> None:
        """Test Phi on hand-computed networks."""
        zero = NetworkParams((np.zeros((1, 1)),), (np.zeros(1),), self.sigmoid)
        data = LabeledDataset(X=np.array([[3.0]]), Y=np.array([[0.0]]))
        squared = RegressionLoss("squared")
        self.assertAlmostEqual(objective_regression(zero, data, squared), 0.25)

        two = LabeledDataset(X=np.array([[0.0], [1.0]]), Y=np.array([[0.0], [1.0]]))
        self.assertAlmostEqual(objective_regression(zero, two, squared), 0.5)

    def test_objective_zero_at_interpolation(self) -> None:
        """Test that Phi vanishes when F_L = Y."""
        params = random_params(Architecture((2, 3, 2), self.tanh), self.rng)
        X = self.rng.standard_normal((4, 2))
        data = LabeledDataset(X=X, Y=forward(params, X).output)
        for name in ("squared", "pseudo_huber", "cauchy"):
            self.assertEqual(objective(params, data, make_loss(name)), 0.0)

    def test_objective_is_permutation_invariant(self) -> None:
        """Test that reordering samples leaves Phi unchanged."""
        params = random_params(Architecture((3, 4, 2), self.sigmoid), self.rng)
        X = self.rng.standard_normal((6, 3))
        Y = self.rng.uniform(0.2, 0.8, size=(6, 2))
        order = self.rng.permutation(6)
        loss = RegressionLoss("cauchy", delta=0.5)
        original = objective_regression(params, LabeledDataset(X=X, Y=Y), loss)
        shuffled = LabeledDataset(X=X[order], Y=Y[order])
        permuted = objective_regression(params, shuffled, loss)
        self.assertAlmostEqual(original, permuted, places=12)

    def test_objective_separable_examples(self) -> None:
        """Test hand-evaluated separable objectives."""
        zero = NetworkParams((np.zeros((1, 2)),), (np.zeros(2),), self.tanh)
        data = LabeledDataset.from_classes(np.array([[0.5]]), [0], num_classes=2)
        # l1(0 - 1) + l2(0 + 1)
        self.assertEqual(objective_separable(zero, data), 2.0)

        confident = NetworkParams(
            (np.zeros((1, 2)),), (np.array([20.0, -20.0]),), self.tanh
        )
        self.assertEqual(objective_separable(confident, data), 0.0)

    def test_objective_separable_needs_classes(self) -> None:
        """Test that the separable objective refuses regression data."""
        zero = NetworkParams((np.zeros((1, 1)),), (np.zeros(1),), self.tanh)
        with self.assertRaises(DatasetError):
            objective_separable(
                zero, LabeledDataset(X=np.array([[1.0]]), Y=np.array([[0.0]]))
            )

    def test_squared_hinge_identity(self) -> None:
        """Test that the separable objective is the squared hinge on +1/-1 labels."""
        arch = Architecture((2, 5, 3), self.tanh)
        for _ in range(20):
            params = random_params(arch, self.rng, scale=2.0)
            X = self.rng.standard_normal((7, 2))
            classes = self.rng.integers(0, 3, size=7)
            data = LabeledDataset.from_classes(X, classes, num_classes=3)
            hinge = squared_hinge(forward(params, X).output, data.Y)
            self.assertLessEqual(abs(objective_separable(params, data) - hinge), 1e-12)

    def test_global_minimum_reference(self) -> None:
        """Test the exact optimum for attainable and unattainable targets."""
        X = np.arange(6.0).reshape(3, 2)
        inside = LabeledDataset(X=X, Y=np.full((3, 2), 0.5))
        outside = LabeledDataset(X=X, Y=np.full((3, 2), 1.0))
        squared = RegressionLoss("squared")
        bz = RegressionLoss("blake_zisserman", delta=1.0)

        self.assertEqual(global_minimum_reference(squared, inside, self.sigmoid), 0.0)
        self.assertAlmostEqual(
            global_minimum_reference(bz, inside, self.sigmoid) or 0.0,
            -6 * math.log(2.0),
        )
        self.assertIsNone(global_minimum_reference(squared, outside, self.sigmoid))
        separable = global_minimum_reference(SeparableLoss(), outside, self.sigmoid)
        self.assertEqual(separable, 0.0)


if __name__ == "__main__":
    unittest.main()
