"""Tests for network.py"""

import unittest

import numpy as np

from losscape.activations import make_activation
from losscape.network import (
    Architecture,
    NetworkParams,
    ShapeError,
    forward,
    init_params,
    random_params,
)


class TestNetwork(unittest.TestCase):
    """Test case for the architecture, parameters and forward pass."""

    def setUp(self) -> None:
        """Set up test fixtures."""
        self.sigmoid = make_activation("sigmoid")
        self.rng = np.random.default_rng(3)

    def test_architecture(self) -> None:
        """Test depth, dimensions and parameter count."""
        arch = Architecture((3, 4, 2), self.sigmoid)
        self.assertEqual(arch.depth, 2)
        self.assertEqual((arch.input_dim, arch.output_dim), (3, 2))
        self.assertEqual(arch.layer_shape(2), (4, 2))
        self.assertEqual(arch.num_parameters(), (3 + 1) * 4 + (4 + 1) * 2)

    def test_architecture_rejects_bad_widths(self) -> None:
        """Test that widths must be positive and at least two."""
        with self.assertRaises(ShapeError):
            Architecture((3,), self.sigmoid)
        with self.assertRaises(ShapeError):
            Architecture((3, 0, 1), self.sigmoid)

    def test_params_shape_checks(self) -> None:
        """Test rejection of mismatched weights and biases."""
        with self.assertRaises(ShapeError):
            NetworkParams(
                (np.zeros((2, 3)), np.zeros((4, 1))),
                (np.zeros(3), np.zeros(1)),
                self.sigmoid,
            )
        with self.assertRaises(ShapeError):
            NetworkParams((np.zeros((2, 3)),), (np.zeros(2),), self.sigmoid)
        with self.assertRaises(ShapeError):
            NetworkParams((np.zeros((2, 3)),), (), self.sigmoid)

    def test_forward_zero_params(self) -> None:
        """Test that zero parameters give F_1 = 0.5 everywhere under sigmoid."""
        arch = Architecture((3, 4, 2), self.sigmoid)
        params = random_params(arch, self.rng, layers=[2])
        cache = forward(params, self.rng.standard_normal((5, 3)))
        np.testing.assert_array_equal(cache.F[0], np.full((5, 4), 0.5))

    def test_forward_scalar_example(self) -> None:
        """Test a one-layer sigmoid network on two samples."""
        params = NetworkParams((np.array([[1.0]]),), (np.zeros(1),), self.sigmoid)
        cache = forward(params, np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(cache.output, [[0.5], [0.73106]], atol=1e-5)

    def test_forward_shapes(self) -> None:
        """Test that F_k is N x n_k and F_k = sigma(G_k)."""
        arch = Architecture((3, 4, 2), self.sigmoid)
        params = init_params(arch, self.rng)
        X = self.rng.standard_normal((5, 3))
        cache = forward(params, X)
        self.assertEqual(len(cache.G), 2)
        self.assertEqual(cache.F[0].shape, (5, 4))
        self.assertEqual(cache.F[1].shape, (5, 2))
        for G, F in zip(cache.G, cache.F):
            np.testing.assert_array_equal(F, self.sigmoid.value(G))
        np.testing.assert_array_equal(cache.features(0), X)
        self.assertEqual(cache.num_samples, 5)
        with self.assertRaises(ShapeError):
            cache.features(3)

    def test_forward_rejects_wrong_input_width(self) -> None:
        """Test that X must have n_0 columns."""
        params = init_params(Architecture((3, 2), self.sigmoid), self.rng)
        with self.assertRaises(ShapeError):
            forward(params, np.zeros((4, 2)))

    def test_init_params(self) -> None:
        """Test zero biases and a seeded, reproducible draw."""
        arch = Architecture((4, 6, 1), make_activation("tanh"))
        first = init_params(arch, np.random.default_rng(11), init_scale=2.0)
        second = init_params(arch, np.random.default_rng(11), init_scale=2.0)
        for W1, W2 in zip(first.weights, second.weights):
            np.testing.assert_array_equal(W1, W2)
        for b in first.biases:
            np.testing.assert_array_equal(b, 0.0)
        self.assertEqual(first.architecture.widths, (4, 6, 1))

    def test_replace_layer(self) -> None:
        """Test that replace_layer swaps one layer and keeps the others."""
        params = init_params(Architecture((2, 3, 1), self.sigmoid), self.rng)
        replaced = params.replace_layer(2, np.ones((3, 1)), np.array([0.5]))
        np.testing.assert_array_equal(replaced.weights[1], np.ones((3, 1)))
        np.testing.assert_array_equal(replaced.weights[0], params.weights[0])
        self.assertEqual(replaced.depth, 2)


if __name__ == "__main__":
    unittest.main()
