#!/usr/bin/env python3
"""
Comprehensive test cases for the dense brute-force oracle
"""

import os
import sys
import unittest
from unittest.mock import patch

import numpy as np

# Import the modules to test
try:
    from core.errors import DenseCapError, ValidationError
    from core.ht_core import balanced_tree, cheb_tensor, from_elementary, linear_tree, random_ht, random_normal_ht
    from core.oracle import (
        DenseTensor, dense_alpha, dense_cheb, dense_entries, dense_from_frames, dense_maxnorm_argmax,
        dense_pnorm, dense_slice, densify, matricization_singular_values, pattern_maxnorm_argmax,
    )
except ImportError as e:
    print(f"Import error: {e}")
    sys.exit(1)


class TestDensify(unittest.TestCase):
    """Test cases for densification and the cap"""

    def test_elementary_outer_product(self):
        """Row-major order with mode 1 slowest"""
        a = from_elementary([[1.0, 2.0], [1.0, 10.0, 100.0]])
        dense = densify(a)
        self.assertEqual(dense.mode_sizes, (2, 3))
        np.testing.assert_array_equal(dense.values, [1, 10, 100, 2, 20, 200])

    def test_two_contractions_agree(self):
        """Entry recursion and frame contraction give the same tensor"""
        for tree in (balanced_tree(4), linear_tree(4)):
            a = random_normal_ht((2, 3, 2, 3), 3, seed=1, tree=tree)
            np.testing.assert_allclose(densify(a).values, dense_from_frames(a).values, rtol=1e-12, atol=1e-13)

    def test_cap(self):
        """Tensors above the cap are refused"""
        a = random_ht(3, 10, 2, seed=0)
        with self.assertRaises(DenseCapError):
            densify(a, cap=999)
        self.assertEqual(densify(a, cap=1000).values.size, 1000)

    def test_cap_from_environment(self):
        """HTMAX_DENSE_CAP sets the default cap"""
        a = random_ht(2, 10, 2, seed=0)
        with patch.dict(os.environ, {"HTMAX_DENSE_CAP": "50"}):
            with self.assertRaises(DenseCapError):
                densify(a)

    def test_shape_validation(self):
        """Value count must match the mode sizes"""
        with self.assertRaises(ValidationError):
            DenseTensor((2, 2), np.ones(3))


class TestDenseQueries(unittest.TestCase):
    """Test cases for max-norm, p-norms and slices"""

    def setUp(self):
        self.x = DenseTensor((2, 3), [1.0, -4.0, 2.0, 4.0, 0.0, -1.0])

    def test_maxnorm_first_index(self):
        """Ties go to the first index in row-major order"""
        value, index = dense_maxnorm_argmax(self.x)
        self.assertEqual(value, 4.0)
        self.assertEqual(index, (1, 2))

    def test_pnorm(self):
        """p = 2 is the Frobenius norm, p = inf the maximum"""
        self.assertAlmostEqual(dense_pnorm(self.x, 2), np.sqrt(38.0))
        self.assertEqual(dense_pnorm(self.x, np.inf), 4.0)
        with self.assertRaises(ValidationError):
            dense_pnorm(self.x, 0)

    def test_pnorm_approaches_max(self):
        """Large p brings the p-norm close to the maximum for smooth data"""
        x = DenseTensor((3, 3, 3), np.linspace(0.0, 1.0, 27))
        self.assertLess(dense_pnorm(x, 64) - 1.0, 0.02)

    def test_alpha(self):
        """alpha(0) is the root mean square, alpha grows towards the max"""
        self.assertAlmostEqual(dense_alpha(self.x, 0), np.sqrt(38.0 / 6.0))
        values = [dense_alpha(self.x, j) for j in range(8)]
        self.assertTrue(all(b >= a - 1e-14 for a, b in zip(values, values[1:])))
        self.assertLessEqual(values[-1], 4.0)

    def test_slice_and_entries(self):
        """Slices keep the inclusive 1-based range"""
        part = dense_slice(self.x, 2, (2, 3))
        self.assertEqual(part.mode_sizes, (2, 2))
        np.testing.assert_array_equal(part.values, [-4.0, 2.0, 0.0, -1.0])
        np.testing.assert_array_equal(dense_entries(self.x, [[2, 1], [1, 3]]), [4.0, 2.0])
        with self.assertRaises(ValidationError):
            dense_slice(self.x, 2, (3, 4))

    def test_singular_values(self):
        """Matricization of an outer product has one nonzero singular value"""
        dense = densify(from_elementary([[1.0, 2.0], [3.0, 4.0], [1.0, -1.0]]))
        sv = matricization_singular_values(dense, [1])
        self.assertAlmostEqual(sv[0], np.linalg.norm(dense.values))
        self.assertLess(sv[1], 1e-12)


class TestReferenceFamilies(unittest.TestCase):
    """Test cases for dense cheb and the pattern enumeration"""

    def test_dense_cheb_matches_ht(self):
        """The HT construction reproduces the direct evaluation"""
        np.testing.assert_allclose(densify(cheb_tensor(3, 5)).values, dense_cheb(3, 5).values, atol=1e-11)

    def test_dense_cheb_index_limit(self):
        """Grids beyond 2^53 points are refused before any allocation"""
        with self.assertRaises(ValidationError):
            dense_cheb(16, 100)

    def test_pattern_matches_dense(self):
        """Pattern enumeration agrees with full densification"""
        for seed in range(4):
            a = random_ht(4, 5, 2, seed=seed)
            value, index = pattern_maxnorm_argmax(a)
            truth, truth_index = dense_maxnorm_argmax(densify(a))
            self.assertAlmostEqual(value, truth, delta=1e-12 * truth)
            self.assertEqual(len(index), 4)

    def test_pattern_beyond_dense_cap(self):
        """Large mode sizes stay cheap when frames repeat rows"""
        a = random_ht(8, 100, 2, seed=3)
        value, index = pattern_maxnorm_argmax(a, cap=1000)
        self.assertGreater(value, 0.0)
        self.assertTrue(all(1 <= i <= 100 for i in index))


def run_tests():
    """Run all oracle tests"""
    print("🧪 Running Dense Oracle Tests")
    print("=" * 60)

    test_suite = unittest.TestSuite()
    test_classes = [TestDensify, TestDenseQueries, TestReferenceFamilies]
    for test_class in test_classes:
        tests = unittest.TestLoader().loadTestsFromTestCase(test_class)
        test_suite.addTests(tests)

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(test_suite)

    print("\n" + "=" * 60)
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")

    success = len(result.failures) == 0 and len(result.errors) == 0
    if success:
        print("\n🎉 All tests passed!")
    else:
        print(f"\n❌ {len(result.failures) + len(result.errors)} tests failed")
    return success


if __name__ == "__main__":
    success = run_tests()
    sys.exit(0 if success else 1)
