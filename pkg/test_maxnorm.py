#!/usr/bin/env python3
"""
Comprehensive test cases for the maximum-norm estimators
"""

import csv
import math
import os
import sys
import tempfile
import unittest

import numpy as np

# Import the modules to test
try:
    from core.errors import ValidationError, ZeroTensorError
    from core.ht_arith import dot, hadamard, normalize
    from core.ht_core import adversarial_tensor, cheb_tensor, from_elementary, random_ht, random_normal_ht
    from core.maxnorm import (
        CAP_EXCEEDED, CONVERGED, ConvergenceTrace, IterationConfig, adaptive_maxnorm, convergence_rate,
        lower_bound_error, positive_tensor_error_bound, power_iteration_improved, power_iteration_rayleigh,
        power_iteration_ritz, power_iteration_squaring, rayleigh_ritz_estimate,
    )
    from core.oracle import dense_alpha, dense_maxnorm_argmax, densify
except ImportError as e:
    print(f"Import error: {e}")
    sys.exit(1)


def true_maxnorm(a):
    value, _ = dense_maxnorm_argmax(densify(a))
    return value


class TestIterationConfig(unittest.TestCase):
    """Test cases for IterationConfig validation"""

    def test_defaults(self):
        """Defaults follow the documented values"""
        cfg = IterationConfig()
        self.assertEqual(cfg.subspace_size, 5)
        self.assertEqual(cfg.squaring_tol, 1e-13)
        self.assertEqual(cfg.ritz_steps, 10)
        self.assertFalse(cfg.trace_ritz)
        self.assertFalse(cfg.truncating)

    def test_invalid_values(self):
        """Nonpositive sizes and tolerances are rejected"""
        with self.assertRaises(ValidationError):
            IterationConfig(subspace_size=0)
        with self.assertRaises(ValidationError):
            IterationConfig(squaring_tol=0.0)
        with self.assertRaises(ValidationError):
            IterationConfig(ritz_steps=0)
        with self.assertRaises(ValidationError):
            IterationConfig(ranks=3, tolerance=1e-8)


class TestSignExample(unittest.TestCase):
    """The vector [1, -1] separates the Rayleigh quotient from the improved estimator"""

    def setUp(self):
        self.a = from_elementary([[1.0, -1.0]])
        self.cfg = IterationConfig(max_iters=10)

    def test_rayleigh_is_zero(self):
        """The Rayleigh quotient never leaves zero"""
        result = power_iteration_rayleigh(self.a, self.cfg)
        self.assertEqual(len(result.trace.records), 11)
        for r in result.trace.records:
            self.assertEqual(r.estimate, 0.0)

    def test_improved_is_one(self):
        """The improved estimator is exact from the first step"""
        result = power_iteration_improved(self.a, self.cfg)
        for r in result.trace.records:
            self.assertAlmostEqual(r.estimate, 1.0, delta=1e-15)


class TestPowerIteration(unittest.TestCase):
    """Test cases for the plain and improved power iteration"""

    def setUp(self):
        self.a = random_ht(3, 4, 2, seed=5)
        self.truth = true_maxnorm(self.a)
        self.cfg = IterationConfig(max_iters=40)

    def test_constant_tensor(self):
        """A constant tensor has Rayleigh quotient c after one step"""
        a = from_elementary([[2.0, 2.0], [1.0, 1.0, 1.0]])
        result = power_iteration_rayleigh(a, IterationConfig(max_iters=3))
        self.assertAlmostEqual(result.trace.records[1].estimate, 2.0, places=12)

    def test_lower_bound_chain(self):
        """|lambda| <= alpha <= max-norm, alpha non-decreasing, a-priori bound holds"""
        lam = power_iteration_rayleigh(self.a, self.cfg).trace.estimates
        alpha = power_iteration_improved(self.a, self.cfg).trace.estimates
        n_entries = self.a.size
        self.assertEqual(len(alpha), 41)
        for j, (l, al) in enumerate(zip(lam, alpha)):
            self.assertLessEqual(abs(l), al + 1e-12)
            self.assertLessEqual(al, self.truth + 1e-10)
            self.assertGreaterEqual(al, self.truth * n_entries ** (-1.0 / (2 * (j + 1))) - 1e-10)
        for prev, cur in zip(alpha, alpha[1:]):
            self.assertGreaterEqual(cur, prev - 1e-12 * self.truth)

    def test_matches_dense_pnorm_ratio(self):
        """alpha at step j is ||a||_{2(j+1)}^{j+1} / ||a||_{2j}^j"""
        a = random_ht(4, 5, 2, seed=1)
        dense = densify(a)
        trace = power_iteration_improved(a, self.cfg).trace
        for r in trace.records:
            expected = dense_alpha(dense, r.iteration)
            self.assertLess(abs(r.estimate - expected) / expected, 1e-10)

    def test_zero_tensor(self):
        """Estimating the zero tensor is an error"""
        zero = from_elementary([[0.0, 0.0], [1.0, 2.0]])
        with self.assertRaises(ZeroTensorError):
            power_iteration_improved(zero, self.cfg)

    def test_truncated_trace(self):
        """Working ranks truncate each Hadamard result and record the error"""
        a = random_normal_ht((4, 4, 4), 3, seed=2)
        result = power_iteration_improved(a, IterationConfig(max_iters=8, ranks=1))
        self.assertTrue(all(r <= 1 for r in result.final_iterate.ranks))
        self.assertGreater(result.trace.max_trunc_err, 0.0)

    def test_elapsed_monotone(self):
        """Elapsed time is recorded per step"""
        trace = power_iteration_improved(self.a, IterationConfig(max_iters=5)).trace
        times = [r.elapsed_s for r in trace.records]
        self.assertEqual(times, sorted(times))


class TestRayleighRitz(unittest.TestCase):
    """Test cases for the Rayleigh-Ritz projection"""

    def test_full_space(self):
        """Projecting onto the whole space recovers the diagonal"""
        a = from_elementary([[3.0, 1.0]])
        alpha, values = rayleigh_ritz_estimate(a, [from_elementary([[1.0, 0.0]]), from_elementary([[0.0, 1.0]])])
        self.assertAlmostEqual(alpha, 3.0, places=12)
        np.testing.assert_allclose(values, [3.0, 1.0], atol=1e-12)

    def test_single_iterate_is_rayleigh_quotient(self):
        """k = 1 reduces to the Rayleigh quotient of the iterate"""
        a = random_normal_ht((3, 4, 2), 2, seed=4)
        x, _ = normalize(random_normal_ht((3, 4, 2), 2, seed=5))
        alpha, _ = rayleigh_ritz_estimate(a, [x])
        self.assertAlmostEqual(alpha, abs(dot(x, hadamard(a, x))), places=10)

    def test_dependent_iterates(self):
        """Duplicated iterates are dropped, not fatal"""
        a = random_normal_ht((3, 3), 2, seed=1)
        x, _ = normalize(random_normal_ht((3, 3), 2, seed=2))
        alpha, values = rayleigh_ritz_estimate(a, [x, x])
        self.assertEqual(len(values), 1)
        self.assertAlmostEqual(alpha, abs(dot(x, hadamard(a, x))), places=10)

    def test_empty(self):
        """At least one iterate is needed"""
        with self.assertRaises(ValidationError):
            rayleigh_ritz_estimate(from_elementary([[1.0]]), [])

    def test_dominates_improved(self):
        """With the previous iterate in the window the Ritz value dominates alpha"""
        a = random_ht(3, 4, 2, seed=3)
        cfg = IterationConfig(max_iters=10, subspace_size=2, trace_ritz=True)
        ritz = power_iteration_ritz(a, cfg).trace.estimates
        alpha = power_iteration_improved(a, cfg).trace.estimates
        truth = true_maxnorm(a)
        for j in range(1, len(ritz)):
            self.assertGreaterEqual(ritz[j], alpha[j] - 1e-10)
            self.assertLessEqual(ritz[j], truth + 1e-10)

    def test_elementary_shortcut(self):
        """Rank-1 input is solved in one step"""
        a = from_elementary([[1.0, -3.0], [2.0, 1.0]])
        result = power_iteration_ritz(a)
        self.assertEqual(result.value, 6.0)
        self.assertEqual(len(result.trace.records), 1)
        self.assertEqual(result.trace.status, CONVERGED)


class TestSquaring(unittest.TestCase):
    """Test cases for the squaring iteration"""

    def test_matches_power_of_two_steps(self):
        """Squaring step j equals plain step 2^j"""
        a = random_normal_ht((3, 3, 3), 2, seed=7)
        squaring = power_iteration_squaring(a, IterationConfig(max_iters=4)).trace.records
        plain = power_iteration_improved(a, IterationConfig(max_iters=16)).trace.records
        for r in squaring[1:]:
            expected = plain[2 ** r.iteration].estimate
            self.assertLess(abs(r.estimate - expected) / expected, 1e-10)

    def test_fast_rate(self):
        """Unique maximizers converge at rate 0.5 or better"""
        for seed in range(5):
            a = random_normal_ht((3, 3, 3), 2, seed=seed)
            truth = true_maxnorm(a)
            result = power_iteration_squaring(a)
            self.assertLess(abs(result.value - truth) / truth, 1e-10)
            rate = convergence_rate(result.trace, truth)
            if rate is not None:
                self.assertLessEqual(rate, 0.55)

    def test_stops_on_small_change(self):
        """The iteration ends once the iterate stops moving"""
        a = random_normal_ht((3, 3), 2, seed=1)
        result = power_iteration_squaring(a)
        self.assertEqual(result.trace.status, CONVERGED)
        self.assertLess(len(result.trace.records), 41)


class TestAdaptive(unittest.TestCase):
    """Test cases for the adaptive combination"""

    def test_elementary(self):
        """Rank-1 input returns the exact max-norm"""
        a = from_elementary([[0.5, -2.0, 1.0], [1.0, 3.0]])
        self.assertEqual(adaptive_maxnorm(a).value, 6.0)

    def test_exact_run(self):
        """Without truncation the estimate converges to the max-norm"""
        a = random_normal_ht((3, 4, 3), 2, seed=3)
        truth = true_maxnorm(a)
        result = adaptive_maxnorm(a)
        self.assertLess(abs(result.value - truth) / truth, 1e-10)
        self.assertLessEqual(result.value, truth * (1 + 1e-12))

    def test_cheb_small(self):
        """cheb tensors reach max-norm 1"""
        a = cheb_tensor(3, 6)
        result = adaptive_maxnorm(a, IterationConfig(tolerance=1e-12))
        self.assertLess(abs(result.value - 1.0), 1e-6)

    def test_adversarial_failure(self):
        """A single spike is invisible at working rank 1"""
        a = adversarial_tensor(d=10, n=8, seed=0)
        result = adaptive_maxnorm(a, IterationConfig(ranks=1))
        self.assertLess(result.value, 1.1)

    def test_squaring_stops_at_cap(self):
        """A squaring step over the truncation cap ends the phase at once"""
        a = random_normal_ht((4, 4, 4), 3, seed=2)
        cfg = IterationConfig(ranks=2, max_cycles=1, ritz_steps=1, max_iters=10)
        result = adaptive_maxnorm(a, cfg)
        records = result.trace.records
        self.assertEqual(len(records), 3)
        self.assertGreaterEqual(records[-1].rel_trunc_err, cfg.trunc_err_cap)
        self.assertEqual(result.trace.status, CAP_EXCEEDED)

    def test_trace_bound(self):
        """The adaptive trace never exceeds its record bound"""
        a = random_normal_ht((4, 4, 4), 3, seed=1)
        cfg = IterationConfig(ranks=1, max_cycles=2, ritz_steps=2, max_iters=3)
        result = adaptive_maxnorm(a, cfg)
        self.assertLessEqual(len(result.trace.records), cfg.max_cycles * (cfg.ritz_steps + cfg.max_iters) + 1)
        if result.trace.status == CAP_EXCEEDED:
            self.assertGreaterEqual(result.trace.max_trunc_err, cfg.trunc_err_cap)


class TestTraceTools(unittest.TestCase):
    """Test cases for CSV output, rates and a-priori bounds"""

    def test_to_csv(self):
        """Trace CSV carries the documented columns"""
        trace = ConvergenceTrace("pi")
        trace.add(0, 1.0, 0.0, 0.0)
        trace.add(1, 1.5, 1e-9, 0.01)
        with tempfile.TemporaryDirectory() as tmp:
            path = trace.to_csv(os.path.join(tmp, "t.csv"), truth=2.0)
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["iter", "estimate", "rel_trunc_err", "elapsed_s", "rel_err"])
        self.assertEqual(len(rows), 3)
        self.assertEqual(float(rows[2][4]), 0.25)

    def test_convergence_rate(self):
        """error_j / error_{j-1} at the last error above 1e-12"""
        trace = ConvergenceTrace("pi")
        for j, est in enumerate([0.5, 0.75, 0.875, 1.0]):
            trace.add(j, est, 0.0, 0.0)
        self.assertAlmostEqual(convergence_rate(trace, 1.0), 0.5)

    def test_convergence_rate_edge_cases(self):
        """Exact traces report 0, single informative records report None"""
        exact = ConvergenceTrace("pi")
        exact.add(0, 1.0, 0.0, 0.0)
        self.assertEqual(convergence_rate(exact, 1.0), 0.0)
        short = ConvergenceTrace("pi")
        short.add(0, 0.5, 0.0, 0.0)
        short.add(1, 1.0, 0.0, 0.0)
        self.assertIsNone(convergence_rate(short, 1.0))

    def test_a_priori_bounds(self):
        """Closed-form error bounds"""
        self.assertAlmostEqual(lower_bound_error(16, 1), 0.5)
        self.assertAlmostEqual(positive_tensor_error_bound(math.e ** 2, 3), 1.0)
        with self.assertRaises(ValidationError):
            positive_tensor_error_bound(10, 1)


def run_tests():
    """Run all maxnorm tests"""
    print("🧪 Running Max-Norm Estimator Tests")
    print("=" * 60)

    test_suite = unittest.TestSuite()
    test_classes = [TestIterationConfig, TestSignExample, TestPowerIteration, TestRayleighRitz,
                    TestSquaring, TestAdaptive, TestTraceTools]
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
