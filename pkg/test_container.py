#!/usr/bin/env python3
"""
Comprehensive test cases for the JSON tensor container
"""

import json
import os
import sys
import tempfile
import unittest

import numpy as np

# Import the modules to test
try:
    from core.container import FORMAT, load_tensor, save_tensor, tensor_from_dict, tensor_to_dict
    from core.errors import ContainerError, ValidationError
    from core.ht_core import cheb_tensor, entries, linear_tree, random_normal_ht
except ImportError as e:
    print(f"Import error: {e}")
    sys.exit(1)


class TestContainer(unittest.TestCase):
    """Test cases for saving and loading tensors"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "tensor.json")
        self.a = random_normal_ht((3, 4, 2, 5), 3, seed=11, tree=linear_tree(4))

    def tearDown(self):
        self.tmp.cleanup()

    def test_roundtrip_is_bit_exact(self):
        """Every stored float comes back unchanged"""
        save_tensor(self.a, self.path)
        b = load_tensor(self.path)
        self.assertEqual(b.mode_sizes, self.a.mode_sizes)
        self.assertEqual(b.ranks, self.a.ranks)
        self.assertEqual([n.modes for n in b.tree.nodes], [n.modes for n in self.a.tree.nodes])
        for t in self.a.leaf_frames:
            np.testing.assert_array_equal(b.leaf_frames[t], self.a.leaf_frames[t])
        for t in self.a.transfer_tensors:
            np.testing.assert_array_equal(b.transfer_tensors[t], self.a.transfer_tensors[t])

    def test_deterministic_bytes(self):
        """Saving the same tensor twice gives identical files"""
        other = os.path.join(self.tmp.name, "again.json")
        save_tensor(self.a, self.path)
        save_tensor(load_tensor(self.path), other)
        with open(self.path, "rb") as f1, open(other, "rb") as f2:
            self.assertEqual(f1.read(), f2.read())

    def test_layout(self):
        """Top-level keys and the tree records"""
        data = tensor_to_dict(cheb_tensor(2, 3))
        self.assertEqual(list(data), ["format", "version", "d", "mode_sizes", "tree", "ranks",
                                      "leaf_frames", "transfer_tensors"])
        self.assertEqual(data["format"], FORMAT)
        self.assertEqual(data["tree"][0], {"id": 0, "subset": [1, 2], "children": [1, 2]})
        self.assertEqual(data["tree"][1]["children"], [])
        self.assertEqual(sorted(data["leaf_frames"]), ["1", "2"])

    def test_entries_survive(self):
        """A loaded tensor evaluates like the original"""
        save_tensor(self.a, self.path)
        idx = np.array([[1, 1, 1, 1], [3, 4, 2, 5], [2, 3, 1, 4]])
        np.testing.assert_array_equal(entries(load_tensor(self.path), idx), entries(self.a, idx))

    def test_rank_mismatch(self):
        """Declared ranks must match the arrays"""
        data = tensor_to_dict(self.a)
        data["ranks"][1] += 1
        with self.assertRaises(ContainerError):
            tensor_from_dict(data)

    def test_wrong_format(self):
        """Foreign JSON documents are rejected"""
        data = tensor_to_dict(self.a)
        data["format"] = "something-else"
        with self.assertRaises(ContainerError):
            tensor_from_dict(data)

    def test_missing_key(self):
        """Missing sections raise ContainerError, which is a ValidationError"""
        data = tensor_to_dict(self.a)
        del data["transfer_tensors"]
        with self.assertRaises(ValidationError):
            tensor_from_dict(data)

    def test_bad_shapes(self):
        """Frames inconsistent with the mode sizes are rejected"""
        data = tensor_to_dict(self.a)
        data["mode_sizes"][0] = 7
        with self.assertRaises(ContainerError):
            tensor_from_dict(data)

    def test_non_finite(self):
        """NaN data cannot be loaded"""
        data = tensor_to_dict(self.a)
        data["transfer_tensors"]["0"][0][0][0] = float("nan")
        with self.assertRaises(ContainerError):
            tensor_from_dict(data)

    def test_malformed_file(self):
        """Broken JSON and non-objects raise ContainerError"""
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("{not json")
        with self.assertRaises(ContainerError):
            load_tensor(self.path)
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump([1, 2, 3], f)
        with self.assertRaises(ContainerError):
            load_tensor(self.path)
        with self.assertRaises(ContainerError):
            load_tensor(os.path.join(self.tmp.name, "missing.json"))


def run_tests():
    """Run all container tests"""
    print("🧪 Running Tensor Container Tests")
    print("=" * 60)

    test_suite = unittest.TestSuite()
    test_classes = [TestContainer]
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
