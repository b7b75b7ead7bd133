"""JSON container for HT tensors.

Keys are written in a fixed order with no timestamps, so equal tensors give
byte-identical files. Floats go through repr and come back bit-exact.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from core.errors import ContainerError, ValidationError
from core.ht_core import DimensionTree, HtTensor, TreeNode

logger = logging.getLogger(__name__)

FORMAT = "htmax-tensor"
VERSION = 1


def tensor_to_dict(a: HtTensor) -> Dict[str, Any]:
    tree = [{"id": node.id, "subset": list(node.modes),
             "children": list(node.children) if node.children else []} for node in a.tree.nodes]
    return {
        "format": FORMAT,
        "version": VERSION,
        "d": a.d,
        "mode_sizes": list(a.mode_sizes),
        "tree": tree,
        "ranks": list(a.ranks),
        "leaf_frames": {str(t): a.leaf_frames[t].tolist() for t in sorted(a.leaf_frames)},
        "transfer_tensors": {str(t): a.transfer_tensors[t].tolist() for t in sorted(a.transfer_tensors)},
    }


def _tree_from_records(records) -> DimensionTree:
    parents = {}
    for rec in records:
        for child in rec.get("children") or []:
            parents[int(child)] = int(rec["id"])
    nodes = []
    for rec in records:
        children = rec.get("children") or []
        if children and len(children) != 2:
            raise ContainerError(f"node {rec['id']} must have zero or two children")
        nodes.append(TreeNode(int(rec["id"]), tuple(int(m) for m in rec["subset"]),
                              tuple(int(c) for c in children) if children else None,
                              parents.get(int(rec["id"]))))
    return DimensionTree(tuple(nodes))


def tensor_from_dict(data: Dict[str, Any]) -> HtTensor:
    """Rebuild and validate a tensor; any inconsistency raises ContainerError"""
    try:
        if data.get("format", FORMAT) != FORMAT:
            raise ContainerError(f"not an htmax tensor container (format {data.get('format')!r})")
        tree = _tree_from_records(data["tree"])
        if int(data["d"]) != tree.d:
            raise ContainerError(f"d = {data['d']} but the tree has {tree.d} modes")
        frames = {int(t): np.array(u, dtype=float) for t, u in data["leaf_frames"].items()}
        transfers = {int(t): np.array(b, dtype=float) for t, b in data["transfer_tensors"].items()}
        a = HtTensor(tree, tuple(data["mode_sizes"]), frames, transfers)
    except ContainerError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise ContainerError(f"invalid tensor container: {e}")
    if "ranks" in data and tuple(int(r) for r in data["ranks"]) != a.ranks:
        raise ContainerError(f"declared ranks {data['ranks']} do not match the stored data {list(a.ranks)}")
    if not all(np.all(np.isfinite(u)) for u in list(frames.values()) + list(transfers.values())):
        raise ContainerError("container holds non-finite numbers")
    return a


def save_tensor(a: HtTensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        text = json.dumps(tensor_to_dict(a), indent=2, allow_nan=False)
    except ValueError as e:
        raise ContainerError(f"cannot serialize tensor: {e}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    logger.info(f"Saved {a!r} to {path}")
    return path


def load_tensor(path) -> HtTensor:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ContainerError(f"Failed to read tensor container {path}: {e}")
    if not isinstance(data, dict):
        raise ContainerError(f"{path} does not hold a JSON object")
    a = tensor_from_dict(data)
    logger.debug(f"Loaded {a!r} from {path}")
    return a
