from typing import List, Optional, Tuple


class HtError(Exception):
    """Base class for every htmax failure"""


class ValidationError(HtError, ValueError):
    """Bad parameters, mismatched shapes or trees, out-of-range indices"""


class ContainerError(ValidationError):
    """Malformed or inconsistent JSON tensor container"""


class DenseCapError(ValidationError):
    """Densification refused because the tensor exceeds the configured cap"""


class ZeroTensorError(HtError):
    """A tensor that had to be normalized is (numerically) zero"""


class EstimatorError(HtError):
    """An estimator run could not finish"""

    def __init__(self, message: str, status: str = "failed"):
        super().__init__(message)
        self.status = status


class SearchError(EstimatorError):
    """Binary argmax search failed; carries the ranges reached so far"""

    def __init__(self, message: str, partial_ranges: Optional[List[Tuple[int, int]]] = None):
        super().__init__(message, status="search-failed")
        self.partial_ranges = partial_ranges or []


class OracleMismatch(HtError):
    """An HT result disagreed with the dense oracle"""
