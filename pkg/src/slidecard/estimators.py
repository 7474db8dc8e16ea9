"""Sliding distance counters shared by the rough and linear estimators.

Each 16-bit counter stores how many slices have passed since its slot was
last set; ``COUNTER_MAX`` means never set (or long expired). A slot counts
toward the window-``k`` weight when its value is below ``k``.

The array helpers operate on the last axis of arbitrary uint16 arrays so the
grid structures in :mod:`slidecard.sketch_arrays` reuse them unchanged.
"""

from __future__ import annotations

import math

import numpy as np

from .config import COUNTER_MAX, MAX_WINDOW, RHO
from .errors import ParameterError, SaturationError

COUNTER_DTYPE = np.uint16
_SLIDE_CAP = COUNTER_MAX - 1


def fresh_counters(shape) -> np.ndarray:
    return np.full(shape, COUNTER_MAX, dtype=COUNTER_DTYPE)


def slide_counters(counters: np.ndarray) -> None:
    """Saturating in-place increment: ``min(c, 65534) + 1``."""
    np.minimum(counters, _SLIDE_CAP, out=counters)
    counters += 1


def counter_weights(counters: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """Number of counters below ``k`` along ``axis``."""
    return np.count_nonzero(counters < k, axis=axis)


def _check_k(k: int) -> None:
    if not 1 <= k <= MAX_WINDOW:
        raise ParameterError(f"window length k must be in [1, {MAX_WINDOW}], got {k}")


class SlidingCounterVector:
    """A single SRE/SLE: ``length`` distance counters, all initially expired."""

    __slots__ = ("counters",)

    def __init__(self, length: int | None = None, counters: np.ndarray | None = None):
        if counters is not None:
            self.counters = np.array(counters, dtype=COUNTER_DTYPE)
        elif length is not None and length >= 1:
            self.counters = fresh_counters(length)
        else:
            raise ParameterError("vector length must be >= 1")

    def __len__(self) -> int:
        return self.counters.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SlidingCounterVector):
            return NotImplemented
        return np.array_equal(self.counters, other.counters)

    def __repr__(self) -> str:
        return f"SlidingCounterVector({self.counters.tolist()})"

    def copy(self) -> "SlidingCounterVector":
        return SlidingCounterVector(counters=self.counters.copy())

    def record(self, idx: int) -> None:
        if not 0 <= idx < self.counters.size:
            raise ParameterError(f"slot {idx} out of range for length {self.counters.size}")
        self.counters[idx] = 0

    def slide(self) -> None:
        slide_counters(self.counters)

    def weight(self, k: int) -> int:
        _check_k(k)
        return int(counter_weights(self.counters, k))

    def is_hot(self, k: int, eta: int | None = None, rho: float = RHO) -> bool:
        eta = self.counters.size if eta is None else eta
        if eta != self.counters.size:
            raise ParameterError("vector length must equal eta")
        return self.weight(k) >= eta * rho


def _check_same_length(a: SlidingCounterVector, b: SlidingCounterVector) -> None:
    if len(a) != len(b):
        raise ParameterError(f"length mismatch: {len(a)} vs {len(b)}")


def combine_min(a: SlidingCounterVector, b: SlidingCounterVector) -> SlidingCounterVector:
    """Per-slot minimum: the union of observations from partitioned traffic."""
    _check_same_length(a, b)
    return SlidingCounterVector(counters=np.minimum(a.counters, b.counters))


def combine_max(a: SlidingCounterVector, b: SlidingCounterVector) -> SlidingCounterVector:
    """Per-slot maximum: a slot stays inside the window only if it is in both inputs."""
    _check_same_length(a, b)
    return SlidingCounterVector(counters=np.maximum(a.counters, b.counters))


def is_hot_weight(weight, eta: int, rho: float = RHO):
    return weight >= eta * rho


def le_saturated(weight: float, eta_prime: int) -> bool:
    return weight >= eta_prime - 1


def le_estimate(weight: float, eta_prime: int) -> float:
    """Linear-counting estimate ``-eta' * ln((eta' - w) / eta')``.

    Weights at or above ``eta' - 1`` are pinned to ``eta' - 1`` so the result
    stays finite and monotone; check :func:`le_saturated` to flag them.
    """
    if weight < 0 or weight > eta_prime:
        raise ParameterError(f"weight {weight} outside [0, {eta_prime}]")
    if weight <= 0:
        return 0.0
    w = min(weight, eta_prime - 1) if eta_prime > 1 else 0
    return -eta_prime * math.log((eta_prime - w) / eta_prime)


def corrected_weight(usle_weight: float, sf_product: float, eta_prime: int) -> float:
    """Remove the expected number of slots set by other hosts from a union weight."""
    if not 0 <= usle_weight <= eta_prime:
        raise ParameterError(f"usle_weight {usle_weight} outside [0, {eta_prime}]")
    if sf_product < 0:
        raise ParameterError("sf_product must be non-negative")
    if sf_product >= 1.0:
        raise SaturationError("setting-factor product is 1: every slot is set, estimate unusable")
    w = (usle_weight - eta_prime * sf_product) / (1.0 - sf_product)
    return min(max(w, 0.0), float(eta_prime))
