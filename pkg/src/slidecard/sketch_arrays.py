"""The two sketch structures: the reversible rough-estimator array used to find
super point candidates, and the shared-counter linear-estimator array used to
estimate their cardinalities.

Both keep their counters in a single uint16 ndarray and update whole batches
of IP pairs per call. Zeroing a counter is idempotent, so any interleaving of
updates inside one slice yields the same state.
"""

from __future__ import annotations

import numpy as np

from .config import ADDRESS_WIDTH, DEFAULT_TUPLE_CAP, RHO, SketchParams
from .estimators import (
    SlidingCounterVector,
    combine_max,
    corrected_weight,
    counter_weights,
    fresh_counters,
    le_estimate,
    le_saturated,
    slide_counters,
)
from .errors import IncompatibleSketchError, ParameterError, ReconstructionOverflow, SaturationError
from .hashing import HashSeeds, ReversibleHashGroup, le_index, sample_gate

SATURATION_EPS = 1e-9


def _as_batch(aip, bip):
    a = np.atleast_1d(np.asarray(aip, dtype=np.int64))
    b = np.atleast_1d(np.asarray(bip, dtype=np.int64))
    if a.shape != b.shape:
        raise ParameterError("aip and bip batches differ in length")
    return a, b


class Rsra:
    """``r x 2**q`` grid of sliding rough estimators, each ``eta`` counters wide."""

    type_tag = 1

    def __init__(self, q: int, r: int, delta: int, eta: int, tau: int, seeds: HashSeeds,
                 rho: float = RHO, address_width: int = ADDRESS_WIDTH):
        self.q, self.r, self.delta, self.eta, self.tau = q, r, delta, eta, tau
        self.rho = rho
        self.seeds = seeds
        self.group = ReversibleHashGroup(q, r, delta, seeds.seed_rhfg0, address_width)
        self.grid = fresh_counters((r, 1 << q, eta))
        self.slices = 0

    @classmethod
    def from_params(cls, params: SketchParams, seeds: HashSeeds | None = None) -> "Rsra":
        seeds = seeds or HashSeeds.from_seed(params.seed, params.r_prime)
        return cls(params.q, params.r, params.delta, params.eta, params.tau, seeds)

    @property
    def header(self) -> tuple:
        return (self.q, self.r, self.delta, self.eta, self.tau)

    @property
    def used_seeds(self) -> tuple[int, ...]:
        return (self.seeds.seed_h1, self.seeds.seed_h2, self.seeds.seed_rhfg0)

    @property
    def counters(self) -> np.ndarray:
        return self.grid

    def update(self, aip, bip) -> None:
        a, b = _as_batch(aip, bip)
        slot = sample_gate(b, self.tau, self.eta, self.seeds)
        keep = slot >= 0
        if not keep.any():
            return
        cols = self.group.forward(a[keep])
        slot = slot[keep]
        for i in range(self.r):
            self.grid[i, cols[i], slot] = 0

    def weights(self, k: int) -> np.ndarray:
        """``(r, 2**q)`` array of window-``k`` weights."""
        return counter_weights(self.grid, k)

    def vector(self, row: int, col: int) -> SlidingCounterVector:
        return SlidingCounterVector(counters=self.grid[row, col])

    def extract_hse(self, k: int) -> list[np.ndarray]:
        """Sorted column indices of the hot estimators in every row."""
        hot = self.weights(k) >= self.eta * self.rho
        return [np.nonzero(hot[i])[0].astype(np.int64) for i in range(self.r)]

    def slide(self) -> None:
        slide_counters(self.grid)
        self.slices += 1

    def reset(self) -> None:
        self.grid.fill(np.iinfo(self.grid.dtype).max)

    def copy(self) -> "Rsra":
        other = object.__new__(Rsra)
        other.__dict__.update(self.__dict__)
        other.grid = self.grid.copy()
        return other

    def __eq__(self, other) -> bool:
        if not isinstance(other, Rsra):
            return NotImplemented
        return (self.header == other.header and self.used_seeds == other.used_seeds
                and self.slices == other.slices and np.array_equal(self.grid, other.grid))

    @property
    def nbytes(self) -> int:
        return self.grid.nbytes


class Slea:
    """``r'`` rows of overlapping sliding linear estimators.

    SLE ``j`` of a row is the counter range ``[j*delta', j*delta' + eta')``, so
    adjacent estimators share ``eta' - delta'`` counters and a row holds only
    ``2**q' * delta' + eta' - delta'`` counters.
    """

    type_tag = 2

    def __init__(self, q_prime: int, r_prime: int, delta_prime: int, eta_prime: int,
                 seeds: HashSeeds):
        if not 0 < delta_prime <= eta_prime:
            raise ParameterError("need 0 < delta_prime <= eta_prime")
        if len(seeds.seeds_lh) < r_prime:
            raise ParameterError(f"need {r_prime} LH seeds, got {len(seeds.seeds_lh)}")
        self.q_prime, self.r_prime = q_prime, r_prime
        self.delta_prime, self.eta_prime = delta_prime, eta_prime
        self.seeds = seeds
        self.row_length = (1 << q_prime) * delta_prime + eta_prime - delta_prime
        self.rows = fresh_counters((r_prime, self.row_length))
        self.slices = 0

    @classmethod
    def from_params(cls, params: SketchParams, seeds: HashSeeds | None = None) -> "Slea":
        seeds = seeds or HashSeeds.from_seed(params.seed, params.r_prime)
        s = cls(params.q_prime, params.r_prime, params.delta_prime, params.eta_prime, seeds)
        assert s.row_length == params.slea_row_length
        return s

    @property
    def header(self) -> tuple:
        return (self.q_prime, self.r_prime, self.delta_prime, self.eta_prime)

    @property
    def used_seeds(self) -> tuple[int, ...]:
        return (self.seeds.seed_h3,) + tuple(self.seeds.seeds_lh[:self.r_prime])

    @property
    def counters(self) -> np.ndarray:
        return self.rows

    @property
    def memory_reduction_rate(self) -> float:
        return 1.0 - self.row_length / (self.eta_prime * (1 << self.q_prime))

    def offsets(self, aip) -> np.ndarray:
        """Start offset of ``aip``'s SLE in each row, shape ``(r', n)``."""
        a = np.atleast_1d(np.asarray(aip, dtype=np.int64))
        out = np.empty((self.r_prime, a.size), dtype=np.int64)
        for i in range(self.r_prime):
            out[i] = self.seeds.lh(i, a, self.q_prime).astype(np.int64) * self.delta_prime
        return out

    def update(self, aip, bip) -> None:
        a, b = _as_batch(aip, bip)
        if a.size == 0:
            return
        slot = le_index(b, self.eta_prime, self.seeds)
        offs = self.offsets(a)
        for i in range(self.r_prime):
            self.rows[i, offs[i] + slot] = 0

    def setting_factors(self, k: int) -> np.ndarray:
        return counter_weights(self.rows, k) / self.row_length

    def setting_factor(self, i: int, k: int) -> float:
        if not 0 <= i < self.r_prime:
            raise ParameterError(f"row {i} out of range")
        return float(self.setting_factors(k)[i])

    def sf_product(self, k: int) -> float:
        prod = 1.0
        for sf in self.setting_factors(k):
            prod *= float(sf)
        return prod

    def union_vector(self, aip: int) -> SlidingCounterVector:
        """Per-slot maximum over the host's r' estimators."""
        offs = self.offsets(aip)[:, 0]
        usle = SlidingCounterVector(counters=self.rows[0, offs[0]:offs[0] + self.eta_prime])
        for i in range(1, self.r_prime):
            usle = combine_max(usle, SlidingCounterVector(
                counters=self.rows[i, offs[i]:offs[i] + self.eta_prime]))
        return usle

    def estimate_cardinality(self, aip: int, k: int) -> float:
        sf = self.sf_product(k)
        if sf >= 1.0 - SATURATION_EPS:
            raise SaturationError(f"SLEA saturated (setting-factor product {sf:.6f})")
        w = self.union_vector(aip).weight(k)
        return le_estimate(corrected_weight(w, sf, self.eta_prime), self.eta_prime)

    def estimate_many(self, aips, k: int, uncorrected: bool = False):
        """Estimates for a batch of hosts.

        Returns ``(estimates, saturated, sf_product)`` where ``saturated`` flags
        estimates pinned at the linear-counting ceiling. ``uncorrected`` skips
        the background correction (diagnostics only).
        """
        aips = np.atleast_1d(np.asarray(aips, dtype=np.int64))
        sf = self.sf_product(k)
        if sf >= 1.0 - SATURATION_EPS:
            raise SaturationError(f"SLEA saturated (setting-factor product {sf:.6f})")
        inside = self.rows < k
        offs = self.offsets(aips)
        est = np.empty(aips.size, dtype=np.float64)
        sat = np.zeros(aips.size, dtype=bool)
        for n in range(aips.size):
            o = offs[0, n]
            union = inside[0, o:o + self.eta_prime].copy()
            for i in range(1, self.r_prime):
                o = offs[i, n]
                union &= inside[i, o:o + self.eta_prime]
            w = int(np.count_nonzero(union))
            cw = float(w) if uncorrected else corrected_weight(w, sf, self.eta_prime)
            sat[n] = le_saturated(cw, self.eta_prime)
            est[n] = le_estimate(cw, self.eta_prime)
        return est, sat, sf

    def slide(self) -> None:
        slide_counters(self.rows)
        self.slices += 1

    def reset(self) -> None:
        self.rows.fill(np.iinfo(self.rows.dtype).max)

    def copy(self) -> "Slea":
        other = object.__new__(Slea)
        other.__dict__.update(self.__dict__)
        other.rows = self.rows.copy()
        return other

    def __eq__(self, other) -> bool:
        if not isinstance(other, Slea):
            return NotImplemented
        return (self.header == other.header and self.used_seeds == other.used_seeds
                and self.slices == other.slices and np.array_equal(self.rows, other.rows))

    @property
    def nbytes(self) -> int:
        return self.rows.nbytes


def slide_all(structure) -> None:
    structure.slide()


def check_compatible(a, b) -> None:
    """Raise :class:`IncompatibleSketchError` naming the first differing field."""
    if type(a) is not type(b):
        raise IncompatibleSketchError(f"cannot merge {type(a).__name__} with {type(b).__name__}")
    names = ("q", "r", "delta", "eta", "tau") if isinstance(a, Rsra) else (
        "q_prime", "r_prime", "delta_prime", "eta_prime")
    for name, x, y in zip(names, a.header, b.header):
        if x != y:
            raise IncompatibleSketchError(f"parameter {name} differs: {x} vs {y}")
    if a.used_seeds != b.used_seeds:
        raise IncompatibleSketchError("hash seeds differ")
    if a.slices != b.slices:
        raise IncompatibleSketchError(f"slice counter differs: {a.slices} vs {b.slices}")


def merge_structures(a, b):
    """Per-counter minimum of two same-shape structures (union of their traffic)."""
    check_compatible(a, b)
    out = a.copy()
    np.minimum(a.counters, b.counters, out=out.counters)
    return out


class _TupleBuffer:
    """Growable ``(n, r)`` buffer of candidate tuples."""

    def __init__(self, width: int):
        self.data = np.empty((1024, width), dtype=np.int64)
        self.size = 0
        self.cols = 0

    def clear(self, cols: int) -> None:
        self.size = 0
        self.cols = cols

    def extend(self, tuples: np.ndarray) -> None:
        n = tuples.shape[0]
        if self.size + n > self.data.shape[0]:
            cap = max(self.data.shape[0] * 2, self.size + n)
            grown = np.empty((cap, self.data.shape[1]), dtype=np.int64)
            grown[:self.size] = self.data[:self.size]
            self.data = grown
        self.data[self.size:self.size + n, :self.cols] = tuples
        self.size += n

    def view(self) -> np.ndarray:
        return self.data[:self.size, :self.cols]


def _extend_tuples(tuples: np.ndarray, hot: np.ndarray, group: ReversibleHashGroup) -> np.ndarray:
    """Append every hot column of the next row whose exposed window overlaps consistently.

    For a tuple over rows ``0..i-1`` a column ``c`` of row ``i`` fits iff the
    bottom q-delta bits of ``c ^ he_0`` equal the top q-delta bits of B(i-1).
    Matching columns are found by binary search on their low bits instead of
    testing the full cross product.
    """
    i = tuples.shape[1]
    he0 = tuples[:, 0]
    prev = tuples[:, i - 1] ^ he0
    need = ((prev >> group.delta) ^ he0) & group.overlap_mask
    keys = hot & group.overlap_mask
    order = np.argsort(keys, kind="stable")
    skeys, shot = keys[order], hot[order]
    lo = np.searchsorted(skeys, need, side="left")
    counts = np.searchsorted(skeys, need, side="right") - lo
    total = int(counts.sum())
    rep = np.repeat(np.arange(tuples.shape[0]), counts)
    starts = np.cumsum(counts) - counts
    pos = lo[rep] + (np.arange(total) - starts[rep])
    return np.column_stack([tuples[rep], shot[pos]])


def reconstruct_candidates(hse: list[np.ndarray], group: ReversibleHashGroup,
                           cap: int = DEFAULT_TUPLE_CAP, chunk: int = 256) -> np.ndarray:
    """Hosts whose r columns are all hot, recovered from the hot lists.

    Tuples are grown row by row between two alternating buffers: seed tuples
    over rows 0-2 first, then one row per pass. Each pass checks only the
    newly exposed window overlap; the survivors are inverted with full
    forward verification. Returns a sorted, duplicate-free int64 array.

    Raises:
        ReconstructionOverflow: more than ``cap`` live tuples at any stage.
    """
    if len(hse) != group.r:
        raise ParameterError(f"expected {group.r} hot lists, got {len(hse)}")
    hot = [np.unique(np.asarray(h, dtype=np.int64)) for h in hse]
    if any(h.size == 0 for h in hot):
        return np.empty(0, dtype=np.int64)
    store, read = _TupleBuffer(group.r), _TupleBuffer(group.r)

    store.clear(3)
    h0, h1 = hot[0], hot[1]
    for start in range(0, h0.size, chunk):
        part = h0[start:start + chunk]
        pairs = np.column_stack([np.repeat(part, h1.size), np.tile(h1, part.size)])
        grown = _extend_tuples(pairs, hot[2], group)
        if store.size + grown.shape[0] > cap:
            raise ReconstructionOverflow(f"more than {cap} candidate tuples after rows 0-2")
        store.extend(grown)

    for i in range(3, group.r):
        store, read = read, store
        store.clear(i + 1)
        current = read.view()
        for start in range(0, current.shape[0], chunk * 64):
            grown = _extend_tuples(current[start:start + chunk * 64], hot[i], group)
            if store.size + grown.shape[0] > cap:
                raise ReconstructionOverflow(f"more than {cap} candidate tuples at row {i}")
            store.extend(grown)
        if store.size == 0:
            return np.empty(0, dtype=np.int64)

    _, addresses = group.invert_many(store.view())
    return np.unique(addresses)
