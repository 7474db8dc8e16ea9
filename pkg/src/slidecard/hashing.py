"""Seeded hash functions, the LSB primitive and the reversible hash group.

All hashes are built on the SplitMix64 finalizer. Every function accepts a
Python int or a numpy integer array and returns the same kind, so the
per-packet hot path can run over whole batches at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ADDRESS_WIDTH, DEFAULT_SEED
from .errors import ParameterError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U64_M1 = np.uint64(_M1)
_U64_M2 = np.uint64(_M2)
_S30, _S27, _S31, _S32 = (np.uint64(s) for s in (30, 27, 31, 32))


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (bijective on 64 bits)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _U64_M1
    z = (z ^ (z >> _S27)) * _U64_M2
    return z ^ (z >> _S31)


def _seed_key(seed: int) -> int:
    return mix64((seed ^ GOLDEN) & MASK64)


def hash32(x, seed: int):
    """Seeded 32-bit hash of a 32-bit key (int or uint array)."""
    key = _seed_key(seed)
    if isinstance(x, (int, np.integer)):
        z = mix64((int(x) + key) & MASK64)
        return mix64(z ^ key) >> 32
    arr = np.asarray(x).astype(np.uint64)
    k = np.uint64(key)
    z = _mix64_array(arr + k)
    return (_mix64_array(z ^ k) >> _S32).astype(np.uint32)


def lsb(x):
    """Index of the lowest set bit of a 32-bit value; 32 when ``x == 0``."""
    if isinstance(x, (int, np.integer)):
        x = int(x) & 0xFFFFFFFF
        if x == 0:
            return ADDRESS_WIDTH
        return (x & -x).bit_length() - 1
    arr = np.asarray(x).astype(np.uint32)
    low = arr & (~arr + np.uint32(1))
    out = np.bitwise_count(low - np.uint32(1)).astype(np.int64)
    out[arr == 0] = ADDRESS_WIDTH
    return out


def derive_seeds(master: int, count: int) -> list[int]:
    """Deterministic stream of 64-bit seeds (SplitMix64 sequence)."""
    state = master & MASK64
    out = []
    for _ in range(count):
        state = (state + GOLDEN) & MASK64
        out.append(mix64(state))
    return out


@dataclass(frozen=True)
class HashSeeds:
    seed_h1: int
    seed_h2: int
    seed_h3: int
    seed_rhfg0: int
    seeds_lh: tuple[int, ...] = field(default_factory=tuple)

    @classmethod
    def from_seed(cls, seed: int = DEFAULT_SEED, r_prime: int = 5) -> "HashSeeds":
        s = derive_seeds(seed, 4 + r_prime)
        return cls(s[0], s[1], s[2], s[3], tuple(s[4:]))

    def h1(self, bip):
        return hash32(bip, self.seed_h1)

    def h2(self, bip):
        return hash32(bip, self.seed_h2)

    def h3(self, bip):
        return hash32(bip, self.seed_h3)

    def lh(self, i: int, aip, q_prime: int):
        """Column of ``aip``'s SLE in SLEA row ``i``."""
        h = hash32(aip, self.seeds_lh[i])
        return h & ((1 << q_prime) - 1)


def sample_gate(bip, tau: int, eta: int, seeds: HashSeeds):
    """SRE slot for ``bip``, or None (``-1`` in array mode) when it is not sampled.

    A key is sampled iff the hashed value has at least ``tau`` trailing zero
    bits, which is the same as ``lsb(H1(bip)) >= tau``.
    """
    low_mask = (1 << tau) - 1 if tau < ADDRESS_WIDTH else 0xFFFFFFFF
    h1 = seeds.h1(bip)
    if isinstance(h1, int):
        if h1 & low_mask:
            return None
        return seeds.h2(bip) % eta
    passed = (h1 & np.uint32(low_mask)) == 0
    out = np.full(h1.shape, -1, dtype=np.int64)
    out[passed] = seeds.h2(np.asarray(bip)[passed]).astype(np.int64) % eta
    return out


def le_index(bip, eta_prime: int, seeds: HashSeeds):
    if eta_prime < 1:
        raise ParameterError("eta_prime must be >= 1")
    h = seeds.h3(bip)
    if isinstance(h, int):
        return h % eta_prime
    return h.astype(np.int64) % eta_prime


class ReversibleHashGroup:
    """r column hashes where row i >= 1 is ``((aip >> i*delta) ^ RHFG0(aip)) mod 2**q``.

    XOR-ing any row with row 0 exposes q consecutive address bits starting at
    ``i*delta``, which is what makes hot columns invertible back to hosts.
    ``address_width`` defaults to IPv4; smaller widths exist for exhaustive tests.
    """

    def __init__(self, q: int, r: int, delta: int, seed_rhfg0: int,
                 address_width: int = ADDRESS_WIDTH):
        if not 1 <= delta < q:
            raise ParameterError(f"need 1 <= delta < q, got delta={delta}, q={q}")
        if r < 3:
            raise ParameterError(f"need r >= 3, got {r}")
        if (r - 2) * delta + q < address_width:
            raise ParameterError(
                f"(r-2)*delta+q = {(r - 2) * delta + q} does not cover {address_width} address bits"
            )
        self.q = q
        self.r = r
        self.delta = delta
        self.seed_rhfg0 = seed_rhfg0
        self.address_width = address_width
        self.col_mask = (1 << q) - 1
        self.overlap_bits = q - delta
        self.overlap_mask = (1 << self.overlap_bits) - 1

    def base(self, aip):
        h = hash32(aip, self.seed_rhfg0)
        if isinstance(h, int):
            return h & self.col_mask
        return (h & np.uint32(self.col_mask)).astype(np.int64)

    def forward(self, aip):
        """Column index per row: a list for an int, an ``(r, n)`` array for arrays."""
        h0 = self.base(aip)
        if isinstance(h0, int):
            aip = int(aip)
            return [h0] + [((aip >> (i * self.delta)) ^ h0) & self.col_mask
                           for i in range(1, self.r)]
        a = np.asarray(aip).astype(np.int64)
        out = np.empty((self.r,) + h0.shape, dtype=np.int64)
        out[0] = h0
        for i in range(1, self.r):
            out[i] = ((a >> (i * self.delta)) ^ h0) & self.col_mask
        return out

    def windows_consistent(self, prev_window, window):
        """Top q-delta bits of B(i-1) equal the bottom q-delta bits of B(i)."""
        return (prev_window >> self.delta) == (window & self.overlap_mask)

    def invert(self, columns) -> set[int]:
        """All addresses x with ``forward(x) == columns``."""
        columns = [int(c) for c in columns]
        if len(columns) != self.r:
            raise ParameterError(f"expected {self.r} column indices, got {len(columns)}")
        if any(not 0 <= c <= self.col_mask for c in columns):
            raise ParameterError("column index out of range")
        windows = [c ^ columns[0] for c in columns]
        for i in range(2, self.r):
            if not self.windows_consistent(windows[i - 1], windows[i]):
                return set()
        high = 0
        for i in range(1, self.r):
            high |= windows[i] << (i * self.delta)
        if high >> self.address_width:
            return set()
        found = set()
        for low in range(1 << self.delta):
            x = high | low
            if self.forward(x) == columns:
                found.add(x)
        return found

    def invert_many(self, tuples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`invert` over an ``(n, r)`` array of column tuples.

        Returns ``(tuple_index, address)`` pairs for every verified address.
        """
        t = np.asarray(tuples, dtype=np.int64)
        if t.ndim != 2 or t.shape[1] != self.r:
            raise ParameterError(f"expected an (n, {self.r}) array of column tuples")
        n = t.shape[0]
        if n == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        windows = t ^ t[:, :1]
        ok = np.ones(n, dtype=bool)
        for i in range(2, self.r):
            ok &= self.windows_consistent(windows[:, i - 1], windows[:, i])
        high = np.zeros(n, dtype=np.int64)
        for i in range(1, self.r):
            high |= windows[:, i] << (i * self.delta)
        ok &= (high >> self.address_width) == 0
        idx = np.nonzero(ok)[0]
        lows = np.arange(1 << self.delta, dtype=np.int64)
        cand = (high[idx][:, None] | lows[None, :]).ravel()
        owner = np.repeat(idx, lows.size)
        fwd = self.forward(cand)
        match = np.all(fwd == t[owner].T, axis=0)
        return owner[match], cand[match]
