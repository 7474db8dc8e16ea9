import numpy as np
import pytest

from slidecard.config import SketchParams
from slidecard.hashing import HashSeeds

# small but valid: (7-2)*4 + 12 = 32
SMALL = dict(theta=64, eta=8, q=12, r=7, delta=4, q_prime=10, r_prime=5,
             delta_prime=8, eta_prime=1024, seed=11)


@pytest.fixture
def small_params():
    return SketchParams(**SMALL)


@pytest.fixture
def small_seeds(small_params):
    return HashSeeds.from_seed(small_params.seed, small_params.r_prime)


def random_records(rng, n_slices, n_records, n_hosts=40, slice_us=1_000_000, t0=0,
                   supers=()):
    """Time-sorted ``(ts, aip, bip)`` arrays; ``supers`` is a list of (aip, n_peers, slice)."""
    hosts = rng.integers(0, 2 ** 32, size=n_hosts, dtype=np.int64)
    ts = t0 + rng.integers(0, n_slices * slice_us, size=n_records)
    aip = hosts[rng.integers(0, n_hosts, size=n_records)]
    bip = rng.integers(0, 2 ** 32, size=n_records, dtype=np.int64)
    parts = [(ts, aip, bip)]
    for host, n, s in supers:
        parts.append((t0 + s * slice_us + rng.integers(0, slice_us, size=n),
                      np.full(n, host, dtype=np.int64),
                      rng.integers(0, 2 ** 32, size=n, dtype=np.int64)))
    ts, aip, bip = (np.concatenate([p[i] for p in parts]) for i in range(3))
    order = np.argsort(ts, kind="stable")
    return ts[order], aip[order], bip[order]


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
