"""Exact ground truth, accuracy metrics and the synthetic trace generator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, ResourceError
from .ingest_io import AnetSpec, atomic_output, write_trace, write_truth
from .window_engine import DISCRETE, WindowConfig

DEFAULT_MAX_PAIRS = 50_000_000


def aligned_t0(first_ts: int, cfg: WindowConfig) -> int:
    return first_ts - first_ts % cfg.slice_us


def stream_slices(ts: np.ndarray, cfg: WindowConfig, t0: int | None = None) -> np.ndarray:
    """Slice index per record, clamped to be non-decreasing like the engine does."""
    if ts.size == 0:
        return np.empty(0, dtype=np.int64)
    if t0 is None:
        t0 = cfg.t0 if cfg.t0 is not None else aligned_t0(int(ts[0]), cfg)
    return np.maximum.accumulate((np.asarray(ts, dtype=np.int64) - t0) // cfg.slice_us)


def window_ends(last_slice: int, cfg: WindowConfig) -> list[int]:
    """Window end slices the engine reports for a stream ending in ``last_slice``."""
    if cfg.mode == DISCRETE:
        ends = [s for s in range(last_slice) if (s + 1) % cfg.k == 0]
    else:
        ends = list(range(cfg.k - 1, last_slice))
    return ends + [last_slice]


def window_start(end: int, cfg: WindowConfig) -> int:
    if cfg.mode == DISCRETE:
        return end - end % cfg.k
    return end - cfg.k + 1


class ExactWindowState:
    """Exact distinct-peer counts for the current window.

    Keeps the last slice each (aip, bip) pair was seen in, plus the pairs
    touched in every live slice; when a slice leaves the window only pairs
    whose last sighting is still that slice are uncounted.
    """

    def __init__(self, k: int, max_pairs: int = DEFAULT_MAX_PAIRS):
        self.k = k
        self.max_pairs = max_pairs
        self.last_seen: dict[int, int] = {}
        self.touched: dict[int, list[int]] = {}
        self.count: dict[int, int] = {}

    def add(self, s: int, aip: int, bip: int) -> None:
        key = (aip << 32) | bip
        prev = self.last_seen.get(key)
        if prev == s:
            return
        if prev is None:
            if len(self.last_seen) >= self.max_pairs:
                raise ResourceError(f"exact oracle exceeded {self.max_pairs} distinct pairs")
            self.count[aip] = self.count.get(aip, 0) + 1
        self.last_seen[key] = s
        self.touched.setdefault(s, []).append(key)

    def expire(self, s: int) -> None:
        """Drop slice ``s`` from the window."""
        for key in self.touched.pop(s, ()):
            if self.last_seen.get(key) == s:
                del self.last_seen[key]
                aip = key >> 32
                c = self.count[aip] - 1
                if c:
                    self.count[aip] = c
                else:
                    del self.count[aip]

    def reset(self) -> None:
        self.last_seen.clear()
        self.touched.clear()
        self.count.clear()

    def cardinality(self, aip: int) -> int:
        return self.count.get(aip, 0)

    def supers(self, theta: int) -> dict[int, int]:
        return {a: c for a, c in self.count.items() if c >= theta}


def exact_detect(records, cfg: WindowConfig, theta: int, max_pairs: int = DEFAULT_MAX_PAIRS,
                 everyone: bool = False) -> dict[int, dict[int, int]]:
    """``{window_end_slice: {aip: exact cardinality}}`` for every reported window.

    Only hosts at or above ``theta`` are kept unless ``everyone`` is set.
    """
    ts, aip, bip = (np.asarray(x, dtype=np.int64) for x in records)
    out: dict[int, dict[int, int]] = {}
    if ts.size == 0:
        return out
    slices = stream_slices(ts, cfg)
    state = ExactWindowState(cfg.k, max_pairs)
    ends = set(window_ends(int(slices[-1]), cfg))
    bounds = np.concatenate([[0], np.flatnonzero(np.diff(slices)) + 1, [ts.size]])
    groups = {int(slices[lo]): (lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])}
    threshold = 1 if everyone else theta
    for s in range(int(slices[-1]) + 1):
        if s in groups:
            lo, hi = groups[s]
            for a, b in zip(aip[lo:hi].tolist(), bip[lo:hi].tolist()):
                state.add(s, a, b)
        if s in ends:
            out[s] = state.supers(threshold)
        if cfg.mode == DISCRETE and (s + 1) % cfg.k == 0:
            state.reset()
        else:
            state.expire(s - cfg.k + 1)
    return out


def exact_detect_rescan(records, cfg: WindowConfig, theta: int) -> dict[int, dict[int, int]]:
    """Same as :func:`exact_detect` by rebuilding every window from scratch (slow cross-check)."""
    ts, aip, bip = (np.asarray(x, dtype=np.int64) for x in records)
    if ts.size == 0:
        return {}
    slices = stream_slices(ts, cfg)
    out = {}
    for end in window_ends(int(slices[-1]), cfg):
        sel = (slices >= window_start(end, cfg)) & (slices <= end)
        pairs = set(zip(aip[sel].tolist(), bip[sel].tolist()))
        counts: dict[int, int] = {}
        for a, _ in pairs:
            counts[a] = counts.get(a, 0) + 1
        out[end] = {a: c for a, c in counts.items() if c >= theta}
    return out


@dataclass
class AccuracyResult:
    window_end_slice: int | None
    n_true: int
    n_detected: int
    n_false_pos: int
    n_false_neg: int

    @property
    def defined(self) -> bool:
        return self.n_true > 0

    @property
    def fpr(self) -> float | None:
        return self.n_false_pos / self.n_true if self.n_true else None

    @property
    def fnr(self) -> float | None:
        return self.n_false_neg / self.n_true if self.n_true else None

    @property
    def tfr(self) -> float | None:
        return (self.n_false_pos + self.n_false_neg) / self.n_true if self.n_true else None


def score(detected, truth, window_end_slice: int | None = None) -> AccuracyResult:
    """False-positive and false-negative counts, both normalised by the true count."""
    detected, truth = set(detected), set(truth)
    return AccuracyResult(window_end_slice, len(truth), len(detected),
                          len(detected - truth), len(truth - detected))


def score_windows(detected: dict[int, object], truth: dict[int, object],
                  windows: list[int] | None = None) -> list[AccuracyResult]:
    if windows is None:
        windows = sorted(set(detected) | set(truth))
    else:
        extra = sorted(set(detected) - set(windows))
        if extra:
            raise AlignmentError(f"report has windows {extra[:5]} not covered by the ground truth")
    return [score(detected.get(w, ()), truth.get(w, ()), w) for w in windows]


@dataclass
class AverageAccuracy:
    windows: int
    fpr: float | None
    fnr: float | None
    tfr: float | None


def average(results: list[AccuracyResult]) -> AverageAccuracy:
    """Means over windows with at least one true super point."""
    good = [r for r in results if r.defined]
    if not good:
        return AverageAccuracy(0, None, None, None)
    n = len(good)
    return AverageAccuracy(n, sum(r.fpr for r in good) / n, sum(r.fnr for r in good) / n,
                           sum(r.tfr for r in good) / n)


ACCURACY_HEADER = "window_end_slice,n_true,n_detected,n_false_pos,n_false_neg,fpr,fnr,tfr"


def _ratio(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.6f}"


def write_accuracy(results: list[AccuracyResult], sink) -> None:
    sink.write(ACCURACY_HEADER + "\n")
    for r in results:
        sink.write(f"{r.window_end_slice},{r.n_true},{r.n_detected},{r.n_false_pos},"
                   f"{r.n_false_neg},{_ratio(r.fpr)},{_ratio(r.fnr)},{_ratio(r.tfr)}\n")
    avg = average(results)
    sink.write(f"average,{avg.windows},,,,{_ratio(avg.fpr)},{_ratio(avg.fnr)},{_ratio(avg.tfr)}\n")


# -- synthetic traces -------------------------------------------------------

@dataclass
class GenSpec:
    """Synthetic traffic description.

    Every host contacts each of its peers once per ``spread`` slices at a
    random phase while it is active, so any window of at least ``spread``
    slices inside the active period sees the host's full peer set.
    """

    n_slices: int = 600
    k: int = 300
    spread: int | None = None
    slice_duration: float = 1.0
    t0: int = 1424350800000000
    anet: str = "10.0.0.0/8"
    background_hosts: int = 100_000
    background_zipf: float = 2.0
    background_max: int = 511
    supers: int = 50
    super_min: int = 2048
    super_max: int = 8192
    super_start_max: int = 0
    super_end_min: int | None = None

    def __post_init__(self):
        if self.spread is None:
            self.spread = self.k
        if self.super_end_min is None:
            self.super_end_min = self.n_slices
        if self.n_slices < 1 or self.k < 1 or self.spread < 1:
            raise ConfigError("n_slices, k and spread must be >= 1")
        if self.background_hosts < 0 or self.supers < 0:
            raise ConfigError("host counts must be >= 0")
        if self.background_zipf <= 1.0:
            raise ConfigError("background_zipf must be > 1")
        if not 1 <= self.super_min <= self.super_max:
            raise ConfigError("need 1 <= super_min <= super_max")
        if not 0 <= self.super_start_max < self.super_end_min <= self.n_slices:
            raise ConfigError("need 0 <= super_start_max < super_end_min <= n_slices")
        anet = AnetSpec.parse(self.anet)
        outside = (1 << 32) - sum(n.num_addresses for n in anet.prefixes)
        inside = sum(n.num_addresses for n in anet.prefixes)
        if max(self.super_max, self.background_max) > outside // 2:
            raise ConfigError("cardinality exceeds the available peer address space")
        if self.background_hosts + self.supers > inside:
            raise ConfigError("more hosts than ANet addresses")

    @classmethod
    def from_json(cls, text: str) -> "GenSpec":
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid trace spec: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @property
    def window_cfg(self) -> WindowConfig:
        return WindowConfig(slice_duration=self.slice_duration, k=self.k)


@dataclass
class PlantedHost:
    aip: int
    cardinality: int
    start: int
    end: int


@dataclass
class GeneratedTrace:
    ts: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    planted: list[PlantedHost] = field(default_factory=list)
    sidecar: list[tuple[int, int, int]] = field(default_factory=list)


def _anet_hosts(rng, anet: AnetSpec, n: int) -> np.ndarray:
    sizes = np.array([p.num_addresses for p in anet.prefixes], dtype=np.int64)
    bases = np.array([int(p.network_address) for p in anet.prefixes], dtype=np.int64)
    flat = rng.choice(int(sizes.sum()), size=n, replace=False)
    edges = np.cumsum(sizes) - sizes
    which = np.searchsorted(edges, flat, side="right") - 1
    return bases[which] + (flat - edges[which])


def _outside_peers(rng, anet: AnetSpec, owners: np.ndarray) -> np.ndarray:
    """One random non-ANet address per entry of ``owners``, distinct within an owner."""
    peers = np.zeros(owners.size, dtype=np.int64)
    todo = np.arange(owners.size)
    while todo.size:
        peers[todo] = rng.integers(0, 1 << 32, size=todo.size, dtype=np.int64)
        bad = anet.contains(peers)
        key = (owners << 32) | peers
        _, first = np.unique(key, return_index=True)
        dup = np.ones(owners.size, dtype=bool)
        dup[first] = False
        todo = np.flatnonzero(bad | dup)
    return peers


def _truncated_zipf(rng, a: float, cap: int, n: int) -> np.ndarray:
    out = rng.zipf(a, size=n)
    bad = np.flatnonzero(out > cap)
    while bad.size:
        out[bad] = rng.zipf(a, size=bad.size)
        bad = bad[out[bad] > cap]
    return out.astype(np.int64)


def _contact_schedule(phase: np.ndarray, start: np.ndarray, end: np.ndarray, spread: int):
    """Expand per-peer (phase, start, end) into (peer_index, slice) contacts."""
    first = start + phase
    counts = np.maximum((end - first + spread - 1) // spread, 0)
    idx = np.repeat(np.arange(phase.size), counts)
    offsets = np.arange(idx.size) - np.repeat(np.cumsum(counts) - counts, counts)
    return idx, first[idx] + offsets * spread


def planted_window_counts(phase: np.ndarray, start: int, end: int, spread: int,
                          window_ends_: np.ndarray, k: int) -> np.ndarray:
    """Distinct peers with a contact inside each window, straight from the schedule."""
    first = start + phase[None, :]
    lo = (window_ends_ - k + 1)[:, None]
    j = np.maximum(-(-(lo - first) // spread), 0)
    c = first + j * spread
    hit = (c <= window_ends_[:, None]) & (c < end)
    return np.count_nonzero(hit, axis=1)


def gen_trace(spec: GenSpec, seed: int, trace_path: str | Path | None = None,
              sidecar_path: str | Path | None = None) -> GeneratedTrace:
    """Deterministic synthetic trace plus ground truth for the planted super points.

    The sidecar lists ``(window_end_slice, aip, exact_cardinality)`` for each
    planted host in every window where it has at least one peer, computed
    from the contact schedule rather than by scanning the trace.
    """
    rng = np.random.default_rng(seed)
    anet = AnetSpec.parse(spec.anet)
    n_hosts = spec.background_hosts + spec.supers
    slice_us = spec.window_cfg.slice_us
    if spec.t0 % slice_us:
        raise ConfigError("t0 must be a multiple of the slice duration")

    hosts = _anet_hosts(rng, anet, n_hosts) if n_hosts else np.empty(0, dtype=np.int64)
    cards = np.concatenate([
        _truncated_zipf(rng, spec.background_zipf, spec.background_max, spec.background_hosts),
        rng.integers(spec.super_min, spec.super_max + 1, size=spec.supers),
    ]).astype(np.int64)
    starts = np.zeros(n_hosts, dtype=np.int64)
    ends = np.full(n_hosts, spec.n_slices, dtype=np.int64)
    starts[spec.background_hosts:] = rng.integers(0, spec.super_start_max + 1, size=spec.supers)
    ends[spec.background_hosts:] = rng.integers(spec.super_end_min, spec.n_slices + 1, size=spec.supers)

    owner = np.repeat(np.arange(n_hosts), cards)
    peers = _outside_peers(rng, anet, owner)
    span = np.minimum(spec.spread, ends - starts)[owner]
    phase = (rng.random(owner.size) * span).astype(np.int64)

    pidx, cslice = _contact_schedule(phase, starts[owner], ends[owner], spec.spread)
    offs = rng.integers(0, slice_us, size=pidx.size)
    ts = spec.t0 + cslice * slice_us + offs
    outbound = rng.random(pidx.size) < 0.5
    a, b = hosts[owner[pidx]], peers[pidx]
    src = np.where(outbound, a, b)
    dst = np.where(outbound, b, a)
    order = np.argsort(ts, kind="stable")
    ts, src, dst = ts[order], src[order], dst[order]

    planted, sidecar = [], []
    if ts.size:
        first_slice = int((ts[0] - spec.t0) // slice_us)
        last_slice = int((ts[-1] - spec.t0) // slice_us)
        cfg = spec.window_cfg
        ends_eng = np.array(window_ends(last_slice - first_slice, cfg), dtype=np.int64)
        sel_start = np.concatenate([[0], np.cumsum(cards)])
        for h in range(spec.background_hosts, n_hosts):
            ph = phase[sel_start[h]:sel_start[h + 1]]
            counts = planted_window_counts(ph, int(starts[h]), int(ends[h]), spec.spread,
                                           ends_eng + first_slice, spec.k)
            planted.append(PlantedHost(int(hosts[h]), int(cards[h]), int(starts[h]), int(ends[h])))
            sidecar.extend((int(e), int(hosts[h]), int(c)) for e, c in zip(ends_eng, counts) if c > 0)
        sidecar.sort(key=lambda row: (row[0], row[1]))

    result = GeneratedTrace(ts, src, dst, planted, sidecar)
    if trace_path is not None:
        write_trace(trace_path, ts, src, dst)
    if sidecar_path is not None:
        with atomic_output(sidecar_path) as fh:
            write_truth(sidecar, fh)
    return result


def truth_rows(truth: dict[int, dict[int, int]]) -> list[tuple[int, int, int]]:
    return [(w, a, c) for w in sorted(truth) for a, c in sorted(truth[w].items())]

