"""Slice bookkeeping and the per-slice detect/slide cycle.

Records are bucketed into half-open slices ``[t0 + s*d, t0 + (s+1)*d)``.
When the stream moves past slice ``s`` the engine reports on the window
ending at ``s`` (if one is due), then slides every counter once. Slices with
no traffic still slide and still report, so windows follow wall-clock time.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .config import DEFAULT_TUPLE_CAP, MAX_WINDOW, SketchParams
from .errors import ConfigError, OrderingError, ReconstructionOverflow, SaturationError
from .hashing import HashSeeds
from .sketch_arrays import Rsra, Slea, reconstruct_candidates

log = logging.getLogger(__name__)

SLIDING = "sliding"
DISCRETE = "discrete"


class TraceRecord(NamedTuple):
    ts: int
    aip: int
    bip: int


@dataclass(frozen=True)
class WindowConfig:
    slice_duration: float = 1.0
    k: int = 300
    t0: int | None = None
    mode: str = SLIDING
    reorder_tolerance_us: int = 1000
    tuple_cap: int = DEFAULT_TUPLE_CAP
    workers: int = 1
    verbose: bool = False

    def __post_init__(self):
        if not self.slice_duration > 0:
            raise ConfigError("slice_duration must be > 0")
        if self.slice_us < 1:
            raise ConfigError("slice_duration must be at least one microsecond")
        if not 1 <= self.k <= MAX_WINDOW:
            raise ConfigError(f"k must be in [1, {MAX_WINDOW}], got {self.k}")
        if self.mode not in (SLIDING, DISCRETE):
            raise ConfigError(f"mode must be {SLIDING!r} or {DISCRETE!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.reorder_tolerance_us < 0:
            raise ConfigError("reorder_tolerance_us must be >= 0")

    @property
    def slice_us(self) -> int:
        return int(round(self.slice_duration * 1_000_000))


@dataclass(frozen=True)
class ReportEntry:
    aip: int
    estimate: float
    saturated: bool = False


@dataclass
class DetectionReport:
    window_end_slice: int
    entries: list[ReportEntry] = field(default_factory=list)
    candidates: int = 0
    hot_counts: tuple[int, ...] = ()
    sf_product: float = 0.0
    overflow: bool = False
    saturated: bool = False
    partial: bool = False
    all_candidates: list[ReportEntry] = field(default_factory=list)

    def sort(self) -> None:
        key = lambda e: (-e.estimate, e.aip)
        self.entries.sort(key=key)
        self.all_candidates.sort(key=key)

    @property
    def detected(self) -> set[int]:
        return {e.aip for e in self.entries}


def slice_of(ts: int, cfg: WindowConfig, t0: int | None = None) -> int:
    t0 = cfg.t0 if t0 is None else t0
    if t0 is None:
        raise ConfigError("t0 is not set")
    if ts < t0:
        raise OrderingError(f"timestamp {ts} precedes stream start {t0}")
    return (ts - t0) // cfg.slice_us


def detect(rsra: Rsra, slea: Slea, k: int, theta: int, window_end_slice: int,
           tuple_cap: int = DEFAULT_TUPLE_CAP, verbose: bool = False,
           workers: int = 1) -> DetectionReport:
    """Hot estimators -> candidate hosts -> cardinality estimates -> filter at theta."""
    report = DetectionReport(window_end_slice)
    hse = rsra.extract_hse(k)
    report.hot_counts = tuple(int(h.size) for h in hse)
    report.sf_product = slea.sf_product(k)
    try:
        cands = reconstruct_candidates(hse, rsra.group, cap=tuple_cap)
    except ReconstructionOverflow as exc:
        log.warning("slice %d: %s", window_end_slice, exc)
        report.overflow = True
        return report
    report.candidates = int(cands.size)
    if cands.size == 0:
        return report
    try:
        if workers > 1 and cands.size > 1:
            parts = np.array_split(cands, min(workers, cands.size))
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(lambda p: slea.estimate_many(p, k), parts))
            est = np.concatenate([r[0] for r in results])
            sat = np.concatenate([r[1] for r in results])
        else:
            est, sat, _ = slea.estimate_many(cands, k)
    except SaturationError as exc:
        log.warning("slice %d: %s", window_end_slice, exc)
        report.saturated = True
        return report
    for aip, e, s in zip(cands.tolist(), est.tolist(), sat.tolist()):
        entry = ReportEntry(aip, e, s)
        if e >= theta:
            report.entries.append(entry)
        if verbose:
            report.all_candidates.append(entry)
    report.sort()
    return report


class WindowEngine:
    """Streams time-ordered IP pairs through one RSRA + SLEA pair.

    Feed batches with :meth:`feed` and call :meth:`finish` at stream end.
    Reports are appended to :attr:`reports` and passed to ``on_report``.
    """

    def __init__(self, params: SketchParams, cfg: WindowConfig, seeds: HashSeeds | None = None,
                 on_report: Callable[[DetectionReport], None] | None = None,
                 run_detection: bool = True,
                 on_slice_end: Callable[[int], None] | None = None):
        self.params = params
        self.run_detection = run_detection
        self.on_slice_end = on_slice_end
        self.cfg = cfg
        self.seeds = seeds or HashSeeds.from_seed(params.seed, params.r_prime)
        self.t0 = cfg.t0
        self.current: int | None = None
        self.max_ts: int | None = None
        self.reports: list[DetectionReport] = []
        self.on_report = on_report
        self.clamped = 0
        self.records = 0
        self._init_structures()

    def _init_structures(self) -> None:
        self.rsra = Rsra.from_params(self.params, self.seeds)
        self.slea = Slea.from_params(self.params, self.seeds)

    # hooks overridden by the distributed node set
    def _update(self, aip: np.ndarray, bip: np.ndarray) -> None:
        self._parallel_update(self.rsra, self.slea, aip, bip)

    def _parallel_update(self, rsra, slea, aip, bip) -> None:
        w = self.cfg.workers
        if w == 1 or aip.size < 2 * w:
            rsra.update(aip, bip)
            slea.update(aip, bip)
            return
        chunks = list(zip(np.array_split(aip, w), np.array_split(bip, w)))
        with ThreadPoolExecutor(w) as pool:
            list(pool.map(lambda c: (rsra.update(*c), slea.update(*c)), chunks))

    def _detection_structures(self) -> tuple[Rsra, Slea]:
        return self.rsra, self.slea

    def _slide(self) -> None:
        self.rsra.slide()
        self.slea.slide()

    def _reset(self) -> None:
        self.rsra.reset()
        self.slea.reset()

    def _report_due(self, s: int) -> bool:
        if self.cfg.mode == DISCRETE:
            return (s + 1) % self.cfg.k == 0
        return s >= self.cfg.k - 1

    def _emit(self, s: int, partial: bool) -> None:
        if not self.run_detection:
            return
        rsra, slea = self._detection_structures()
        report = detect(rsra, slea, self.cfg.k, self.params.theta, s, self.cfg.tuple_cap,
                        self.cfg.verbose, self.cfg.workers)
        report.partial = partial
        self.reports.append(report)
        if self.on_report is not None:
            self.on_report(report)

    def _close_slice(self, s: int) -> None:
        if self.on_slice_end is not None:
            self.on_slice_end(s)
        if self._report_due(s):
            self._emit(s, partial=False)
        self._slide()
        if self.cfg.mode == DISCRETE and (s + 1) % self.cfg.k == 0:
            self._reset()

    def _advance_to(self, s: int) -> None:
        if self.current is None:
            self.current = 0
        while self.current < s:
            self._close_slice(self.current)
            self.current += 1

    def _slices_for(self, ts: np.ndarray) -> np.ndarray:
        if self.t0 is None:
            first = int(ts[0])
            self.t0 = first - first % self.cfg.slice_us
        if (ts < self.t0).any():
            bad = int(ts[np.argmax(ts < self.t0)])
            raise OrderingError(f"timestamp {bad} precedes stream start {self.t0}")
        start = ts[0] if self.max_ts is None else max(self.max_ts, int(ts[0]))
        running = np.maximum.accumulate(np.concatenate([[start], ts]))[1:]
        late = ts < running - self.cfg.reorder_tolerance_us
        if late.any():
            i = int(np.argmax(late))
            raise OrderingError(
                f"timestamp {int(ts[i])} regresses {int(running[i] - ts[i])} us "
                f"(tolerance {self.cfg.reorder_tolerance_us} us)")
        self.max_ts = int(running[-1])
        slices = (ts - self.t0) // self.cfg.slice_us
        floor = slices[0] if self.current is None else max(self.current, int(slices[0]))
        clamped = np.maximum.accumulate(np.concatenate([[floor], slices]))[1:]
        n = int(np.count_nonzero(clamped != slices))
        if n:
            self.clamped += n
            log.info("clamped %d out-of-order records to their current slice", n)
        return clamped

    def feed(self, ts, aip, bip) -> None:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
        aip = np.atleast_1d(np.asarray(aip, dtype=np.int64))
        bip = np.atleast_1d(np.asarray(bip, dtype=np.int64))
        if ts.size == 0:
            return
        slices = self._slices_for(ts)
        self.records += ts.size
        bounds = np.concatenate([[0], np.flatnonzero(np.diff(slices)) + 1, [ts.size]])
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            self._advance_to(int(slices[lo]))
            self._update(aip[lo:hi], bip[lo:hi])

    def advance_to_slice(self, s: int) -> None:
        """Close every slice before ``s`` even if no traffic arrived."""
        self._advance_to(s)

    def finish(self) -> list[DetectionReport]:
        if self.current is not None:
            self._emit(self.current, partial=True)
        return self.reports


def records_to_arrays(records: Iterable[TraceRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(records)
    if not rows:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy()
    arr = np.array(rows, dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def process_stream(records, cfg: WindowConfig, params: SketchParams,
                   seeds: HashSeeds | None = None) -> list[DetectionReport]:
    """Run the full pipeline over ``records`` (TraceRecords or a ``(ts, aip, bip)`` triple)."""
    if isinstance(records, tuple) and len(records) == 3 and isinstance(records[0], np.ndarray):
        ts, aip, bip = records
    else:
        ts, aip, bip = records_to_arrays(records)
    engine = WindowEngine(params, cfg, seeds)
    engine.feed(ts, aip, bip)
    return engine.finish()
