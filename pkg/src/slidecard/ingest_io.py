"""Trace parsing, ANet classification, sketch files and report CSV.

Trace lines look like ``1424350800000000,10.1.2.3,8.8.8.8`` (microsecond
timestamp, source, destination). Sketch files are little-endian::

    magic "SRLG" | version u16 | type u8 (1 = RSRA, 2 = SLEA)
    parameters u32 each (q, r, delta, eta, tau  or  q', r', delta', eta')
    seeds u64 each (RSRA: H1, H2, RHFG0;  SLEA: H3, LH_0 .. LH_{r'-1})
    slices applied u64 | counters u16, row-major
"""

from __future__ import annotations

import ipaddress
import logging
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import FormatError, ParameterError, TraceParseError
from .hashing import HashSeeds
from .sketch_arrays import Rsra, Slea
from .window_engine import DetectionReport

log = logging.getLogger(__name__)

MAGIC = b"SRLG"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHB")


class PacketRecord(NamedTuple):
    ts: int
    src: int
    dst: int


def parse_ipv4(text: str) -> int:
    parts = text.strip().split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted quad: {text!r}")
    value = 0
    for part in parts:
        if not part.isdigit() or len(part) > 3:
            raise ValueError(f"not a dotted quad: {text!r}")
        octet = int(part)
        if octet > 255:
            raise ValueError(f"octet out of range in {text!r}")
        value = (value << 8) | octet
    return value


def format_ipv4(value: int) -> str:
    value = int(value)
    return f"{value >> 24 & 255}.{value >> 16 & 255}.{value >> 8 & 255}.{value & 255}"


def parse_trace_line(line: str, lineno: int | None = None) -> PacketRecord | None:
    """Parse one trace line; returns None for blank lines and ``#`` comments."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    fields = stripped.split(",")
    if len(fields) != 3:
        raise TraceParseError(f"expected 3 fields, got {len(fields)}", lineno)
    ts_text = fields[0].strip()
    if not ts_text.isdigit():
        raise TraceParseError(f"bad timestamp {ts_text!r}", lineno)
    try:
        return PacketRecord(int(ts_text), parse_ipv4(fields[1]), parse_ipv4(fields[2]))
    except ValueError as exc:
        raise TraceParseError(str(exc), lineno) from None


def format_trace_line(rec: PacketRecord) -> str:
    return f"{rec.ts},{format_ipv4(rec.src)},{format_ipv4(rec.dst)}"


@dataclass(frozen=True)
class AnetSpec:
    prefixes: tuple[ipaddress.IPv4Network, ...]

    def __post_init__(self):
        if not self.prefixes:
            raise ParameterError("ANet needs at least one prefix")

    @classmethod
    def parse(cls, text: str | Iterable[str]) -> "AnetSpec":
        items = text.split(",") if isinstance(text, str) else list(text)
        try:
            nets = tuple(ipaddress.IPv4Network(p.strip(), strict=True) for p in items if p.strip())
        except ValueError as exc:
            raise ParameterError(f"invalid ANet prefix: {exc}") from None
        return cls(nets)

    def contains(self, addr):
        """Membership test for an int or a uint array."""
        if isinstance(addr, (int, np.integer)):
            return any((int(addr) & int(n.netmask)) == int(n.network_address) for n in self.prefixes)
        a = np.asarray(addr, dtype=np.int64)
        out = np.zeros(a.shape, dtype=bool)
        for n in self.prefixes:
            out |= (a & int(n.netmask)) == int(n.network_address)
        return out

    def __str__(self) -> str:
        return ",".join(str(n) for n in self.prefixes)


def classify(record: PacketRecord, anet: AnetSpec) -> list[tuple[int, int, int]]:
    """Measurement records ``(ts, aip, bip)`` for each endpoint inside ANet."""
    out = []
    if anet.contains(record.src):
        out.append((record.ts, record.src, record.dst))
    if anet.contains(record.dst):
        out.append((record.ts, record.dst, record.src))
    return out


def classify_arrays(ts: np.ndarray, src: np.ndarray, dst: np.ndarray, anet: AnetSpec):
    """Vectorised :func:`classify`; order is preserved (src-side record first)."""
    s_in = anet.contains(src)
    d_in = anet.contains(dst)
    n = ts.size
    # interleave so each packet's records stay adjacent and time order holds
    t2 = np.stack([ts, ts], axis=1).ravel()
    a2 = np.stack([src, dst], axis=1).ravel()
    b2 = np.stack([dst, src], axis=1).ravel()
    keep = np.stack([s_in, d_in], axis=1).ravel()
    dropped = int(np.count_nonzero(~s_in & ~d_in))
    assert t2.size == 2 * n
    return t2[keep], a2[keep], b2[keep], dropped


@dataclass
class TraceStats:
    lines: int = 0
    packets: int = 0
    skipped: int = 0
    outside: int = 0


def iter_trace_chunks(path: str | Path, chunk_size: int = 1 << 18, on_error: str = "abort",
                      stats: TraceStats | None = None) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(ts, src, dst)`` int64 arrays of up to ``chunk_size`` packets."""
    if on_error not in ("abort", "skip"):
        raise ParameterError("on_error must be 'abort' or 'skip'")
    stats = stats if stats is not None else TraceStats()
    ts: list[int] = []
    src: list[int] = []
    dst: list[int] = []
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            stats.lines += 1
            try:
                rec = parse_trace_line(line, lineno)
            except TraceParseError:
                if on_error == "abort":
                    raise
                stats.skipped += 1
                continue
            if rec is None:
                continue
            ts.append(rec.ts)
            src.append(rec.src)
            dst.append(rec.dst)
            if len(ts) >= chunk_size:
                stats.packets += len(ts)
                yield (np.array(ts, dtype=np.int64), np.array(src, dtype=np.int64),
                       np.array(dst, dtype=np.int64))
                ts, src, dst = [], [], []
    if ts:
        stats.packets += len(ts)
        yield np.array(ts, dtype=np.int64), np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)
    if stats.skipped:
        log.warning("skipped %d malformed trace lines", stats.skipped)


def read_trace(path: str | Path, anet: AnetSpec, on_error: str = "abort",
               stats: TraceStats | None = None):
    """Whole trace as classified ``(ts, aip, bip)`` arrays."""
    stats = stats if stats is not None else TraceStats()
    parts = []
    for ts, src, dst in iter_trace_chunks(path, on_error=on_error, stats=stats):
        t, a, b, dropped = classify_arrays(ts, src, dst, anet)
        stats.outside += dropped
        parts.append((t, a, b))
    if not parts:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy()
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def write_trace(path: str | Path, ts, src, dst) -> None:
    with atomic_output(path) as fh:
        for t, s, d in zip(np.asarray(ts).tolist(), np.asarray(src).tolist(), np.asarray(dst).tolist()):
            fh.write(f"{t},{format_ipv4(s)},{format_ipv4(d)}\n")


@contextmanager
def atomic_output(path: str | Path, mode: str = "w"):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# -- sketch files ---------------------------------------------------------

def serialize_sketch(structure: Rsra | Slea) -> bytes:
    if isinstance(structure, Rsra):
        if structure.group.address_width != 32:
            raise ParameterError("only 32-bit address RSRAs can be serialised")
        params, seeds = structure.header, structure.used_seeds
    elif isinstance(structure, Slea):
        params, seeds = structure.header, structure.used_seeds
    else:
        raise ParameterError(f"cannot serialise {type(structure).__name__}")
    head = _PREFIX.pack(MAGIC, FORMAT_VERSION, structure.type_tag)
    head += struct.pack(f"<{len(params)}I", *params)
    head += struct.pack(f"<{len(seeds)}Q", *seeds)
    head += struct.pack("<Q", structure.slices)
    return head + structure.counters.astype("<u2", copy=False).tobytes()


def _take(buf: memoryview, pos: int, n: int) -> tuple[memoryview, int]:
    if pos + n > len(buf):
        raise FormatError("truncated sketch stream")
    return buf[pos:pos + n], pos + n


def deserialize_sketch(data: bytes) -> Rsra | Slea:
    buf = memoryview(data)
    raw, pos = _take(buf, 0, _PREFIX.size)
    magic, version, tag = _PREFIX.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if tag == Rsra.type_tag:
        raw, pos = _take(buf, pos, 5 * 4)
        q, r, delta, eta, tau = struct.unpack("<5I", raw)
        raw, pos = _take(buf, pos, 3 * 8)
        h1, h2, rh0 = struct.unpack("<3Q", raw)
        seeds = HashSeeds(h1, h2, 0, rh0, ())
        try:
            structure = Rsra(q, r, delta, eta, tau, seeds)
        except ParameterError as exc:
            raise FormatError(f"invalid RSRA header: {exc}") from None
    elif tag == Slea.type_tag:
        raw, pos = _take(buf, pos, 4 * 4)
        qp, rp, dp, ep = struct.unpack("<4I", raw)
        raw, pos = _take(buf, pos, (1 + rp) * 8)
        seed_vals = struct.unpack(f"<{1 + rp}Q", raw)
        seeds = HashSeeds(0, 0, seed_vals[0], 0, tuple(seed_vals[1:]))
        try:
            structure = Slea(qp, rp, dp, ep, seeds)
        except ParameterError as exc:
            raise FormatError(f"invalid SLEA header: {exc}") from None
    else:
        raise FormatError(f"unknown sketch type tag {tag}")
    raw, pos = _take(buf, pos, 8)
    (structure.slices,) = struct.unpack("<Q", raw)
    counters = structure.counters
    raw, pos = _take(buf, pos, counters.size * 2)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after sketch")
    counters[...] = np.frombuffer(raw, dtype="<u2").reshape(counters.shape)
    return structure


def save_sketch(structure: Rsra | Slea, path: str | Path) -> None:
    with atomic_output(path, "wb") as fh:
        fh.write(serialize_sketch(structure))


def load_sketch(path: str | Path) -> Rsra | Slea:
    return deserialize_sketch(Path(path).read_bytes())


# -- report CSV -----------------------------------------------------------

REPORT_HEADER = "window_end_slice,aip,estimate,flags"


def _entry_rows(report: DetectionReport, include_candidates: bool) -> list[tuple]:
    rows = []
    entries = report.all_candidates if include_candidates and report.all_candidates else report.entries
    reported = {e.aip for e in report.entries}
    for e in entries:
        flags = []
        if e.saturated:
            flags.append("saturated")
        if include_candidates and e.aip not in reported:
            flags.append("below_theta")
        rows.append((e.estimate, e.aip, "|".join(flags)))
    rows.sort(key=lambda row: (-row[0], row[1]))
    return rows


def write_report_rows(report: DetectionReport, sink: IO[str], include_candidates: bool = False) -> None:
    for est, aip, flags in _entry_rows(report, include_candidates):
        sink.write(f"{report.window_end_slice},{format_ipv4(aip)},{est:.2f},{flags}\n")


def write_report(report: DetectionReport, sink: IO[str], include_candidates: bool = False) -> None:
    """One report as CSV: header plus one row per reported host."""
    sink.write(REPORT_HEADER + "\n")
    write_report_rows(report, sink, include_candidates)


def write_reports(reports: Iterable[DetectionReport], sink: IO[str],
                  include_candidates: bool = False) -> None:
    sink.write(REPORT_HEADER + "\n")
    for report in reports:
        write_report_rows(report, sink, include_candidates)


def read_report_csv(path: str | Path) -> dict[int, dict[int, float]]:
    """``{window_end_slice: {aip: value}}`` from a report or ground-truth CSV.

    Rows flagged ``below_theta`` are ignored.
    """
    out: dict[int, dict[int, float]] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header not in (REPORT_HEADER, TRUTH_HEADER):
            raise FormatError(f"{path}: unrecognised CSV header {header!r}")
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                window, aip, value = int(parts[0]), parse_ipv4(parts[1]), float(parts[2])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row") from None
            if len(parts) > 3 and "below_theta" in parts[3].split("|"):
                continue
            out.setdefault(window, {})[aip] = value
    return out


TRUTH_HEADER = "window_end_slice,aip,exact_cardinality"


def write_truth(rows: Iterable[tuple[int, int, int]], sink: IO[str]) -> None:
    sink.write(TRUTH_HEADER + "\n")
    for window, aip, card in rows:
        sink.write(f"{window},{format_ipv4(aip)},{card}\n")
