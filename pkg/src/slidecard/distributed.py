"""Multi-node simulation: route each record to one node, merge at slice ends.

Every node keeps its own RSRA/SLEA with identical parameters and seeds.
Because an update only ever zeroes a counter and merging takes the per-counter
minimum, the merged structures equal those of a single node that saw the
whole trace, counter for counter.
"""

from __future__ import annotations

import logging
from functools import reduce

import numpy as np

from .config import SketchParams
from .errors import ConfigError
from .hashing import GOLDEN, HashSeeds, hash32
from .sketch_arrays import Rsra, Slea, check_compatible, merge_structures
from .window_engine import DetectionReport, WindowConfig, WindowEngine

log = logging.getLogger(__name__)

POLICIES = ("hash-of-pair", "round-robin", "by-source-prefix")
_ROUTE_SEED = GOLDEN


def route(aip: np.ndarray, bip: np.ndarray, n: int, policy: str, offset: int = 0) -> np.ndarray:
    """Node index for every record. ``offset`` is the global index of the first record."""
    aip = np.asarray(aip, dtype=np.int64)
    bip = np.asarray(bip, dtype=np.int64)
    if policy == "hash-of-pair":
        h = hash32(hash32(aip, _ROUTE_SEED).astype(np.int64) ^ bip, _ROUTE_SEED + 1)
        return (h % n).astype(np.int64)
    if policy == "round-robin":
        return (np.arange(offset, offset + aip.size) % n).astype(np.int64)
    if policy == "by-source-prefix":
        return (hash32(aip >> 8, _ROUTE_SEED + 2) % n).astype(np.int64)
    raise ConfigError(f"unknown partition policy {policy!r}; choose from {', '.join(POLICIES)}")


class NodeSet(WindowEngine):
    """A :class:`WindowEngine` whose sketch state is spread over ``n`` nodes."""

    def __init__(self, params: SketchParams, cfg: WindowConfig, n: int,
                 policy: str = "hash-of-pair", seeds: HashSeeds | None = None, on_report=None):
        if n < 1:
            raise ConfigError("node count must be >= 1")
        if policy not in POLICIES:
            raise ConfigError(f"unknown partition policy {policy!r}")
        self.n = n
        self.policy = policy
        self.routed = 0
        self.merge_bytes: list[int] = []
        super().__init__(params, cfg, seeds, on_report)

    def _init_structures(self) -> None:
        self.nodes = [(Rsra.from_params(self.params, self.seeds), Slea.from_params(self.params, self.seeds))
                      for _ in range(self.n)]
        for rsra, slea in self.nodes[1:]:
            check_compatible(self.nodes[0][0], rsra)
            check_compatible(self.nodes[0][1], slea)

    def _update(self, aip, bip) -> None:
        dest = route(aip, bip, self.n, self.policy, self.routed)
        self.routed += aip.size
        for z, (rsra, slea) in enumerate(self.nodes):
            mine = dest == z
            if mine.any():
                self._parallel_update(rsra, slea, aip[mine], bip[mine])

    def merged(self) -> tuple[Rsra, Slea]:
        rsra = reduce(merge_structures, (node[0] for node in self.nodes))
        slea = reduce(merge_structures, (node[1] for node in self.nodes))
        return rsra, slea

    def _detection_structures(self):
        self.merge_bytes.append(self.n * (self.nodes[0][0].nbytes + self.nodes[0][1].nbytes))
        return self.merged()

    def _slide(self) -> None:
        for rsra, slea in self.nodes:
            rsra.slide()
            slea.slide()

    def _reset(self) -> None:
        for rsra, slea in self.nodes:
            rsra.reset()
            slea.reset()


def run_distributed(records, cfg: WindowConfig, params: SketchParams, n: int,
                    policy: str = "hash-of-pair", seeds: HashSeeds | None = None
                    ) -> tuple[list[DetectionReport], NodeSet]:
    """Partition ``(ts, aip, bip)`` arrays over ``n`` nodes and detect on merged sketches."""
    ts, aip, bip = records
    nodes = NodeSet(params, cfg, n, policy, seeds)
    nodes.feed(ts, aip, bip)
    reports = nodes.finish()
    if nodes.merge_bytes:
        log.info("merge traffic: %d bytes per slice over %d merges",
                 nodes.merge_bytes[0], len(nodes.merge_bytes))
    return reports, nodes
