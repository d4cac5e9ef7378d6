"""
Simulation trace: event records, per-flow counters and goodput bins, with
CSV and binary export.
"""
import logging
import math
import struct
from collections import Counter, defaultdict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from freezetfrc.models import TraceKind, TraceRecord
from freezetfrc.utils.csvio import write_versioned_csv

logger = logging.getLogger(__name__)

BINARY_MAGIC = b'FTRC'
BINARY_VERSION = 1
_BINARY_HEADER = struct.Struct('!4sHHI')
_BINARY_RECORD = struct.Struct('!dBHqd')
_KIND_CODES = {kind: code for code, kind in enumerate(TraceKind)}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}

# Per-packet kinds; only kept when packet recording is on.
PACKET_KINDS = frozenset({TraceKind.SEND, TraceKind.DELIVER, TraceKind.FEEDBACK_SENT})


class Trace:
    """
    Everything a run leaves behind.

    Records are appended in clock order. Packet-level records are optional;
    drops, state changes, rate changes and link events are always kept, as
    are counters and goodput bins.
    """

    def __init__(self, record_packets: bool = True, bin_width: float = 1.0):
        self.record_packets = record_packets
        self.bin_width = bin_width
        self.records: List[TraceRecord] = []
        self.counters: Dict[str, Counter] = defaultdict(Counter)
        self.goodput_bins: Dict[str, Dict[int, float]] = defaultdict(lambda: defaultdict(float))
        self.end_time = 0.0
        self.meta: Dict[str, float] = {}

    def log(self, t: float, kind: TraceKind, flow: str = '', seqno: int = -1,
            value: float = 0.0, detail: str = '') -> None:
        if kind in PACKET_KINDS and not self.record_packets:
            return
        self.records.append(TraceRecord(t, kind, flow, seqno, value, detail))

    def count(self, flow: str, key: str, amount: int = 1) -> None:
        self.counters[flow][key] += amount

    def add_goodput(self, flow: str, t: float, nbytes: float) -> None:
        self.goodput_bins[flow][int(t // self.bin_width)] += nbytes

    # Queries

    def select(self, kind: Optional[TraceKind] = None, flow: Optional[str] = None,
               start: float = -math.inf, end: float = math.inf) -> Iterator[TraceRecord]:
        for rec in self.records:
            if kind is not None and rec.kind is not kind:
                continue
            if flow is not None and rec.flow != flow:
                continue
            if start <= rec.t <= end:
                yield rec

    def first(self, kind: TraceKind, flow: Optional[str] = None, after: float = -math.inf) -> Optional[TraceRecord]:
        return next(self.select(kind, flow, start=after), None)

    def rate_series(self, flow: str) -> List[Tuple[float, float]]:
        """Sender rate as (time, bytes/s) steps."""
        return [(rec.t, rec.value) for rec in self.select(TraceKind.RATE_CHANGE, flow)]

    def goodput_series(self, flow: str) -> Tuple[np.ndarray, np.ndarray]:
        """Bin start times and goodput in bytes/s, zero-filled up to the end of the run."""
        bins = self.goodput_bins.get(flow, {})
        n_bins = max(int(math.ceil(self.end_time / self.bin_width)), max(bins, default=-1) + 1)
        rates = np.zeros(n_bins)
        for index, nbytes in bins.items():
            rates[index] = nbytes / self.bin_width
        return np.arange(n_bins) * self.bin_width, rates

    def mean_goodput(self, flow: str, start: float, end: float) -> float:
        """Mean goodput in bytes/s over whole bins starting in [start, end)."""
        times, rates = self.goodput_series(flow)
        mask = (times >= start) & (times + self.bin_width <= end + 1e-9)
        if not mask.any():
            return 0.0
        return float(rates[mask].mean())

    def flows(self) -> List[str]:
        names = set(self.counters) | set(self.goodput_bins) | {rec.flow for rec in self.records if rec.flow}
        return sorted(names)

    # Export

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                't': [rec.t for rec in self.records],
                'kind': [rec.kind.value for rec in self.records],
                'flow': [rec.flow for rec in self.records],
                'seqno': [rec.seqno for rec in self.records],
                'value': [rec.value for rec in self.records],
                'detail': [rec.detail for rec in self.records],
            },
            columns=['t', 'kind', 'flow', 'seqno', 'value', 'detail'],
        )

    def rate_frame(self) -> pd.DataFrame:
        """Plot data: one (flow, t, rate) row per sender rate change."""
        rows = [
            {'flow': rec.flow, 't': rec.t, 'rate': rec.value}
            for rec in self.records if rec.kind is TraceKind.RATE_CHANGE
        ]
        return pd.DataFrame(rows, columns=['flow', 't', 'rate'])

    def write_csv(self, path: str) -> str:
        return write_versioned_csv(self.to_frame(), path, schema='trace')

    def write_binary(self, path: str) -> str:
        """Compact log: header, flow-name table, fixed-size records."""
        flows = self.flows()
        index = {name: i for i, name in enumerate(flows)}
        with open(path, 'wb') as f:
            f.write(_BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, len(flows), len(self.records)))
            for name in flows:
                encoded = name.encode('utf-8')
                f.write(struct.pack('!B', len(encoded)) + encoded)
            for rec in self.records:
                f.write(_BINARY_RECORD.pack(rec.t, _KIND_CODES[rec.kind], index.get(rec.flow, 0xFFFF),
                                            rec.seqno, rec.value))
        logger.info(f"Wrote {len(self.records)} binary trace records to {path}")
        return path

    @staticmethod
    def read_binary(path: str) -> List[TraceRecord]:
        with open(path, 'rb') as f:
            data = f.read()
        magic, version, n_flows, n_records = _BINARY_HEADER.unpack_from(data, 0)
        if magic != BINARY_MAGIC:
            raise ValueError(f"{path}: not a trace log")
        if version != BINARY_VERSION:
            raise ValueError(f"{path}: unsupported trace version {version}")
        offset = _BINARY_HEADER.size
        flows = []
        for _ in range(n_flows):
            length = data[offset]
            flows.append(data[offset + 1:offset + 1 + length].decode('utf-8'))
            offset += 1 + length
        records = []
        for _ in range(n_records):
            t, code, flow_index, seqno, value = _BINARY_RECORD.unpack_from(data, offset)
            offset += _BINARY_RECORD.size
            flow = flows[flow_index] if flow_index < len(flows) else ''
            records.append(TraceRecord(t, _CODE_KINDS[code], flow, seqno, value))
        return records
