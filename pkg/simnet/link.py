"""
Point-to-point links with a DropTail FIFO, serialization and propagation delay.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, Dict, Optional

from freezetfrc.models import LinkSpec, TraceKind
from simnet.engine import Event, Simulator
from simnet.trace import Trace

logger = logging.getLogger(__name__)

DATA = 'data'
FEEDBACK = 'feedback'
ACK = 'ack'
CONTROL = 'control'


@dataclass
class Packet:
    flow: str
    kind: str
    seqno: int
    size: int
    sent_at: float
    options: bytes = b''
    payload: Any = None
    rtt: Optional[float] = None
    uid: int = 0

    @property
    def is_data(self) -> bool:
        return self.kind == DATA


class Link:
    """
    One direction of a hop.

    The deque holds the finish times of packets still in the system (being
    serialized or waiting); its length is the queue occupancy.
    """

    def __init__(self, sim: Simulator, spec: LinkSpec, name: str, trace: Trace,
                 on_deliver: Optional[Callable[[Packet], None]] = None):
        self.sim = sim
        self.spec = spec
        self.name = name
        self.trace = trace
        self.on_deliver = on_deliver
        self.connected = True
        self._finish_times: Deque[float] = deque()
        self._pending: Dict[int, Event] = {}
        self._next_uid = 0
        self.max_occupancy = 0

    @property
    def occupancy(self) -> int:
        now = self.sim.now
        while self._finish_times and self._finish_times[0] <= now:
            self._finish_times.popleft()
        return len(self._finish_times)

    def transmit(self, packet: Packet) -> bool:
        """Enqueue ``packet``; returns False when it was dropped."""
        now = self.sim.now
        if not self.connected:
            self._drop(packet, TraceKind.DROP_DISCONNECTED)
            return False
        occupancy = self.occupancy
        if occupancy >= self.spec.queue_capacity:
            self._drop(packet, TraceKind.DROP_QUEUE)
            return False
        start = self._finish_times[-1] if self._finish_times else now
        finish = max(start, now) + self.spec.serialization_time(packet.size)
        self._finish_times.append(finish)
        self.max_occupancy = max(self.max_occupancy, occupancy + 1)
        uid = self._next_uid
        self._next_uid += 1
        self._pending[uid] = self.sim.schedule(finish + self.spec.one_way_delay, self._deliver, uid, packet)
        return True

    def _deliver(self, uid: int, packet: Packet) -> None:
        del self._pending[uid]
        if self.on_deliver is not None:
            self.on_deliver(packet)

    def _drop(self, packet: Packet, kind: TraceKind) -> None:
        seqno = packet.seqno if packet.is_data else -1
        self.trace.log(self.sim.now, kind, packet.flow, seqno, packet.size, self.name)
        if packet.is_data:
            key = 'drop_queue' if kind is TraceKind.DROP_QUEUE else 'drop_disconnected'
            self.trace.count(packet.flow, key)

    def disconnect(self) -> int:
        """Take the link down, dropping everything queued or in flight."""
        self.connected = False
        dropped = 0
        for uid in sorted(self._pending):
            event = self._pending[uid]
            event.cancel()
            self._drop(event.args[1], TraceKind.DROP_DISCONNECTED)
            dropped += 1
        self._pending.clear()
        self._finish_times.clear()
        return dropped

    def reconnect(self, spec: Optional[LinkSpec] = None) -> None:
        if spec is not None:
            self.spec = spec
        self.connected = True

    def reparameterize(self, spec: LinkSpec) -> None:
        """New capacity/delay for packets enqueued from now on."""
        self.spec = spec


class DuplexLink:
    """Forward and reverse directions of one hop."""

    def __init__(self, sim: Simulator, forward: LinkSpec, reverse: LinkSpec, name: str, trace: Trace):
        self.forward = Link(sim, forward, f"{name}>", trace)
        self.reverse = Link(sim, reverse, f"{name}<", trace)

    def disconnect(self) -> int:
        return self.forward.disconnect() + self.reverse.disconnect()

    def reconnect(self, forward: Optional[LinkSpec] = None, reverse: Optional[LinkSpec] = None) -> None:
        self.forward.reconnect(forward)
        self.reverse.reconnect(reverse)

    def reparameterize(self, forward: LinkSpec, reverse: LinkSpec) -> None:
        self.forward.reparameterize(forward)
        self.reverse.reparameterize(reverse)

    @property
    def connected(self) -> bool:
        return self.forward.connected
