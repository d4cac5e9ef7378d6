"""
sender -- wired hop -- router -- wireless hop -- receiver.

Only the wireless hop is ever disconnected or re-parameterized. Its reverse
direction mirrors the forward delay and runs at the wired capacity.
"""
import logging
from typing import Dict, Protocol

from freezetfrc.models import LinkSpec, TraceKind
from simnet.engine import Simulator
from simnet.link import DuplexLink, Packet
from simnet.trace import Trace

logger = logging.getLogger(__name__)


class Endpoint(Protocol):
    def receive(self, packet: Packet) -> None:
        ...


class Network:
    def __init__(self, sim: Simulator, trace: Trace, wireless: LinkSpec, wired: LinkSpec):
        self.sim = sim
        self.trace = trace
        self.wired_spec = wired
        self.wired = DuplexLink(sim, wired, wired, 'wired', trace)
        self.wireless = DuplexLink(sim, wireless, self.reverse_spec(wireless), 'wireless', trace)
        self.wired.forward.on_deliver = self.wireless.forward.transmit
        self.wireless.forward.on_deliver = self._to_receiver
        self.wireless.reverse.on_deliver = self.wired.reverse.transmit
        self.wired.reverse.on_deliver = self._to_sender
        self.senders: Dict[str, Endpoint] = {}
        self.receivers: Dict[str, Endpoint] = {}

    def reverse_spec(self, wireless: LinkSpec) -> LinkSpec:
        return LinkSpec(self.wired_spec.capacity, wireless.one_way_delay, wireless.queue_capacity)

    @property
    def wireless_spec(self) -> LinkSpec:
        return self.wireless.forward.spec

    @property
    def base_rtt(self) -> float:
        return 2.0 * (self.wired_spec.one_way_delay + self.wireless_spec.one_way_delay)

    def send_forward(self, packet: Packet) -> None:
        if packet.is_data:
            self.trace.count(packet.flow, 'sent')
            self.trace.log(self.sim.now, TraceKind.SEND, packet.flow, packet.seqno, packet.size)
        self.wired.forward.transmit(packet)

    def send_reverse(self, packet: Packet) -> None:
        self.wireless.reverse.transmit(packet)

    def _to_receiver(self, packet: Packet) -> None:
        endpoint = self.receivers.get(packet.flow)
        if endpoint is not None:
            endpoint.receive(packet)

    def _to_sender(self, packet: Packet) -> None:
        endpoint = self.senders.get(packet.flow)
        if endpoint is not None:
            endpoint.receive(packet)

    def disconnect(self) -> None:
        dropped = self.wireless.disconnect()
        self.trace.log(self.sim.now, TraceKind.LINK_DOWN, value=dropped, detail='wireless')
        logger.debug(f"t={self.sim.now:.4f} wireless link down, {dropped} packets lost in flight")

    def reconnect(self, spec: LinkSpec) -> None:
        self.wireless.reconnect(spec, self.reverse_spec(spec))
        self.trace.log(self.sim.now, TraceKind.LINK_UP, value=spec.capacity, detail='wireless')
        logger.debug(f"t={self.sim.now:.4f} wireless link up at {spec.capacity:.0f} bit/s")

    def reparameterize(self, spec: LinkSpec) -> None:
        self.wireless.reparameterize(spec, self.reverse_spec(spec))
        self.trace.log(self.sim.now, TraceKind.STATE_TRANSITION, value=spec.capacity, detail='link reparameterized')
