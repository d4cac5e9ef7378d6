"""
TCP Reno competitor flow.

Packet-counting congestion window with slow-start, congestion avoidance,
fast retransmit on three duplicate ACKs and Reno fast recovery. RTO follows
RFC 6298 with Karn's rule; after a timeout the sender goes back to the
first unacknowledged segment. The receiver acknowledges every segment
cumulatively.
"""
import logging
from enum import Enum, auto
from typing import Any, Dict, Optional, Set, Tuple

from freezetfrc.models import TraceKind
from simnet.engine import Event, Simulator
from simnet.link import ACK, DATA, Packet
from simnet.network import Network
from simnet.trace import Trace

logger = logging.getLogger(__name__)

ALPHA = 1 / 8
BETA = 1 / 4
MIN_RTO = 0.2
MAX_RTO = 60.0
INITIAL_RTO = 1.0
DUPACK_THRESHOLD = 3


class CongestionState(Enum):
    SLOW_START = auto()
    CONGESTION_AVOIDANCE = auto()
    FAST_RECOVERY = auto()


class RtoEstimator:
    """
    RFC6298 SRTT/RTTVAR estimator.
    Use note_sample(rtt) ONLY for non-retransmitted packets (Karn's rule).
    """

    def __init__(self, rto_init: float = INITIAL_RTO, min_rto: float = MIN_RTO, max_rto: float = MAX_RTO):
        self.rto = rto_init
        self.min_rto = min_rto
        self.max_rto = max_rto
        self.srtt = 0.0
        self.rttvar = 0.0
        self.initialised = False

    def note_sample(self, rtt: float) -> None:
        if not self.initialised:
            self.srtt = rtt
            self.rttvar = rtt / 2
            self.initialised = True
        else:
            self.rttvar = (1 - BETA) * self.rttvar + BETA * abs(self.srtt - rtt)
            self.srtt = (1 - ALPHA) * self.srtt + ALPHA * rtt
        self.rto = min(max(self.srtt + 4 * self.rttvar, self.min_rto), self.max_rto)

    def backoff(self) -> None:
        self.rto = min(self.rto * 2, self.max_rto)


class RenoSender:
    def __init__(self, sim: Simulator, network: Network, trace: Trace, flow: str, settings: Dict[str, Any]):
        self.sim = sim
        self.network = network
        self.trace = trace
        self.flow = flow
        self.s = settings['SEGMENT_SIZE']
        self.cwnd = 1.0
        self.ssthresh = float('inf')
        self.state = CongestionState.SLOW_START
        self.snd_una = 0
        self.next_seq = 0
        self.dupacks = 0
        self.recover = 0
        self.rto = RtoEstimator()
        self.stopped = False
        # seqno -> (last send time, retransmitted)
        self._sent: Dict[int, Tuple[float, bool]] = {}
        self._rto_event: Optional[Event] = None
        network.senders[flow] = self

    @property
    def flight_size(self) -> int:
        return self.next_seq - self.snd_una

    def start(self) -> None:
        self.trace.log(self.sim.now, TraceKind.STATE_TRANSITION, self.flow, detail='start')
        self._try_send()

    def stop(self) -> None:
        self.stopped = True
        if self._rto_event is not None:
            self._rto_event.cancel()
            self._rto_event = None

    def _transmit(self, seqno: int) -> None:
        retransmitted = seqno in self._sent
        self._sent[seqno] = (self.sim.now, retransmitted)
        self.network.send_forward(Packet(self.flow, DATA, seqno, self.s, self.sim.now))
        if self._rto_event is None:
            self._arm_rto()

    def _try_send(self) -> None:
        if self.stopped:
            return
        while self.next_seq < self.snd_una + int(self.cwnd):
            self._transmit(self.next_seq)
            self.next_seq += 1

    def _arm_rto(self) -> None:
        if self._rto_event is not None:
            self._rto_event.cancel()
        self._rto_event = self.sim.schedule_in(self.rto.rto, self._on_rto)

    def _set_state(self, state: CongestionState) -> None:
        if state is not self.state:
            self.trace.log(self.sim.now, TraceKind.STATE_TRANSITION, self.flow,
                           detail=f"{self.state.name.lower()}->{state.name.lower()}")
            self.state = state

    def _on_rto(self) -> None:
        self._rto_event = None
        if self.stopped or self.flight_size == 0:
            return
        self.ssthresh = max(self.flight_size / 2.0, 2.0)
        self.cwnd = 1.0
        self.dupacks = 0
        self.rto.backoff()
        self.next_seq = self.snd_una
        self._set_state(CongestionState.SLOW_START)
        logger.debug(f"Flow {self.flow}: RTO at t={self.sim.now:.3f}, rto now {self.rto.rto:.2f} s")
        self._try_send()
        if self._rto_event is None:
            self._arm_rto()

    def receive(self, packet: Packet) -> None:
        if packet.kind != ACK or self.stopped:
            return
        ackno = packet.seqno
        if ackno > self.snd_una:
            self._on_new_ack(ackno)
        elif ackno == self.snd_una and self.flight_size > 0:
            self._on_dupack()
        self._try_send()

    def _on_new_ack(self, ackno: int) -> None:
        sent = self._sent.get(ackno - 1)
        if sent is not None and not sent[1]:
            self.rto.note_sample(self.sim.now - sent[0])
        for seqno in range(self.snd_una, ackno):
            self._sent.pop(seqno, None)
        self.snd_una = ackno
        if self.next_seq < self.snd_una:
            self.next_seq = self.snd_una
        self.dupacks = 0

        if self.state is CongestionState.FAST_RECOVERY:
            self.cwnd = self.ssthresh
            self._set_state(CongestionState.CONGESTION_AVOIDANCE)
        elif self.cwnd < self.ssthresh:
            self.cwnd += 1.0
        else:
            self._set_state(CongestionState.CONGESTION_AVOIDANCE)
            self.cwnd += 1.0 / self.cwnd

        if self.flight_size > 0:
            self._arm_rto()
        elif self._rto_event is not None:
            self._rto_event.cancel()
            self._rto_event = None

    def _on_dupack(self) -> None:
        self.dupacks += 1
        if self.dupacks == DUPACK_THRESHOLD and self.state is not CongestionState.FAST_RECOVERY:
            self.ssthresh = max(self.flight_size / 2.0, 2.0)
            self.cwnd = self.ssthresh + DUPACK_THRESHOLD
            self.recover = self.next_seq
            self._set_state(CongestionState.FAST_RECOVERY)
            self._transmit(self.snd_una)
        elif self.state is CongestionState.FAST_RECOVERY:
            self.cwnd += 1.0


class RenoReceiver:
    """Cumulative ACK per segment; goodput counts new in-order bytes only."""

    def __init__(self, sim: Simulator, network: Network, trace: Trace, flow: str, settings: Dict[str, Any]):
        self.sim = sim
        self.network = network
        self.trace = trace
        self.flow = flow
        self.ack_size = settings['CONTROL_PACKET_SIZE']
        self.expected = 0
        self.out_of_order: Set[int] = set()
        self.stopped = False
        network.receivers[flow] = self

    def stop(self) -> None:
        self.stopped = True

    def receive(self, packet: Packet) -> None:
        if packet.kind != DATA:
            return
        now = self.sim.now
        self.trace.count(self.flow, 'delivered')
        self.trace.log(now, TraceKind.DELIVER, self.flow, packet.seqno, packet.size)
        if packet.seqno == self.expected:
            advanced = 1
            self.expected += 1
            while self.expected in self.out_of_order:
                self.out_of_order.remove(self.expected)
                self.expected += 1
                advanced += 1
            self.trace.add_goodput(self.flow, now, advanced * packet.size)
        elif packet.seqno > self.expected:
            self.out_of_order.add(packet.seqno)
        if self.stopped:
            return
        self.network.send_reverse(Packet(self.flow, ACK, self.expected, self.ack_size, now))
