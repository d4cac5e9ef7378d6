"""
Rate-controlled sender and receiver endpoints driving the state machines in
``freezetfrc.services`` from simulator events.
"""
import logging
from dataclasses import replace
from typing import Any, Dict, List, Optional

from freezetfrc.errors import OptionDecodeError
from freezetfrc.models import OptionKind, SenderPhase, TfrcReceiverState, TfrcSenderState, TraceKind
from freezetfrc.services import freeze, tfrc
from freezetfrc.utils.options import decode_options, encode_options
from simnet.engine import Event, Simulator
from simnet.link import CONTROL, DATA, FEEDBACK, Packet
from simnet.network import Network
from simnet.trace import Trace

logger = logging.getLogger(__name__)


def _decode(packet: Packet) -> List[OptionKind]:
    try:
        return decode_options(packet.options)
    except OptionDecodeError as e:
        logger.warning(f"Flow {packet.flow}: dropping malformed options: {str(e)}")
        return []


def _cancel(event: Optional[Event]) -> None:
    if event is not None:
        event.cancel()


class TfrcSenderEndpoint:
    """Paces data at the allowed rate and runs the nofeedback, idle and probing timers."""

    def __init__(self, sim: Simulator, network: Network, trace: Trace, flow: str, settings: Dict[str, Any]):
        self.sim = sim
        self.network = network
        self.trace = trace
        self.flow = flow
        self.state: TfrcSenderState = tfrc.initial_sender_state(
            s=settings['SEGMENT_SIZE'],
            t_mbi=settings['T_MBI'],
            q=settings['RTT_EWMA_Q'],
            initial_t_rto=settings['INITIAL_T_RTO'],
            idle_timeout=settings['IDLE_TIMEOUT'],
        )
        self.max_disconnection = settings['MAX_DISCONNECTION']
        self.option_repeat = settings['OPTION_REPEAT']
        self.thinning = settings['OPTION_THINNING']
        self.seqno = 0
        self.packets_since_feedback = 0
        self.last_feedback_time = 0.0
        self.last_send_time = 0.0
        self.stopped = False
        self._send_event: Optional[Event] = None
        self._nofeedback_event: Optional[Event] = None
        self._idle_event: Optional[Event] = None
        self._probe_event: Optional[Event] = None
        network.senders[flow] = self

    @property
    def phase(self) -> SenderPhase:
        return self.state.freeze.sender_phase

    @property
    def active(self) -> bool:
        return not self.stopped and self.phase not in (SenderPhase.FROZEN, SenderPhase.CLOSED)

    def start(self) -> None:
        now = self.sim.now
        self.last_feedback_time = now
        self.trace.log(now, TraceKind.STATE_TRANSITION, self.flow, detail='start')
        self.trace.log(now, TraceKind.RATE_CHANGE, self.flow, value=self.state.x)
        self._send()
        self._arm_nofeedback()
        self._arm_idle()

    def stop(self) -> None:
        self.stopped = True
        for event in (self._send_event, self._nofeedback_event, self._idle_event, self._probe_event):
            _cancel(event)

    # Timers

    def _send(self) -> None:
        self._send_event = None
        if not self.active:
            return
        options, self.state = freeze.data_options(self.state, self.seqno, self.thinning)
        packet = Packet(
            flow=self.flow,
            kind=DATA,
            seqno=self.seqno,
            size=self.state.s,
            sent_at=self.sim.now,
            options=encode_options(options),
            rtt=self.state.r_est,
        )
        self.seqno += 1
        self.packets_since_feedback += 1
        self.last_send_time = self.sim.now
        self.network.send_forward(packet)
        self._send_event = self.sim.schedule_in(self.state.s / self.state.x, self._send)

    def _arm_nofeedback(self) -> None:
        _cancel(self._nofeedback_event)
        self._nofeedback_event = None
        if self.active:
            self._nofeedback_event = self.sim.schedule_in(self.state.t_rto, self._on_nofeedback)

    def _on_nofeedback(self) -> None:
        self._nofeedback_event = None
        if not self.active:
            return
        self._apply(freeze.on_nofeedback(self.state))
        self._arm_nofeedback()

    def _arm_idle(self) -> None:
        _cancel(self._idle_event)
        due = max(self.sim.now, self.last_feedback_time + self.state.idle_timeout)
        self._idle_event = self.sim.schedule(due, self._on_idle)

    def _on_idle(self) -> None:
        self._idle_event = None
        if self.stopped or self.phase is SenderPhase.CLOSED:
            return
        if self.sim.now - self.last_feedback_time >= self.state.idle_timeout:
            logger.info(f"Flow {self.flow}: no feedback for {self.state.idle_timeout:.0f} s, closing")
            self._apply(freeze.close(self.state))
        else:
            self._arm_idle()

    def _on_probe_tick(self) -> None:
        self._probe_event = None
        if self.stopped or self.phase is not SenderPhase.PROBING:
            return
        self._apply(freeze.probing_tick(self.state))
        self._probe_event = self.sim.schedule_in(self.state.r_est, self._on_probe_tick)

    # State changes

    def _apply(self, new: TfrcSenderState) -> None:
        old = self.state
        self.state = new
        now = self.sim.now
        before, after = old.freeze.sender_phase, new.freeze.sender_phase
        if old.phase is not new.phase:
            self.trace.log(now, TraceKind.STATE_TRANSITION, self.flow, detail=f"{old.phase.value}->{new.phase.value}")
        if before is after:
            if new.x != old.x and after is not SenderPhase.FROZEN:
                self.trace.log(now, TraceKind.RATE_CHANGE, self.flow, value=new.x)
                if new.x > old.x:
                    self._pull_forward_send()
            return

        self.trace.log(now, TraceKind.STATE_TRANSITION, self.flow, detail=f"{before.value}->{after.value}")
        if after is SenderPhase.FROZEN:
            for event in (self._send_event, self._nofeedback_event, self._probe_event):
                _cancel(event)
            self._send_event = self._nofeedback_event = self._probe_event = None
            self.trace.log(now, TraceKind.RATE_CHANGE, self.flow, value=0.0)
            self._arm_idle()
        elif after is SenderPhase.CLOSED:
            self.trace.log(now, TraceKind.RATE_CHANGE, self.flow, value=0.0)
            self.stop()
        else:
            if new.x != old.x or before is SenderPhase.FROZEN:
                self.trace.log(now, TraceKind.RATE_CHANGE, self.flow, value=new.x)
            if before is SenderPhase.FROZEN:
                # The new path may be slower than the one the timeout was measured on.
                self.state = freeze.cover_path(self.state, self.network.base_rtt)
                _cancel(self._send_event)
                self._send()
                self._arm_nofeedback()
            if after is SenderPhase.PROBING and new.r_est is not None:
                _cancel(self._probe_event)
                self._probe_event = self.sim.schedule_in(new.r_est, self._on_probe_tick)

    def _pull_forward_send(self) -> None:
        # A higher rate shortens the gap after the last packet already sent.
        event = self._send_event
        if event is None or not self.active:
            return
        due = max(self.sim.now, self.last_send_time + self.state.s / self.state.x)
        if due < event.time:
            event.cancel()
            self._send_event = self.sim.schedule(due, self._send)

    def freeze_local(self) -> None:
        self._apply(freeze.freeze(self.state, self.max_disconnection))

    def unfreeze_local(self) -> None:
        self._apply(freeze.unfreeze(self.state, announce=self.option_repeat))

    # Packets from the receiver

    def receive(self, packet: Packet) -> None:
        if self.stopped:
            return
        options = _decode(packet)
        if packet.kind == CONTROL:
            signal = freeze.resolve_freeze_signal(options)
            if signal is OptionKind.FREEZE:
                self._apply(freeze.freeze(self.state, self.max_disconnection))
            elif signal is OptionKind.UNFREEZE:
                self._apply(freeze.unfreeze(self.state))
            return
        if packet.kind != FEEDBACK:
            return

        now = self.sim.now
        fb = packet.payload
        sample = None
        if fb.ts_echo is not None:
            sample = now - fb.ts_echo - fb.t_delay
        fb = replace(fb, rtt_sample=sample if sample is not None and sample > 0 else None, options=tuple(options))
        self.last_feedback_time = now
        was_active = self.active
        self._apply(freeze.on_feedback(self.state, fb, n_pkts=self.packets_since_feedback,
                                       max_disconnection=self.max_disconnection))
        self.packets_since_feedback = 0
        if self.active and was_active:
            self._arm_nofeedback()
        if not self.stopped:
            self._arm_idle()


class TfrcReceiverEndpoint:
    """Accounts arriving data and reports back once per RTT, immediately on loss."""

    def __init__(self, sim: Simulator, network: Network, trace: Trace, flow: str, settings: Dict[str, Any]):
        self.sim = sim
        self.network = network
        self.trace = trace
        self.flow = flow
        self.state = TfrcReceiverState(
            s=settings['SEGMENT_SIZE'],
            t_mbi=settings['T_MBI'],
            option_absence_threshold=settings['OPTION_THINNING'],
        )
        self.control_size = settings['CONTROL_PACKET_SIZE']
        self.option_repeat = settings['OPTION_REPEAT']
        self.fallback_interval = settings['INITIAL_T_RTO'] / 4.0
        self.stopped = False
        self._timer: Optional[Event] = None
        network.receivers[flow] = self

    def stop(self) -> None:
        self.stopped = True
        _cancel(self._timer)
        self._timer = None

    def receive(self, packet: Packet) -> None:
        if packet.kind != DATA:
            return
        now = self.sim.now
        self.trace.count(self.flow, 'delivered')
        self.trace.add_goodput(self.flow, now, packet.size)
        self.trace.log(now, TraceKind.DELIVER, self.flow, packet.seqno, packet.size)
        if self.stopped:
            return
        before = self.state.phase
        freeze.receiver_phase_step(self.state, _decode(packet), now)
        if self.state.phase is not before:
            self.trace.log(now, TraceKind.STATE_TRANSITION, self.flow,
                           detail=f"receiver {before.value}->{self.state.phase.value}")
        first = self.state.packets_received == 0
        tfrc.record_packet(self.state, packet.seqno, now, sender_ts=packet.sent_at,
                           size=packet.size, rtt=packet.rtt)
        if first or self.state.new_loss_pending:
            self.send_feedback()
        if self._timer is None:
            self._arm()

    def _arm(self) -> None:
        interval = self.state.rtt or self.fallback_interval
        self._timer = self.sim.schedule_in(interval, self._on_timer)

    def _on_timer(self) -> None:
        self._timer = None
        if self.stopped:
            return
        if self.state.packets_since_feedback > 0:
            self.send_feedback()
        self._arm()

    def send_feedback(self) -> None:
        now = self.sim.now
        options = freeze.feedback_options(self.state, now)
        fb = tfrc.receiver_feedback(self.state, now, options)
        packet = Packet(
            flow=self.flow,
            kind=FEEDBACK,
            seqno=-1,
            size=self.control_size,
            sent_at=now,
            options=encode_options(options),
            payload=fb,
        )
        self.trace.log(now, TraceKind.FEEDBACK_SENT, self.flow, -1, fb.p)
        self.network.send_reverse(packet)

    def request_freeze(self) -> None:
        """Peer-initiated freeze: OPT_FREEZE on the next reports, sent at once."""
        freeze.request_remote_signal(self.state, OptionKind.FREEZE, self.option_repeat)
        for _ in range(self.option_repeat):
            self.send_feedback()

    def request_unfreeze(self) -> None:
        """Peer-initiated unfreeze: control packets carrying OPT_UNFREEZE."""
        now = self.sim.now
        for _ in range(self.option_repeat):
            packet = Packet(
                flow=self.flow,
                kind=CONTROL,
                seqno=-1,
                size=self.control_size,
                sent_at=now,
                options=encode_options([OptionKind.UNFREEZE]),
            )
            self.network.send_reverse(packet)
