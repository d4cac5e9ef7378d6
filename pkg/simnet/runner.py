"""
Scenario execution and stationarity detection.
"""
import logging
import math
from typing import Any, Dict, NamedTuple, Optional, Sequence

import numpy as np

from freezetfrc import create_app
from freezetfrc.errors import ScenarioConfigError, StationarityError
from freezetfrc.models import (
    Disconnect,
    FlowKind,
    Freeze,
    Reconnect,
    Reparameterize,
    Scenario,
    StartFlow,
    TraceKind,
    Unfreeze,
    Variant,
)
from simnet.endpoints import TfrcReceiverEndpoint, TfrcSenderEndpoint
from simnet.engine import Simulator
from simnet.network import Network
from simnet.reno import RenoReceiver, RenoSender
from simnet.trace import Trace

logger = logging.getLogger(__name__)


class Stationarity(NamedTuple):
    stationary: bool
    t: float
    x_recv: float
    rtt: Optional[float] = None


def stationarity_detector(
    rates: Sequence[float],
    bin_width: float,
    window: float,
    tolerance: float = 0.05,
    rtt: Optional[float] = None
) -> Stationarity:
    """
    First window boundary where the mean rate of the last two windows differs
    by less than ``tolerance`` (relative).

    Args:
        rates: Per-bin goodput in bytes/s, starting at t = 0
        bin_width: Bin length in seconds
        window: Comparison window in seconds
        tolerance: Relative change below which the flow is stationary
        rtt: RTT to report alongside the rate

    Returns:
        Stationarity; ``stationary`` is False when no pair of windows qualifies
    """
    rates = np.asarray(rates, dtype=float)
    per_window = max(1, int(round(window / bin_width)))
    k = 2
    while k * per_window <= len(rates):
        previous = rates[(k - 2) * per_window:(k - 1) * per_window].mean()
        current = rates[(k - 1) * per_window:k * per_window].mean()
        if previous > 0 and abs(current - previous) / previous < tolerance:
            return Stationarity(True, k * per_window * bin_width, float(current), rtt)
        k += 1
    return Stationarity(False, math.nan, 0.0, rtt)


class ScenarioRunner:
    """Builds the network and endpoints for one scenario and runs it to completion."""

    def __init__(self, scenario: Scenario, settings: Optional[Dict[str, Any]] = None):
        self.scenario = scenario
        self.settings = dict(settings or create_app())
        self.settings['SEGMENT_SIZE'] = scenario.segment_size
        self.sim = Simulator()
        self.trace = Trace(record_packets=scenario.record_packets, bin_width=self.settings['RATE_BIN_WIDTH'])
        self.network = Network(self.sim, self.trace, scenario.wireless, scenario.wired)
        self.senders: Dict[str, Any] = {}
        self.receivers: Dict[str, Any] = {}
        self.rng = np.random.default_rng(scenario.seed)

    def run(self) -> Trace:
        sc = self.scenario
        self.schedule_events()
        if sc.handover is not None:
            self._run_handover()
        else:
            self.sim.run(until=sc.duration)
        self._finish()
        logger.info(f"Scenario seed={sc.seed} finished at t={self.trace.end_time:.2f} "
                    f"after {self.sim.events_processed} events")
        return self.trace

    def schedule_events(self) -> None:
        """Validate the scenario and put its scripted events on the clock."""
        self.scenario.validate()
        for ev in self.scenario.events:
            self.sim.schedule(ev.t, self._dispatch, ev)

    def _dispatch(self, ev: Any) -> None:
        if isinstance(ev, StartFlow):
            self._start_flow(ev)
        elif isinstance(ev, Disconnect):
            self.network.disconnect()
        elif isinstance(ev, Reconnect):
            self.network.reconnect(ev.link)
        elif isinstance(ev, Reparameterize):
            self.network.reparameterize(ev.link)
        elif isinstance(ev, Freeze):
            if ev.remote:
                self.receivers[ev.flow].request_freeze()
            else:
                self.senders[ev.flow].freeze_local()
        elif isinstance(ev, Unfreeze):
            if ev.remote:
                self.receivers[ev.flow].request_unfreeze()
            else:
                self.senders[ev.flow].unfreeze_local()
        else:
            raise ScenarioConfigError(f"unsupported event {ev!r}")

    def _start_flow(self, ev: StartFlow) -> None:
        if ev.kind is FlowKind.TFRC:
            sender_cls, receiver_cls = TfrcSenderEndpoint, TfrcReceiverEndpoint
        else:
            sender_cls, receiver_cls = RenoSender, RenoReceiver
        self.receivers[ev.flow] = receiver_cls(self.sim, self.network, self.trace, ev.flow, self.settings)
        self.senders[ev.flow] = sender_cls(self.sim, self.network, self.trace, ev.flow, self.settings)
        self.senders[ev.flow].start()

    def wait_for_stationarity(self, flow: str) -> Stationarity:
        """Advance window by window until ``flow`` is stationary."""
        window = self.settings['STATIONARITY_WINDOW']
        tolerance = self.settings['STATIONARITY_TOLERANCE']
        max_time = self.settings['STATIONARITY_MAX_TIME']
        bin_width = self.trace.bin_width
        t = 0.0
        while True:
            t += window
            if t > max_time:
                raise StationarityError(f"flow {flow} not stationary within {max_time:.0f} s")
            self.sim.run(until=t)
            self.trace.end_time = self.sim.now
            _, rates = self.trace.goodput_series(flow)
            rates = rates[:int(round(t / bin_width))]
            sender = self.senders.get(flow)
            rtt = getattr(getattr(sender, 'state', None), 'r_est', None)
            result = stationarity_detector(rates, bin_width, window, tolerance, rtt)
            if result.stationary:
                logger.info(f"Flow {flow} stationary at t={t:.0f} s: X_recv={result.x_recv:.0f} B/s")
                return result

    def _run_handover(self) -> None:
        ho = self.scenario.handover
        steady = self.wait_for_stationarity(ho.flow)
        sender = self.senders[ho.flow]
        r_est = sender.state.r_est or self.network.base_rtt
        wireless = self.network.wireless_spec
        drain = (
            wireless.queue_capacity * wireless.serialization_time(self.scenario.segment_size)
            + self.network.base_rtt
        )
        lead = max(r_est, drain)
        t_freeze = self.sim.now + self.rng.uniform(0.0, ho.jitter_rtts * r_est)
        t_down = t_freeze + lead
        t_up = t_down + ho.t_ho
        if ho.variant is Variant.FREEZE:
            self.sim.schedule(t_freeze, self._dispatch, Freeze(t_freeze, ho.flow, ho.remote))
            self.sim.schedule(t_up + ho.unfreeze_delay, self._dispatch,
                              Unfreeze(t_up + ho.unfreeze_delay, ho.flow, ho.remote))
        self.sim.schedule(t_down, self._dispatch, Disconnect(t_down))
        self.sim.schedule(t_up, self._dispatch, Reconnect(t_up, ho.to_link))
        self.trace.meta.update(
            t_stationary=steady.t,
            x_recv_stationary=steady.x_recv,
            rtt_stationary=steady.rtt if steady.rtt is not None else math.nan,
            t_disconnect=t_down,
            t_reconnect=t_up,
        )
        self.sim.run(until=t_up + ho.run_after)

    def _finish(self) -> None:
        self.trace.end_time = self.sim.now
        for endpoint in list(self.senders.values()) + list(self.receivers.values()):
            endpoint.stop()
        # Let packets still in the network land so the per-flow counts balance.
        self.sim.run()
        self.trace.log(self.trace.end_time, TraceKind.STATE_TRANSITION, detail='end')


def run_scenario(scenario: Scenario, settings: Optional[Dict[str, Any]] = None) -> Trace:
    """Execute ``scenario`` and return its trace."""
    return ScenarioRunner(scenario, settings).run()
