"""
Metrics extracted from simulation traces: losses across the handover,
wasted capacity after reconnection, TFRC/TCP throughput share and a few
restoration milestones.
"""
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from freezetfrc import create_app
from freezetfrc.errors import MetricsError
from freezetfrc.models import TraceKind, TraceRecord
from scenarios.builder import build_steady_scenario
from simnet.runner import ScenarioRunner, Stationarity
from simnet.trace import Trace

logger = logging.getLogger(__name__)

_DROP_KINDS = (TraceKind.DROP_QUEUE, TraceKind.DROP_DISCONNECTED)


def handover_window(trace: Trace) -> Tuple[float, float]:
    """(disconnect, reconnect) times of the first disconnection in ``trace``."""
    down = trace.first(TraceKind.LINK_DOWN)
    if down is None:
        raise MetricsError("trace contains no disconnection")
    up = trace.first(TraceKind.LINK_UP, after=down.t)
    return down.t, up.t if up is not None else trace.end_time


def measure_losses(trace: Trace, flow: Optional[str] = None) -> int:
    """Data packets dropped between disconnection and reconnection."""
    t_down, t_up = handover_window(trace)
    return sum(
        1
        for kind in _DROP_KINDS
        for rec in trace.select(kind, flow, t_down, t_up)
        if rec.seqno >= 0
    )


def _rate_steps(trace: Trace, flow: str) -> Tuple[np.ndarray, np.ndarray]:
    steps = trace.rate_series(flow)
    if not steps:
        raise MetricsError(f"no rate records for flow '{flow}'")
    times, rates = zip(*steps)
    return np.asarray(times, dtype=float), np.asarray(rates, dtype=float)


def _rate_at(times: np.ndarray, rates: np.ndarray, t: float) -> float:
    index = int(np.searchsorted(times, t, side='right')) - 1
    return float(rates[index]) if index >= 0 else 0.0


def measure_wasted(
    trace: Trace,
    x_ref: float,
    flow: str,
    s: int = 500,
    threshold: float = 0.10,
    cap: float = 100.0
) -> float:
    """
    Capacity left unused after reconnection, in packets of ``s`` bytes.

    Integrates ``max(x_ref - X(t), 0)`` over the sender rate X from the
    reconnection until X first comes within ``threshold`` of ``x_ref``,
    ``cap`` seconds pass or the trace ends.
    """
    _, t_up = handover_window(trace)
    times, rates = _rate_steps(trace, flow)
    horizon = min(t_up + cap, trace.end_time)
    if horizon <= t_up:
        return 0.0
    inner = times[(times > t_up) & (times < horizon)]
    points = np.concatenate(([t_up], inner, [horizon]))
    settled = (1.0 - threshold) * x_ref
    wasted = 0.0
    for start, end in zip(points[:-1], points[1:]):
        x = _rate_at(times, rates, start)
        if x >= settled:
            break
        wasted += (x_ref - x) * (end - start)
    return wasted / s


def settlement_time(trace: Trace, flow: str, target: float, threshold: float = 0.10) -> Optional[float]:
    """Seconds from reconnection until the sender rate reaches (1 - threshold) * target."""
    _, t_up = handover_window(trace)
    for rec in trace.select(TraceKind.RATE_CHANGE, flow, start=t_up):
        if rec.value >= (1.0 - threshold) * target:
            return rec.t - t_up
    return None


def fairness_ratio(
    trace: Trace,
    tfrc_flow: str,
    reno_flow: str,
    start: Optional[float] = None,
    window: float = 100.0,
    settle: float = 10.0
) -> float:
    """
    Mean goodput of ``tfrc_flow`` over that of ``reno_flow``.

    The window starts ``settle`` seconds after reconnection unless ``start``
    is given.
    """
    if start is None:
        _, t_up = handover_window(trace)
        start = t_up + settle
    end = start + window
    if end > trace.end_time + 1e-9:
        raise MetricsError(f"fairness window [{start:.1f}, {end:.1f}] extends past trace end {trace.end_time:.1f}")
    reno = trace.mean_goodput(reno_flow, start, end)
    if reno <= 0:
        raise MetricsError(f"flow '{reno_flow}' delivered nothing in [{start:.1f}, {end:.1f}]")
    return trace.mean_goodput(tfrc_flow, start, end) / reno


def idle_after_reconnect(trace: Trace, flow: str) -> float:
    """Time from reconnection to the first data packet sent (needs packet records)."""
    if not trace.record_packets:
        raise MetricsError("idle time needs a trace with packet records")
    _, t_up = handover_window(trace)
    first = trace.first(TraceKind.SEND, flow, after=t_up)
    if first is None:
        raise MetricsError(f"flow '{flow}' sent nothing after reconnection")
    return first.t - t_up


def rate_halvings(trace: Trace, flow: str) -> int:
    """Rate reductions while the link was down (a frozen sender has none)."""
    t_down, t_up = handover_window(trace)
    times, rates = _rate_steps(trace, flow)
    previous = _rate_at(times, rates, t_down)
    count = 0
    for rec in trace.select(TraceKind.RATE_CHANGE, flow, t_down, t_up):
        if 0 < rec.value < previous:
            count += 1
        previous = rec.value
    return count


def _freeze_transition(trace: Trace, flow: str, prefix: str):
    for rec in trace.select(TraceKind.STATE_TRANSITION, flow):
        if rec.detail.startswith(prefix):
            return rec
    return None


def rate_before_freeze(trace: Trace, flow: str) -> float:
    """Last non-zero sender rate before the flow froze."""
    frozen = _freeze_transition(trace, flow, 'normal->frozen')
    if frozen is None:
        raise MetricsError(f"flow '{flow}' never froze")
    value = 0.0
    for rec in trace.select(TraceKind.RATE_CHANGE, flow, end=frozen.t):
        if rec.value > 0:
            value = rec.value
    return value


def first_rate_after_unfreeze(trace: Trace, flow: str) -> Tuple[float, float]:
    """(time, rate) of the first rate record once the flow leaves the frozen phase."""
    thawed = _freeze_transition(trace, flow, 'frozen->')
    if thawed is None:
        raise MetricsError(f"flow '{flow}' never unfroze")
    for rec in trace.select(TraceKind.RATE_CHANGE, flow, start=thawed.t):
        if rec.value > 0:
            return rec.t, rec.value
    raise MetricsError(f"flow '{flow}' has no rate after unfreezing")


def restoring_exit(trace: Trace, flow: str) -> Optional[TraceRecord]:
    """First transition out of the restoring phase, or None while it lasts."""
    return _freeze_transition(trace, flow, 'restoring->')


def rates_while_restoring(trace: Trace, flow: str) -> List[float]:
    """Sender rates recorded from the unfreeze up to the end of restoration."""
    thawed = _freeze_transition(trace, flow, 'frozen->')
    if thawed is None:
        raise MetricsError(f"flow '{flow}' never unfroze")
    ended = restoring_exit(trace, flow)
    end = ended.t if ended is not None else float('inf')
    return [rec.value for rec in trace.select(TraceKind.RATE_CHANGE, flow, start=thawed.t) if rec.t < end]


def calibrate_reference(tech: str, seed: int = 0, settings: Optional[Dict[str, Any]] = None) -> Stationarity:
    """Stationary receive rate of a lone rate-controlled flow on ``tech``."""
    settings = settings or create_app()
    scenario = build_steady_scenario(tech, settings['STATIONARITY_MAX_TIME'], seed, settings, record_packets=False)
    runner = ScenarioRunner(scenario, settings)
    runner.schedule_events()
    flow = scenario.events[0].flow
    result = runner.wait_for_stationarity(flow)
    logger.info(f"Reference for {tech}: X_recv={result.x_recv:.0f} B/s")
    return result
