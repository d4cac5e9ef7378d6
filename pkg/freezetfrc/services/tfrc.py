"""
Equation-based rate control: throughput equation, allowed-rate update,
slow-start, loss-interval averaging, RTT smoothing and nofeedback backoff.

Sender operations are pure functions over the frozen ``TfrcSenderState``.
Receiver operations update a ``TfrcReceiverState`` in place and return it.
"""
import logging
import math
from dataclasses import replace
from typing import Iterable, NamedTuple, Optional, Sequence

from freezetfrc.errors import ModelDomainError
from freezetfrc.models import (
    DEFAULT_WEIGHTS,
    Feedback,
    LossIntervalHistory,
    OptionKind,
    RateControlPhase,
    ReceiverPhase,
    TfrcReceiverState,
    TfrcSenderState,
)
from freezetfrc.utils.numeric import bisect_root

logger = logging.getLogger(__name__)

# Smallest loss event rate the inversion reports before flagging saturation.
P_MIN = 1e-15
INITIAL_WINDOW_BYTES = 4380


class Inversion(NamedTuple):
    p: float
    saturated: bool


def throughput_equation(p: float, rtt: float, s: float, t_rto: float) -> float:
    """
    TCP-friendly rate for loss event rate ``p``.

    Args:
        p: Loss event rate in (0, 1]
        rtt: Round-trip time in seconds
        s: Segment size in bytes
        t_rto: Retransmit timeout in seconds

    Returns:
        Allowed rate in bytes/s

    Raises:
        ModelDomainError: If ``p`` is 0 (callers branch to slow-start) or any
            argument is out of range
    """
    if not 0.0 < p <= 1.0:
        raise ModelDomainError(f"loss event rate must lie in (0, 1], got {p}")
    if rtt <= 0 or s <= 0 or t_rto <= 0:
        raise ModelDomainError(f"rtt, s and t_rto must be positive, got {rtt}, {s}, {t_rto}")
    denominator = (
        rtt * math.sqrt(2.0 * p / 3.0)
        + t_rto * 3.0 * math.sqrt(3.0 * p / 8.0) * p * (1.0 + 32.0 * p * p)
    )
    return s / denominator


def update_allowed_rate(x_bps: float, x_recv: float, s: float = 500, t_mbi: float = 64.0) -> float:
    """Allowed rate in congestion avoidance, floored at one packet per t_mbi."""
    return max(min(x_bps, 2.0 * x_recv), s / t_mbi)


def slow_start_update(x: float, x_recv: float) -> float:
    """Per-RTT slow-start doubling, limited by twice the receive rate."""
    return min(2.0 * x, 2.0 * x_recv)


def invert_throughput(x_target: float, rtt: float, s: float) -> Inversion:
    """
    Loss event rate at which the throughput equation yields ``x_target``.

    Bisects on log(p) with t_RTO = 4R. Rates above T(P_MIN) return P_MIN and
    rates below T(1) return 1, both flagged as saturated.

    Args:
        x_target: Target rate in bytes/s
        rtt: Round-trip time in seconds
        s: Segment size in bytes

    Returns:
        Inversion(p, saturated)
    """
    if x_target <= 0:
        raise ModelDomainError(f"target rate must be positive, got {x_target}")
    t_rto = 4.0 * rtt
    rate_at_one = throughput_equation(1.0, rtt, s, t_rto)
    if x_target <= rate_at_one:
        return Inversion(1.0, x_target < rate_at_one)
    if x_target >= throughput_equation(P_MIN, rtt, s, t_rto):
        logger.debug(f"Rate {x_target} above the equation ceiling, saturating at p={P_MIN}")
        return Inversion(P_MIN, True)

    log_target = math.log(x_target)

    def log_gap(log_p: float) -> float:
        return math.log(throughput_equation(math.exp(log_p), rtt, s, t_rto)) - log_target

    log_p = bisect_root(log_gap, math.log(P_MIN), 0.0, xtol=1e-10, maxiter=64)
    return Inversion(math.exp(log_p), False)


def loss_event_rate(history: LossIntervalHistory) -> Optional[float]:
    """
    Inverse of the weighted mean loss interval, max over with/without i_0.

    Returns:
        The loss event rate, or None while no loss event has happened
    """
    if not history.has_loss:
        return None
    weights = history.weights
    intervals = history.intervals
    n = len(weights)
    s0 = math.fsum(weights[k] * intervals[k] for k in range(n))
    s1 = math.fsum(weights[k] * intervals[k + 1] for k in range(n))
    denominator = max(s0, s1)
    if denominator <= 0:
        return 1.0
    return min(1.0, math.fsum(weights) / denominator)


def update_rtt_estimate(r_est: Optional[float], sample: float, q: float = 0.9) -> float:
    """EWMA of RTT samples; the first sample replaces the estimate."""
    if sample < 0:
        raise ModelDomainError(f"RTT sample must be non-negative, got {sample}")
    if not 0.0 < q < 1.0:
        raise ModelDomainError(f"EWMA weight must lie in (0, 1), got {q}")
    if r_est is None:
        return sample
    return q * r_est + (1.0 - q) * sample


def initial_sender_state(
    s: int = 500,
    t_mbi: float = 64.0,
    q: float = 0.9,
    initial_t_rto: float = 2.0,
    idle_timeout: float = 480.0
) -> TfrcSenderState:
    """Sender before any feedback: one packet per initial timeout."""
    x = s / initial_t_rto
    return TfrcSenderState(
        x=x,
        x_recv=x,
        r_est=None,
        t_rto=initial_t_rto,
        s=s,
        t_mbi=t_mbi,
        q=q,
        idle_timeout=idle_timeout,
    )


def initial_window_rate(s: int, rtt: float) -> float:
    return min(4 * s, max(2 * s, INITIAL_WINDOW_BYTES)) / rtt


def on_nofeedback_expiry(st: TfrcSenderState) -> TfrcSenderState:
    """
    Nofeedback timer expiry: halve the cached receive rate and recompute X.

    Args:
        st: Current sender state

    Returns:
        The backed-off state with a recomputed t_RTO
    """
    s, t_mbi = st.s, st.t_mbi
    if st.r_est is None:
        x = max(st.x / 2.0, st.min_rate)
        return replace(st, x=x, t_rto=max(st.t_rto, 2.0 * s / x))

    if st.p_last <= 0:
        x_recv = max(st.x_recv / 2.0, s / (2.0 * t_mbi))
        x = max(min(st.x, 2.0 * x_recv), st.min_rate)
    else:
        if st.x_bps > 2.0 * st.x_recv:
            x_recv = max(st.x_recv / 2.0, s / (2.0 * t_mbi))
        else:
            x_recv = st.x_bps / 4.0
        x = update_allowed_rate(st.x_bps, x_recv, s, t_mbi)

    t_rto = max(4.0 * st.r_est, 2.0 * s / x)
    return replace(st, x=x, x_recv=x_recv, t_rto=t_rto)


def sender_on_feedback(st: TfrcSenderState, fb: Feedback) -> TfrcSenderState:
    """
    Apply one receiver report to a sender that is not frozen.

    Stale reports (sent before the newest one processed) are discarded.
    """
    if fb.t_sent < st.last_feedback_ts:
        logger.debug(f"Discarding stale feedback sent at {fb.t_sent} (newest {st.last_feedback_ts})")
        return st

    r_est = st.r_est
    first_sample = False
    if fb.rtt_sample is not None and fb.rtt_sample > 0:
        first_sample = r_est is None
        r_est = update_rtt_estimate(r_est, fb.rtt_sample, st.q)
    if r_est is None:
        return replace(st, last_feedback_ts=fb.t_sent)

    # A receiver that does not know R yet reports 0.
    x_recv = fb.x_recv if fb.x_recv > 0 else st.x
    phase, p_last, x_bps = st.phase, st.p_last, st.x_bps

    if fb.p == 0 and (phase is RateControlPhase.SLOW_START or p_last <= 0):
        x = max(slow_start_update(st.x, x_recv), st.min_rate)
        if first_sample:
            x = max(x, initial_window_rate(st.s, r_est))
    else:
        if fb.p > 0:
            if phase is RateControlPhase.SLOW_START:
                logger.debug(f"First loss report p={fb.p:.3g}, leaving slow-start")
            p_last = fb.p
        phase = RateControlPhase.CONGESTION_AVOIDANCE
        x_bps = throughput_equation(p_last, r_est, st.s, 4.0 * r_est)
        x = update_allowed_rate(x_bps, x_recv, st.s, st.t_mbi)

    return replace(
        st,
        x=x,
        x_recv=x_recv,
        x_bps=x_bps,
        r_est=r_est,
        p_last=p_last,
        phase=phase,
        t_rto=max(4.0 * r_est, 2.0 * st.s / x),
        last_feedback_ts=fb.t_sent,
    )


def history_from_rate(
    x_recv: float,
    rtt: float,
    s: float,
    weights: Sequence[float] = DEFAULT_WEIGHTS
) -> LossIntervalHistory:
    """Fresh history of equal intervals matching the rate ``x_recv`` (i_0 = 0)."""
    p_eq = invert_throughput(x_recv, rtt, s).p
    length = float(max(1, round(1.0 / p_eq)))
    return LossIntervalHistory(
        intervals=(0.0,) + (length,) * len(weights),
        weights=tuple(weights),
        loss_events=1,
    )


def measure_receive_rate(rcv: TfrcReceiverState, now: float) -> float:
    """Bytes received during the last RTT divided by the RTT (0 while R is unknown)."""
    if rcv.rtt is None or rcv.rtt <= 0:
        return 0.0
    horizon = now - rcv.rtt
    while rcv.arrivals and rcv.arrivals[0][0] <= horizon:
        _, size = rcv.arrivals.popleft()
        rcv.window_bytes -= size
    return rcv.window_bytes / rcv.rtt


def _first_loss_history(rcv: TfrcReceiverState, now: float) -> LossIntervalHistory:
    x_recv = measure_receive_rate(rcv, now)
    if x_recv > 0:
        return history_from_rate(x_recv, rcv.rtt, rcv.s, rcv.history.weights)
    # No usable measurement: one loss in everything received so far.
    length = float(max(1, rcv.packets_received))
    return LossIntervalHistory(
        intervals=(0.0,) + (length,) * len(rcv.history.weights),
        weights=rcv.history.weights,
        loss_events=1,
    )


def _register_gap(rcv: TfrcReceiverState, seqno: int, now: float) -> LossIntervalHistory:
    h = rcv.history
    span = seqno - h.seq_cursor
    # Interpolated arrival time of the first missing packet.
    t_first = rcv.last_arrival + (now - rcv.last_arrival) / span

    joins = (
        h.has_loss
        and rcv.rtt is not None
        and h.loss_event_anchor is not None
        and t_first - h.loss_event_anchor <= rcv.rtt
    )
    if joins:
        return h
    rcv.new_loss_pending = True

    if not h.has_loss or rcv.phase is ReceiverPhase.PROBED:
        fresh = _first_loss_history(rcv, now)
        logger.debug(f"Loss history initialised at t={t_first:.6f}: interval {fresh.intervals[1]:.0f}")
        return replace(fresh, seq_cursor=h.seq_cursor, loss_event_anchor=t_first,
                       loss_events=h.loss_events + 1)

    return replace(
        h,
        intervals=(0.0,) + h.intervals[:-1],
        loss_event_anchor=t_first,
        loss_events=h.loss_events + 1,
    )


def record_packet(
    rcv: TfrcReceiverState,
    seqno: int,
    now: float,
    sender_ts: Optional[float] = None,
    size: Optional[int] = None,
    rtt: Optional[float] = None
) -> TfrcReceiverState:
    """
    Account one arriving data packet.

    A gap in sequence numbers forms at most one loss event; it joins the
    current event when its first interpolated loss lies within one RTT of
    the event anchor. Already-accounted sequence numbers are counted in
    ``duplicates`` and otherwise ignored.
    """
    h = rcv.history
    if seqno <= h.seq_cursor:
        rcv.duplicates += 1
        logger.debug(f"Ignoring duplicate or reordered packet {seqno} (cursor {h.seq_cursor})")
        return rcv
    if rtt is not None and rtt > 0:
        rcv.rtt = rtt

    if rcv.last_arrival is not None and seqno > h.seq_cursor + 1:
        h = _register_gap(rcv, seqno, now)

    rcv.history = replace(h, intervals=(h.intervals[0] + 1.0,) + h.intervals[1:], seq_cursor=seqno)
    size = size or rcv.s
    rcv.last_arrival = now
    rcv.last_sender_ts = sender_ts
    rcv.arrivals.append((now, size))
    rcv.window_bytes += size
    rcv.packets_received += 1
    rcv.packets_since_feedback += 1
    return rcv


def receiver_feedback(
    rcv: TfrcReceiverState,
    now: float,
    options: Iterable[OptionKind] = ()
) -> Feedback:
    """Build the next report and reset the per-feedback counters."""
    p = loss_event_rate(rcv.history) or 0.0
    x_recv = measure_receive_rate(rcv, now)
    t_delay = now - rcv.last_arrival if rcv.last_arrival is not None else 0.0
    fb = Feedback(
        p=p,
        x_recv=x_recv,
        t_sent=now,
        ts_echo=rcv.last_sender_ts,
        t_delay=t_delay,
        options=tuple(options),
    )
    rcv.packets_since_feedback = 0
    rcv.new_loss_pending = False
    rcv.last_feedback_time = now
    return fb
