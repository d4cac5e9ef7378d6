"""
Freeze extension: the sender and receiver state machines that suspend a
flow across a planned disconnection, restore its rate afterwards and probe
the new path for spare capacity.

Sender phases: Normal -> Frozen -> Restoring -> (Probing) -> Normal.
Receiver phases: Normal -> Restoration -> (Probed) -> Recovery -> Normal.
"""
import logging
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence

from freezetfrc.errors import ModelDomainError
from freezetfrc.models import (
    DEFAULT_WEIGHTS,
    Feedback,
    LossIntervalHistory,
    OptionKind,
    RateControlPhase,
    ReceiverPhase,
    SenderPhase,
    SignalOption,
    TfrcReceiverState,
    TfrcSenderState,
)
from freezetfrc.services import tfrc
from freezetfrc.services.analytic_model import delta_p_min

logger = logging.getLogger(__name__)

CONNECTION_OPTIONS = (OptionKind.FREEZE, OptionKind.UNFREEZE)


# ---------------------------------------------------------------------------
# Sender
# ---------------------------------------------------------------------------

def is_frozen(st: TfrcSenderState) -> bool:
    return st.freeze.sender_phase is SenderPhase.FROZEN


def freeze(st: TfrcSenderState, max_disconnection: float = 300.0) -> TfrcSenderState:
    """
    Suspend transmission and snapshot the cached receive rate.

    Args:
        st: Sender state
        max_disconnection: Longest disconnection the flow must survive; the
            idle timeout becomes at least twice this value

    Returns:
        The frozen state (unchanged when already frozen)
    """
    phase = st.freeze.sender_phase
    if phase is SenderPhase.FROZEN:
        logger.debug("Freeze requested on a frozen sender, ignoring")
        return st
    if phase is SenderPhase.CLOSED:
        logger.warning("Freeze requested on a closed flow, ignoring")
        return st
    frozen = replace(
        st.freeze,
        sender_phase=SenderPhase.FROZEN,
        saved_x_recv=st.x_recv,
        probe_entry_rate=None,
        unfreeze_budget=0,
    )
    logger.debug(f"Sender frozen at X={st.x:.1f}, saved X_recv={st.x_recv:.1f}")
    return replace(st, freeze=frozen, idle_timeout=max(st.idle_timeout, 2.0 * max_disconnection))


def unfreeze(st: TfrcSenderState, announce: int = 0) -> TfrcSenderState:
    """
    Leave the frozen phase: restore X_recv and enter Restoring.

    Args:
        st: Sender state
        announce: Number of data packets that carry OPT_UNFREEZE to the peer
            (nonzero when the unfreeze was a local instruction)
    """
    if not is_frozen(st):
        logger.warning(f"Unfreeze requested in phase {st.freeze.sender_phase.value}, ignoring")
        return st
    restored = replace(
        st.freeze,
        sender_phase=SenderPhase.RESTORING,
        saved_x_recv=None,
        unfreeze_budget=announce,
    )
    logger.debug(f"Sender unfrozen, restoring X={st.x:.1f}")
    return replace(st, x_recv=st.freeze.saved_x_recv, freeze=restored)


def _apply_rtt_sample(st: TfrcSenderState, fb: Feedback) -> Optional[float]:
    if fb.rtt_sample is not None and fb.rtt_sample > 0:
        return tfrc.update_rtt_estimate(st.r_est, fb.rtt_sample, st.q)
    return st.r_est


def _back_to_normal(st: TfrcSenderState, p: float, r_est: float, x_recv: float, fb: Feedback) -> TfrcSenderState:
    x_bps = tfrc.throughput_equation(p, r_est, st.s, 4.0 * r_est)
    x = tfrc.update_allowed_rate(x_bps, x_recv, st.s, st.t_mbi)
    return replace(
        st,
        x=x,
        x_recv=x_recv,
        x_bps=x_bps,
        r_est=r_est,
        p_last=p,
        phase=RateControlPhase.CONGESTION_AVOIDANCE,
        t_rto=max(4.0 * r_est, 2.0 * st.s / x),
        last_feedback_ts=fb.t_sent,
        freeze=replace(st.freeze, sender_phase=SenderPhase.NORMAL, p_prev=0.0, probe_entry_rate=None),
    )


def restoring_tick(st: TfrcSenderState, fb: Feedback) -> TfrcSenderState:
    """
    Handle one report while Restoring.

    The reported X_recv is ignored; RTT samples are applied. A loss event
    rate above p_last ends the phase in congestion avoidance; OPT_UNFROZEN
    moves the sender to Probing.
    """
    if st.freeze.sender_phase is not SenderPhase.RESTORING:
        return st
    if fb.t_sent < st.last_feedback_ts:
        return st
    r_est = _apply_rtt_sample(st, fb)

    if fb.p > st.p_last and r_est is not None:
        logger.debug(f"Loss event rate rose to {fb.p:.3g} while restoring, back to normal")
        return _back_to_normal(st, fb.p, r_est, st.x_recv, fb)

    fz = st.freeze
    if OptionKind.UNFROZEN in fb.options:
        logger.debug(f"Receiver reports a full RTT since unfreeze, probing from X={st.x:.1f}")
        fz = replace(fz, sender_phase=SenderPhase.PROBING, p_prev=fb.p, probe_entry_rate=st.x)

    t_rto = max(4.0 * r_est, 2.0 * st.s / st.x) if r_est is not None else st.t_rto
    return replace(st, r_est=r_est, t_rto=t_rto, last_feedback_ts=fb.t_sent, freeze=fz)


def probing_tick(st: TfrcSenderState) -> TfrcSenderState:
    """Double the rate; called once per smoothed RTT while Probing."""
    if st.freeze.sender_phase is not SenderPhase.PROBING:
        return st
    x = 2.0 * st.x
    t_rto = max(4.0 * st.r_est, 2.0 * st.s / x) if st.r_est is not None else st.t_rto
    return replace(st, x=x, t_rto=t_rto)


def probing_exit_check(
    p_new: float,
    p_prev: float,
    n_pkts_rtt: float,
    weights: Sequence[float] = DEFAULT_WEIGHTS
) -> bool:
    """
    Whether a report received while Probing ends the phase.

    Loss-free growth can only lower p, and by no more than ``delta_p_min``
    over ``n_pkts_rtt`` packets. Any change outside that open interval
    means the receiver saw a loss and rebuilt its history.
    """
    delta = p_new - p_prev
    if delta == 0 and n_pkts_rtt == 0:
        return False
    if p_prev <= 0:
        return p_new > 0
    lower = delta_p_min(n_pkts_rtt, p_prev, weights)
    return not (lower < delta < 0)


def probing_feedback(st: TfrcSenderState, fb: Feedback, n_pkts: Optional[float] = None) -> TfrcSenderState:
    """
    Handle one report while Probing.

    Args:
        st: Sender state
        fb: Receiver report
        n_pkts: Packets sent since the previous report; defaults to one RTT
            worth at the current rate
    """
    if st.freeze.sender_phase is not SenderPhase.PROBING:
        return st
    if fb.t_sent < st.last_feedback_ts:
        return st
    r_est = _apply_rtt_sample(st, fb)
    if n_pkts is None:
        n_pkts = st.x * r_est / st.s if r_est is not None else 0.0

    if not probing_exit_check(fb.p, st.freeze.p_prev, n_pkts):
        return replace(st, r_est=r_est, last_feedback_ts=fb.t_sent, freeze=replace(st.freeze, p_prev=fb.p))

    p = fb.p if fb.p > 0 else st.p_last
    x_recv = fb.x_recv if fb.x_recv > 0 else st.x
    if p <= 0 or r_est is None:
        logger.debug("Probing ended without a loss history, resuming slow-start")
        return replace(
            st,
            r_est=r_est,
            x_recv=x_recv,
            phase=RateControlPhase.SLOW_START,
            last_feedback_ts=fb.t_sent,
            freeze=replace(st.freeze, sender_phase=SenderPhase.NORMAL, probe_entry_rate=None),
        )
    logger.debug(f"Probing ended: p {st.freeze.p_prev:.3g} -> {fb.p:.3g}, X_recv={x_recv:.1f}")
    return _back_to_normal(st, p, r_est, x_recv, fb)


def resolve_freeze_signal(options: Iterable[OptionKind]) -> Optional[OptionKind]:
    """Connection-level signal in a packet; the last one written wins."""
    found = [kind for kind in options if kind in CONNECTION_OPTIONS]
    if not found:
        return None
    if len(set(found)) > 1:
        logger.warning(f"Contradictory options {[k.name for k in found]} in one packet, applying {found[-1].name}")
    return found[-1]


def on_feedback(
    st: TfrcSenderState,
    fb: Feedback,
    n_pkts: Optional[float] = None,
    max_disconnection: float = 300.0
) -> TfrcSenderState:
    """Dispatch a report according to the sender's freeze phase."""
    signal = resolve_freeze_signal(fb.options)
    if signal is OptionKind.FREEZE:
        return freeze(st, max_disconnection)
    if signal is OptionKind.UNFREEZE and is_frozen(st):
        return unfreeze(st)

    phase = st.freeze.sender_phase
    if phase in (SenderPhase.FROZEN, SenderPhase.CLOSED):
        logger.debug(f"Ignoring feedback in phase {phase.value}")
        return st
    if phase is SenderPhase.RESTORING:
        return restoring_tick(st, fb)
    if phase is SenderPhase.PROBING:
        return probing_feedback(st, fb, n_pkts)
    return tfrc.sender_on_feedback(st, fb)


def on_nofeedback(st: TfrcSenderState) -> TfrcSenderState:
    """
    Nofeedback expiry.

    Restoring and Probing keep their phase and rate; only a higher loss
    event rate, OPT_UNFROZEN or a loss seen while probing moves them on.
    The timeout doubles, up to t_mbi, so a slower new path can report.
    """
    phase = st.freeze.sender_phase
    if phase in (SenderPhase.FROZEN, SenderPhase.CLOSED):
        return st
    if phase in (SenderPhase.RESTORING, SenderPhase.PROBING):
        t_rto = max(min(2.0 * st.t_rto, st.t_mbi), 2.0 * st.s / st.x)
        logger.debug(f"Nofeedback timer expired while {phase.value}, holding X={st.x:.1f}, t_rto={t_rto:.3f}")
        return replace(st, t_rto=t_rto)
    return tfrc.on_nofeedback_expiry(st)


def cover_path(st: TfrcSenderState, path_rtt: float) -> TfrcSenderState:
    """Stretch the nofeedback timeout so the first report over a path of ``path_rtt`` can arrive."""
    return replace(st, t_rto=max(st.t_rto, 4.0 * path_rtt, 2.0 * st.s / st.x))


def close(st: TfrcSenderState) -> TfrcSenderState:
    return replace(st, freeze=replace(st.freeze, sender_phase=SenderPhase.CLOSED))


def data_options(st: TfrcSenderState, seqno: int, thinning: int = 1) -> tuple:
    """
    Options for the next data packet, and the state with budgets consumed.

    Returns:
        (options, new_state)
    """
    options: List[OptionKind] = []
    fz = st.freeze
    if fz.unfreeze_budget > 0:
        options.append(OptionKind.UNFREEZE)
        fz = replace(fz, unfreeze_budget=fz.unfreeze_budget - 1)
    if seqno % max(1, thinning) == 0:
        if fz.sender_phase is SenderPhase.RESTORING:
            options.append(OptionKind.RESTORING)
        elif fz.sender_phase is SenderPhase.PROBING:
            options.append(OptionKind.PROBING)
    if fz is not st.freeze:
        st = replace(st, freeze=fz)
    return tuple(options), st


# ---------------------------------------------------------------------------
# Receiver
# ---------------------------------------------------------------------------

def receiver_reinit_loss_history(
    x_recv: float,
    rtt: float,
    s: float,
    weights: Sequence[float] = DEFAULT_WEIGHTS
) -> LossIntervalHistory:
    """
    Loss history of equal intervals whose loss event rate reproduces ``x_recv``.

    Raises:
        ModelDomainError: If there is no rate measurement to start from
    """
    if x_recv <= 0:
        raise ModelDomainError("cannot re-initialise the loss history from an empty rate measurement")
    if rtt is None or rtt <= 0:
        raise ModelDomainError(f"cannot re-initialise the loss history without an RTT, got {rtt}")
    return tfrc.history_from_rate(x_recv, rtt, s, weights)


def _set_receiver_phase(rcv: TfrcReceiverState, phase: ReceiverPhase) -> None:
    if rcv.phase is not phase:
        logger.debug(f"Receiver {rcv.phase.value} -> {phase.value}")
    rcv.freeze = replace(rcv.freeze, receiver_phase=phase)


def receiver_phase_step(rcv: TfrcReceiverState, options: Iterable[OptionKind], now: float) -> TfrcReceiverState:
    """
    Advance the receiver phase from the options of one data packet.

    OPT_RESTORING enters Restoration; OPT_PROBING enters Probed. Once the
    sender stops attaching them for ``option_absence_threshold`` consecutive
    packets the receiver passes through Recovery back to Normal.
    """
    kinds = set(options)
    resolve_freeze_signal(options)
    phase = rcv.phase

    if OptionKind.PROBING in kinds:
        rcv.missing_option_count = 0
        if phase is not ReceiverPhase.PROBED:
            _set_receiver_phase(rcv, ReceiverPhase.PROBED)
            rcv.unfrozen_ready = False
        return rcv

    if OptionKind.RESTORING in kinds:
        rcv.missing_option_count = 0
        if phase is not ReceiverPhase.RESTORATION:
            _set_receiver_phase(rcv, ReceiverPhase.RESTORATION)
            rcv.restoration_start = now
            rcv.unfrozen_ready = False
        _check_restoration_elapsed(rcv, now)
        return rcv

    if phase in (ReceiverPhase.RESTORATION, ReceiverPhase.PROBED):
        rcv.missing_option_count += 1
        if rcv.missing_option_count >= rcv.option_absence_threshold:
            _set_receiver_phase(rcv, ReceiverPhase.RECOVERY)
            rcv.missing_option_count = 0
            rcv.restoration_start = None
            rcv.unfrozen_ready = False
            _set_receiver_phase(rcv, ReceiverPhase.NORMAL)
    return rcv


def _check_restoration_elapsed(rcv: TfrcReceiverState, now: float) -> None:
    if (
        rcv.phase is ReceiverPhase.RESTORATION
        and rcv.rtt is not None
        and rcv.restoration_start is not None
        and now - rcv.restoration_start >= rcv.rtt
    ):
        rcv.unfrozen_ready = True


def request_remote_signal(rcv: TfrcReceiverState, kind: OptionKind, repeat: int = 3) -> TfrcReceiverState:
    """Queue OPT_FREEZE or OPT_UNFREEZE for the next ``repeat`` packets to the sender."""
    if kind not in CONNECTION_OPTIONS:
        raise ModelDomainError(f"only connection-level options can be requested, got {kind.name}")
    rcv.pending_options = [opt for opt in rcv.pending_options if opt.kind not in CONNECTION_OPTIONS]
    rcv.pending_options.append(SignalOption(kind, repeat))
    return rcv


def feedback_options(rcv: TfrcReceiverState, now: float) -> List[OptionKind]:
    """Options for the next packet towards the sender; consumes repeat budgets."""
    options: List[OptionKind] = []
    remaining = []
    for opt in rcv.pending_options:
        options.append(opt.kind)
        if opt.repeat_budget > 1:
            remaining.append(SignalOption(opt.kind, opt.repeat_budget - 1))
    rcv.pending_options = remaining
    _check_restoration_elapsed(rcv, now)
    if rcv.unfrozen_ready:
        options.append(OptionKind.UNFROZEN)
    return options
