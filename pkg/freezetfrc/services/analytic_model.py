"""
Closed-form model of a rate-controlled sender across a disconnection.

Covers the backoff timeline while no feedback arrives, the number of
packets sent into the void, the idle time and slow-start after
reconnection, wasted capacity on a same-capacity link and the extra
capacity wasted when the new link is faster. A step oracle replays the
same disconnection through the sender state machine in
``freezetfrc.services.tfrc`` and must agree with the closed forms exactly.
"""
import logging
import math
from typing import List, Optional, Sequence

from freezetfrc.errors import ConvergenceError, ModelDomainError, ModelInputError, OracleMismatchError
from freezetfrc.models import (
    DEFAULT_WEIGHTS,
    ModelInputs,
    ModelOutputs,
    NfiStep,
    NfiTimeline,
    RateControlPhase,
    TechnologyProfile,
    TfrcSenderState,
)
from freezetfrc.services import tfrc
from freezetfrc.utils.numeric import newton_root

logger = logging.getLogger(__name__)

HANDOVER_BASE_DELAY = 2.5
NEWTON_START = 10.0
NEWTON_MAX_ITER = 100
MAX_GROWTH_STEPS = 10_000


# ---------------------------------------------------------------------------
# Disconnection phase
# ---------------------------------------------------------------------------

def clamp_index(inp: ModelInputs) -> int:
    """Smallest i with X_d / 2^i at or below the one-packet-per-t_mbi floor."""
    floor_rate = inp.s / inp.t_mbi
    i = 0
    while math.ldexp(inp.x_d, -i) > floor_rate:
        i += 1
    return i


def timer_index(inp: ModelInputs) -> Optional[int]:
    """Smallest i whose NFI is set by 2s/X^i rather than 4R; None when 4R always wins."""
    if inp.r_old >= inp.t_mbi / 2.0:
        return None
    i_x = clamp_index(inp)
    for i in range(i_x + 1):
        if 2.0 * inp.s / rate_during_nfi(i, inp) > 4.0 * inp.r_old:
            return i
    return None


def rate_during_nfi(i: int, inp: ModelInputs) -> float:
    """Sending rate during no-feedback interval ``i`` (halved per expiry, floored at s/t_mbi)."""
    if i < 0:
        raise ModelDomainError(f"NFI index must be non-negative, got {i}")
    return max(math.ldexp(inp.x_d, -i), inp.s / inp.t_mbi)


def nfi_duration(i: int, inp: ModelInputs) -> float:
    """Length of no-feedback interval ``i``: max(4R_old, 2s/X^i)."""
    return max(4.0 * inp.r_old, 2.0 * inp.s / rate_during_nfi(i, inp))


def closed_form_timeline(inp: ModelInputs) -> NfiTimeline:
    """
    NFI sequence up to the one containing the reconnection instant.

    The volume of the last NFI is truncated pro-rata at t_D; the packet
    total is left unfloored.
    """
    steps: List[NfiStep] = []
    elapsed = 0.0
    packets = 0.0
    i = 0
    while True:
        rate = rate_during_nfi(i, inp)
        duration = nfi_duration(i, inp)
        span = min(duration, inp.t_d - elapsed)
        packets += span * rate / inp.s
        steps.append(NfiStep(i, rate, duration, elapsed, packets))
        elapsed += duration
        if elapsed >= inp.t_d:
            break
        i += 1
    return NfiTimeline(tuple(steps), packets)


def lost_packets(inp: ModelInputs) -> int:
    """Packets sent while disconnected (single floor over the whole volume)."""
    if inp.t_d == 0:
        return 0
    return closed_form_timeline(inp).n_lost


def oracle_sender_state(inp: ModelInputs) -> TfrcSenderState:
    """Stationary sender at the instant the link disappears."""
    return TfrcSenderState(
        x=inp.x_d,
        x_recv=inp.x_d / 2.0,
        r_est=inp.r_old,
        t_rto=max(4.0 * inp.r_old, 2.0 * inp.s / inp.x_d),
        s=inp.s,
        p_last=inp.p_r,
        phase=RateControlPhase.CONGESTION_AVOIDANCE,
        t_mbi=inp.t_mbi,
        q=inp.q,
        x_bps=inp.x_d,
    )


def simulate_nfi_timeline(inp: ModelInputs) -> NfiTimeline:
    """
    Step oracle: run the sender's nofeedback expiry handler on a clock.

    Each timer period sends at the current allowed rate; on expiry the
    sender state machine backs off and re-arms the timer. Emissions are
    counted until t_D.
    """
    st = oracle_sender_state(inp)
    steps: List[NfiStep] = []
    elapsed = 0.0
    packets = 0.0
    i = 0
    while True:
        span = min(st.t_rto, inp.t_d - elapsed)
        packets += span * st.x / inp.s
        steps.append(NfiStep(i, st.x, st.t_rto, elapsed, packets))
        elapsed += st.t_rto
        if elapsed >= inp.t_d:
            break
        st = tfrc.on_nofeedback_expiry(st)
        i += 1
    return NfiTimeline(tuple(steps), packets)


def compare_timelines(expected: NfiTimeline, actual: NfiTimeline) -> Optional[int]:
    """Index of the first NFI where the two timelines differ, or None when identical."""
    for a, b in zip(expected.steps, actual.steps):
        if a.rate != b.rate or a.duration != b.duration or a.cumulative_packets != b.cumulative_packets:
            return a.index
    if len(expected.steps) != len(actual.steps):
        return min(len(expected.steps), len(actual.steps))
    if expected.packets != actual.packets:
        return len(expected.steps) - 1
    return None


# ---------------------------------------------------------------------------
# After reconnection
# ---------------------------------------------------------------------------

def delta_p_min(delta_n_pkts: float, p_prev: float, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    """Largest possible drop in p after ``delta_n_pkts`` loss-free packets (always <= 0)."""
    if not 0.0 < p_prev <= 1.0:
        raise ModelDomainError(f"previous loss event rate must lie in (0, 1], got {p_prev}")
    if delta_n_pkts < 0:
        raise ModelDomainError(f"packet count must be non-negative, got {delta_n_pkts}")
    total = math.fsum(weights)
    return total / (weights[0] * delta_n_pkts + total / p_prev) - p_prev


def rtt_closed_form(i: int, r_old: float, r_new: float, q: float = 0.9) -> float:
    """RTT estimate after ``i`` samples of R_new starting from R_old."""
    if i < 0:
        raise ModelDomainError(f"sample count must be non-negative, got {i}")
    decay = q ** i
    return (1.0 - decay) * r_new + decay * r_old


def rtts_to_converge(r_old: float, r_new: float, eps: float, q: float = 0.9) -> int:
    """Samples until the estimate is within ``eps`` seconds of R_new."""
    if eps <= 0:
        raise ModelDomainError(f"eps must be positive, got {eps}")
    gap = abs(r_old - r_new)
    if eps >= gap:
        return 0
    return math.ceil((math.log(eps) - math.log(gap)) / math.log(q))


def rate_after_reconnect(i: int, inp: ModelInputs) -> float:
    """Equation rate after ``i`` RTT samples on the new path, p held at p_r."""
    return inp.x_d * inp.r_old / rtt_closed_form(i, inp.r_old, inp.r_new, inp.q)


def idle_time(x_c: float, s: float) -> float:
    """Mean wait for the first packet after reconnecting at rate ``x_c``."""
    if x_c <= 0:
        raise ModelDomainError(f"rate at reconnection must be positive, got {x_c}")
    return s / (2.0 * x_c)


def slow_start_growth(n: float, ratio: float, q: float = 0.9) -> float:
    """Rate multiplier after ``n`` slow-start RTTs when R_new/R_old = ``ratio``."""
    return ratio * 2.0 ** n + (1.0 - ratio) * (2.0 * q) ** n


def solve_nss(inp: ModelInputs, x_c: float) -> int:
    """
    Number of slow-start RTTs needed to climb from ``x_c`` back to X_d.

    Newton-Raphson on the log of the growth inequality from n = 10, then
    settled on the smallest integer satisfying it.

    Raises:
        ConvergenceError: If Newton-Raphson does not converge
    """
    if x_c <= 0:
        raise ModelDomainError(f"rate at reconnection must be positive, got {x_c}")
    target = inp.x_d / x_c
    if target <= 1.0:
        return 0
    ratio = inp.r_new / inp.r_old
    q = inp.q
    log_target = math.log(target)
    log_two = math.log(2.0)
    log_q = math.log(q)

    def gap(n: float) -> float:
        return n * log_two + math.log(ratio + (1.0 - ratio) * q ** n) - log_target

    def slope(n: float) -> float:
        decay = q ** n
        return log_two + (1.0 - ratio) * log_q * decay / (ratio + (1.0 - ratio) * decay)

    # Below 0 the curve continues along its tangent at 0.
    def gap_ext(n: float) -> float:
        return gap(n) if n >= 0 else gap(0.0) + slope(0.0) * n

    def slope_ext(n: float) -> float:
        return slope(max(n, 0.0))

    estimate = newton_root(gap_ext, NEWTON_START, fprime=slope_ext, maxiter=NEWTON_MAX_ITER)
    if not math.isfinite(estimate):
        raise ConvergenceError(f"slow-start length diverged for X_d/X_c={target}")

    n_ss = max(0, math.ceil(estimate))
    while n_ss > 0 and slow_start_growth(n_ss - 1, ratio, q) >= target:
        n_ss -= 1
    while slow_start_growth(n_ss, ratio, q) < target:
        n_ss += 1
    return n_ss


def slow_start_packets(inp: ModelInputs, x_c: float, n_ss: int) -> float:
    """Packets sent over the slow-start RTTs, rates capped at X_d."""
    return math.fsum(
        min(math.ldexp(x_c, i), inp.x_d) * inp.r_new / inp.s for i in range(n_ss + 1)
    )


def wasted_capacity(inp: ModelInputs, x_c: float, n_ss: Optional[int] = None) -> float:
    """
    Packets that could have been sent during idle time and slow-start on a
    link of the same capacity. Unfloored.
    """
    if n_ss is None:
        n_ss = solve_nss(inp, x_c)
    t_idle = idle_time(x_c, inp.s)
    shortfall = math.fsum(
        inp.r_new * max(inp.x_d - math.ldexp(x_c, i), 0.0) for i in range(n_ss + 1)
    )
    return (t_idle * inp.x_d + shortfall) / inp.s


def recovery_time(inp: ModelInputs, n_pkts_ss: float) -> float:
    """Time until the open loss interval outweighs the old history; 0 when it already does."""
    if inp.p_r <= 0:
        raise ModelDomainError("recovery needs a loss history (p_r > 0)")
    remaining = 1.0 / inp.p_r - n_pkts_ss
    if remaining <= 0:
        return 0.0
    return inp.s / inp.x_d * remaining


def growth_rates(inp: ModelInputs, rtt_offset: int = 0) -> List[float]:
    """
    Rates per RTT after recovery on a faster link, until X_max is reached.

    p decays by at most ``delta_p_min`` of the packets sent since recovery
    ended; the rate at most doubles per RTT.
    """
    x_max = inp.achievable_rate
    rates = [inp.x_d]
    sent = 0.0
    rtt = rtt_closed_form(rtt_offset, inp.r_old, inp.r_new, inp.q)
    while rates[-1] < x_max:
        if len(rates) > MAX_GROWTH_STEPS:
            logger.warning(f"Rate growth stopped after {MAX_GROWTH_STEPS} RTTs below X_max={x_max}")
            break
        sent += rates[-1] * rtt / inp.s
        rtt = rtt_closed_form(rtt_offset + len(rates), inp.r_old, inp.r_new, inp.q)
        p = inp.p_r + delta_p_min(sent, inp.p_r, inp.weights)
        rate = tfrc.throughput_equation(p, rtt, inp.s, 4.0 * rtt)
        rates.append(min(rate, 2.0 * rates[-1]))
    return rates


def extra_wasted(inp: ModelInputs, x_c: float, n_ss: int, t_idle: float, t_recov: float) -> float:
    """
    Additional packets a faster link could have carried while the sender
    idles, slow-starts, recovers and then grows toward X_max. Unfloored.
    """
    x_max = inp.achievable_rate
    if x_max <= inp.x_d:
        return 0.0
    t_ss = (n_ss + 1) * inp.r_new
    flat = (x_max - inp.x_d) * (t_idle + t_ss + t_recov) / inp.s
    offset = n_ss + 1 + math.ceil(t_recov / inp.r_new)
    rates = growth_rates(inp, rtt_offset=offset)
    climb = math.fsum(max(x_max - rate, 0.0) for rate in rates)
    return flat + inp.r_new / inp.s * climb


def handover_delay(r_new: float) -> float:
    """Disconnection length of a break-before-make handover onto a path with RTT ``r_new``."""
    if r_new <= 0:
        raise ModelDomainError(f"RTT must be positive, got {r_new}")
    return HANDOVER_BASE_DELAY + r_new


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def handover_inputs(
    source: TechnologyProfile,
    target: TechnologyProfile,
    s: int = 500,
    epsilon: float = 0.05,
    q: float = 0.9,
    t_mbi: float = 64.0
) -> ModelInputs:
    """Model inputs for a handover between two stationary technology profiles."""
    p_r = tfrc.invert_throughput(source.stationary_x_recv, source.stationary_rtt, s).p
    return ModelInputs(
        x_d=source.stationary_x_recv,
        r_old=source.stationary_rtt,
        r_new=target.stationary_rtt,
        s=s,
        t_d=handover_delay(target.stationary_rtt),
        p_r=p_r,
        x_max=target.stationary_x_recv,
        q=q,
        t_mbi=t_mbi,
        epsilon=epsilon,
    )


def full_model(inp: ModelInputs, check_oracle: bool = True) -> ModelOutputs:
    """
    Evaluate every model quantity for one disconnection.

    Args:
        inp: Model parameters
        check_oracle: Replay the disconnection through the step oracle and
            refuse to return a result that disagrees with the closed forms

    Returns:
        ModelOutputs with counts floored once at the end

    Raises:
        OracleMismatchError: If the closed-form NFI trace and the oracle differ
    """
    n_r_eps = rtts_to_converge(inp.r_old, inp.r_new, inp.epsilon, inp.q)
    if inp.t_d == 0:
        return ModelOutputs(
            n_lost=0, t_idle=0.0, n_ss=0, n_wasted=0, t_recov=0.0,
            n_wasted_prime=0, n_r_eps=n_r_eps, x_c=inp.x_d, table_wasted=0,
        )

    timeline = closed_form_timeline(inp)
    if check_oracle:
        oracle = simulate_nfi_timeline(inp)
        index = compare_timelines(timeline, oracle)
        if index is not None:
            raise OracleMismatchError(
                index,
                f"closed form gives X={_step_rate(timeline, index)}, "
                f"oracle gives X={_step_rate(oracle, index)}",
            )

    x_c = timeline.reconnect_rate
    t_idle = idle_time(x_c, inp.s)
    n_ss = solve_nss(inp, x_c)
    wasted = wasted_capacity(inp, x_c, n_ss=n_ss)
    t_recov = recovery_time(inp, slow_start_packets(inp, x_c, n_ss))
    extra = extra_wasted(inp, x_c, n_ss, t_idle, t_recov)
    table_wasted = 0 if inp.achievable_rate < inp.x_d else math.floor(wasted + extra)
    logger.debug(f"Model X_d={inp.x_d} t_D={inp.t_d}: n_lost={timeline.n_lost}, X_c={x_c}, n_ss={n_ss}")

    return ModelOutputs(
        n_lost=timeline.n_lost,
        t_idle=t_idle,
        n_ss=n_ss,
        n_wasted=math.floor(wasted),
        t_recov=t_recov,
        n_wasted_prime=math.floor(extra),
        n_r_eps=n_r_eps,
        x_c=x_c,
        table_wasted=table_wasted,
        nfi_trace=timeline.steps,
    )


def _step_rate(timeline: NfiTimeline, index: int) -> Optional[float]:
    if index < len(timeline.steps):
        return timeline.steps[index].rate
    return None


def validate_inputs(values: dict) -> ModelInputs:
    """Build ModelInputs from loosely typed values, naming the offending field."""
    coerced = {}
    for key, value in values.items():
        if value is None:
            continue
        try:
            coerced[key] = int(value) if key == 's' else float(value)
        except (TypeError, ValueError) as e:
            raise ModelInputError(key, f"not a number: {value!r}") from e
    return ModelInputs(**coerced)
