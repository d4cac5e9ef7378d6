"""
Scenario builders for the handover matrix, fairness runs and steady single-link runs.
"""
import logging
from typing import Any, Dict, Optional, Union

from freezetfrc import create_app
from freezetfrc.models import FlowKind, HandoverSpec, LinkSpec, Scenario, StartFlow, Variant
from freezetfrc.services.analytic_model import handover_delay
from scenarios.profiles import get_profile

logger = logging.getLogger(__name__)

TFRC_FLOW = 'tfrc'
RENO_FLOW = 'tcp'
# The competing Reno flow joins slightly after the rate-controlled one.
RENO_START = 0.5


def _variant(variant: Union[str, Variant]) -> Variant:
    return variant if isinstance(variant, Variant) else Variant(variant.lower())


def _wired(settings: Dict[str, Any]) -> LinkSpec:
    return LinkSpec(settings['WIRED_CAPACITY'], settings['WIRED_DELAY'], settings['QUEUE_CAPACITY'])


def build_handover_scenario(
    from_tech: str,
    to_tech: str,
    variant: Union[str, Variant] = Variant.STANDARD,
    seed: int = 0,
    settings: Optional[Dict[str, Any]] = None,
    remote: bool = False,
    run_after: Optional[float] = None
) -> Scenario:
    """
    One rate-controlled flow on ``from_tech`` handed over to ``to_tech``.

    The handover is placed once the flow is stationary; the disconnection
    lasts ``handover_delay`` of the target technology's stationary RTT.
    """
    settings = settings or create_app()
    source = get_profile(from_tech)
    target = get_profile(to_tech)
    queue = settings['QUEUE_CAPACITY']
    handover = HandoverSpec(
        flow=TFRC_FLOW,
        t_ho=handover_delay(target.stationary_rtt),
        to_link=target.link_spec(queue),
        variant=_variant(variant),
        jitter_rtts=settings['HANDOVER_JITTER_RTTS'],
        remote=remote,
        run_after=settings['SETTLEMENT_CAP'] if run_after is None else run_after,
    )
    logger.debug(f"Handover {source.name} -> {target.name} ({handover.variant.value}), "
                 f"t_ho={handover.t_ho:.2f} s, seed={seed}")
    return Scenario(
        wireless=source.link_spec(queue),
        events=(StartFlow(0.0, TFRC_FLOW, FlowKind.TFRC),),
        seed=seed,
        duration=settings['STATIONARITY_MAX_TIME'],
        wired=_wired(settings),
        segment_size=settings['SEGMENT_SIZE'],
        handover=handover,
        record_packets=False,
    )


def build_fairness_scenario(
    from_tech: str,
    to_tech: str,
    variant: Union[str, Variant] = Variant.FREEZE,
    seed: int = 0,
    settings: Optional[Dict[str, Any]] = None
) -> Scenario:
    """Handover scenario with a Reno flow sharing the bottleneck throughout."""
    settings = settings or create_app()
    run_after = settings['FAIRNESS_SETTLE'] + settings['FAIRNESS_WINDOW'] + 1.0
    base = build_handover_scenario(from_tech, to_tech, variant, seed, settings, run_after=run_after)
    events = base.events + (StartFlow(RENO_START, RENO_FLOW, FlowKind.RENO),)
    return Scenario(
        wireless=base.wireless,
        events=events,
        seed=seed,
        duration=base.duration,
        wired=base.wired,
        segment_size=base.segment_size,
        handover=base.handover,
        record_packets=False,
    )


def build_steady_scenario(
    tech: str,
    duration: float = 120.0,
    seed: int = 0,
    settings: Optional[Dict[str, Any]] = None,
    kinds: tuple = (FlowKind.TFRC,),
    record_packets: bool = True
) -> Scenario:
    """Flows of the given kinds on one technology and no link events."""
    settings = settings or create_app()
    events = tuple(
        StartFlow(i * RENO_START, f"{kind.value}{i}", kind)
        for i, kind in enumerate(kinds)
    )
    return Scenario(
        wireless=get_profile(tech).link_spec(settings['QUEUE_CAPACITY']),
        events=events,
        seed=seed,
        duration=duration,
        wired=_wired(settings),
        segment_size=settings['SEGMENT_SIZE'],
        record_packets=record_packets,
    )
