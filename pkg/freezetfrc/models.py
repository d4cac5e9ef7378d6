"""
Domain types: rate-control state, loss history, feedback, model parameters,
scenario and trace records, experiment results.
"""
import math
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum
from typing import Any, Deque, Dict, List, NamedTuple, Optional, Tuple

from freezetfrc.errors import ModelInputError, ScenarioConfigError

# Loss-interval weights w_0..w_7; the history holds one more interval (i_0..i_8).
DEFAULT_WEIGHTS: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.8, 0.6, 0.4, 0.2)


class RateControlPhase(Enum):
    SLOW_START = 'slow_start'
    CONGESTION_AVOIDANCE = 'congestion_avoidance'


class SenderPhase(Enum):
    NORMAL = 'normal'
    FROZEN = 'frozen'
    RESTORING = 'restoring'
    PROBING = 'probing'
    CLOSED = 'closed'


class ReceiverPhase(Enum):
    NORMAL = 'normal'
    RESTORATION = 'restoration'
    PROBED = 'probed'
    RECOVERY = 'recovery'


class OptionKind(IntEnum):
    """Option type codes carried in the packet option area.

    FREEZE/UNFREEZE are connection-level; RESTORING/PROBING/UNFROZEN are
    rate-control level. See OPTIONS.md for the byte layout.
    """
    FREEZE = 40
    UNFREEZE = 41
    RESTORING = 200
    PROBING = 201
    UNFROZEN = 202


@dataclass(frozen=True)
class SignalOption:
    kind: OptionKind
    repeat_budget: int = 1


@dataclass(frozen=True)
class Feedback:
    """Receiver report, sent roughly once per RTT."""
    p: float
    x_recv: float
    t_sent: float
    rtt_sample: Optional[float] = None
    ts_echo: Optional[float] = None
    t_delay: float = 0.0
    options: Tuple[OptionKind, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ModelInputError('p', f"loss event rate {self.p} outside [0, 1]")
        if self.x_recv < 0:
            raise ModelInputError('x_recv', f"receive rate {self.x_recv} is negative")


@dataclass(frozen=True)
class LossIntervalHistory:
    """i_0 (current, open interval) followed by i_1..i_n (closed intervals)."""
    intervals: Tuple[float, ...] = (0.0,) * (len(DEFAULT_WEIGHTS) + 1)
    weights: Tuple[float, ...] = DEFAULT_WEIGHTS
    seq_cursor: int = -1
    loss_event_anchor: Optional[float] = None
    loss_events: int = 0

    @property
    def has_loss(self) -> bool:
        return self.loss_events > 0


@dataclass(frozen=True)
class FreezePhase:
    sender_phase: SenderPhase = SenderPhase.NORMAL
    receiver_phase: ReceiverPhase = ReceiverPhase.NORMAL
    saved_x_recv: Optional[float] = None
    p_prev: float = 0.0
    probe_entry_rate: Optional[float] = None
    unfreeze_budget: int = 0


@dataclass(frozen=True)
class TfrcSenderState:
    """Sender side of one rate-controlled flow.

    ``x_recv`` is the cached receiver rate; ``x_bps`` the last rate given by
    the throughput equation; ``r_est`` is None until the first RTT sample.
    """
    x: float
    x_recv: float
    r_est: Optional[float]
    t_rto: float
    s: int = 500
    p_last: float = 0.0
    phase: RateControlPhase = RateControlPhase.SLOW_START
    t_mbi: float = 64.0
    q: float = 0.9
    x_bps: float = 0.0
    last_feedback_ts: float = -math.inf
    idle_timeout: float = 480.0
    freeze: FreezePhase = FreezePhase()

    @property
    def min_rate(self) -> float:
        return self.s / self.t_mbi

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['phase'] = self.phase.value
        data['freeze'] = {
            'sender_phase': self.freeze.sender_phase.value,
            'saved_x_recv': self.freeze.saved_x_recv,
            'p_prev': self.freeze.p_prev,
            'probe_entry_rate': self.freeze.probe_entry_rate,
        }
        return data


@dataclass
class TfrcReceiverState:
    """Receiver side of one rate-controlled flow (mutated in place)."""
    s: int = 500
    history: LossIntervalHistory = field(default_factory=LossIntervalHistory)
    rtt: Optional[float] = None
    t_mbi: float = 64.0
    last_arrival: Optional[float] = None
    last_sender_ts: Optional[float] = None
    arrivals: Deque[Tuple[float, int]] = field(default_factory=deque)
    window_bytes: int = 0
    packets_received: int = 0
    packets_since_feedback: int = 0
    new_loss_pending: bool = False
    last_feedback_time: Optional[float] = None
    duplicates: int = 0
    freeze: FreezePhase = FreezePhase()
    restoration_start: Optional[float] = None
    unfrozen_ready: bool = False
    missing_option_count: int = 0
    option_absence_threshold: int = 1
    pending_options: List[SignalOption] = field(default_factory=list)

    @property
    def phase(self) -> ReceiverPhase:
        return self.freeze.receiver_phase


# ---------------------------------------------------------------------------
# Analytic model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelInputs:
    x_d: float
    r_old: float
    r_new: float
    s: int = 500
    t_d: float = 0.0
    p_r: float = 1e-4
    x_max: Optional[float] = None
    q: float = 0.9
    t_mbi: float = 64.0
    epsilon: float = 0.05
    weights: Tuple[float, ...] = DEFAULT_WEIGHTS

    def __post_init__(self):
        for name in ('x_d', 'r_old', 'r_new', 's', 't_mbi', 'epsilon'):
            value = getattr(self, name)
            if not value > 0:
                raise ModelInputError(name, f"must be positive, got {value}")
        if self.t_d < 0:
            raise ModelInputError('t_d', f"must be non-negative, got {self.t_d}")
        if not 0.0 < self.p_r <= 1.0:
            raise ModelInputError('p_r', f"must lie in (0, 1], got {self.p_r}")
        if not 0.0 < self.q < 1.0:
            raise ModelInputError('q', f"must lie in (0, 1), got {self.q}")
        if self.x_max is not None and not self.x_max > 0:
            raise ModelInputError('x_max', f"must be positive, got {self.x_max}")
        if self.x_d < self.s / self.t_mbi:
            raise ModelInputError('x_d', f"below the one-packet-per-t_mbi floor {self.s / self.t_mbi}")

    @property
    def achievable_rate(self) -> float:
        return self.x_d if self.x_max is None else self.x_max


class NfiStep(NamedTuple):
    """One no-feedback interval: index, rate, duration, start and volume so far."""
    index: int
    rate: float
    duration: float
    start: float
    cumulative_packets: float


@dataclass(frozen=True)
class NfiTimeline:
    steps: Tuple[NfiStep, ...]
    packets: float

    @property
    def n_lost(self) -> int:
        return int(math.floor(self.packets))

    @property
    def reconnect_rate(self) -> float:
        return self.steps[-1].rate


@dataclass(frozen=True)
class ModelOutputs:
    n_lost: int
    t_idle: float
    n_ss: int
    n_wasted: int
    t_recov: float
    n_wasted_prime: int
    n_r_eps: int
    x_c: float
    table_wasted: int
    nfi_trace: Tuple[NfiStep, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('nfi_trace')
        data['n_nfi'] = len(self.nfi_trace)
        return data


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class FlowKind(Enum):
    TFRC = 'tfrc'
    RENO = 'reno'


class Variant(Enum):
    STANDARD = 'standard'
    FREEZE = 'freeze'


@dataclass(frozen=True)
class LinkSpec:
    capacity: float            # bits/s
    one_way_delay: float       # s
    queue_capacity: int = 50   # packets

    def __post_init__(self):
        if not self.capacity > 0:
            raise ModelInputError('capacity', f"must be positive, got {self.capacity}")
        if self.one_way_delay < 0:
            raise ModelInputError('one_way_delay', f"must be non-negative, got {self.one_way_delay}")
        if self.queue_capacity < 1:
            raise ModelInputError('queue_capacity', f"must be at least 1, got {self.queue_capacity}")

    def serialization_time(self, size: int) -> float:
        return size * 8.0 / self.capacity


@dataclass(frozen=True)
class StartFlow:
    t: float
    flow: str
    kind: FlowKind = FlowKind.TFRC


@dataclass(frozen=True)
class Disconnect:
    t: float


@dataclass(frozen=True)
class Reconnect:
    t: float
    link: LinkSpec


@dataclass(frozen=True)
class Reparameterize:
    t: float
    link: LinkSpec


@dataclass(frozen=True)
class Freeze:
    t: float
    flow: str
    remote: bool = False


@dataclass(frozen=True)
class Unfreeze:
    t: float
    flow: str
    remote: bool = False


@dataclass(frozen=True)
class HandoverSpec:
    """A handover placed relative to the moment the monitored flow is stationary."""
    flow: str
    t_ho: float
    to_link: LinkSpec
    variant: Variant = Variant.STANDARD
    jitter_rtts: float = 4.0
    remote: bool = False
    run_after: float = 100.0
    unfreeze_delay: float = 1e-4


@dataclass(frozen=True)
class Scenario:
    """sender -- router -- receiver chain; the router-receiver hop is the wireless link."""
    wireless: LinkSpec
    events: Tuple[Any, ...]
    seed: int = 0
    duration: float = 120.0
    wired: LinkSpec = LinkSpec(100e6, 0.001, 50)
    segment_size: int = 500
    handover: Optional[HandoverSpec] = None
    record_packets: bool = True

    @property
    def flows(self) -> Dict[str, FlowKind]:
        return {ev.flow: ev.kind for ev in self.events if isinstance(ev, StartFlow)}

    def validate(self) -> None:
        """Check ordering and references before anything runs."""
        flows = self.flows
        if not flows:
            raise ScenarioConfigError("scenario starts no flow")
        previous = -math.inf
        connected = True
        for ev in self.events:
            if ev.t <= previous:
                raise ScenarioConfigError(f"events not strictly time-ordered at t={ev.t}")
            previous = ev.t
            if isinstance(ev, (Freeze, Unfreeze)):
                if ev.flow not in flows:
                    raise ScenarioConfigError(f"event at t={ev.t} references unknown flow '{ev.flow}'")
                if flows[ev.flow] is not FlowKind.TFRC:
                    raise ScenarioConfigError(f"flow '{ev.flow}' cannot be frozen (kind {flows[ev.flow].value})")
            elif isinstance(ev, Disconnect):
                if not connected:
                    raise ScenarioConfigError(f"disconnect at t={ev.t} while already disconnected")
                connected = False
            elif isinstance(ev, Reconnect):
                if connected:
                    raise ScenarioConfigError(f"reconnect at t={ev.t} without a preceding disconnect")
                connected = True
        if self.handover is not None and self.handover.flow not in flows:
            raise ScenarioConfigError(f"handover references unknown flow '{self.handover.flow}'")
        if self.duration <= 0:
            raise ScenarioConfigError(f"duration must be positive, got {self.duration}")


class TraceKind(Enum):
    SEND = 'send'
    DELIVER = 'deliver'
    DROP_QUEUE = 'drop_queue'
    DROP_DISCONNECTED = 'drop_disconnected'
    FEEDBACK_SENT = 'feedback_sent'
    STATE_TRANSITION = 'state_transition'
    RATE_CHANGE = 'rate_change'
    LINK_DOWN = 'link_down'
    LINK_UP = 'link_up'


class TraceRecord(NamedTuple):
    t: float
    kind: TraceKind
    flow: str
    seqno: int
    value: float
    detail: str = ''


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TechnologyProfile:
    name: str
    capacity: float          # downlink, bits/s
    rtt: float               # average RTT, s
    stationary_x_recv: float  # bytes/s observed in the stationary phase
    stationary_rtt: float     # s

    def link_spec(self, queue_capacity: int = 50) -> LinkSpec:
        return LinkSpec(self.capacity, self.rtt / 2.0, queue_capacity)


@dataclass(frozen=True)
class HandoverResult:
    variant: Variant
    from_tech: str
    to_tech: str
    seed: int
    n_lost: float
    n_wasted: float
    fairness_ratio: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'variant': self.variant.value,
            'from': self.from_tech,
            'to': self.to_tech,
            'seed': self.seed,
            'n_lost': self.n_lost,
            'n_wasted': self.n_wasted,
            'fairness': self.fairness_ratio,
        }


@dataclass
class RunConfig:
    """One command-line invocation after its flags are resolved against the settings."""
    command: str
    output: Optional[str] = None
    inputs: List[str] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])
    overrides: Dict[str, Any] = field(default_factory=dict)
    verbosity: int = 0

    def __post_init__(self):
        if self.command not in ('model', 'oracle', 'sim', 'sweep', 'fairness'):
            raise ModelInputError('command', f"unknown command '{self.command}'")
        if self.command in ('sim', 'sweep', 'fairness') and not self.seeds:
            raise ModelInputError('seeds', "at least one seed is required")
        if self.output and not _writable(self.output):
            raise ModelInputError('output', f"cannot write to '{self.output}'")

    @property
    def log_level(self) -> str:
        if self.verbosity <= 0:
            return 'WARNING'
        return 'INFO' if self.verbosity == 1 else 'DEBUG'


def _writable(path: str) -> bool:
    # Walk up to the closest existing path; it must be a writable directory
    # unless it is the target file itself.
    target = os.path.abspath(path)
    candidate = target
    while not os.path.exists(candidate):
        parent = os.path.dirname(candidate)
        if parent == candidate:
            return False
        candidate = parent
    if os.path.isdir(candidate):
        return os.access(candidate, os.W_OK | os.X_OK)
    return candidate == target and os.access(candidate, os.W_OK)
