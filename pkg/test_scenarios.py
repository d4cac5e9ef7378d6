"""
Tests for technology profiles, scenario builders and trace metrics.
"""
import pytest

from freezetfrc.errors import MetricsError, UnknownTechnologyError
from freezetfrc.models import FlowKind, TraceKind, Variant
from scenarios import metrics
from scenarios.builder import (
    RENO_FLOW,
    TFRC_FLOW,
    build_fairness_scenario,
    build_handover_scenario,
    build_steady_scenario,
)
from scenarios.profiles import MATRIX_ORDER, get_profile, technology_pairs
from simnet.trace import Trace


def _handover_trace(backoff=True):
    """Flow at 1000 B/s, outage from 10 to 13 s, back to full rate at 15 s."""
    trace = Trace(bin_width=1.0)
    trace.log(0.0, TraceKind.RATE_CHANGE, 'f', value=1000.0)
    trace.log(10.0, TraceKind.LINK_DOWN)
    if backoff:
        trace.log(10.5, TraceKind.RATE_CHANGE, 'f', value=500.0)
        trace.log(11.0, TraceKind.RATE_CHANGE, 'f', value=250.0)
        trace.log(12.0, TraceKind.RATE_CHANGE, 'f', value=100.0)
    trace.log(13.0, TraceKind.LINK_UP)
    trace.log(15.0, TraceKind.RATE_CHANGE, 'f', value=1000.0)
    trace.end_time = 30.0
    return trace


class TestProfiles:
    """Test the built-in technologies."""

    def test_lookup_is_case_insensitive(self):
        """Test profile lookup."""
        assert get_profile('UMTS').capacity == 384e3
        assert get_profile(' 802.11g ').rtt == 0.02

    def test_unknown_technology(self):
        """Test that unknown names raise a KeyError subclass."""
        with pytest.raises(UnknownTechnologyError) as exc:
            get_profile('lte')
        assert isinstance(exc.value, KeyError)
        assert 'lte' in str(exc.value)

    def test_matrix(self):
        """Test the 4x4 matrix in row-major order."""
        pairs = technology_pairs()
        assert len(pairs) == 16
        assert pairs[0] == ('umts', 'umts')
        assert pairs[-1] == ('802.11g', '802.11g')
        assert [dst for src, dst in pairs[:4]] == MATRIX_ORDER

    def test_link_spec(self):
        """Test the link derived from a profile."""
        spec = get_profile('802.16').link_spec(20)
        assert spec.capacity == 9.5e6
        assert spec.one_way_delay == pytest.approx(0.04)
        assert spec.queue_capacity == 20


class TestBuilders:
    """Test scenario construction."""

    def test_handover_scenario(self, settings):
        """Test the 802.11b to UMTS handover."""
        scenario = build_handover_scenario('802.11b', 'umts', Variant.FREEZE, seed=4, settings=settings)
        assert scenario.handover.t_ho == pytest.approx(3.46)
        assert scenario.handover.variant is Variant.FREEZE
        assert scenario.handover.to_link.capacity == 384e3
        assert scenario.handover.run_after == settings['SETTLEMENT_CAP']
        assert scenario.wireless.capacity == 11e6
        assert scenario.seed == 4
        assert scenario.flows == {TFRC_FLOW: FlowKind.TFRC}
        scenario.validate()

    def test_variant_from_string(self, settings):
        """Test that variants may be given by name."""
        scenario = build_handover_scenario('umts', '802.11g', 'Standard', settings=settings)
        assert scenario.handover.variant is Variant.STANDARD
        assert scenario.handover.t_ho == pytest.approx(2.54)

    def test_fairness_scenario(self, settings):
        """Test that a Reno flow joins the handover scenario."""
        scenario = build_fairness_scenario('802.11b', '802.11g', settings=settings)
        assert scenario.flows == {TFRC_FLOW: FlowKind.TFRC, RENO_FLOW: FlowKind.RENO}
        assert scenario.handover.variant is Variant.FREEZE
        expected = settings['FAIRNESS_SETTLE'] + settings['FAIRNESS_WINDOW'] + 1.0
        assert scenario.handover.run_after == expected

    def test_steady_scenario(self, settings):
        """Test several flows on one technology."""
        scenario = build_steady_scenario('umts', 60.0, settings=settings, kinds=(FlowKind.TFRC, FlowKind.RENO))
        assert scenario.flows == {'tfrc0': FlowKind.TFRC, 'reno1': FlowKind.RENO}
        assert scenario.handover is None
        assert scenario.events[1].t == 0.5


class TestMetrics:
    """Test metrics on hand-built traces."""

    def test_handover_window(self):
        """Test the outage boundaries."""
        assert metrics.handover_window(_handover_trace()) == (10.0, 13.0)

    def test_no_handover(self):
        """Test that metrics refuse a trace without an outage."""
        with pytest.raises(MetricsError):
            metrics.measure_losses(Trace())

    def test_losses(self):
        """Test that only data drops inside the outage count."""
        trace = _handover_trace()
        trace.log(11.0, TraceKind.DROP_DISCONNECTED, 'f', 5, 500)
        trace.log(12.0, TraceKind.DROP_QUEUE, 'f', 6, 500)
        trace.log(12.5, TraceKind.DROP_DISCONNECTED, 'f', -1, 40)
        trace.log(20.0, TraceKind.DROP_QUEUE, 'f', 9, 500)
        trace.log(11.0, TraceKind.DROP_DISCONNECTED, 'g', 1, 500)
        assert metrics.measure_losses(trace, 'f') == 2
        assert metrics.measure_losses(trace) == 3

    def test_wasted_after_slow_restoration(self):
        """Test the unused capacity integral."""
        wasted = metrics.measure_wasted(_handover_trace(), 1000.0, 'f', s=500)
        assert wasted == pytest.approx((1000.0 - 100.0) * 2.0 / 500)

    def test_wasted_on_instant_restoration(self):
        """Test that a rate kept across the outage wastes nothing."""
        assert metrics.measure_wasted(_handover_trace(backoff=False), 1000.0, 'f') == 0.0

    def test_wasted_capped(self):
        """Test the integration cap."""
        wasted = metrics.measure_wasted(_handover_trace(), 1000.0, 'f', s=500, cap=1.0)
        assert wasted == pytest.approx(900.0 / 500)

    def test_wasted_without_rate_records(self):
        """Test a flow that never reported a rate."""
        with pytest.raises(MetricsError):
            metrics.measure_wasted(_handover_trace(), 1000.0, 'ghost')

    def test_settlement_time(self):
        """Test time to reach the reference rate."""
        assert metrics.settlement_time(_handover_trace(), 'f', 1000.0) == 2.0
        assert metrics.settlement_time(_handover_trace(), 'f', 5000.0) is None

    def test_rate_halvings(self):
        """Test counting rate cuts during the outage."""
        assert metrics.rate_halvings(_handover_trace(), 'f') == 3
        assert metrics.rate_halvings(_handover_trace(backoff=False), 'f') == 0

    def test_freeze_milestones(self):
        """Test the rate before freezing and the first rate after."""
        trace = _handover_trace(backoff=False)
        trace.log(9.5, TraceKind.STATE_TRANSITION, 'f', detail='normal->frozen')
        trace.log(9.5, TraceKind.RATE_CHANGE, 'f', value=0.0)
        trace.log(13.0001, TraceKind.STATE_TRANSITION, 'f', detail='frozen->restoring')
        trace.log(13.0001, TraceKind.RATE_CHANGE, 'f', value=1000.0)
        trace.records.sort(key=lambda rec: rec.t)
        assert metrics.rate_before_freeze(trace, 'f') == 1000.0
        assert metrics.first_rate_after_unfreeze(trace, 'f') == (13.0001, 1000.0)

    def test_restoring_milestones(self):
        """Test the end of restoration and the rates held until then."""
        trace = _handover_trace(backoff=False)
        trace.log(9.5, TraceKind.STATE_TRANSITION, 'f', detail='normal->frozen')
        trace.log(13.0001, TraceKind.STATE_TRANSITION, 'f', detail='frozen->restoring')
        trace.log(13.0001, TraceKind.RATE_CHANGE, 'f', value=1000.0)
        trace.log(14.0, TraceKind.STATE_TRANSITION, 'f', detail='restoring->probing')
        trace.log(14.5, TraceKind.RATE_CHANGE, 'f', value=2000.0)
        trace.records.sort(key=lambda rec: rec.t)
        assert metrics.restoring_exit(trace, 'f').t == 14.0
        assert metrics.restoring_exit(trace, 'f').detail == 'restoring->probing'
        assert metrics.rates_while_restoring(trace, 'f') == [1000.0]

    def test_never_frozen(self):
        """Test milestones on a flow that never froze."""
        with pytest.raises(MetricsError):
            metrics.rate_before_freeze(_handover_trace(), 'f')
        with pytest.raises(MetricsError):
            metrics.first_rate_after_unfreeze(_handover_trace(), 'f')

    def test_idle_after_reconnect(self):
        """Test the wait for the first packet after reconnection."""
        trace = _handover_trace()
        trace.log(13.25, TraceKind.SEND, 'f', 40, 500)
        trace.records.sort(key=lambda rec: rec.t)
        assert metrics.idle_after_reconnect(trace, 'f') == pytest.approx(0.25)

    def test_idle_needs_packet_records(self):
        """Test that a trace without packet records is refused."""
        trace = _handover_trace()
        trace.record_packets = False
        with pytest.raises(MetricsError):
            metrics.idle_after_reconnect(trace, 'f')


class TestFairnessRatio:
    """Test the throughput share metric."""

    @pytest.fixture
    def trace(self):
        trace = Trace(bin_width=1.0)
        for t in range(40):
            trace.add_goodput('tfrc', t + 0.5, 2000)
            trace.add_goodput('tcp', t + 0.5, 1000)
        trace.end_time = 40.0
        return trace

    def test_ratio(self, trace):
        """Test the ratio over an explicit window."""
        assert metrics.fairness_ratio(trace, 'tfrc', 'tcp', start=10.0, window=20.0) == 2.0

    def test_window_past_end(self, trace):
        """Test that a window beyond the run is refused."""
        with pytest.raises(MetricsError):
            metrics.fairness_ratio(trace, 'tfrc', 'tcp', start=30.0, window=20.0)

    def test_silent_competitor(self, trace):
        """Test that a competitor that delivered nothing is refused."""
        with pytest.raises(MetricsError):
            metrics.fairness_ratio(trace, 'tfrc', 'nobody', start=10.0, window=20.0)


class TestSimulatedHandover:
    """Test handovers run end to end on the UMTS profile."""

    def test_freeze_loses_nothing(self, settings):
        """Test that the frozen flow loses no data across the handover."""
        from simnet.runner import run_scenario

        trace = run_scenario(build_handover_scenario('umts', 'umts', Variant.FREEZE, seed=1, settings=settings),
                             settings)
        assert metrics.measure_losses(trace, TFRC_FLOW) == 0
        assert metrics.rate_halvings(trace, TFRC_FLOW) == 0
        t_down, t_up = metrics.handover_window(trace)
        assert t_up - t_down == pytest.approx(3.46)
        assert trace.meta['t_disconnect'] == t_down
        assert metrics.rate_before_freeze(trace, TFRC_FLOW) > 0

    def test_freeze_lead_covers_queue_drain(self, settings):
        """Test that the freeze precedes the outage by an RTT and by the time to drain the queue."""
        from simnet.runner import run_scenario

        trace = run_scenario(build_handover_scenario('umts', 'umts', Variant.FREEZE, seed=1, settings=settings),
                             settings)
        frozen = next(rec for rec in trace.select(TraceKind.STATE_TRANSITION, TFRC_FLOW)
                      if rec.detail == 'normal->frozen')
        lead = trace.meta['t_disconnect'] - frozen.t
        link = get_profile('umts').link_spec(settings['QUEUE_CAPACITY'])
        base_rtt = 2 * (settings['WIRED_DELAY'] + link.one_way_delay)
        drain = link.queue_capacity * link.serialization_time(settings['SEGMENT_SIZE']) + base_rtt
        assert lead >= trace.meta['rtt_stationary'] - 1e-9
        assert lead >= drain - 1e-9

    def test_standard_loses_packets(self, settings):
        """Test that the standard flow keeps sending into the outage."""
        from simnet.runner import run_scenario

        trace = run_scenario(build_handover_scenario('umts', 'umts', Variant.STANDARD, seed=1, settings=settings),
                             settings)
        assert metrics.measure_losses(trace, TFRC_FLOW) > 0

    def test_calibrate_reference(self, settings):
        """Test the stationary reference rate of a lone UMTS flow."""
        result = metrics.calibrate_reference('umts', settings=settings)
        assert result.stationary
        assert 0.5 * 48000 <= result.x_recv <= 1.05 * 48000
