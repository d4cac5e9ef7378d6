"""
Tests for the discrete-event simulator: clock, links, the network path,
traces, stationarity detection and scenario files.
"""
import os

import pytest

from freezetfrc.errors import ScenarioConfigError, ScenarioParseError
from freezetfrc.models import (
    Disconnect,
    Freeze,
    LinkSpec,
    Reconnect,
    Scenario,
    StartFlow,
    TraceKind,
    Unfreeze,
)
from freezetfrc.utils.csvio import read_versioned_csv
from scenarios.metrics import (
    first_rate_after_unfreeze,
    measure_losses,
    rate_before_freeze,
    rate_halvings,
    rates_while_restoring,
    restoring_exit,
)
from simnet.engine import Simulator
from simnet.link import DATA, Link, Packet
from simnet.runner import run_scenario, stationarity_detector
from simnet.scenario_file import load_scenario, parse_duration, parse_rate, parse_scenario
from simnet.trace import Trace

SAMPLE_SCENARIO = """
# one flow, frozen across a three second outage
seed 3
duration 20
link wireless capacity=1M delay=20ms queue=50
at 0 start f1 tfrc
at 9.5 freeze f1
at 10 disconnect
at 13 reconnect capacity=384k delay=125ms
at 13.0001 unfreeze f1
"""


def _packet(seqno, size=500):
    return Packet('f', DATA, seqno, size, 0.0)


def _disconnection_scenario(freeze=False, seed=1, duration=20.0, new_link=LinkSpec(1e6, 0.02, 50)):
    events = [StartFlow(0.0, 'f')]
    if freeze:
        events.append(Freeze(9.5, 'f'))
    events += [Disconnect(10.0), Reconnect(13.0, new_link)]
    if freeze:
        events.append(Unfreeze(13.0001, 'f'))
    return Scenario(wireless=LinkSpec(1e6, 0.02, 50), events=tuple(events), seed=seed, duration=duration)


def _counts_balance(trace, flow):
    c = trace.counters[flow]
    return c['sent'] == c['delivered'] + c['drop_queue'] + c['drop_disconnected']


class TestSimulator:
    """Test the event loop."""

    def test_time_order_and_ties(self):
        """Test that events run by time, then by scheduling order."""
        sim = Simulator()
        seen = []
        sim.schedule(2.0, seen.append, 'c')
        sim.schedule(1.0, seen.append, 'a')
        sim.schedule(1.0, seen.append, 'b')
        sim.run()
        assert seen == ['a', 'b', 'c']
        assert sim.now == 2.0

    def test_cancelled_event_skipped(self):
        """Test that a cancelled event never fires."""
        sim = Simulator()
        seen = []
        sim.schedule(1.0, seen.append, 'x').cancel()
        sim.run()
        assert seen == []
        assert sim.events_processed == 0

    def test_run_until_advances_clock(self):
        """Test stopping at a horizon."""
        sim = Simulator()
        seen = []
        sim.schedule(5.0, seen.append, 'late')
        assert sim.run(until=3.0) == 3.0
        assert seen == []
        assert sim.pending == 1

    def test_cannot_schedule_in_past(self):
        """Test that the clock never goes backwards."""
        sim = Simulator()
        sim.run(until=1.0)
        with pytest.raises(ValueError):
            sim.schedule(0.5, print)


class TestLink:
    """Test one link direction."""

    @pytest.fixture
    def link(self):
        sim = Simulator()
        delivered = []
        link = Link(sim, LinkSpec(8e6, 0.01, 50), 'test', Trace())
        link.on_deliver = lambda p: delivered.append((sim.now, p.seqno))
        link.delivered = delivered
        return link

    def test_queue_overflow(self, link):
        """Test that the 51st packet into a 50-packet queue is dropped."""
        accepted = [link.transmit(_packet(i)) for i in range(51)]
        assert accepted == [True] * 50 + [False]
        assert link.trace.counters['f']['drop_queue'] == 1
        drop = link.trace.first(TraceKind.DROP_QUEUE)
        assert drop.seqno == 50

    def test_serialization_spacing(self, link):
        """Test back-to-back deliveries spaced by the serialization time."""
        for i in range(5):
            link.transmit(_packet(i))
        link.sim.run()
        times = [t for t, _ in link.delivered]
        assert times[0] == pytest.approx(0.0005 + 0.01)
        gaps = [b - a for a, b in zip(times, times[1:])]
        assert gaps == pytest.approx([0.0005] * 4)
        assert [seqno for _, seqno in link.delivered] == list(range(5))

    def test_slow_link_serialization(self):
        """Test a 384 kbit/s link."""
        assert LinkSpec(384e3, 0.125).serialization_time(500) >= 0.0104

    def test_disconnect_drops_everything(self, link):
        """Test that queued and in-flight packets are lost on disconnect."""
        for i in range(5):
            link.transmit(_packet(i))
        link.sim.run(until=0.001)
        assert link.disconnect() == 5
        assert not link.transmit(_packet(5))
        link.sim.run()
        assert link.delivered == []
        assert link.trace.counters['f']['drop_disconnected'] == 6

    def test_reconnect_with_new_spec(self, link):
        """Test that a reconnected link uses its new parameters."""
        link.disconnect()
        link.reconnect(LinkSpec(4e6, 0.05, 10))
        link.transmit(_packet(0))
        link.sim.run()
        assert link.delivered[0][0] == pytest.approx(0.001 + 0.05)


class TestNetworkRuns:
    """Test whole scenarios on the two-hop path."""

    def test_conservation(self, settings):
        """Test that every data packet sent is delivered or dropped."""
        trace = run_scenario(_disconnection_scenario(), settings)
        assert trace.counters['f']['sent'] > 0
        assert _counts_balance(trace, 'f')

    def test_no_delivery_while_disconnected(self, settings):
        """Test that nothing arrives during the outage."""
        trace = run_scenario(_disconnection_scenario(), settings)
        inside = [rec for rec in trace.select(TraceKind.DELIVER) if 10.0 < rec.t < 13.0]
        assert inside == []
        assert trace.first(TraceKind.LINK_DOWN).t == 10.0
        assert trace.first(TraceKind.LINK_UP).t == 13.0

    def test_causality(self, settings):
        """Test that each delivery follows its send by at least the path delay."""
        trace = run_scenario(Scenario(LinkSpec(1e6, 0.02, 50), (StartFlow(0.0, 'f'),), duration=5.0), settings)
        sent = {rec.seqno: rec.t for rec in trace.select(TraceKind.SEND, 'f')}
        for rec in trace.select(TraceKind.DELIVER, 'f'):
            assert rec.t >= sent[rec.seqno] + 0.021 - 1e-12

    def test_standard_flow_loses_packets(self, settings):
        """Test that an unfrozen flow keeps sending into the outage."""
        trace = run_scenario(_disconnection_scenario(), settings)
        assert measure_losses(trace, 'f') > 0
        assert rate_halvings(trace, 'f') > 0

    def test_frozen_flow_loses_nothing(self, settings):
        """Test that a flow frozen ahead of the outage loses no data."""
        trace = run_scenario(_disconnection_scenario(freeze=True), settings)
        assert measure_losses(trace, 'f') == 0
        assert rate_halvings(trace, 'f') == 0
        assert _counts_balance(trace, 'f')
        details = [rec.detail for rec in trace.select(TraceKind.STATE_TRANSITION, 'f')]
        assert 'normal->frozen' in details
        assert 'frozen->restoring' in details

    def test_restoring_survives_slower_path(self, settings):
        """Test that restoration outlasts a reconnect whose RTT exceeds the old timeout."""
        slow_link = LinkSpec(384e3, 1.0, 50)
        trace = run_scenario(_disconnection_scenario(freeze=True, new_link=slow_link), settings)
        t_unfreeze, restored = first_rate_after_unfreeze(trace, 'f')
        assert restored == rate_before_freeze(trace, 'f')
        assert set(rates_while_restoring(trace, 'f')) == {restored}
        ended = restoring_exit(trace, 'f')
        assert ended is not None
        assert ended.detail in ('restoring->probing', 'restoring->normal')
        # No report can come back before one round trip of the new path.
        assert ended.t >= t_unfreeze + 2.0

    def test_deterministic(self, settings, tmp_path):
        """Test that a scenario and seed give a byte-identical trace."""
        first = run_scenario(_disconnection_scenario(seed=7), settings)
        second = run_scenario(_disconnection_scenario(seed=7), settings)
        a = first.write_csv(str(tmp_path / 'a.csv'))
        b = second.write_csv(str(tmp_path / 'b.csv'))
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()

    def test_flow_reaches_link_rate(self, settings):
        """Test that a lone flow uses a fair part of the link."""
        trace = run_scenario(Scenario(LinkSpec(1e6, 0.02, 50), (StartFlow(0.0, 'f'),), duration=40.0), settings)
        assert trace.mean_goodput('f', 20.0, 40.0) > 0.3 * 1e6 / 8


class TestTrace:
    """Test trace queries and export."""

    def test_packet_records_optional(self):
        """Test that per-packet kinds are skipped when recording is off."""
        trace = Trace(record_packets=False)
        trace.log(0.0, TraceKind.SEND, 'f', 0, 500)
        trace.log(0.1, TraceKind.RATE_CHANGE, 'f', value=1000.0)
        assert [rec.kind for rec in trace.records] == [TraceKind.RATE_CHANGE]

    def test_goodput_bins(self):
        """Test zero-filled goodput series and window means."""
        trace = Trace(bin_width=1.0)
        trace.add_goodput('f', 0.5, 1000)
        trace.add_goodput('f', 2.2, 3000)
        trace.end_time = 4.0
        times, rates = trace.goodput_series('f')
        assert list(times) == [0.0, 1.0, 2.0, 3.0]
        assert list(rates) == [1000.0, 0.0, 3000.0, 0.0]
        assert trace.mean_goodput('f', 0.0, 4.0) == 1000.0

    def test_csv_schema_line(self, tmp_path):
        """Test that the CSV export names its schema."""
        trace = Trace()
        trace.log(1.0, TraceKind.LINK_DOWN, detail='wireless')
        path = trace.write_csv(str(tmp_path / 'trace.csv'))
        df, schema, version = read_versioned_csv(path)
        assert schema == 'trace'
        assert version == 1
        assert list(df.columns) == ['t', 'kind', 'flow', 'seqno', 'value', 'detail']

    def test_binary_log(self, tmp_path):
        """Test the compact binary log."""
        trace = Trace()
        trace.log(0.5, TraceKind.SEND, 'f', 3, 500)
        trace.log(1.0, TraceKind.LINK_DOWN)
        path = trace.write_binary(str(tmp_path / 'trace.bin'))
        records = Trace.read_binary(path)
        assert [(r.t, r.kind, r.flow, r.seqno) for r in records] == [
            (0.5, TraceKind.SEND, 'f', 3),
            (1.0, TraceKind.LINK_DOWN, '', -1),
        ]

    def test_binary_log_bad_magic(self, tmp_path):
        """Test that foreign files are refused."""
        path = tmp_path / 'junk.bin'
        path.write_bytes(b'JUNK' + bytes(12))
        with pytest.raises(ValueError):
            Trace.read_binary(str(path))


class TestStationarity:
    """Test the stationarity detector."""

    def test_constant_rate(self):
        """Test that a flat rate is stationary after two windows."""
        result = stationarity_detector([100.0] * 20, 1.0, 5.0)
        assert result.stationary
        assert result.t == 10.0
        assert result.x_recv == 100.0

    def test_square_wave(self):
        """Test that an oscillating rate never settles."""
        rates = ([100.0] * 5 + [200.0] * 5) * 4
        result = stationarity_detector(rates, 1.0, 5.0)
        assert not result.stationary
        assert result.x_recv == 0.0

    def test_ramp_then_flat(self):
        """Test detection after a warm-up ramp."""
        rates = [float(i * 10) for i in range(10)] + [100.0] * 20
        result = stationarity_detector(rates, 1.0, 5.0, tolerance=0.05)
        assert result.stationary
        assert result.t == 20.0

    def test_silent_flow(self):
        """Test that a flow that sends nothing is not stationary."""
        assert not stationarity_detector([0.0] * 20, 1.0, 5.0).stationary


class TestScenarioFile:
    """Test the scenario file format."""

    def test_units(self):
        """Test rate and time suffixes."""
        assert parse_rate('384k') == 384e3
        assert parse_rate('9.5M') == 9.5e6
        assert parse_rate('11Mbps') == 11e6
        assert parse_rate('1000') == 1000.0
        assert parse_duration('10ms') == pytest.approx(0.01)
        assert parse_duration('2s') == 2.0
        assert parse_duration('3') == 3.0

    def test_parse_sample(self):
        """Test a complete scenario."""
        scenario = parse_scenario(SAMPLE_SCENARIO)
        assert scenario.seed == 3
        assert scenario.duration == 20.0
        assert scenario.wireless == LinkSpec(1e6, 0.02, 50)
        kinds = [type(ev).__name__ for ev in scenario.events]
        assert kinds == ['StartFlow', 'Freeze', 'Disconnect', 'Reconnect', 'Unfreeze']
        reconnect = scenario.events[3]
        assert reconnect.link == LinkSpec(384e3, 0.125, 50)

    def test_handover_line(self):
        """Test a handover directive naming a technology."""
        text = "link wireless capacity=11M delay=10ms\nat 0 start f tfrc\nhandover flow=f to=umts variant=freeze"
        scenario = parse_scenario(text)
        assert scenario.handover.t_ho == pytest.approx(2.75)
        assert scenario.handover.to_link.capacity == 384e3
        assert scenario.handover.variant.value == 'freeze'

    def test_unknown_technology(self):
        """Test that an unknown technology reports its line."""
        text = "link wireless capacity=11M delay=10ms\nat 0 start f\nhandover flow=f to=lte"
        with pytest.raises(ScenarioParseError) as exc:
            parse_scenario(text)
        assert exc.value.line_no == 3

    def test_unknown_directive(self):
        """Test that errors carry the line number."""
        text = "seed 1\nlink wireless capacity=1M delay=1ms\nteleport f1\n"
        with pytest.raises(ScenarioParseError) as exc:
            parse_scenario(text, path='bad.scn')
        assert exc.value.line_no == 3
        assert str(exc.value).startswith('bad.scn:3:')

    def test_missing_wireless_link(self):
        """Test a file without a wireless link."""
        with pytest.raises(ScenarioParseError) as exc:
            parse_scenario("seed 1\n")
        assert exc.value.line_no == 0

    def test_events_out_of_order(self):
        """Test that time-ordering is checked."""
        text = "link wireless capacity=1M delay=1ms\nat 5 start f\nat 2 disconnect\n"
        with pytest.raises(ScenarioConfigError):
            parse_scenario(text)

    def test_freeze_unknown_flow(self):
        """Test references to flows that never start."""
        text = "link wireless capacity=1M delay=1ms\nat 0 start f\nat 2 freeze g\n"
        with pytest.raises(ScenarioConfigError):
            parse_scenario(text)

    def test_freeze_reno_flow(self):
        """Test that only rate-controlled flows can be frozen."""
        text = "link wireless capacity=1M delay=1ms\nat 0 start t reno\nat 2 freeze t\n"
        with pytest.raises(ScenarioConfigError):
            parse_scenario(text)

    def test_load_from_file(self, tmp_path):
        """Test reading a scenario from disk."""
        path = tmp_path / 'outage.scn'
        path.write_text(SAMPLE_SCENARIO)
        scenario = load_scenario(str(path))
        assert len(scenario.events) == 5

    def test_bundled_example(self):
        """Test that the handover example shipped with the scenarios parses."""
        path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios', 'examples', 'handover.txt')
        scenario = load_scenario(path)
        assert scenario.seed == 2
        assert scenario.wireless.capacity == 11e6
        assert scenario.wireless.one_way_delay == pytest.approx(0.01)
        assert scenario.handover.flow == 'f1'
        assert scenario.handover.variant.value == 'freeze'
        assert scenario.handover.to_link.capacity == 384e3
        assert scenario.handover.t_ho == pytest.approx(2.5 + 0.25)
