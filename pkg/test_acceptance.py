"""
End-to-end checks of the model tables and the simulated handover matrix.

The simulation checks run the full technology matrix and are marked slow;
run them with ``pytest --runslow``.
"""
import logging
import time
from dataclasses import replace

import pytest

from experiment_orchestrator import ExperimentOrchestrator, run_fairness_cell, run_handover_cell
from freezetfrc.models import Variant
from scenarios import metrics
from scenarios.builder import TFRC_FLOW, build_handover_scenario
from scenarios.profiles import MATRIX_ORDER, get_profile, technology_pairs
from simnet.runner import run_scenario

logger = logging.getLogger(__name__)

PUBLISHED_LOSSES = {
    'umts': [306, 236, 226, 224],
    '802.16': [2760, 2614, 2614, 2614],
    '802.11b': [1080, 1078, 1078, 1078],
    '802.11g': [2909, 2907, 2907, 2907],
}


def _seeds(settings):
    return range(settings['RUNS_PER_CELL'])


class TestModelTables:
    """Test the analytic model over the technology matrix."""

    @pytest.fixture(scope='class')
    def matrix(self):
        return ExperimentOrchestrator.run_model_matrix()

    def test_losses_within_ten_percent(self, matrix):
        """Test every loss cell against the published predictions."""
        table = ExperimentOrchestrator.matrix_table(matrix, 'n_lost')
        for src, row in PUBLISHED_LOSSES.items():
            for dst, expected in zip(MATRIX_ORDER, row):
                assert table.loc[src, dst] == pytest.approx(expected, rel=0.10), (src, dst)

    def test_wasted_capacity_structure(self, matrix):
        """Test that handovers into UMTS waste nothing and the rest waste something."""
        table = ExperimentOrchestrator.matrix_table(matrix, 'table_wasted')
        for src in MATRIX_ORDER:
            assert table.loc[src, 'umts'] == 0
        assert table.loc['umts', '802.11g'] > 0
        assert table.loc['802.16', '802.11g'] > 0

    def test_deterministic(self, matrix):
        """Test that a second evaluation is identical."""
        assert ExperimentOrchestrator.run_model_matrix().equals(matrix)

    def test_oracle_exactness(self):
        """Test the validation grid and a thousand random cases against the oracle."""
        started = time.monotonic()
        _, verdict = ExperimentOrchestrator.run_oracle(fuzz=1000)
        assert verdict['passed'], verdict
        assert time.monotonic() - started < 10.0


@pytest.mark.slow
class TestSimulatedMatrix:
    """Test handovers across every pair of technologies."""

    def test_calibration(self, settings):
        """Test the 802.11b stationary receive rate against its profile."""
        result = metrics.calibrate_reference('802.11b', settings=settings)
        assert result.x_recv == pytest.approx(get_profile('802.11b').stationary_x_recv, rel=0.25)

    def test_freeze_loses_nothing(self, settings):
        """Test that no frozen flow loses data in any cell."""
        for src, dst in technology_pairs():
            for seed in _seeds(settings):
                row = run_handover_cell(src, dst, 'freeze', seed, get_profile(dst).stationary_x_recv, settings)
                assert row['n_lost'] == 0, (src, dst, seed)

    @pytest.mark.parametrize('src,dst', [('802.11b', '802.11b'), ('802.11b', 'umts'), ('umts', '802.16')])
    def test_rate_restoration(self, settings, src, dst):
        """Test the frozen rate coming back whether the new path is slower or faster."""
        frozen = replace(build_handover_scenario(src, dst, Variant.FREEZE, 2, settings), record_packets=True)
        trace = run_scenario(frozen, settings)
        t_rate, rate = metrics.first_rate_after_unfreeze(trace, TFRC_FLOW)
        assert rate == metrics.rate_before_freeze(trace, TFRC_FLOW)
        assert t_rate - trace.meta['t_reconnect'] <= 2 * trace.meta['rtt_stationary']
        assert set(metrics.rates_while_restoring(trace, TFRC_FLOW)) == {rate}
        ended = metrics.restoring_exit(trace, TFRC_FLOW)
        if ended is not None:
            assert ended.detail in ('restoring->probing', 'restoring->normal')
            assert ended.t >= t_rate + get_profile(dst).rtt

    def test_standard_backs_off(self, settings):
        """Test that the standard flow idles after reconnection and halved its rate."""
        standard = replace(build_handover_scenario('802.11b', '802.11b', Variant.STANDARD, 2, settings),
                           record_packets=True)
        trace = run_scenario(standard, settings)
        assert metrics.idle_after_reconnect(trace, TFRC_FLOW) > 0
        assert metrics.rate_halvings(trace, TFRC_FLOW) >= 1

    def test_freeze_wastes_less(self, settings):
        """Test that freezing wastes less capacity in nearly every cell."""
        references = {dst: metrics.calibrate_reference(dst, settings=settings).x_recv for dst in MATRIX_ORDER}
        worse = []
        for src, dst in technology_pairs():
            wasted = {
                variant: run_handover_cell(src, dst, variant, 0, references[dst], settings)['n_wasted']
                for variant in ('standard', 'freeze')
            }
            if not wasted['freeze'] < wasted['standard']:
                logger.warning(f"{src}->{dst}: freeze wasted {wasted['freeze']:.0f}, "
                               f"standard {wasted['standard']:.0f}")
                worse.append((src, dst))
        assert len(worse) <= 2, worse

    def test_fairness(self, settings):
        """Test that frozen flows are never aggressive towards Reno."""
        for src, dst in technology_pairs():
            ratio = run_fairness_cell(src, dst, 'freeze', 0, settings=settings)['fairness']
            assert ratio <= 2.0, (src, dst, ratio)
            if dst != 'umts':
                assert ratio >= 0.5, (src, dst, ratio)
