"""
Tests for the command-line front end.
"""
import argparse
import json
import os

import pandas as pd
import pytest

import cli
from experiment_orchestrator import ExperimentOrchestrator
from freezetfrc.errors import ModelInputError
from freezetfrc.models import HandoverResult, NfiTimeline, RunConfig, Variant
from freezetfrc.services import analytic_model
from freezetfrc.utils.csvio import read_versioned_csv

SCENARIO = """
seed 1
duration 20
link wireless capacity=1M delay=20ms queue=50
at 0 start f1 tfrc
at 9.5 freeze f1
at 10 disconnect
at 13 reconnect capacity=384k delay=125ms
at 13.0001 unfreeze f1
"""


def _run(capsys, *argv):
    code = cli.main(['--env', 'testing', *argv])
    out, err = capsys.readouterr()
    return code, out, json.loads(err.strip().splitlines()[-1])


class TestParseSeeds:
    """Test seed list parsing."""

    def test_forms(self):
        """Test ranges, lists and single seeds."""
        assert cli.parse_seeds('0..3') == [0, 1, 2, 3]
        assert cli.parse_seeds('1,4,7') == [1, 4, 7]
        assert cli.parse_seeds('5') == [5]

    def test_invalid(self):
        """Test malformed and empty lists."""
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_seeds('a..b')
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_seeds(',')


class TestModelCommand:
    """Test the model subcommand."""

    def test_no_disconnection(self, capsys):
        """Test a zero-length disconnection on stdout."""
        code, out, summary = _run(capsys, 'model', '--xd', '1e5', '--rold', '0.1', '--rnew', '0.1', '--td', '0')
        assert code == cli.EXIT_OK
        assert summary == {'command': 'model', 'status': 'pass', 'rows': 1, 'output': None}
        lines = out.splitlines()
        assert lines[0] == '# schema=model version=1'
        header = lines[1].split(',')
        row = dict(zip(header, lines[2].split(',')))
        assert row['n_lost'] == '0'
        assert row['table_wasted'] == '0'

    def test_technology_pair_to_file(self, capsys, tmp_path):
        """Test a handover between two profiles written to CSV."""
        path = str(tmp_path / 'model.csv')
        code, _, summary = _run(capsys, 'model', '--from', '802.11b', '--to', 'UMTS', '--output', path)
        assert code == cli.EXIT_OK
        assert summary['output'] == path
        df, schema, _ = read_versioned_csv(path)
        assert schema == 'model'
        assert df.loc[0, 'to'] == 'umts'
        assert df.loc[0, 'n_lost'] == pytest.approx(1080, rel=0.10)
        assert df.loc[0, 'table_wasted'] == 0

    def test_override_on_pair(self, capsys):
        """Test that explicit flags override profile values."""
        code, out, _ = _run(capsys, 'model', '--from', 'umts', '--to', 'umts', '--td', '0')
        assert code == cli.EXIT_OK
        header, values = out.splitlines()[1:3]
        assert dict(zip(header.split(','), values.split(',')))['n_lost'] == '0'

    def test_invalid_value(self, capsys):
        """Test that a bad parameter exits 2 and names the field."""
        code, _, summary = _run(capsys, 'model', '--xd', '-5', '--rold', '0.1', '--rnew', '0.1')
        assert code == cli.EXIT_INVALID
        assert summary['status'] == 'error'
        assert summary['field'] == 'x_d'

    def test_missing_value(self, capsys):
        """Test that a missing RTT is reported."""
        code, _, summary = _run(capsys, 'model', '--xd', '1e5')
        assert code == cli.EXIT_INVALID
        assert summary['field'] == 'r_old'

    def test_unknown_technology(self, capsys):
        """Test an unknown technology name."""
        code, _, summary = _run(capsys, 'model', '--from', 'lte', '--to', 'umts')
        assert code == cli.EXIT_INVALID
        assert 'lte' in summary['error']

    def test_unparsable_flag(self, capsys):
        """Test that argument errors exit 2."""
        assert cli.main(['model', '--xd', 'fast']) == cli.EXIT_INVALID

    def test_oracle_disagreement(self, capsys, mocker):
        """Test that a model/oracle mismatch exits 1."""
        original = analytic_model.rate_during_nfi
        mocker.patch('freezetfrc.services.analytic_model.rate_during_nfi',
                     side_effect=lambda k, inp: original(k, inp) * 1.01)
        code, _, summary = _run(capsys, 'model', '--from', 'umts', '--to', '802.16')
        assert code == cli.EXIT_CHECK_FAILED
        assert summary['status'] == 'fail'
        assert summary['first_nfi'] == 0

    def test_matrix_on_worker(self, capsys, mocker):
        """Test that the matrix can be evaluated through the task queue."""
        df = pd.DataFrame([{'from': 'umts', 'to': 'umts', 'n_lost': 224}])
        matrix = mocker.patch.object(ExperimentOrchestrator, 'run_model_matrix', return_value=df)
        code, out, summary = _run(capsys, 'model', '--matrix', '--executor', 'celery', '--no-oracle')
        assert code == cli.EXIT_OK
        assert summary['rows'] == 1
        assert matrix.call_args.kwargs == {'check_oracle': False, 'executor': 'celery'}
        assert out.splitlines()[2] == 'umts,umts,224'


class TestRunConfig:
    """Test how flags resolve into a run configuration."""

    def test_sweep_defaults(self, settings):
        """Test that a bare sweep takes its seeds and output directory from the settings."""
        args = cli.build_parser().parse_args(['sweep'])
        run = cli.build_run_config(args, settings)
        assert run.seeds == list(range(settings['RUNS_PER_CELL']))
        assert run.output == settings['OUTPUT_DIR']
        assert run.log_level == 'WARNING'

    def test_model_overrides(self, settings):
        """Test that only the model flags given end up as overrides."""
        args = cli.build_parser().parse_args(['-vv', 'model', '--xd', '1e5', '--td', '0'])
        run = cli.build_run_config(args, settings)
        assert run.overrides == {'x_d': 1e5, 't_d': 0.0}
        assert run.log_level == 'DEBUG'
        assert run.output is None

    def test_scenario_input(self, settings):
        """Test that a scenario file and seed are carried over."""
        args = cli.build_parser().parse_args(['-v', 'sim', '--scenario', 'outage.scn', '--seed', '4'])
        run = cli.build_run_config(args, settings)
        assert run.inputs == ['outage.scn']
        assert run.seeds == [4]
        assert run.log_level == 'INFO'

    def test_invalid_configs(self):
        """Test an unknown command and an empty seed list."""
        with pytest.raises(ModelInputError) as exc:
            RunConfig('plot')
        assert exc.value.field == 'command'
        with pytest.raises(ModelInputError) as exc:
            RunConfig('sweep', seeds=[])
        assert exc.value.field == 'seeds'

    def test_output_paths(self, tmp_path):
        """Test which output paths count as writable."""
        existing = tmp_path / 'model.csv'
        existing.write_text('')
        assert RunConfig('model', output=str(existing)).output == str(existing)
        assert RunConfig('sweep', output=str(tmp_path / 'new' / 'dir')).output.endswith('dir')
        with pytest.raises(ModelInputError) as exc:
            RunConfig('sweep', output=str(existing / 'results'))
        assert exc.value.field == 'output'

    def test_unwritable_output_exits_invalid(self, capsys, tmp_path):
        """Test that an output below a regular file is rejected before anything runs."""
        blocker = tmp_path / 'blocker'
        blocker.write_text('')
        code, _, summary = _run(capsys, 'sweep', '--output', str(blocker / 'results'))
        assert code == cli.EXIT_INVALID
        assert summary['field'] == 'output'


class TestOracleCommand:
    """Test the oracle subcommand."""

    def test_passes(self, capsys, tmp_path):
        """Test a small fuzz run."""
        path = str(tmp_path / 'oracle.csv')
        code, _, summary = _run(capsys, 'oracle', '--fuzz', '5', '--output', path)
        assert code == cli.EXIT_OK
        assert summary['passed'] is True
        assert summary['cases'] == 26
        assert os.path.exists(path)

    def test_fails(self, capsys, mocker):
        """Test a closed form that drifts from the oracle."""
        original = analytic_model.closed_form_timeline

        def skewed(inp):
            timeline = original(inp)
            first = timeline.steps[0]
            return NfiTimeline((first._replace(duration=first.duration * 2),) + timeline.steps[1:],
                               timeline.packets)

        mocker.patch('freezetfrc.services.analytic_model.closed_form_timeline', side_effect=skewed)
        code, _, summary = _run(capsys, 'oracle', '--fuzz', '0')
        assert code == cli.EXIT_CHECK_FAILED
        assert summary['status'] == 'fail'
        assert summary['first_nfi'] == 0


class TestSimCommand:
    """Test the sim subcommand."""

    def test_scenario_file(self, capsys, tmp_path):
        """Test a scenario file run with its outputs."""
        path = tmp_path / 'outage.scn'
        path.write_text(SCENARIO)
        out_dir = str(tmp_path / 'out')
        code, _, summary = _run(capsys, 'sim', '--scenario', str(path), '--output', out_dir)
        assert code == cli.EXIT_OK
        assert summary['n_lost'] == {'f1': 0}
        assert os.path.exists(os.path.join(out_dir, 'outage_trace.csv'))
        assert os.path.exists(os.path.join(out_dir, 'outage_trace.bin'))

    def test_steady(self, capsys, tmp_path):
        """Test a short steady run on one technology."""
        code, _, summary = _run(capsys, 'sim', '--tech', 'umts', '--duration', '5', '--output', str(tmp_path))
        assert code == cli.EXIT_OK
        assert summary['flows']['tfrc0']['sent'] > 0
        assert os.path.exists(tmp_path / 'steady_umts_rates.csv')

    def test_scenario_error(self, capsys, tmp_path):
        """Test that a malformed scenario exits 2."""
        path = tmp_path / 'bad.scn'
        path.write_text('link wireless capacity=1M delay=20ms\nat 0 launch f1\n')
        code, _, summary = _run(capsys, 'sim', '--scenario', str(path))
        assert code == cli.EXIT_INVALID
        assert 'bad.scn:2' in summary['error']

    def test_missing_file(self, capsys, tmp_path):
        """Test that an unreadable scenario exits 2."""
        code, _, summary = _run(capsys, 'sim', '--scenario', str(tmp_path / 'absent.scn'))
        assert code == cli.EXIT_INVALID
        assert summary['status'] == 'error'


class TestSweepCommands:
    """Test sweep and fairness exit codes with the simulations mocked out."""

    @pytest.fixture(autouse=True)
    def no_calibration(self, mocker):
        mocker.patch.object(ExperimentOrchestrator, 'calibrate_references', return_value={'umts': 48000.0})

    @staticmethod
    def _cell(lost_when_frozen):
        def cell(from_tech, to_tech, variant, seed, x_ref, settings):
            n_lost = lost_when_frozen if variant == 'freeze' else 12
            return HandoverResult(Variant(variant), from_tech, to_tech, seed, n_lost, 3.0).to_dict()
        return cell

    def test_sweep_passes(self, capsys, mocker, tmp_path):
        """Test a clean sweep and its matrix files."""
        mocker.patch('experiment_orchestrator.run_handover_cell', side_effect=self._cell(0))
        code, _, summary = _run(capsys, 'sweep', '--from', 'umts', '--to', 'umts', '--seeds', '0..1',
                                '--output', str(tmp_path))
        assert code == cli.EXIT_OK
        assert summary['runs'] == 4
        assert summary['cells'] == 2
        assert os.path.exists(tmp_path / 'sweep_freeze_n_lost_matrix.csv')
        assert not os.path.exists(tmp_path / 'sweep_freeze_fairness_matrix.csv')

    def test_sweep_frozen_losses_fail(self, capsys, mocker, tmp_path):
        """Test that a freeze run losing packets fails the check."""
        mocker.patch('experiment_orchestrator.run_handover_cell', side_effect=self._cell(2))
        code, _, summary = _run(capsys, 'sweep', '--from', 'umts', '--to', 'umts', '--variant', 'freeze',
                                '--seeds', '0..1', '--output', str(tmp_path))
        assert code == cli.EXIT_CHECK_FAILED
        assert summary['freeze_runs_with_losses'] == 2

    def test_fairness_ratio_check(self, capsys, mocker, tmp_path):
        """Test that an aggressive ratio fails the fairness check."""
        def cell(from_tech, to_tech, variant, seed, x_ref, settings):
            return HandoverResult(Variant(variant), from_tech, to_tech, seed, 0, float('nan'), 2.5).to_dict()

        mocker.patch('experiment_orchestrator.run_fairness_cell', side_effect=cell)
        code, _, summary = _run(capsys, 'fairness', '--from', '802.16', '--to', '802.16', '--seeds', '0',
                                '--output', str(tmp_path))
        assert code == cli.EXIT_CHECK_FAILED
        assert summary['ratios'] == {'freeze:802.16->802.16': 2.5}
