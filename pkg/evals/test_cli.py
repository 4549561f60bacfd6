import json

import numpy as np
import pandas as pd
import pytest

from mmapprox import cli
from evals.helpers import DATA_DIR, EVALS_DIR

REF1 = str(DATA_DIR / "ref1.json")


def golden_flags():
    flags = {}
    for line in (EVALS_DIR / "golden" / "cli_flags.txt").read_text().splitlines():
        if line.strip() and not line.startswith('#'):
            command, names = line.split(':', 1)
            flags[command.strip()] = names.split()
    return flags


def test_golden_covers_every_command():
    assert sorted(golden_flags()) == sorted(cli.COMMANDS)


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_help_lists_every_flag(command, capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main([command, '--help'])
    assert exit_info.value.code == 0
    text = capsys.readouterr().out
    for flag in golden_flags()[command]:
        assert flag in text


def test_missing_spec_file_is_an_io_failure(tmp_path):
    assert cli.main(['quotes', '--spec', str(tmp_path / 'nope.json'),
                     '--output', str(tmp_path / 'q.csv')]) == 4


def test_invalid_spec_exits_2(tmp_path):
    doc = json.loads((DATA_DIR / "ref1.json").read_text())
    doc['gamma'] = -1.0
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps(doc))
    assert cli.main(['solve-closed', '--spec', str(bad), '--output', str(tmp_path / 'c.csv')]) == 2


def test_randomized_commands_need_a_seed(tmp_path, capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(['mc-correct', '--spec', REF1, '--paths', '10'])
    assert exit_info.value.code == 2
    config = cli.RunConfig(command='mc-correct', spec=REF1, paths=10, output=str(tmp_path / 'e.json'))
    assert cli.run(config) == 2
    assert "--seed" in capsys.readouterr().out


def test_quotes_csv(tmp_path):
    out = tmp_path / 'quotes.csv'
    assert cli.main(['quotes', '--spec', REF1, '--q', '10', '--source', 'exact',
                     '--dt', '0.01', '--output', str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['t', 'asset', 'tier', 'size', 'side', 'offset', 'price', 'gated']
    assert frame['side'].tolist() == ['bid', 'ask']
    assert frame['gated'].tolist() == [True, False]


def test_quotes_outside_limits_exit_2(tmp_path):
    assert cli.main(['quotes', '--spec', REF1, '--q', '12', '--output', str(tmp_path / 'q.csv')]) == 2


def test_solve_closed_csv(tmp_path):
    out = tmp_path / 'closed.csv'
    assert cli.main(['solve-closed', '--spec', REF1, '--points', '11', '--output', str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['t', 'A_1_1', 'B_1', 'C']
    assert len(frame) == 11
    assert frame['A_1_1'].iloc[-1] == 0.0


def test_solve_exact_csv(tmp_path):
    out = tmp_path / 'exact.csv'
    assert cli.main(['solve-exact', '--spec', REF1, '--dt', '0.05', '--output', str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['t', 'q1', 'theta']


def test_asymptotic_json(tmp_path):
    out = tmp_path / 'asym.json'
    assert cli.main(['asymptotic', '--spec', str(DATA_DIR / "ref2.json"), '--q', '1,-1',
                     '--output', str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc['q'] == [1.0, -1.0]
    assert len(doc['quotes']) == 4
    assert len(doc['spread_skew']) == 2


def test_mc_correct_json(tmp_path):
    out = tmp_path / 'eta.json'
    assert cli.main(['mc-correct', '--spec', REF1, '--paths', '200', '--seed', '3',
                     '--output', str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc['eta']) == {'mean', 'stderr', 'n', 'seed', 'clamp_events', 'majorant_violations'}
    assert doc['theta_corrected'] == pytest.approx(doc['theta_check'] + doc['eta']['mean'])


def test_simulate_writes_log_and_summary(tmp_path):
    out = tmp_path / 'trades.csv'
    assert cli.main(['simulate', '--spec', REF1, '--paths', '50', '--seed', '2',
                     '--strategy', 'constant', '--output', str(out)]) == 0
    assert out.exists()
    summary = json.loads((tmp_path / 'trades_summary.json').read_text())
    assert summary['strategy'] == 'constant'
    assert summary['n_paths'] == 50


def test_compare_json(tmp_path):
    out = tmp_path / 'compare.json'
    assert cli.main(['compare', '--spec', REF1, '--paths', '50', '--seed', '5', '--dt', '0.05',
                     '--output', str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sorted(doc['strategies']) == sorted(cli.STRATEGIES)
    assert doc['failed'] == {}
    assert 'experiment' in doc['label']


def test_eigensolver_failure_exits_3(tmp_path, monkeypatch):
    def diverge(M):
        raise np.linalg.LinAlgError("Eigenvalues did not converge")

    monkeypatch.setattr(np.linalg, 'eigh', diverge)
    assert cli.main(['solve-closed', '--spec', REF1, '--output', str(tmp_path / 'c.csv')]) == 3
