from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import pytest

from fvegrid.cli import EXIT_ERROR, EXIT_OK, _log_level, main
from fvegrid.config import env_flag_enabled, env_int, env_str, worker_count


def test_list_presets(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['--list-presets']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'FVE-3-3\tk=3\tr=3' in out
    assert 'FE-k' in out


def test_unknown_scheme_is_an_error(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['--scheme', 'FVE-9-9', '--mesh-sizes', '4', '6']) == EXIT_ERROR
    assert capsys.readouterr().err.startswith('error: unknown scheme')


def test_invalid_study_is_an_error(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['--mesh-sizes', '4', '--norms', 'l2']) == EXIT_ERROR
    assert '$.mesh_sizes' in capsys.readouterr().err


def test_missing_config_file_is_an_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['--config', str(tmp_path / 'absent.yml')]) == EXIT_ERROR
    assert 'error:' in capsys.readouterr().err


def test_run_writes_csv(tmp_path: Path) -> None:
    out = tmp_path / 'study.csv'
    code = main(['--scheme', 'FVE-3-2', '--problem', 'BVP-D', '--mesh-sizes', '4', '6', '--norms', 'l2', 'h1x-super', '--out', str(out)])
    assert code == EXIT_OK
    rows = list(csv.reader(out.open(encoding='utf-8')))
    assert rows[0] == ['h', 'dofs', 'l2', 'h1x-super', 'l2_order', 'h1x-super_order']
    assert len(rows) == 3


def test_run_prints_markdown(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['--scheme', 'FE-2', '--mesh-sizes', '4', '6', '--norms', 'h1', '--format', 'markdown']) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith('**FE-2** on **BVP-DR**')
    assert '| 1/4 |' in out and '| 1/6 |' in out


def test_export_points(tmp_path: Path) -> None:
    points = tmp_path / 'points.json'
    args = ['--scheme', 'FVE-3-3', '--mesh-sizes', '4', '6', '--norms', 'l2', '--out', str(tmp_path / 'r.csv')]
    assert main([*args, '--export-points', str(points)]) == EXIT_OK
    document = json.loads(points.read_text(encoding='utf-8'))
    assert len(document['ps_x']) == 4 and document['ps_x'][0] == -1.0


def test_config_with_several_studies(tmp_path: Path) -> None:
    config = tmp_path / 'suite.yml'
    config.write_text(
        'defaults: {mesh_sizes: [4, 6], norms: [l2], format: json}\n'
        'studies:\n'
        '  - {scheme: FVE-3-3, name: tuned}\n'
        '  - {scheme: FE-3, kind: fem, name: galerkin}\n',
        encoding='utf-8',
    )
    out = tmp_path / 'results'
    assert main(['--config', str(config), '--out', str(out), '--format', 'csv']) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ['galerkin.csv', 'tuned.csv']


def test_export_matrix(tmp_path: Path) -> None:
    target = tmp_path / 'systems'
    args = ['--scheme', 'FVE-3-3', '--mesh-sizes', '4', '6', '--norms', 'l2', '--out', str(tmp_path / 'r.csv')]
    assert main([*args, '--export-matrix', str(target)]) == EXIT_OK
    names = sorted(p.name for p in target.iterdir())
    assert 'FVE-3-3_BVP-DR_4x4.mtx' in names and 'FVE-3-3_BVP-DR_6x6_rhs.mtx' in names


def test_log_level(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv('FVEGRID_LOG_LEVEL', raising=False)
    assert _log_level(None) == logging.WARNING
    assert _log_level('debug') == logging.DEBUG
    assert _log_level('chatty') == logging.WARNING
    monkeypatch.setenv('FVEGRID_LOG_LEVEL', 'info')
    assert _log_level(None) == logging.INFO


def test_env_helpers(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv('FVEGRID_TEST_FLAG', 'Yes')
    assert env_flag_enabled('FVEGRID_TEST_FLAG')
    monkeypatch.setenv('FVEGRID_TEST_FLAG', '0')
    assert not env_flag_enabled('FVEGRID_TEST_FLAG')

    monkeypatch.setenv('FVEGRID_TEST_INT', 'seven')
    assert env_int('FVEGRID_TEST_INT', default=3) == 3
    monkeypatch.setenv('FVEGRID_TEST_INT', '7')
    assert env_int('FVEGRID_TEST_INT', default=3) == 7

    monkeypatch.setenv('FVEGRID_TEST_STR', '   ')
    assert env_str('FVEGRID_TEST_STR', default='x') == 'x'


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv('FVE_THREADS', '3')
    assert worker_count() == 3
    monkeypatch.setenv('FVE_THREADS', '0')
    assert worker_count() >= 1
    monkeypatch.setenv('FVE_THREADS', 'many')
    assert worker_count() >= 1


def test_export_points_keeps_running_without_real_super_points(tmp_path: Path) -> None:
    points = tmp_path / 'points.json'
    args = ['--scheme', 'FVE-3-2', '--problem', 'BVP-D', '--mesh-sizes', '4', '6', '--norms', 'h1x-ultra']
    assert main([*args, '--out', str(tmp_path / 'r.csv'), '--export-points', str(points)]) == EXIT_OK
    document = json.loads(points.read_text(encoding='utf-8'))
    assert document['ps_x'] is None and len(document['ps_y']) == 4
    assert len((tmp_path / 'r.csv').read_text(encoding='utf-8').splitlines()) == 3


def test_scheme_file_with_wrong_free_count_is_an_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scheme = tmp_path / 'bad_scheme.json'
    direction = {'alpha': [-0.6406, -0.0748, 0.6255], 'a': [-1, -0.6, 0.33, 1], 'free': [2]}
    scheme.write_text(json.dumps({'k': 3, 'r': 2, 'x': direction, 'y': direction}), encoding='utf-8')
    assert main(['--scheme', str(scheme), '--mesh-sizes', '4', '6', '--norms', 'l2']) == EXIT_ERROR
    err = capsys.readouterr().err
    assert err.startswith('error:')
    assert '$.x.free' in err and '$.y.free' not in err


def test_unexpected_value_errors_map_to_error_exit(monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]) -> None:
    def broken(*args, **kwargs):
        raise ValueError('bad input')

    monkeypatch.setattr('fvegrid.cli.run_study', broken)
    assert main(['--scheme', 'FVE-3-3', '--mesh-sizes', '4', '6', '--norms', 'l2']) == EXIT_ERROR
    assert capsys.readouterr().err == 'error: bad input\n'
