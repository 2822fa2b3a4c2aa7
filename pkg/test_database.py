import json
import logging

import pandas as pd
import pytest

import main
from src.database import RunRow, get_db_session, list_runs, runs_dataframe, save_run, save_sweep
from src.harness import RunOptions, SimulationRunner


@pytest.fixture
def db_url(tmp_path):
    return f"sqlite:///{tmp_path}/history/runs.db"


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def make_record(**overrides):
    options = dict(family='inverse-diag', n=3, t=0.5, samples=50, order=6, seed=1, exact=True)
    options.update(overrides)
    return SimulationRunner().run_evolve(RunOptions(**options)).to_dict()


def test_save_and_list_runs(db_url):
    first = save_run(make_record(), db_url)
    second = save_run(make_record(family='random-sparse-hermitian', seed=2), db_url)
    assert second > first

    runs = list_runs(db_url)
    assert [r['id'] for r in runs] == [second, first]
    assert runs[0]['mode'] == 'hermitian'
    assert runs[1]['label'] == 'inverse-diag(n=3)'
    assert runs[1]['K'] == 6 and runs[1]['M'] == 50
    assert runs[1]['errorVsExact'] is not None

    assert [r['id'] for r in list_runs(db_url, mode='psd')] == [first]
    assert len(list_runs(db_url, limit=1)) == 1


def test_payload_round_trip(db_url):
    record = make_record()
    run_id = save_run(record, db_url)
    with get_db_session(db_url, commit=False) as session:
        row = session.get(RunRow, run_id)
        assert row.to_dict() == json.loads(json.dumps(record, sort_keys=True))
        assert row.total_ms == record['wallTimes']['total']


def test_save_sweep(db_url):
    run_id = save_run(make_record(), db_url)
    table = pd.DataFrame([
        {'axisValue': 4, 'seedCount': 3, 'medianError': 0.5, 'q10': 0.4, 'q90': 0.7, 'wallMs': 1.0},
        {'axisValue': 16, 'seedCount': 3, 'medianError': 0.2, 'q10': 0.1, 'q90': 0.3, 'wallMs': 2.0},
    ])
    assert save_sweep(run_id, 'M', table, db_url) == 2
    with get_db_session(db_url, commit=False) as session:
        points = session.get(RunRow, run_id).sweep_points
        assert sorted(p.axis_value for p in points) == [4.0, 16.0]
        assert {p.axis for p in points} == {'M'}


def test_runs_dataframe(db_url):
    save_run(make_record(), db_url)
    save_run(make_record(seed=3), db_url)
    frame = runs_dataframe(db_url)
    assert len(frame) == 2
    assert {'id', 'mode', 'n', 'K', 'M', 'errorVsExact', 'createdAt'} <= set(frame.columns)


def test_cli_records_and_lists_history(capsys, tmp_path, db_url):
    code = main.main(['evolve', '--family', 'inverse-diag', '--n', '2', '--samples', '20', '--order', '4',
                      '--database', db_url])
    assert code == 0
    code = main.main(['sweep', '--family', 'inverse-diag', '--n', '2', '--sweep', 'M', '--grid', '4,8',
                      '--trials', '2', '--order', '4', '--database', db_url])
    assert code == 0
    capsys.readouterr()

    assert main.main(['history', '--database', db_url]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert all('inverse-diag(n=2)' in line for line in lines)

    out_path = tmp_path / 'history.csv'
    assert main.main(['history', '--database', db_url, '--out', str(out_path)]) == 0
    assert len(pd.read_csv(out_path)) == 2
    with get_db_session(db_url, commit=False) as session:
        assert sum(len(r.sweep_points) for r in session.query(RunRow).all()) == 2


def test_runs_are_not_recorded_without_a_database(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main.main(['evolve', '--family', 'inverse-diag', '--n', '2', '--samples', '8', '--order', '2']) == 0
    assert not (tmp_path / 'data').exists()
