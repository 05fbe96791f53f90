import csv
import json
import os

import numpy as np
import pytest

from tidanse import cli
from tidanse.errors import InvalidConfig
from tidanse.harness import (ExperimentDescriptor, TopologySpec, batch_steps, load_descriptor,
                             online_steps, parse_descriptor, run_batch_experiment,
                             run_online_experiment, run_single, trace_columns, write_outputs,
                             write_plot_data)
from tidanse.metrics import UNSTABLE
from tidanse.scenario import ScenarioConfig

CONFIGS = os.path.join(os.path.dirname(__file__), '..', 'configs')

SMALL_BATCH = """
[experiment]
mode = "batch"
num_iterations = 12
num_runs = 2
frame_len = 2000
ranks_to_sweep = [1, 2]
seed = 4

[scenario]
num_nodes = 3
sensors_per_node = 3
num_desired = 2
num_noise = 2
channels = 2

[topology]
kind = "chain"
"""

SMALL_ONLINE = """
[experiment]
mode = "online"
normalized = true
num_iterations = 15
frame_len = 100
seed = 2

[scenario]
num_nodes = 3
sensors_per_node = 4
num_desired = 2
num_noise = 1
channels = 2
perturb_prob = 0.2
freeze_frames = 3

[online]
beta = 0.7
"""


def write(tmp_path, text, name='exp.toml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_shipped_descriptors_parse():
    batch = load_descriptor(os.path.join(CONFIGS, 'batch_convergence.toml'))
    assert batch.mode == 'batch' and batch.ranks_to_sweep == (1, 2, 3, 4)
    assert batch.frame_len == 15000 and batch.num_runs == 3 and not batch.normalized
    online = load_descriptor(os.path.join(CONFIGS, 'online_tracking.toml'))
    assert online.scm_policy == 'online' and online.beta == 0.7 and online.normalized
    assert online.scenario.sensors_per_node == (15,) * 10


@pytest.mark.parametrize('patch, msg', [
    (('seed = 4', 'seed = 4\ncolour = "red"'), 'unknown key'),
    (('[topology]', '[extras]\nx = 1\n[topology]'), 'unknown section'),
    (('channels = 2', 'channels = 4'), 'M_k >= J'),
    (('num_iterations = 12', 'num_iterations = 0'), 'num_iterations'),
    (('mode = "batch"', 'mode = "stream"'), 'mode'),
    (('kind = "chain"', 'kind = "edges"\nedges = [[0, 1]]'), 'edge list'),
    (('mode = "batch"\n', ''), 'missing'),
])
def test_descriptor_errors(patch, msg):
    with pytest.raises(InvalidConfig, match=msg):
        parse_descriptor(SMALL_BATCH.replace(*patch))


def test_invalid_toml():
    with pytest.raises(InvalidConfig, match='TOML'):
        parse_descriptor('[experiment\nmode = 1')


def test_edge_list_topology():
    desc = parse_descriptor(SMALL_BATCH.replace('kind = "chain"',
                                                'kind = "edges"\nedges = [[0, 1], [1, 2], [0, 2]]'))
    assert len(desc.topology.build(3, None).edges) == 3


def test_batch_trace_shape_and_determinism():
    desc = parse_descriptor(SMALL_BATCH)
    a = run_batch_experiment(desc)
    b = run_batch_experiment(desc)
    assert len(a) == 2 and len(a[0].rows) == 12
    for ta, tb in zip(a, b):
        for ra, rb in zip(ta.rows, tb.rows):
            assert np.array_equal(ra.mse_w, rb.mse_w) and np.array_equal(ra.mse_d, rb.mse_d)
    assert np.mean(a[0].rows[-1].mse_w) < np.mean(a[0].rows[0].mse_w)


def test_seed_isolation():
    desc = parse_descriptor(SMALL_BATCH)
    alone = run_single(desc, 1)
    from dataclasses import replace
    together = run_batch_experiment(replace(desc, num_runs=3))[1]
    for ra, rb in zip(alone.rows, together.rows):
        assert np.array_equal(ra.mse_w, rb.mse_w)


def test_parallel_matches_serial():
    desc = parse_descriptor(SMALL_BATCH)
    serial = run_batch_experiment(desc)
    par = run_batch_experiment(desc, parallel=2)
    for ts, tp in zip(serial, par):
        assert [r.mse_d.tolist() for r in ts.rows] == [r.mse_d.tolist() for r in tp.rows]


def test_mode_guards():
    with pytest.raises(InvalidConfig):
        run_online_experiment(parse_descriptor(SMALL_BATCH))
    with pytest.raises(InvalidConfig):
        run_batch_experiment(parse_descriptor(SMALL_ONLINE))


def test_online_baseline_shares_frames():
    desc = parse_descriptor(SMALL_ONLINE)
    rows, frames = [], []
    for row, record, frame in online_steps(desc, 0):
        rows.append(row)
        frames.append(frame.y)
        assert np.isfinite(row.mse_d_central)
    again = [frame.y for _, _, frame in online_steps(desc, 0)]
    assert all(np.array_equal(a, b) for a, b in zip(frames, again))
    assert any(r.scenario_changed for r in rows)
    assert [r.u for r in rows] == [i % 3 for i in range(15)]


def test_static_online_plateau():
    desc = parse_descriptor(SMALL_ONLINE.replace('perturb_prob = 0.2', 'perturb_prob = 0.0')
                            .replace('num_iterations = 15', 'num_iterations = 150'))
    rows = run_single(desc, 0).rows
    assert not any(r.scenario_changed for r in rows)
    d = np.array([np.mean(r.mse_d) for r in rows])
    c = np.array([r.mse_d_central for r in rows])
    tail = slice(100, 150)
    assert np.max(d[tail]) < 0.01 * np.max(d[:20])
    assert np.median(d[tail]) < 3 * np.median(c[tail])


def test_instability_is_recorded(monkeypatch):
    import tidanse.harness as h

    calls = {'n': 0}
    real = h.run_iteration

    def flaky(state, *args, **kw):
        calls['n'] += 1
        if calls['n'] == 5:
            raise FloatingPointError('overflow')
        return real(state, *args, **kw)

    monkeypatch.setattr(h, 'run_iteration', flaky)
    trace = run_single(parse_descriptor(SMALL_ONLINE), 0)
    assert trace.stats['unstable_at'] == 4
    assert all(r.stability == UNSTABLE for r in trace.rows[4:])
    assert np.all(np.isnan(trace.rows[-1].mse_d))
    assert np.isfinite(trace.rows[-1].mse_d_central)


def test_outputs_and_plot_data(tmp_path):
    desc = parse_descriptor(SMALL_BATCH)
    traces = run_batch_experiment(desc)
    files = write_outputs(str(tmp_path), desc, traces)
    assert sorted(os.path.basename(f) for f in files) == ['meta.json', 'trace_run0.csv',
                                                           'trace_run1.csv']
    with open(tmp_path / 'trace_run0.csv') as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == trace_columns(3) and len(rows) == 13
    assert 'e' in rows[1][6] and len(rows[1][6].split('e')[0]) >= 19
    meta = json.loads((tmp_path / 'meta.json').read_text())
    assert meta['descriptor_sha256'] == desc.sha256() and meta['seed'] == 4
    assert len(meta['runs']) == 2
    out = write_plot_data(str(tmp_path))
    with open(out[0]) as fh:
        fig = list(csv.reader(fh))
    assert len(fig) - 1 == desc.num_iterations
    assert fig[0][:2] == ['iter', 'mean_mse_d'] and fig[1][0] == '0'


def test_plot_data_averages_runs(tmp_path):
    desc = parse_descriptor(SMALL_BATCH)
    traces = run_batch_experiment(desc)
    write_outputs(str(tmp_path), desc, traces)
    path = write_plot_data(str(tmp_path))[0]
    with open(path) as fh:
        fig = list(csv.DictReader(fh))
    want = np.mean([np.mean(t.rows[5].mse_d) for t in traces])
    assert np.isclose(float(fig[5]['mean_mse_d']), want, rtol=1e-15)


def test_descriptor_defaults():
    sc = ScenarioConfig(num_nodes=2, sensors_per_node=2, num_desired=1, num_noise=1, channels=1)
    d = ExperimentDescriptor(mode='online', scenario=sc, topology=TopologySpec(kind='chain'))
    assert d.scm_policy == 'online' and d.engine_options().rank == 1
    with pytest.raises(InvalidConfig):
        ExperimentDescriptor(mode='online', scenario=sc, scm_policy='exact')


# ---------------------------------------------------------------- CLI

def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_validate(tmp_path, capsys):
    code, out, _ = run_cli(['validate', '--config', write(tmp_path, SMALL_BATCH)], capsys)
    assert code == 0 and json.loads(out)['status'] == 'ok'
    bad = write(tmp_path, SMALL_BATCH.replace('channels = 2', 'channels = 5'), 'bad.toml')
    code, _, err = run_cli(['validate', '--config', bad], capsys)
    assert code != 0
    payload = json.loads(err)
    assert payload['error'] == 'InvalidConfig' and 'M_k >= J' in payload['message']


def test_cli_missing_file(tmp_path, capsys):
    code, _, err = run_cli(['validate', '--config', str(tmp_path / 'none.toml')], capsys)
    assert code != 0 and json.loads(err)['error'] == 'FileNotFoundError'


def test_cli_run_is_bit_reproducible(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_BATCH)
    for name in ('a', 'b'):
        code, _, _ = run_cli(['run', '--config', cfg, '--out', str(tmp_path / name),
                              '--runs', '1', '--seed', '9'], capsys)
        assert code == 0
    a = (tmp_path / 'a' / 'trace_run0.csv').read_bytes()
    assert a == (tmp_path / 'b' / 'trace_run0.csv').read_bytes()
    assert not (tmp_path / 'a' / 'trace_run1.csv').exists()
    meta = json.loads((tmp_path / 'a' / 'meta.json').read_text())
    assert meta['seed'] == 9


def test_cli_sweep_and_plot_data(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_BATCH)
    out = tmp_path / 'sweep'
    code, stdout, _ = run_cli(['sweep', '--config', cfg, '--out', str(out)], capsys)
    assert code == 0 and json.loads(stdout)['ranks'] == [1, 2]
    assert (out / 'rank1' / 'trace_run1.csv').exists()
    assert json.loads((out / 'rank2' / 'meta.json').read_text())['rank'] == 2
    code, stdout, _ = run_cli(['plot-data', '--out', str(out)], capsys)
    assert code == 0
    for r in (1, 2):
        with open(out / f'figdata_rank{r}.csv') as fh:
            assert len(fh.readlines()) - 1 == 12


def test_cli_sweep_rejects_bad_rank(tmp_path, capsys):
    code, _, err = run_cli(['sweep', '--config', write(tmp_path, SMALL_BATCH),
                            '--out', str(tmp_path / 'x'), '--ranks', '9'], capsys)
    assert code != 0 and 'M_k >= J' in json.loads(err)['message']


def test_cli_plot_data_without_traces(tmp_path, capsys):
    code, _, err = run_cli(['plot-data', '--out', str(tmp_path)], capsys)
    assert code != 0 and 'trace_run' in json.loads(err)['message']


def test_batch_steps_generator():
    desc = parse_descriptor(SMALL_BATCH)
    steps = list(batch_steps(desc, 0))
    assert len(steps) == 12
    frame0 = steps[0][2]
    assert all(s[2] is frame0 for s in steps)
