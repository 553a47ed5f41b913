import os
import signal
import time
from threading import Thread

import pytest

import bayesimp
from bayesimp.cli import main
from bayesimp.config import RunConfig
from bayesimp.core import ConfigError, DataError, context

from .conftest import write_config

ABLATION = """\
[data]
generator = ablation
n = 3
m = 3
seed = 7
"""

SMALL = """\
[data]
generator = ablation
n = 20
m = 20

[ablation]
grid_size = 15
methods = IMP, BayesIME, BayesIMP, Sampling

[bo]
budget = 0
seeds = 2
noise = 0.01
samples_l = 10
samples_r = 5
methods = BayesIMP, PlainGP

[calibrate]
seeds = 2
methods = IMP
"""


def read(*paths):
    with open(os.path.join(*paths), 'rb') as f:
        return f.read()


def test_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["-h"])

    assert exc.value.code == 0

    out, err = capsys.readouterr()
    assert not err
    assert 'usage: bayesimp' in out


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])

    assert exc.value.code == 0

    out, err = capsys.readouterr()
    assert not err
    assert bayesimp.__version__ in out


@pytest.mark.parametrize('args', [
    [],
    ["gen"],
    ["gen", "-c", "run.ini", "-j", "0"],
    ["gen", "-c", "run.ini", "--seed", "-1"],
    ["gen", "-c", "run.ini", "--seed", str(2 ** 64)],
])
def test_usage_errors(capsys, args):
    with pytest.raises(SystemExit) as exc:
        main(args, commands={'gen': lambda *a, **k: None})

    assert exc.value.code == 2
    out, err = capsys.readouterr()
    assert not out
    assert 'bayesimp:' in err


def test_bad_arguments(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["-foo", "-bar"])

    assert exc.value.code != 0

    out, err = capsys.readouterr()
    assert not out
    assert "usage: bayesimp" in err


def test_command_receives_options(tmpdir):
    path = write_config(tmpdir, ABLATION)
    out = {}

    def capture(config, **kwargs):
        out['config'] = config
        out.update(kwargs)

    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", path, "-o", "results", "--seed", "11", "-j", "-1", "-v"],
             commands={'gen': capture})

    assert exc.value.code == 0
    assert out['config'] == RunConfig.parse(ABLATION)
    assert out['out'] == 'results'
    assert out['seed'] == 11
    assert out['n_threads'] == -1
    assert out['verbose'] is True


def _raise(exception):
    def command(config, **kwargs):
        raise exception
    return {'gen': command}


@pytest.mark.parametrize('exception, code, message', [
    (ConfigError("bad key"), 2, "ConfigError: bad key"),
    (DataError("missing column 'z'"), 3, "DataError: missing column 'z'"),
    (ZeroDivisionError("division by zero"), 3, "NumericalError: division by zero"),
    (PermissionError("denied"), 4, "IOError: denied"),
    (RuntimeError("boom"), 1, "RuntimeError: boom"),
])
def test_cli_exceptions(capsys, tmpdir, exception, code, message):
    path = write_config(tmpdir, ABLATION)
    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", path], commands=_raise(exception))

    assert exc.value.code == code
    out, err = capsys.readouterr()
    assert message in err


def test_cli_config_errors(capsys, tmpdir):
    path = write_config(tmpdir, "[data]\ngenerator = ablation\nmixture = 1.5\n")
    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", path])

    assert exc.value.code == 2
    out, err = capsys.readouterr()
    assert "ConfigError" in err
    assert "line 3" in err

    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", str(tmpdir.join('missing.ini'))])

    assert exc.value.code == 4
    out, err = capsys.readouterr()
    assert "IOError" in err


def test_cli_warnings(capsys, tmpdir):
    path = write_config(tmpdir, ABLATION)

    def command(config, **kwargs):
        context.warn("R_yy: added jitter 1.0e-10 to factorize")

    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", path], commands={'gen': command})

    assert exc.value.code == 0
    out, err = capsys.readouterr()
    assert "added jitter" in err
    assert "UserWarning" not in err  # printed, not from python warning


@pytest.mark.skipif(os.name == 'nt', reason='SIGINT terminates the tests on Windows')
def test_keyboard_interrupt(capsys, tmpdir):
    path = write_config(tmpdir, ABLATION)

    def interrupt():
        time.sleep(0.2)
        os.kill(os.getpid(), signal.SIGINT)

    def slow(config, **kwargs):
        time.sleep(5)

    interrupter = Thread(target=interrupt)
    try:
        with pytest.raises(SystemExit) as exc:
            interrupter.start()
            main(["gen", "-c", path], commands={'gen': slow})
    except KeyboardInterrupt:
        assert False, "Should have been caught by the CLI"

    assert exc.value.code == 1
    out, err = capsys.readouterr()
    assert err == 'Interrupted\n'


def test_gen_is_reproducible(capsys, tmpdir):
    path = write_config(tmpdir, ABLATION)
    first, second = str(tmpdir.join('a')), str(tmpdir.join('b'))
    for out_dir in [first, second]:
        with pytest.raises(SystemExit) as exc:
            main(["gen", "-c", path, "-o", out_dir])
        assert exc.value.code == 0

    for name in ['d1.csv', 'd2.csv', 'meta.txt']:
        assert read(first, name) == read(second, name)

    d1 = read(first, 'd1.csv').decode().splitlines()
    assert d1[0] == 'x,y'
    assert len(d1) == 4
    assert len(read(first, 'd2.csv').decode().splitlines()) == 4
    meta = read(first, 'meta.txt').decode()
    assert 'seed = 7' in meta
    assert 'generator = ablation' in meta
    assert 'version = %s' % bayesimp.__version__ in meta

    with pytest.raises(SystemExit) as exc:
        main(["gen", "-c", path, "-o", str(tmpdir.join('c')), "--seed", "8"])
    assert read(first, 'd1.csv') != read(str(tmpdir.join('c')), 'd1.csv')


def test_bo_zero_budget(capsys, tmpdir):
    path = write_config(tmpdir, SMALL)
    out_dir = str(tmpdir.join('bo'))
    with pytest.raises(SystemExit) as exc:
        main(["bo", "-c", path, "-o", out_dir])

    assert exc.value.code == 0
    assert sorted(os.listdir(out_dir)) == ['BayesIMP_seed0.csv', 'BayesIMP_seed1.csv',
                                           'PlainGP_seed0.csv', 'PlainGP_seed1.csv',
                                           'aggregate.csv', 'race.csv', 'race_summary.csv']
    assert read(out_dir, 'BayesIMP_seed1.csv') == b'iter,x,T,incumbent,ei\n'
    assert read(out_dir, 'aggregate.csv') == b'method,iter,median,q25,q75\n'
    # no queries, so no run reaches the optimum
    assert read(out_dir, 'race.csv') == (b'method,seed,iterations,reached\n'
                                         b'BayesIMP,0,1,0\nPlainGP,0,1,0\n'
                                         b'BayesIMP,1,1,0\nPlainGP,1,1,0\n')
    summary = read(out_dir, 'race_summary.csv').decode().splitlines()
    assert summary[0] == 'method,optimum,median,reached'
    assert [line.split(',')[0] for line in summary[1:]] == ['BayesIMP', 'PlainGP']
    assert all(line.endswith(',1,0') for line in summary[1:])
    assert len({line.split(',')[1] for line in summary[1:]}) == 1


def test_calibrate(capsys, tmpdir):
    path = write_config(tmpdir, SMALL)
    out_dir = str(tmpdir.join('calibrate'))
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "-c", path, "-o", out_dir, "-j", "2"])

    assert exc.value.code == 0
    lines = read(out_dir, 'calibration.csv').decode().splitlines()
    assert lines[0] == 'method,nominal,empirical,deviation'
    rows = [line.split(',') for line in lines[1:]]
    assert len(rows) == 9
    assert all(r[0] == 'IMP' for r in rows)
    assert all(0 <= float(r[2]) <= 1 for r in rows)
    assert len({r[3] for r in rows}) == 1


def test_ablation(capsys, tmpdir):
    path = write_config(tmpdir, SMALL)
    out_dir = str(tmpdir.join('ablation'))
    with pytest.raises(SystemExit) as exc:
        main(["ablation", "-c", path, "-o", out_dir])

    assert exc.value.code == 0
    for method in ['IMP', 'BayesIME', 'BayesIMP', 'Sampling']:
        lines = read(out_dir, '%s_curves.csv' % method).decode().splitlines()
        assert lines[0] == 'x,mean,std'
        assert len(lines) == 16
    summary = read(out_dir, 'summary.csv').decode().splitlines()
    assert summary[0] == 'method,seed,std_min,std_max,uniformity,spike_ratio,tail_ratio'
    assert [line.split(',')[0] for line in summary[1:]] == ['IMP', 'BayesIME', 'BayesIMP',
                                                           'Sampling']


RERUN = (SMALL.replace("grid_size = 15\n", "grid_size = 15\nseeds = 2\n")
              .replace("budget = 0\n", "budget = 3\ngrid_size = 30\n")
              .replace("methods = IMP\n", "methods = IMP, Sampling\n"))


@pytest.mark.parametrize('command', ['ablation', 'bo', 'calibrate'])
def test_rerun_is_byte_identical(capsys, tmpdir, command):
    path = write_config(tmpdir, RERUN)
    out_dirs = []
    for i, n_threads in enumerate(['1', '2', '2']):
        out_dir = str(tmpdir.join('%s%d' % (command, i)))
        with pytest.raises(SystemExit) as exc:
            main([command, "-c", path, "-o", out_dir, "-j", n_threads])
        assert exc.value.code == 0
        out_dirs.append(out_dir)

    names = sorted(os.listdir(out_dirs[0]))
    assert names
    for other in out_dirs[1:]:
        assert sorted(os.listdir(other)) == names
        for name in names:
            assert read(other, name) == read(out_dirs[0], name), name

    if command == 'bo':
        trace = read(out_dirs[0], 'BayesIMP_seed1.csv').decode().splitlines()
        assert len(trace) == 4


def read_rows(*paths):
    lines = read(*paths).decode().splitlines()
    header = lines[0].split(',')
    return [dict(zip(header, line.split(','))) for line in lines[1:]]


def run_slow(tmpdir, command, text):
    path = write_config(tmpdir, text)
    out_dir = str(tmpdir.join(command))
    with pytest.raises(SystemExit) as exc:
        main([command, "-c", path, "-o", out_dir, "-j", "-1"])
    assert exc.value.code == 0
    return out_dir


@pytest.mark.slow
def test_ablation_uncertainty_shapes(tmpdir):
    out_dir = run_slow(tmpdir, 'ablation', """\
[data]
generator = ablation
n = 100
m = 100

[ablation]
seeds = 10
""")
    rows = read_rows(out_dir, 'summary.csv')

    def count(method, check):
        return sum(check(r) for r in rows if r['method'] == method)

    def spike(r):
        return float(r['spike_ratio']) > 2

    def tail(r):
        return float(r['tail_ratio']) > 1

    assert count('Sampling', lambda r: float(r['uniformity']) < 2) >= 8
    assert count('IMP', spike) >= 8
    assert count('BayesIME', tail) >= 8
    assert count('BayesIMP', lambda r: spike(r) and tail(r)) >= 8


@pytest.mark.slow
def test_calibration_ordering(tmpdir):
    out_dir = run_slow(tmpdir, 'calibrate', """\
[data]
generator = ablation
n = 100
m = 100

[calibrate]
seeds = 10
methods = BayesIMP, Sampling
""")
    deviation = {r['method']: float(r['deviation'])
                 for r in read_rows(out_dir, 'calibration.csv')}
    assert deviation['BayesIMP'] < deviation['Sampling']


@pytest.mark.slow
def test_bo_race_ordering(tmpdir):
    out_dir = run_slow(tmpdir, 'bo', """\
[data]
generator = simple
n = 100
m = 50
mixture = 0.5

[bo]
budget = 30
seeds = 10
methods = BayesIMP, Sampling, PlainGP
""")
    median = {r['method']: float(r['median'])
              for r in read_rows(out_dir, 'race_summary.csv')}
    assert median['BayesIMP'] < median['PlainGP']
    assert median['BayesIMP'] <= median['Sampling']
    assert len(read_rows(out_dir, 'race.csv')) == 30
