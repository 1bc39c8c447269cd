from __future__ import annotations

import subprocess
import sys

import pytest

from sasgrid.cli import build_run_config, error_line, main, parse_config_text
from sasgrid.environment import observation_dim
from sasgrid.errors import ConfigError, CorruptCheckpoint
from sasgrid.grid import load_preset
from sasgrid.logs import MetricsLog, read_replay
from sasgrid.policy import init_params, load_checkpoint, save_checkpoint

SMALL = ["--grid", "case5", "--population", "4", "--iterations", "1", "--hidden", "8", "--max-steps", "20",
         "--k", "3", "--workers", "1"]


@pytest.fixture(scope="module")
def scen(tmp_path_factory):
    d = tmp_path_factory.mktemp("scen")
    assert main(["gen-scenarios", "--grid", "case5", "--count", "2", "--length", "40", "--seed", "3",
                 "--out", str(d)]) == 0
    return d


def test_config_precedence():
    file_values = parse_config_text("# run\noutput = from_file\nworkers = 2\nsigma = 0.1\nlr=0.3\nk = 1,5\n")
    env = {"SASGRID_OUTPUT_DIR": "from_env", "SASGRID_WORKERS": "3"}
    run = build_run_config(file_values, {"lr": "0.2", "output": None}, env)
    assert run.output == "from_env" and run.workers == 3
    assert run.train.sigma == 0.1 and run.train.lr == 0.2
    assert run.ks == (1, 5) and run.train.k == 1
    run = build_run_config(file_values, {"output": "from_flag", "workers": "4"}, env)
    assert run.output == "from_flag" and run.workers == 4
    assert build_run_config({}, {}, {}).output == "runs"


def test_config_round_trip():
    run = build_run_config({}, {"hidden": "32,16", "rank_shaping": "false", "seed": "9"}, {})
    assert run.train.hidden == (32, 16) and run.train.rank_shaping is False and run.train.seed == 9
    again = build_run_config(parse_config_text(run.to_text()), {}, {})
    assert again == run


@pytest.mark.parametrize("text", ["nonsense", "bogus = 1", "sigma = abc", "k = ", "workers = 0", "population = 3"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        build_run_config(parse_config_text(text), {}, {})


def test_gen_scenarios_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-scenarios", "--count", "2", "--seed", "4", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 4
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    chron = (tmp_path / "a" / files[1]).read_text().splitlines()
    assert len(chron) == 1 + 288
    assert main(["gen-scenarios", "--count", "1", "--attack-rate", "0", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "case5_0000_attacks.csv").read_text() == "step,line_id,duration\n"


def test_train_smoke_and_resume(scen, tmp_path):
    out = tmp_path / "run"
    args = ["train", *SMALL, "--scenarios", str(scen), "--output", str(out)]
    assert main(args) == 0
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["iter_00001.sasp"]
    assert len(MetricsLog(out / "metrics.tsv").read()) == 1
    assert (out / "run.cfg").exists() and (out / "summary.tsv").exists()
    # continue to 3 iterations, compare with a fresh 3-iteration run
    args3 = [a if a != "1" else "3" for a in args]
    assert main(args3 + ["--resume"]) == 0
    fresh = tmp_path / "fresh"
    assert main([a if a != str(out) else str(fresh) for a in args3]) == 0
    a, ia = load_checkpoint(out / "latest.sasp")
    b, ib = load_checkpoint(fresh / "latest.sasp")
    assert ia == ib == 3 and a == b
    ma = [(r["iteration"], r["mean_return"]) for r in MetricsLog(out / "metrics.tsv").read()]
    mb = [(r["iteration"], r["mean_return"]) for r in MetricsLog(fresh / "metrics.tsv").read()]
    assert ma == mb


def test_k_sweep_dirs(scen, tmp_path):
    out = tmp_path / "sweep"
    args = ["train", *SMALL, "--scenarios", str(scen), "--output", str(out)]
    args[args.index("--k") + 1] = "1,3"
    assert main(args) == 0
    assert (out / "k1" / "latest.sasp").exists() and (out / "k3" / "latest.sasp").exists()


def test_evaluate_and_replay(scen, tmp_path, capsys):
    ck = tmp_path / "p.sasp"
    save_checkpoint(ck, init_params(observation_dim(load_preset("case5")), 62, (8,), seed=0))
    out = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", str(ck), "--scenarios", str(scen), "--k", "1,62",
                 "--max-steps", "10", "--out", str(out)]) == 0
    assert len((out / "report.tsv").read_text().splitlines()) == 3
    replays = sorted((out / "replays").iterdir())
    assert len(replays) == 4 and 1 <= len(read_replay(replays[0])) <= 10
    assert replays[1].name == "case5_0000_k62.replay" and len(read_replay(replays[1])) == 10
    assert main(["evaluate", "--do-nothing", "--scenarios", str(scen), "--max-steps", "5"]) == 0
    assert "do-nothing" in capsys.readouterr().out
    assert main(["replay", str(replays[0]), "--grid", "case5"]) == 0
    assert main(["replay", str(replays[1]), "--summary"]) == 0
    assert "steps=10" in capsys.readouterr().out


def test_dump_catalogue(capsys):
    assert main(["dump-catalogue", "--grid", "case5"]) == 0
    assert "62 actions" in capsys.readouterr().out
    assert main(["dump-catalogue", "--grid", "case5", "--redispatch"]) == 0
    assert "redispatch=4" in capsys.readouterr().out


def test_errors_exit_nonzero(scen, tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["evaluate", "--do-nothing", "--scenarios", str(empty)]) == 1
    assert capsys.readouterr().err.startswith("error\tConfigError\t")
    wrong = tmp_path / "wrong.sasp"
    save_checkpoint(wrong, init_params(10, 5, (4,)))
    assert main(["evaluate", "--checkpoint", str(wrong), "--scenarios", str(scen)]) == 1
    assert "VersionMismatch" in capsys.readouterr().err
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.sasp"), "--scenarios", str(scen)]) == 1
    assert "IoError" in capsys.readouterr().err
    assert main(["dump-catalogue", "--grid", "nope"]) == 1
    assert error_line(CorruptCheckpoint("bad\ncrc")) == "error\tCorruptCheckpoint\tbad crc"


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "sasgrid.cli", "dump-catalogue"], capture_output=True, text=True)
    assert res.returncode == 0 and "do nothing" in res.stdout
