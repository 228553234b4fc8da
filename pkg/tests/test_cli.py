import csv

import pytest

from kacfront.cli import (EXIT_AUDIT, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, RunConfig, UsageError,
                          load_config, main, parse_config_text)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_config_parsing():
    cfg = parse_config_text("beta = 2.0  # comment\n# full line\n\nlambda = 0.5\neps=0.1\n")
    assert cfg == {"beta": 2.0, "lam": 0.5, "epsilon": 0.1}
    with pytest.raises(UsageError):
        parse_config_text("nonsense = 1")
    with pytest.raises(UsageError):
        parse_config_text("beta 2")


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("# nothing\n")
    assert load_config(str(p)) == RunConfig()


def test_optimize_writes_table(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["optimize", "--R", "1", "--T", "1", "--eps", "0.05", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "w_n.csv")
    assert rows[0] == ["n", "w_n"]
    w = [float(r[1]) for r in rows[1:]]
    assert w.index(min(w)) == 1
    assert "minimizer n = 1" in capsys.readouterr().out
    man = (out / "manifest.txt").read_text()
    assert "config.beta = 1.5" in man and "exit_status = 0" in man and "version.numpy" in man


def test_outputs_are_bit_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["centers", "--centers=-6,9", "--seed", "7", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "centers.csv").read_bytes() == (tmp_path / "b" / "centers.csv").read_bytes()


def test_seventeen_digits(tmp_path):
    assert main(["instanton", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "instanton.csv")
    assert rows[0] == ["x", "m", "dm"]
    assert len(rows) == 802
    m = rows[400 + 50][1]
    assert len(m.replace("-", "").replace(".", "").lstrip("0").split("e")[0]) >= 16


@pytest.mark.parametrize("argv,code", [
    (["optimize", "--set", "bogus=1"], EXIT_USAGE),
    (["optimize", "--config", "/no/such/file"], EXIT_USAGE),
    (["frobnicate"], EXIT_USAGE),
    (["optimize", "--beta", "0.5"], EXIT_DOMAIN),
    (["centers", "--centers=-3,4"], EXIT_DOMAIN),
    (["selftest", "--only", "2"], EXIT_AUDIT),
])
def test_exit_codes(tmp_path, argv, code):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_selftest_subset_passes(tmp_path):
    assert main(["selftest", "--only", "1,3,7", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "acceptance.csv")
    assert [r[2] for r in rows[1:]] == ["1", "1", "1"]


def test_spectral_gap_dense(tmp_path):
    assert main(["spectral-gap", "--dense", "--out", str(tmp_path)]) == EXIT_OK
    items = dict(read_csv(tmp_path / "spectral_gap.csv")[1:])
    assert float(items["relative_difference"]) < 0.02


def test_particle_model_from_file(tmp_path):
    sched = tmp_path / "s.csv"
    sched.write_text("time,kind,index,position\n0,move,1,-10\n400,move,1,10\n")
    assert main(["particle-model", "--schedule", str(sched), "--out", str(tmp_path)]) == EXIT_OK
    items = dict(read_csv(tmp_path / "bounds.csv")[1:])
    assert float(items["bare_bound"]) == pytest.approx(0.6983952777627882, rel=1e-9)
