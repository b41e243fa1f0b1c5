import json

import pytest

from mrgbsde import cli
from mrgbsde.errors import ConfigurationError

BASE = """\
vol.sigma_low_sq = 0.25
vol.sigma_high_sq = 1.0
grid.nt = 50
grid.nx = 200
loss.L.threshold = 1
loss.R.threshold = 0.5, -0.5
loss.sep = 0.5
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    out = tmp_path / "out"
    path.write_text(text + f"output.dir = {out}\n")
    return path, out


@pytest.fixture(autouse=True)
def _no_env_dir(monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")


def test_parse_errors_name_the_line():
    with pytest.raises(cli.ConfigParseError, match="line 2: unknown key"):
        cli.parse_config_text("vol.sigma_low_sq = 0.25\nbogus.key = 1\n")
    with pytest.raises(cli.ConfigParseError, match="duplicate"):
        cli.parse_config_text(BASE + "grid.nt = 10\n")
    with pytest.raises(cli.ConfigParseError, match="cannot parse"):
        cli.parse_config_text(BASE.replace("grid.nt = 50", "grid.nt = fifty"))
    with pytest.raises(cli.ConfigParseError, match="expected 'key = value'"):
        cli.parse_config_text(BASE + "nonsense\n")


def test_missing_separation_is_named():
    text = BASE.replace("loss.sep = 0.5\n", "")
    with pytest.raises(ConfigurationError, match="BoundaryPair separation invariant"):
        cli.parse_config_text(text)


def test_echo_round_trip_and_hash():
    cfg = cli.build_config(cli.parse_config_text(BASE))
    again = cli.build_config(cli.parse_config_text(cfg.echo()))
    assert again.echo() == cfg.echo()
    assert again.config_hash() == cfg.config_hash()
    other = cli.build_config(cli.parse_config_text(BASE.replace("grid.nt = 50", "grid.nt = 60")))
    assert other.config_hash() != cfg.config_hash()


def test_solve_writes_outputs(tmp_path, capsys):
    path, out = write_cfg(tmp_path, BASE)
    assert cli.main(["solve", str(path)]) == cli.EXIT_OK
    assert "PASS  flatness_R" in capsys.readouterr().out
    header = (out / "result.csv").read_text().splitlines()[0]
    assert header == "t,E_Y,negE_negY,A,A_R,A_L,slack_L,slack_R"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["verb"] == "solve"
    assert manifest["timestamp"] == "1970-01-01T00:00:00Z"
    assert manifest["all_passed"] is True
    assert set(manifest["versions"]) == {"mrgbsde", "numpy", "scipy", "python"}
    assert (out / "config_resolved.txt").read_text().startswith("vol.sigma_low_sq = 0.25")


def test_output_dir_env_override(tmp_path, monkeypatch):
    path, out = write_cfg(tmp_path, BASE)
    env_out = tmp_path / "elsewhere"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(env_out))
    assert cli.main(["solve", str(path)]) == cli.EXIT_OK
    assert (env_out / "result.csv").exists()
    assert not out.exists()


def test_exit_codes(tmp_path):
    bad, _ = write_cfg(tmp_path, BASE.replace("vol.sigma_high_sq = 1.0", "vol.sigma_high_sq = 0.1"), "bad.cfg")
    assert cli.main(["solve", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["solve", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    nonconv, _ = write_cfg(tmp_path, BASE + "generator.f.coeffs = 0, -1, 0\nsolver.policy = picard\n"
                           "solver.max_iters = 1\n", "iter.cfg")
    assert cli.main(["solve", str(nonconv)]) == cli.EXIT_ITER
    strict, _ = write_cfg(tmp_path, BASE + "solver.tol_flat = 1e-30\n", "strict.cfg")
    assert cli.main(["solve", str(strict)]) == cli.EXIT_CHECK


def test_game_and_verify(tmp_path):
    path, out = write_cfg(tmp_path, BASE + "game.s_count = 11\ngame.q_count = 11\nverify.n_controls = 20\n")
    assert cli.main(["game", str(path)]) == cli.EXIT_OK
    lines = (out / "game.csv").read_text().splitlines()
    assert lines[0] == "s,q,upper,lower"
    assert lines[-1].endswith(",1,0")
    for suite in ("gexp", "kprocess", "game"):
        assert cli.main(["verify", str(path), "--suite", suite]) == cli.EXIT_OK
        assert (out / f"verify_{suite}.csv").exists()


def test_regress_cycle(tmp_path, capsys):
    path, _ = write_cfg(tmp_path, BASE)
    golden = tmp_path / "golden"
    assert cli.main(["regress", str(path), "--golden", str(golden), "--update"]) == cli.EXIT_OK
    assert cli.main(["regress", str(path), "--golden", str(golden)]) == cli.EXIT_OK
    # a changed value is a diff
    result = golden / "result.csv"
    lines = result.read_text().splitlines()
    cells = lines[1].split(",")
    cells[1] = repr(float(cells[1]) + 1e-6)
    lines[1] = ",".join(cells)
    result.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert cli.main(["regress", str(path), "--golden", str(golden)]) == cli.EXIT_REGRESS
    assert "DIFF  result.csv: column E_Y" in capsys.readouterr().out


def test_regress_config_hash_change_is_a_note(tmp_path, capsys):
    path, _ = write_cfg(tmp_path, BASE)
    golden = tmp_path / "golden"
    cli.main(["regress", str(path), "--golden", str(golden), "--update"])
    # same numbers, different resolved config
    path.write_text(path.read_text() + "seed = 7\n")
    capsys.readouterr()
    assert cli.main(["regress", str(path), "--golden", str(golden)]) == cli.EXIT_OK
    assert "NOTE  manifest: config hash differs" in capsys.readouterr().out
