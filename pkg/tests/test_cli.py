import json

import pytest
from click.testing import CliRunner

from svlab.cli import main
from svlab.errors import ConfigError, InvalidArgument
from svlab.scenarios import fit_scaling, load_scenario

DELTAS = "0.25,0.125,0.0625"


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def test_run_builtin_writes_outputs(runner, tmp_path):
    res = runner.invoke(main, ["run", "--scenario", "hyperplane", "--out", str(tmp_path), "--delta", DELTAS])
    assert res.exit_code == 0, res.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["scenario"] == "hyperplane"
    assert [r["delta"] for r in rep["results"]] == [0.25, 0.125, 0.0625]
    assert "direction-count slope" in res.output


def test_run_is_deterministic(runner, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        res = runner.invoke(main, ["run", "--scenario", "ruled-quadric", "--out", str(d), "--delta", DELTAS,
                                   "--seed", "5", "--experiments", "directions,kakeya"])
        assert res.exit_code == 0, res.output
        outs.append(sorted(p.name for p in d.iterdir()))
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[2] and outs[1] == outs[3]


def test_run_unknown_scenario(runner, tmp_path):
    res = runner.invoke(main, ["run", "--scenario", "torus", "--out", str(tmp_path)])
    assert res.exit_code != 0
    assert "unknown builtin" in res.output


def test_run_rejects_bad_delta(runner, tmp_path):
    res = runner.invoke(main, ["run", "--scenario", "hyperplane", "--out", str(tmp_path),
                               "--delta", "0.1,0.2,0.05"])
    assert res.exit_code != 0


def test_toml_scenario(runner, tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('[scenario]\nname = "plane"\npolynomial = "x4 + 0.5*x1"\n'
                   'deltas = [0.25, 0.125, 0.0625]\nseed = 2\n')
    sc = load_scenario(cfg)
    assert sc.name == "plane" and sc.seed == 2
    res = runner.invoke(main, ["run", "--scenario", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output


def test_toml_error_reports_line(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[scenario]\nname = "x"\nbuiltin = "hyperplane"\ndeltas = ["a"]\n')
    with pytest.raises(ConfigError) as e:
        load_scenario(cfg)
    assert e.value.line == 4
    cfg.write_text('[scenario]\nbuiltin = "hyperplane"\n[params]\ns = 0.2\n')
    with pytest.raises(ConfigError) as e:
        load_scenario(cfg)
    assert e.value.line == 3
    cfg.write_text('[scenario]\nbuiltin = "hyperplane\n')
    with pytest.raises(ConfigError) as e:
        load_scenario(cfg)
    assert e.value.line == 2


def test_fit_command(runner, tmp_path):
    csv = tmp_path / "d.csv"
    csv.write_text("delta,e_delta_dir\n0.5,4\n0.25,16\n0.125,64\n")
    res = runner.invoke(main, ["fit", "--in", str(csv)])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["slope"] == pytest.approx(2.0, abs=1e-9)
    res = runner.invoke(main, ["fit", "--in", str(csv), "--y", "nope"])
    assert res.exit_code != 0 and "missing column" in res.output


def test_fit_scaling_examples():
    ds = [2.0 ** -k for k in range(3, 7)]
    assert fit_scaling([(d, 7 * d ** -2) for d in ds]).slope == pytest.approx(2.0, abs=1e-9)
    f = fit_scaling([(d, 3.0) for d in ds])
    assert f.slope == pytest.approx(0.0, abs=1e-12) and f.r2 == 1.0
    with pytest.raises(InvalidArgument):
        fit_scaling([(d, 0.0) for d in ds])
    with pytest.raises(InvalidArgument):
        fit_scaling([(0.5, 1.0), (0.25, 2.0)])
