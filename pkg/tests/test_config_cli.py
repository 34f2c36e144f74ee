import pytest
import yaml

from solace import config as cf
from solace.cli import CliError, main, parse_seeds
from solace.engine import Scenario

from conftest import line_feature, polygon_feature, rect, write_fc

FAST = ["--set", "sim.horizon=40"]


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_defaults_reproduce_tables():
    cfg = cf.defaults()
    assert cfg["bonds"]["Partner"] == 8.82 and cfg["bonds"]["Stranger"] == 2.17
    sc = {n: cf.scenario(cfg, n) for n in ("S1", "S2", "S3", "S4")}
    assert sc["S2"].time_of_day == "night" and sc["S3"].include_disabled and sc["S4"].intensity == 8
    spec = cf.population_spec(cfg)
    assert spec.total("day") == spec.total("night") == 4352


def test_unknown_key_rejected(tmp_path):
    path = write_cfg(tmp_path, {"scenarios": {"S1": {"intesity": 7}}})
    with pytest.raises(cf.ConfigError, match="intesity"):
        cf.load_config(path)
    with pytest.raises(cf.ConfigError, match="sim.horizn"):
        cf.load_config(None, ["sim.horizn=3"])


def test_set_overrides_and_new_scenarios(tmp_path):
    path = write_cfg(tmp_path, {"scenarios": {"fog": {"time_of_day": "day", "k": 0.8}}})
    cfg = cf.load_config(path, ["sim.horizon=20", "bonds.Friend=6.5"])
    assert cfg["sim"]["horizon"] == 20
    assert cfg["bonds"]["Friend"] == 6.5
    fog = cf.scenario(cfg, "fog", seed=3)
    assert fog == Scenario("fog", "day", 6, False, 0.8, "altruistic", 3)
    with pytest.raises(cf.ConfigError):
        cf.scenario(cfg, "S9")


def test_invalid_values_rejected():
    with pytest.raises(cf.ConfigError):
        cf.load_config(None, ["scenarios.S1.intensity=13"])
    with pytest.raises(cf.ConfigError):
        cf.load_config(None, ["behaviors.Milling.probability=2"])
    with pytest.raises(cf.ConfigError):
        cf.load_config(None, ["noequals"])


def test_dump_roundtrip():
    cfg = cf.load_config(None, ["seed=9"])
    assert yaml.safe_load(cf.dump_config(cfg)) == cfg


def test_parse_seeds():
    assert parse_seeds("1..3") == [1, 2, 3]
    assert parse_seeds("5..5") == [5]
    assert parse_seeds("4,1") == [4, 1]
    for bad in ("3..1", "a..b", ""):
        with pytest.raises(CliError):
            parse_seeds(bad)


def test_cli_unknown_key_exit_1(tmp_path, capsys):
    path = write_cfg(tmp_path, {"intesity": 6})
    assert main(["run", path, "--out", str(tmp_path)]) == 1
    assert "intesity" in capsys.readouterr().err


def test_cli_run_writes_two_files_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--seed", "42", "--out", str(a)] + FAST) == 0
    assert main(["run", "--seed", "42", "--out", str(b)] + FAST) == 0
    assert sorted(p.name for p in a.iterdir()) == ["S1_42.csv", "S1_42_trace.csv"]
    for name in ("S1_42.csv", "S1_42_trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = (a / "S1_42.csv").read_text().splitlines()
    assert len(rows) == 42
    assert rows[1].split(",")[2] == "0.000000"


def test_cli_batch(tmp_path):
    out = tmp_path / "batch"
    assert main(["batch", "--scenarios", "S1", "--seeds", "1..3", "--out", str(out), "--workers", "1",
                 "--no-report"] + FAST) == 0
    assert sorted(p.name for p in out.glob("S1_?.csv")) == ["S1_1.csv", "S1_2.csv", "S1_3.csv"]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "scenario,category,mean_final_frac,sd,n"
    assert all(line.endswith(",3") for line in summary[1:]) and len(summary) == 6

    single = tmp_path / "single"
    assert main(["batch", "--scenarios", "S2", "--seeds", "5..5", "--out", str(single), "--workers", "1"]
                + FAST) == 0
    assert [p.name for p in single.glob("S2_*.csv") if "trace" not in p.name] == ["S2_5.csv"]
    assert (single / "arrivals.png").stat().st_size > 0


def test_cli_batch_unknown_scenario(tmp_path, capsys):
    assert main(["batch", "--scenarios", "S7", "--seeds", "1", "--out", str(tmp_path)]) == 1
    assert "S7" in capsys.readouterr().err


def test_effective_config_echo_reproduces(tmp_path, capsys):
    assert main(["run", "--print-effective-config", "--seed", "7", "--set", "sim.horizon=30",
                 "--set", "bonds.Friend=6"]) == 0
    echoed = capsys.readouterr().out
    assert yaml.safe_load(echoed)["bonds"]["Friend"] == 6
    eff = tmp_path / "eff.yaml"
    eff.write_text(echoed)
    assert main(["run", "--seed", "7", "--set", "sim.horizon=30", "--set", "bonds.Friend=6",
                 "--out", str(tmp_path / "x")]) == 0
    assert main(["run", str(eff), "--out", str(tmp_path / "y")]) == 0
    assert (tmp_path / "x" / "S1_7.csv").read_bytes() == (tmp_path / "y" / "S1_7.csv").read_bytes()


def test_environment_error_exit_2(tmp_path, capsys):
    broken = tmp_path / "roads.geojson"
    broken.write_text("{not json")
    write_fc(tmp_path / "b.geojson", [polygon_feature(1, rect(0, 5, 10, 15), height=8, use="home")])
    write_fc(tmp_path / "s.geojson", [polygon_feature("s", rect(50, -5, 60, 5))])
    write_fc(tmp_path / "z.geojson", [])
    path = write_cfg(tmp_path, {"environment": {"buildings": "b.geojson", "roads": "roads.geojson",
                                                "safe_areas": "s.geojson", "soil": "z.geojson"}})
    assert main(["validate", path]) == 2
    assert "environment" in capsys.readouterr().err


def test_synthesis_error_exit_2(tmp_path, capsys):
    # a valid environment without schools or workplaces
    write_fc(tmp_path / "b.geojson", [polygon_feature(1, rect(0, 5, 10, 15), height=8, use="home")])
    write_fc(tmp_path / "r.geojson", [line_feature(1, [(0, 0), (50, 0)], width=6)])
    write_fc(tmp_path / "s.geojson", [polygon_feature("s", rect(50, -5, 60, 5))])
    write_fc(tmp_path / "z.geojson", [])
    path = write_cfg(tmp_path, {"environment": {"buildings": "b.geojson", "roads": "r.geojson",
                                                "safe_areas": "s.geojson", "soil": "z.geojson"}})
    assert main(["validate", path]) == 0
    assert main(["run", path, "--out", str(tmp_path / "o")] + FAST) == 2
    assert "no building with use" in capsys.readouterr().err


def test_validate_bundled(capsys):
    assert main(["validate"]) == 0
    assert "2272 buildings" in capsys.readouterr().err
