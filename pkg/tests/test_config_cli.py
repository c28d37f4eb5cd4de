import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest
import yaml

from siqkd.cli import main
from siqkd.config import (
    ConfigFileError,
    ConfigInvariantError,
    ConfigSchemaError,
    SweepSpec,
    config_from_dict,
    config_hash,
    dump_config,
    parse_config,
)
from siqkd.protocol import QkdProtocol

SHIPPED = ["cow_20km.yaml", "bb84_pol_20km.yaml", "bb84_tb_20km.yaml"]


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_parse_and_round_trip(config_dir, name):
    cfg = parse_config(config_dir / name)
    assert cfg.scenario.channel.length_km == 20
    text = dump_config(cfg)
    again = config_from_dict(yaml.safe_load(text))
    assert again == cfg
    assert dump_config(again) == text
    assert config_hash(again) == config_hash(cfg)


def test_protocol_names(config_dir):
    got = [parse_config(config_dir / n).scenario.protocol.protocol for n in SHIPPED]
    assert got == [QkdProtocol.COW, QkdProtocol.BB84_POL, QkdProtocol.BB84_TB]


def test_negative_mu_names_field():
    with pytest.raises(ConfigInvariantError, match="mu"):
        config_from_dict({"protocol": {"name": "cow", "mu": -1}})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigSchemaError, match="colour"):
        config_from_dict({"channel": {"colour": "blue"}})
    with pytest.raises(ConfigSchemaError, match="extras"):
        config_from_dict({"extras": {}})


def test_type_errors():
    with pytest.raises(ConfigSchemaError):
        config_from_dict({"channel": {"length_km": "far"}})
    with pytest.raises(ConfigSchemaError):
        config_from_dict({"seed": 1.5})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigFileError):
        parse_config(tmp_path / "nope.yaml")


def test_sweep_spec():
    assert SweepSpec.parse("0:20:10").distances() == [0, 10, 20]
    assert SweepSpec.parse("0:25:10").distances() == [0, 10, 20]
    for bad in ("0:10", "5:0:1", "0:10:0", "a:b:c"):
        with pytest.raises(ValueError):
            SweepSpec.parse(bad)


def _write(tmp_path, cfg):
    path = tmp_path / "cfg.yaml"
    path.write_text(dump_config(cfg))
    return path


@pytest.fixture
def small_cfg(config_dir, tmp_path):
    cfg = parse_config(config_dir / "bb84_pol_20km.yaml")
    cfg = replace(cfg, num_symbols=20_000, output=replace(cfg.output, dir=str(tmp_path / "out")))
    return _write(tmp_path, cfg)


def test_cli_run_outputs(small_cfg, tmp_path):
    assert main(["run", "--config", str(small_cfg), "--format", "csv,svg"]) == 0
    out = tmp_path / "out"
    lines = (out / "bb84_pol_20km_analytic.csv").read_text().splitlines()
    assert lines[0] == "distance_km,loss_db,click_prob,qber,visibility,raw_rate_hz,secret_fraction,secret_rate_hz"
    assert len(lines) == 2
    assert (out / "bb84_pol_20km_events.csv").exists()
    ET.parse(out / "bb84_pol_20km.svg")
    prov = json.loads((out / "bb84_pol_20km_provenance.json").read_text())
    assert prov["seed"] == 20170302
    assert len(prov["config_sha256"]) == 64


def test_cli_sweep_rows(small_cfg, tmp_path):
    assert main(["sweep", "--config", str(small_cfg), "--sweep", "0:20:10", "--symbols", "0"]) == 0
    lines = (tmp_path / "out" / "bb84_pol_20km_analytic.csv").read_text().splitlines()
    assert len(lines) == 4
    assert [float(l.split(",")[0]) for l in lines[1:]] == [0, 10, 20]


def test_cli_is_byte_reproducible(small_cfg, tmp_path):
    d = tmp_path / "o"
    snapshots = []
    for _ in range(2):
        assert main(["run", "--config", str(small_cfg), "--out", str(d), "--seed", "9", "--format", "csv,svg"]) == 0
        snapshots.append({f.name: f.read_bytes() for f in d.iterdir()})
    assert len(snapshots[0]) == 5
    assert snapshots[0] == snapshots[1]


def test_cli_exit_codes(small_cfg, tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("protocol:\n  name: cow\n  mu: -1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "mu" in capsys.readouterr().err
    assert main(["sweep", "--config", str(small_cfg), "--sweep", "0:1"]) == 2
    # a 1 GHz clock cannot carry three 1.5 ns time-bin slots
    assert main(["run", "--config", str(small_cfg), "--protocol", "bb84-tb"]) == 3


def test_cli_calibrate_writes_config(small_cfg, tmp_path):
    target = tmp_path / "cal.yaml"
    rc = main(["calibrate", "--config", str(small_cfg), "--target-qber", "0.015", "--write", str(target)])
    assert rc == 0
    cfg = parse_config(target)
    from siqkd.pipeline import analytic_row

    assert analytic_row(cfg.scenario).qber == pytest.approx(0.015, abs=1e-6)


def test_console_entry_point(small_cfg):
    res = subprocess.run(
        [sys.executable, "-m", "siqkd.cli", "run", "--config", str(small_cfg), "--symbols", "0"],
        capture_output=True, text=True,
    )
    assert res.returncode == 0
    assert "QBER" in res.stdout


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_run_within_budget(config_dir, name):
    import time

    from siqkd.runner import run_scenario

    cfg = parse_config(config_dir / name)
    assert cfg.num_symbols == 1_000_000
    t0 = time.perf_counter()
    res = run_scenario(cfg, sweep=False)
    assert time.perf_counter() - t0 < 60
    assert len(res.analytic) == len(res.montecarlo) == 1
    assert res.provenance["config_sha256"] == config_hash(cfg)


def test_analytic_only_csv_is_one_table(small_cfg, tmp_path):
    d = tmp_path / "a"
    assert main(["run", "--config", str(small_cfg), "--symbols", "0", "--out", str(d), "--format", "csv"]) == 0
    assert sorted(p.suffix for p in d.iterdir()) == [".csv", ".json"]
