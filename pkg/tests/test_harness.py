import json
from dataclasses import replace

import pytest

from rlmac import cli
from rlmac.config import ConfigError, config_from_dict, parse_config
from rlmac.harness import (
    MetricsRecord, MetricsSeries, RunSummary, compare_baseline, export_metrics, jain_index, metrics_columns,
    run_scenario, run_sweep, with_value,
)

MIN = {"topology": "fully_connected(3)", "mac": "rra", "duration": 40, "seed": 1}


def cfg(**kw):
    d = dict(MIN)
    d.update(kw)
    return config_from_dict(d)


# ---------------------------------------------------------------- config

def test_minimal_defaults():
    c = cfg()
    assert c.seeds == (1,)
    assert c.learning.alpha == 0.9 and c.reward.r_plus == 50 and c.channel.per == 0
    assert c.rra.epoch_tau == 100 and c.tdma.s == 7 and c.convergence.window == 50
    assert c.traffic.loads == {1: 0.5, 2: 0.5, 3: 0.5}


def test_per_out_of_range():
    with pytest.raises(ConfigError) as e:
        cfg(channel={"per": 1.5})
    assert e.value.path == "/channel/per"


def test_unknown_mac_lists_values():
    with pytest.raises(ConfigError) as e:
        cfg(mac="csma")
    assert e.value.path == "/mac"
    assert "aloha" in str(e.value) and "tdma-mab" in str(e.value)


def test_unknown_key_path():
    with pytest.raises(ConfigError) as e:
        cfg(rra={"epoch_tau": 100, "epcoh": 3})
    assert e.value.path == "/rra/epcoh"


def test_missing_required():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"topology": "paper_5node", "mac": "rra"})
    assert e.value.path == "/duration"


def test_type_mismatch():
    with pytest.raises(ConfigError) as e:
        cfg(duration="long")
    assert e.value.path == "/duration"


def test_unknown_preset():
    with pytest.raises(ConfigError) as e:
        cfg(topology="hexagon(3)")
    assert e.value.path == "/topology"


def test_sweep_axis_mismatch():
    with pytest.raises(ConfigError):
        cfg(sweep={"axis": "K", "values": [1.2]})
    with pytest.raises(ConfigError):
        with_value(cfg(), "K", 1.5)


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(MIN))
    assert parse_config(p).mac == "rra"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(p)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")


# ---------------------------------------------------------------- records

def test_record_sums():
    r = MetricsRecord(0, (0.1, 0.2, None), (0.0, 0.5, None), (0.0, 0.0, None))
    assert r.S == pytest.approx(0.3)
    assert r.collision_rate == pytest.approx(0.25)
    assert jain_index([1, 1, 1]) == 1.0
    assert jain_index([1, 0, 0]) == pytest.approx(1 / 3)


@pytest.mark.parametrize("mac,extra", [
    ("rra", {}), ("aloha", {}),
    ("tdma-mab", {"duration": 200, "tdma": {"offsets_tau": {"1": 0, "2": 0.4, "3": 0.75}}}),
])
def test_run_scenario_invariants(mac, extra):
    c = cfg(mac=mac, **extra)
    series, summ = run_scenario(c, 0)
    assert len(series) == c.duration
    for r in series.records:
        assert r.S == sum(x for x in r.s if x is not None)
        for x in r.s + r.collision:
            assert x is None or 0 <= x <= 1
    assert summ.status in ("converged", "not-converged", "n/a")
    if summ.convergence is not None:
        assert summ.convergence <= c.duration


def test_export_lines_and_determinism(tmp_path):
    c = cfg(duration=100)
    s1, m1 = run_scenario(c, 4)
    s2, m2 = run_scenario(c, 4)
    p1 = export_metrics(s1, tmp_path / "a", m1)
    p2 = export_metrics(s2, tmp_path / "b", m2)
    raw = p1[0].read_bytes()
    assert raw.count(b"\n") == 101 and b"\r" not in raw
    assert raw.splitlines()[0].decode() == ",".join(metrics_columns(s1.nodes))
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()
    _, m3 = run_scenario(c, 5)
    assert m3.flat() != m1.flat()


def test_export_empty_series(tmp_path):
    with pytest.raises(ValueError):
        export_metrics(MetricsSeries([1], []), tmp_path)


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    s, _ = run_scenario(cfg(duration=5), 0)
    with pytest.raises(OSError):
        export_metrics(s, blocker / "sub")


def test_summary_file_flat(tmp_path):
    s, m = run_scenario(cfg(duration=20), 0)
    paths = export_metrics(s, tmp_path, m)
    lines = paths[1].read_text().splitlines()
    assert all("=" in ln for ln in lines)
    keys = [ln.split("=")[0] for ln in lines]
    assert {"mac", "seed", "status", "mean_S", "ratio_vs_aloha", "final_redundancy"} <= set(keys)


def test_sweep_row_count():
    c = cfg(duration=20, baseline=False)
    res = run_sweep(c, "load", [0.2, 0.5, 1.0], [0, 1])
    assert len(res.rows) == 6 and len(res.aggregate) == 3
    assert [a["n"] for a in res.aggregate] == [2, 2, 2]


def test_sweep_n_nodes():
    res = run_sweep(cfg(duration=10, baseline=False), "n_nodes", [2, 4], [0])
    assert [len([k for k in r if k.startswith("s_")]) for r in res.rows] == [2, 4]


def test_compare_baseline():
    a = RunSummary("rra", 0, 10, "n/a", None, 0.3, {1: 0.1}, 0.1, "x")
    b = RunSummary("aloha", 0, 10, "n/a", None, 0.3, {1: 0.1}, 0.2, "x")
    rep = compare_baseline(a, b)
    assert rep.ratio == 1.0 and rep.fairer
    with pytest.raises(ValueError):
        compare_baseline(a, replace(b, scenario="y"))


# ---------------------------------------------------------------- cli

def _write(tmp_path, data):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_cli_validate_and_run(tmp_path, capsys):
    p = _write(tmp_path, dict(MIN, duration=10, name="t"))
    assert cli.main(["validate", "--config", p]) == 0
    out = tmp_path / "out"
    assert cli.main(["run", "--config", p, "--seeds", "0-1", "--out", str(out)]) == 0
    assert sorted(x.name for x in out.iterdir()) == [
        "t_seed0.metrics.csv", "t_seed0.summary.txt", "t_seed1.metrics.csv", "t_seed1.summary.txt"]
    assert cli.main(["run", "--config", p, "--seed", "3", "--mac-override", "aloha", "--out", str(out)]) == 0
    assert "mac=aloha" in (out / "t_seed3.summary.txt").read_text()


def test_cli_sweep(tmp_path):
    p = _write(tmp_path, dict(MIN, duration=10, name="t", baseline=False))
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", p, "--axis", "load", "--values", "0.2,0.4", "--seeds", "0,1",
                     "--out", str(out)]) == 0
    rows = (out / "t_sweep_load.csv").read_text().splitlines()
    assert len(rows) == 1 + 4


def test_cli_exit_codes(tmp_path):
    bad = _write(tmp_path, dict(MIN, bogus=1))
    assert cli.main(["run", "--config", bad]) == 1
    assert cli.main(["validate", "--config", str(tmp_path / "none.json")]) == 1
    assert cli.main(["run", "--config", _write(tmp_path, MIN), "--seeds", "x"]) == 1
    good = _write(tmp_path, dict(MIN, duration=5))
    blocker = tmp_path / "blk"
    blocker.write_text("")
    assert cli.main(["run", "--config", good, "--out", str(blocker)]) == 2


def test_parse_seeds():
    assert cli.parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    with pytest.raises(ConfigError):
        cli.parse_seeds("3-1")
