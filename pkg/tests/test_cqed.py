import csv
import hashlib

import pytest

import cqed
from errors import IntegrationError


def _run(tmp_path, *argv):
    return cqed.main(["--log-file", str(tmp_path / "cqed.log"), "--quiet", *argv])


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return [row for row in csv.reader(f) if row and not row[0].startswith("#")]


@pytest.fixture
def busy_config(tmp_path):
    path = tmp_path / "busy.cfg"
    path.write_text("rate_lambda = 3000\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def busy_run(tmp_path, busy_config):
    out = tmp_path / "run"
    assert _run(tmp_path, "simulate", "--config", busy_config, "--seed", "3", "--cycles", "50",
                "--out", str(out), "--workers", "1", "--grid-points", "9") == 0
    return out


@pytest.mark.parametrize("ibar, expected", [("1976", "g2_min=0.400 g2_max=1.600"),
                                            ("783", "g2_min=0.815 g2_max=1.185")])
def test_estimators(tmp_path, capsys, ibar, expected):
    assert _run(tmp_path, "analyze", "estimators", "--ibar", ibar, "--inoise", "446") == 0
    assert capsys.readouterr().out.strip() == expected


def test_estimators_need_rates(tmp_path):
    assert _run(tmp_path, "analyze", "estimators", "--ibar", "1976") == 2


def test_simulate_rejects_bad_input(tmp_path):
    assert _run(tmp_path, "simulate", "--cycles", "0", "--out", str(tmp_path / "a")) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("warp_factor = 9\n", encoding="utf-8")
    assert _run(tmp_path, "simulate", "--config", str(bad), "--cycles", "5",
                "--out", str(tmp_path / "b")) == 2


def test_simulate_is_reproducible(tmp_path, busy_config):
    digests = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert _run(tmp_path, "simulate", "--config", busy_config, "--seed", "11", "--cycles", "10",
                    "--out", str(out), "--workers", "1", "--grid-points", "5") == 0
        digests.append((_digest(out / "clicks.csv"), _digest(out / "truth.csv")))
    assert digests[0] == digests[1]

    manifest = (tmp_path / "first" / "manifest.txt").read_text(encoding="utf-8")
    assert "seed = 11" in manifest
    assert "config.rate_lambda = 3000.0" in manifest


def test_malformed_click_files(tmp_path):
    bad_header = tmp_path / "bad_header.csv"
    bad_header.write_text("# cqed-clicks v9, tau_period_ns=4000\n0,1,5\n", encoding="utf-8")
    assert _run(tmp_path, "analyze", "g2", "--in", str(bad_header), "--out", str(tmp_path)) == 3

    bad_row = tmp_path / "bad_row.csv"
    bad_row.write_text("# cqed-clicks v1, tau_period_ns=4000, tau_pump_ns=2000, pulses_per_cycle=2000, "
                       "cycles=1, seed=-\n0,1,5\n0,1\n", encoding="utf-8")
    assert _run(tmp_path, "analyze", "g2", "--in", str(bad_row), "--out", str(tmp_path)) == 3


def test_analyze_g2(tmp_path, busy_run):
    out = tmp_path / "g2"
    assert _run(tmp_path, "analyze", "g2", "--in", str(busy_run / "clicks.csv"), "--out", str(out),
                "--bin-ns", "1000", "--range-us", "20", "--svg") == 0
    rows = _rows(out / "g2.csv")
    assert rows[0] == ["lag_ns", "g2", "raw_pairs", "sigma"]
    assert len(rows) == 1 + 40
    assert float(rows[1][0]) == -19500.0
    assert (out / "g2.svg").exists()

    manifest = (out / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert manifest[0] == "command = analyze"
    assert "mode = g2" in manifest
    assert "bin_ns = 1000" in manifest and "range_us = 20.0" in manifest
    assert f"input = {busy_run / 'clicks.csv'}" in manifest


def test_analyze_conditional_and_pdeltak(tmp_path, busy_run):
    out = tmp_path / "cond"
    clicks = str(busy_run / "clicks.csv")
    assert _run(tmp_path, "analyze", "conditional", "--in", clicks, "--out", str(out),
                "--delta-range", "5") == 0
    summary = (out / "summary.txt").read_text(encoding="utf-8")
    assert "p_atom = " in summary and "g2(0) = " in summary
    assert len(_rows(out / "conditional_g2.csv")) == 1 + 11

    assert _run(tmp_path, "analyze", "pdeltak", "--in", clicks, "--out", str(out), "--delta-range", "4") == 0
    rows = _rows(out / "pdeltak.csv")
    assert rows[0] == ["delta_k", "p_bar", "sigma"]
    assert [int(r[0]) for r in rows[1:]] == list(range(-4, 5))


def test_analyze_background(tmp_path, busy_run, capsys):
    out = tmp_path / "bg"
    assert _run(tmp_path, "analyze", "background", "--in", str(busy_run / "clicks.csv"),
                "--out", str(out)) == 0
    assert "g2C_min=" in capsys.readouterr().out
    assert len(_rows(out / "background.csv")) == 1 + 100
    assert _rows(out / "background_split.csv")[0][-1] == "g2_different_atom"


def test_efficiency_table(tmp_path):
    path = tmp_path / "eff.csv"
    assert _run(tmp_path, "efficiency", "--grid-points", "2", "--out", str(path)) == 0
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# integrator=")
    rows = _rows(path)
    assert rows[0] == ["g_eff_hz", "g_over_gmax", "probability", "escape_weighted"]
    assert float(rows[1][2]) == 0.0
    assert 0.4 < float(rows[2][2]) < 0.8

    manifest = (tmp_path / "manifest.txt").read_text(encoding="utf-8")
    assert "command = efficiency" in manifest and "grid_points = 2" in manifest
    assert "config.escape_fraction = 0.9" in manifest


def test_calibrate_zero_target(tmp_path, capsys):
    cfg = tmp_path / "calibrated.cfg"
    assert _run(tmp_path, "calibrate", "--target-hz", "0", "--grid-points", "2",
                "--write-config", str(cfg)) == 0
    assert "rate_lambda=0.000" in capsys.readouterr().out
    assert "rate_lambda = 0.0" in cfg.read_text(encoding="utf-8")
    manifest = (tmp_path / "manifest.txt").read_text(encoding="utf-8")
    assert "command = calibrate" in manifest and "target_hz = 0.0" in manifest


def test_integrator_failure_exit_code(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise IntegrationError("step size underflow")

    monkeypatch.setattr(cqed, "tabulate_efficiency", broken)
    assert _run(tmp_path, "efficiency", "--out", str(tmp_path / "eff.csv")) == 4


def test_unexpected_failure_exit_code(tmp_path, monkeypatch):
    def crash(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cqed, "tabulate_efficiency", crash)
    assert _run(tmp_path, "efficiency", "--out", str(tmp_path / "eff.csv")) == 1
