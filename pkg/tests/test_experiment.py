import json

import numpy as np
import pytest

from mcfhyper.cli import main
from mcfhyper.config import RunConfig
from mcfhyper.experiment import report, run_energy_time_scan, run_path_scan, summary_text


def test_ideal_energy_time_scan():
    cfg = RunConfig().replace(run={"mode": "analytic"})
    res = run_energy_time_scan(cfg, oracle=True)
    for basis in res.bases.values():
        assert basis.oracle_diff < 1e-12
        for ff in basis.fits.values():
            assert ff.visibility.value == pytest.approx(1.0, abs=1e-9)
    assert set(res.bases["DA"].fits) == {"DD", "AA"}
    assert all(v.passed for v in res.qkd.values())


def test_da_basis_correlations():
    cfg = RunConfig().replace(run={"mode": "analytic"})
    res = run_energy_time_scan(cfg)
    rec = res.bases["DA"].records[0]
    # DD (D1/D3) and AA (D2/D4) carry the signal, DA/AD only background
    assert rec.net[("D1", "D3")] > 1000 and rec.net[("D2", "D4")] > 1000
    assert rec.net[("D1", "D4")] == pytest.approx(0, abs=1e-6)
    assert rec.net[("D2", "D3")] == pytest.approx(0, abs=1e-6)


def test_table_scale_dephasing():
    cfg = RunConfig().replace(source={"p_time": 0.10, "p_pol": 0.06}, run={"seed": 3})
    res = run_energy_time_scan(cfg)
    for b in res.bases.values():
        for ff in b.fits.values():
            assert abs(ff.visibility.value - 0.90) < 3 * ff.visibility.sigma
    pol = res.bases["DA"].pol_pooled
    assert abs(pol.value - 0.94) < 3 * pol.sigma


def test_polarization_flags_franson_minima():
    cfg = RunConfig().replace(run={"mode": "analytic"})
    b = run_energy_time_scan(cfg).bases["HV"]
    flagged = [i for i, (_, f) in enumerate(b.pol_steps) if f]
    x = b.x
    assert flagged
    # flagged steps sit where cos(phi_B) is close to -1
    assert all(np.cos(x[i]) < -0.5 for i in flagged)


def test_ideal_path_scan():
    cfg = RunConfig().replace(run={"mode": "analytic"})
    res = run_path_scan(cfg, oracle=True)
    for s in res.settings:
        assert s.visibility.value == pytest.approx(1.0, abs=1e-9)
        assert s.oracle_diff < 1e-12
    assert res.point.fidelity == pytest.approx(1.0, abs=1e-9)
    assert res.bound.schmidt_number == 4


def test_path_dephasing_chain():
    cfg = RunConfig().replace(source={"p_path": 0.033}, run={"seed": 5})
    res = run_path_scan(cfg)
    for s in res.settings:
        assert abs(s.visibility.value - 0.967) < 3 * s.visibility.sigma
    assert res.point.offdiag == pytest.approx(0.24, abs=0.006)
    assert res.bound.fidelity >= 0.95 - 3 * 0.004
    assert res.bound.schmidt_number == 4


def test_length_offset_kills_certification():
    cfg = RunConfig().replace(path={"length_offsets": {"4": 5e-12}}, run={"seed": 2})
    res = run_path_scan(cfg)
    for s in res.settings:
        assert s.visibility.value < 3 * s.visibility.sigma + 0.01
    assert res.bound.schmidt_number == 1


def test_report_files_and_determinism(tmp_path):
    cfg = RunConfig().replace(run={"seed": 9})
    et, path = run_energy_time_scan(cfg), run_path_scan(cfg)
    out1 = report(cfg, et, path, tmp_path / "a")
    et2, path2 = run_energy_time_scan(cfg), run_path_scan(cfg)
    out2 = report(cfg, et2, path2, tmp_path / "b")
    for f in ("energy_time_core1_HV.csv", "energy_time_core1_DA.csv", "path_setting0.csv",
              "path_setting1.csv", "path_diagonals.csv", "summary.txt", "config.ini"):
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes()
    summary = (out1 / "summary.txt").read_text()
    assert "qkd.time.HH" in summary and "vs 0.81" in summary
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash()
    assert set(manifest["artifacts"]) >= {"summary.txt", "path_setting0.csv"}
    assert manifest["scan_targets"]["energy_time"]["varies"] == "franson.phase_b"
    assert manifest["scan_targets"]["path"]["varies"] == "path.theta"


def test_scan_targets_vary_only_their_phase():
    cfg = RunConfig().replace(run={"mode": "analytic"}, franson={"phase_a": 0.4})
    res = run_energy_time_scan(cfg)
    b = res.bases["HV"]
    y = np.array([r.net[("D1", "D3")] for r in b.records])
    # HH follows 1 + cos(phase_a + phi_B) with phase_a held fixed
    expected = 1 + np.cos(0.4 + b.x)
    assert np.allclose(y / y.max(), expected / expected.max(), atol=1e-9)


def test_thread_count_independence():
    cfg = RunConfig().replace(run={"seed": 4})
    a = summary_text(cfg, run_energy_time_scan(cfg), run_path_scan(cfg))
    cfg4 = cfg.replace(run={"threads": 4})
    b = summary_text(cfg4, run_energy_time_scan(cfg4), run_path_scan(cfg4))
    assert a == b


def test_cli_all_and_certify(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["all", "--out", str(out), "--seed", "1", "--oracle"]) == 0
    text = capsys.readouterr().out
    assert "oracle: max" in text and "(ok)" in text
    assert main(["certify", "--from", str(out)]) == 0
    text = capsys.readouterr().out
    assert "certified_schmidt_number = 4" in text
    assert main(["certify", "--visibility", "0.976:0.006", "0.958:0.009",
                 "--diagonals", "0.233", "0.233", "0.233", "0.233"]) == 0
    assert "schmidt=4" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[source]\np_pol = 2\n")
    assert main(["energy-time", "--config", str(bad)]) == 2
    assert f"{bad}:2" in capsys.readouterr().err
