import math

import pytest

from mcfhyper.config import RunConfig, dumps, eval_number, load, loads
from mcfhyper.errors import ConfigError

SAMPLE = """\
[source]
p_time = 0.10
p_pol = 0.06

[fiber]
loss_db = 3: 0.5, 4': 0.7
phase = 4: pi/2

[path]
basis_phases = 0, pi/2

[run]
seed = 7
"""


def test_defaults():
    cfg = RunConfig()
    assert cfg.franson.delay_a == 1.2e-9
    assert cfg.detectors.efficiency == 0.8
    assert cfg.coincidence.window == 320e-12
    assert cfg.energy_time_scan.integration_time == 30
    assert cfg.path_scan.integration_time == 1
    assert cfg.certify.qkd_threshold == 0.81


def test_parse_sample():
    cfg = loads(SAMPLE)
    assert cfg.source.p_time == 0.1 and cfg.source.p_pol == 0.06
    assert cfg.fiber.loss_db == {"3": 0.5, "4'": 0.7}
    assert cfg.fiber.phase["4"] == pytest.approx(math.pi / 2)
    assert cfg.path.basis_phases == pytest.approx((0.0, math.pi / 2))
    assert cfg.run.seed == 7


def test_numbers():
    assert eval_number("4*pi") == pytest.approx(4 * math.pi)
    assert eval_number("-1.5e-12") == -1.5e-12
    with pytest.raises(ValueError):
        eval_number("__import__('os')")


def test_roundtrip():
    cfg = loads(SAMPLE)
    again = loads(dumps(cfg))
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as err:
        loads("[source]\np_time = 0.1\nbogus = 3\n", "run.ini")
    assert err.value.line == 3
    assert "run.ini:3" in str(err.value)


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError) as err:
        loads("\n[nonsense]\nx = 1\n")
    assert err.value.line == 2


def test_bad_value_reports_line():
    with pytest.raises(ConfigError) as err:
        loads("[run]\nseed = 1\nthreads = many\n")
    assert err.value.line == 3


def test_range_errors_surface_as_config_errors():
    with pytest.raises(ConfigError) as err:
        loads("[source]\n\np_pol = 1.5\n")
    assert err.value.line == 3


def test_cross_checks():
    with pytest.raises(ConfigError, match="steps"):
        loads("[energy_time_scan]\nsteps = 6\n")
    with pytest.raises(ConfigError, match="layout"):
        loads("[path]\ncores_a = 3, 42\n")
    with pytest.raises(ConfigError, match="not fed"):
        loads("[source]\nn_core_pairs = 2\n")
    with pytest.raises(ConfigError, match="not fed"):
        loads("[energy_time_scan]\ncore_pair = 1'\n")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "nope.ini")


def test_hash_changes_iff_field_changes():
    base = RunConfig()
    assert RunConfig().hash() == base.hash()
    assert base.replace(source={"p_pol": 0.01}).hash() != base.hash()
    assert base.replace(path_scan={"steps": 17}).hash() != base.hash()
    assert base.replace(run={"seed": 1}).hash() != base.hash()
    # execution settings do not change results
    assert base.replace(run={"threads": 4, "output": "elsewhere"}).hash() == base.hash()
