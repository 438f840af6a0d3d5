import pytest

from transona.config import DEFAULTS, check_inputs, config_from_dict, load_config
from transona.errors import ConfigError


def minimal(**over):
    raw = {"inputs": {"tutor": "t.csv", "positions": "p.csv", "observations": "o.csv", "layout": "l.json"},
           "output": {"dir": "out"}, "bootstrap": {"seed": 3}}
    for k, v in over.items():
        raw.setdefault(k, {}).update(v)
    return raw


def test_defaults_applied_and_recorded():
    cfg = config_from_dict(minimal())
    assert cfg.get("tif.spatial") == 20.0 and cfg.get("model.unit_mode") == "WHOLE"
    assert "tif.spatial" in cfg.defaults_applied and "bootstrap.seed" not in cfg.defaults_applied
    assert cfg.tif.window_ms("TUTOR_LOG") == 5000
    assert cfg.alignment_params.max_range_mm is None


def test_missing_layout_names_key_path():
    raw = minimal()
    del raw["inputs"]["layout"]
    with pytest.raises(ConfigError, match=r"inputs\.layout"):
        config_from_dict(raw)
    raw = minimal()
    del raw["bootstrap"]["seed"]
    with pytest.raises(ConfigError, match=r"bootstrap\.seed"):
        config_from_dict(raw)


def test_unknown_and_badly_typed_keys_rejected():
    with pytest.raises(ConfigError, match="tif.bogus"):
        config_from_dict(minimal(tif={"bogus": 1}))
    with pytest.raises(ConfigError):
        config_from_dict(minimal(nonsense={"a": 1}))
    with pytest.raises(ConfigError, match="tma.binary"):
        config_from_dict(minimal(tma={"binary": "yes"}))
    with pytest.raises(ConfigError):
        config_from_dict(minimal(model={"unit_mode": "SOMETIMES"}))
    with pytest.raises(ConfigError):
        config_from_dict(minimal(tif={"tutor_log": -1}))


def test_load_config_and_input_check(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[inputs]\ntutor="t.csv"\npositions="p.csv"\nobservations="o.csv"\nlayout="l.json"\n'
                    '[output]\ndir="o"\n[bootstrap]\nseed=1\n')
    cfg = load_config(path)
    assert cfg.input_path("tutor") == tmp_path / "t.csv"
    with pytest.raises(ConfigError, match="inputs.tutor"):
        check_inputs(cfg)
    path.write_text("not [toml")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_echo_covers_every_section():
    assert set(config_from_dict(minimal()).echo()) == set(DEFAULTS)
