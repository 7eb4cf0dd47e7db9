import json

import pytest

from flowmosaic.config import RunConfig
from flowmosaic.errors import BadThresholds, ValidationError


def test_defaults_mirror_survey_protocol():
    cfg = RunConfig()
    assert cfg.simulation.altitude == 15.0
    assert cfg.simulation.front_overlap == cfg.simulation.side_overlap == 0.5
    assert cfg.augment.n_intermediate == 3
    assert cfg.mosaic.ransac_threshold == 1.5 and cfg.mosaic.ransac_max_iters == 2000
    assert tuple(cfg.health_thresholds) == (0.2, 0.4, 0.6)


def test_json_round_trip(tmp_path):
    cfg = RunConfig().with_overrides({"seed": 9, "augment.mode": "synthetic", "mosaic.scale": 0.5})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    back = RunConfig.load(p)
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_partial_file_keeps_defaults():
    cfg = RunConfig.from_dict({"simulation": {"noise_sigma": 1.0}})
    assert cfg.simulation.noise_sigma == 1.0
    assert cfg.simulation.altitude == 15.0


@pytest.mark.parametrize(
    "data",
    [{"bogus": 1}, {"simulation": {"bogus": 1}}, {"simulation": 3}],
)
def test_unknown_fields_rejected(data):
    with pytest.raises(ValidationError):
        RunConfig.from_dict(data)


@pytest.mark.parametrize(
    "key,value,err",
    [
        ("simulation.front_overlap", 0.96, ValidationError),
        ("simulation.side_overlap", -0.1, ValidationError),
        ("augment.mode", "mixed", ValidationError),
        ("augment.n_intermediate", -1, ValidationError),
        ("threads", 0, ValidationError),
        ("seed", -2, ValidationError),
        ("health_thresholds", [0.5, 0.1], BadThresholds),
        ("nope.field", 1, ValidationError),
    ],
)
def test_invalid_overrides(key, value, err):
    with pytest.raises(err):
        RunConfig().with_overrides({key: value})


def test_variant_changes_only_mode():
    cfg = RunConfig()
    a, b = cfg.to_dict(), cfg.variant("baseline").to_dict()
    assert b["augment"].pop("mode") == "baseline"
    a["augment"].pop("mode")
    assert a == b


def test_bad_json_is_validation_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        RunConfig.load(p)


def test_to_dict_is_plain_json():
    assert json.loads(json.dumps(RunConfig().to_dict()))["experiment"]["seeds"] == [0]
