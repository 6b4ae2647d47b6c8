import pytest

from creamlab.experiments import (
    DIRECTIONAL_NOISE, DIRECTIONAL_SEEDS, TARGET_FLIP_RATE, calibrate_noise, directional_config, sweep, with_noise,
)
from creamlab.errors import DomainError


def test_frozen_noise_is_reproduced_by_calibration():
    assert calibrate_noise(directional_config("SRLM")) == DIRECTIONAL_NOISE


def test_calibrated_flip_rate_near_target():
    res = sweep(directional_config("SRLM"))
    assert abs(res.mean_flip_rate - TARGET_FLIP_RATE) <= 0.05
    assert res.accuracy.shape == (len(DIRECTIONAL_SEEDS), 5)


def test_flip_rate_grows_with_noise():
    cfg = directional_config("SRLM")
    quiet = sweep(with_noise(cfg, 0.0), seeds=(0, 1)).mean_flip_rate
    loud = sweep(with_noise(cfg, 2.0), seeds=(0, 1)).mean_flip_rate
    assert quiet < loud


def test_calibration_rejects_unreachable_targets():
    cfg = directional_config("SRLM")
    with pytest.raises(DomainError):
        calibrate_noise(cfg, target=0.6)
    with pytest.raises(DomainError):
        calibrate_noise(cfg, target=0.45, seeds=(0,), hi=0.01)


def test_shipped_directional_configs_match_the_frozen_setting():
    import json
    from pathlib import Path

    from creamlab.trainer import TrainConfig

    root = Path(__file__).resolve().parents[1] / "configs"
    for stem, method in [("srlm", "SRLM"), ("cream", "CREAM"), ("norc", "CREAM_noRC(0.8)"), ("oracle", "ORACLE")]:
        shipped = TrainConfig.from_dict(json.loads((root / f"directional_{stem}.json").read_text()))
        assert shipped == directional_config(method), stem


def test_oracle_dominates_srlm_under_noise():
    oracle = sweep(directional_config("ORACLE")).mean_accuracy
    srlm = sweep(directional_config("SRLM")).mean_accuracy
    assert (oracle[2:] > srlm[2:]).all()
    assert oracle[-1] > oracle[1]
