import numpy as np
import pytest

from bpclip import backbone as bb
from bpclip.backbone import BackboneConfig, backbone_forward, build_backbone
from bpclip.errors import ConfigurationError, InputError
from bpclip.params import ParameterSet, set_norm_frozen


def tiny_cfg(input_size=(64, 64), channels=(4, 8, 16, 32, 64)):
    return BackboneConfig(variant="tiny", stage_channels=channels, input_size=input_size)


def params_for(cfg, dtype=np.float32, seed=0):
    net = build_backbone(cfg, np.random.default_rng(seed), dtype=dtype)
    return ParameterSet(tensors=net.state_dict())


@pytest.mark.parametrize("size,expect", [
    (384, [192, 96, 48, 24, 12]),
    (32, [16, 8, 4, 2, 1]),
])
def test_level_sizes_halve(size, expect):
    cfg = tiny_cfg(input_size=(size, size))
    pyramid = backbone_forward(
        np.random.default_rng(0).uniform(size=(1, 3, size, size)).astype(np.float32),
        params_for(cfg), cfg, mean=(0, 0, 0), std=(1, 1, 1))
    for level, s, c in zip(pyramid, expect, cfg.stage_channels):
        assert level.shape == (1, c, s, s)


def test_zero_image_zero_bias_gives_zero_pyramid():
    cfg = tiny_cfg(input_size=(32, 32))
    ps = params_for(cfg)
    image = np.zeros((1, 3, 32, 32), dtype=np.float32)
    pyramid = backbone_forward(image, ps, cfg, mean=(0, 0, 0), std=(1, 1, 1))
    for level in pyramid:
        np.testing.assert_array_equal(level.data, 0.0)


def test_forward_deterministic():
    cfg = tiny_cfg()
    ps = params_for(cfg)
    img = np.random.default_rng(3).uniform(size=(2, 3, 64, 64)).astype(np.float32)
    a = backbone_forward(img, ps, cfg)
    b = backbone_forward(img, ps, cfg)
    for la, lb in zip(a, b):
        assert la.data.tobytes() == lb.data.tobytes()


def test_finite_in_finite_out():
    cfg = tiny_cfg()
    ps = params_for(cfg)
    img = np.random.default_rng(1).uniform(size=(1, 3, 64, 64)).astype(np.float32)
    for level in backbone_forward(img, ps, cfg):
        assert np.all(np.isfinite(level.data))


def test_nonfinite_input_rejected():
    cfg = tiny_cfg()
    img = np.full((1, 3, 64, 64), np.nan, dtype=np.float32)
    with pytest.raises(InputError):
        backbone_forward(img, params_for(cfg), cfg)


def test_indivisible_size_rejected():
    cfg = tiny_cfg()
    with pytest.raises(InputError):
        backbone_forward(np.zeros((1, 3, 48, 64), dtype=np.float32), params_for(cfg), cfg)


def test_params_cfg_mismatch_is_configuration_error():
    cfg_small = tiny_cfg(channels=(4, 8, 16, 32, 64))
    cfg_big = tiny_cfg(channels=(8, 16, 32, 64, 128))
    img = np.zeros((1, 3, 64, 64), dtype=np.float32)
    with pytest.raises(ConfigurationError):
        backbone_forward(img, params_for(cfg_small), cfg_big)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        BackboneConfig(variant="tiny", stage_channels=(4, 8, 16), input_size=(64, 64))
    with pytest.raises(ConfigurationError):
        BackboneConfig(variant="tiny", stage_channels=(4, 8, 16, 32, 64), input_size=(60, 64))
    with pytest.raises(ConfigurationError):
        BackboneConfig(variant="nope", stage_channels=(4, 8, 16, 32, 64), input_size=(64, 64))


def test_resnet50_like_tap_points():
    cfg = BackboneConfig(variant="resnet50-like", stage_channels=bb.RESNET50_CHANNELS,
                         input_size=(64, 64))
    net = build_backbone(cfg, np.random.default_rng(0))
    from bpclip.autograd import Tensor
    levels = net(Tensor(np.random.default_rng(1).normal(size=(1, 3, 64, 64)).astype(np.float32) * 0.1))
    shapes = [lv.shape for lv in levels]
    assert shapes == [(1, 64, 32, 32), (1, 256, 16, 16), (1, 512, 8, 8),
                      (1, 1024, 4, 4), (1, 2048, 2, 2)]


def test_set_norm_frozen_flags_norm_entries_only():
    cfg = tiny_cfg()
    ps = set_norm_frozen(params_for(cfg))
    assert "stage1.norm.weight" in ps.frozen
    assert "stage1.norm.running_mean" in ps.frozen
    assert "stage1.conv.weight" not in ps.frozen
    frozen_free = ParameterSet(tensors={"a.weight": np.zeros(1, dtype=np.float32)})
    assert set_norm_frozen(frozen_free) is frozen_free


def test_archive_round_trip_of_backbone_params(tmp_path):
    from bpclip.params import load_parameter_archive, save_parameter_archive
    cfg = tiny_cfg()
    ps = params_for(cfg)
    path = tmp_path / "backbone.bpta"
    save_parameter_archive(ps, path)
    again = load_parameter_archive(path)
    assert set(again.tensors) == set(ps.tensors)
    for k in ps.tensors:
        assert again.tensors[k].tobytes() == ps.tensors[k].tobytes()
