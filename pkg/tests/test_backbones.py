import numpy as np
import pytest

from pedxing import tensor as T
from pedxing.backbones import (BackboneConfig, Fire, FireConfig, SeparableBlock, build_extractor,
                               check_input_geometry, extract_sequence_features, separable_block_macs,
                               squeeze_fire_configs, squeezenet_parameter_count)
from pedxing.exceptions import DimensionError, ParameterError
from pedxing.tensor import Rng, Tensor
from pedxing.testing import gradcheck

from test_tensor import naive_conv2d, naive_grouped_conv


def _relu(v):
    return np.maximum(v, 0)


def test_fire_bottleneck_rule():
    with pytest.raises(ParameterError):
        FireConfig(8, 16, 8, 8)
    assert FireConfig(96, 16, 64, 64).out_channels == 128


def test_fire_output_channels_and_composition_oracle():
    rng = np.random.default_rng(0)
    fire = Fire(FireConfig(96, 16, 64, 64), Rng(1), dtype=np.float64)
    x = rng.normal(size=(1, 96, 5, 5))
    out = fire(Tensor(x)).data
    assert out.shape == (1, 128, 5, 5)
    s = _relu(naive_conv2d(x, fire.squeeze.weight.data, fire.squeeze.bias.data, 1, 0))
    e1 = _relu(naive_conv2d(s, fire.expand1.weight.data, fire.expand1.bias.data, 1, 0))
    e3 = _relu(naive_conv2d(s, fire.expand3.weight.data, fire.expand3.bias.data, 1, 1))
    np.testing.assert_allclose(out, np.concatenate([e1, e3], axis=1), atol=1e-10)


def test_fire_rejects_wrong_channels():
    fire = Fire(FireConfig(8, 2, 4, 4), Rng(0), dtype=np.float64)
    with pytest.raises(DimensionError):
        fire(Tensor(np.zeros((1, 6, 3, 3))))


def test_squeeze_parameter_budget_matches_module_count():
    cfg = BackboneConfig("squeeze", 1.0)
    analytic = squeezenet_parameter_count(cfg)
    assert analytic <= 1.5e6
    assert analytic == build_extractor(cfg, Rng(0)).num_parameters()
    assert squeeze_fire_configs(cfg)[-1].out_channels == 512


def test_squeeze_desk_output_is_512():
    cfg = BackboneConfig("squeeze", 0.25, (64, 64))
    ext = build_extractor(cfg, Rng(0))
    out = ext(Tensor(np.random.default_rng(0).random((2, 3, 64, 64), dtype=np.float32)))
    assert out.shape == (2, 512)


def test_squeeze_geometry_too_small():
    with pytest.raises(DimensionError):
        check_input_geometry(BackboneConfig("squeeze", 0.25, (16, 16)))
    ext = build_extractor(BackboneConfig("squeeze", 0.25, (64, 64)), Rng(0))
    with pytest.raises(DimensionError):
        ext(Tensor(np.zeros((1, 3, 48, 48), dtype=np.float32)))


def test_invalid_backbone_config():
    with pytest.raises(ParameterError):
        BackboneConfig("resnet")
    with pytest.raises(ParameterError):
        BackboneConfig("squeeze", 1.5)


def test_separable_block_composition_oracle():
    rng = np.random.default_rng(3)
    block = SeparableBlock(4, 6, 1, Rng(2), dtype=np.float64)
    block.eval()
    for bn in (block.bn1, block.bn2):
        bn.running_mean[:] = rng.normal(size=bn.running_mean.shape)
        bn.running_var[:] = rng.uniform(0.5, 2, size=bn.running_var.shape)
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, size=bn.gamma.shape)
        bn.beta.data[:] = rng.normal(size=bn.beta.shape)

    def bn_oracle(v, bn):
        shape = (1, -1, 1, 1)
        return (bn.gamma.data.reshape(shape) * (v - bn.running_mean.reshape(shape))
                / np.sqrt(bn.running_var.reshape(shape) + bn.eps) + bn.beta.data.reshape(shape))

    x = rng.normal(size=(2, 4, 6, 6))
    d = _relu(bn_oracle(naive_grouped_conv(x, block.depthwise.weight.data, 1, 1), block.bn1))
    p = _relu(bn_oracle(naive_conv2d(d, block.pointwise.weight.data, None, 1, 0), block.bn2))
    np.testing.assert_allclose(block(Tensor(x)).data, p, atol=1e-10)


@pytest.mark.parametrize("c,o", [(32, 64), (64, 128), (256, 512)])
def test_separable_mac_ratio(c, o):
    sep, std = separable_block_macs(c, o, 14, 14)
    assert sep < std
    assert sep / std == pytest.approx(1 / o + 1 / 9, rel=1e-12)


def test_mobile_desk_output_is_512():
    ext = build_extractor(BackboneConfig("mobile", 0.25, (32, 32)), Rng(0))
    out = ext(Tensor(np.random.default_rng(0).random((2, 3, 32, 32), dtype=np.float32)))
    assert out.shape == (2, 512)


def test_sequence_row_ordering_sentinel():
    ext = build_extractor(BackboneConfig("squeeze", 0.25, (64, 64)), Rng(0), dtype=np.float64)
    ext.eval()
    x = np.zeros((2, 3, 3, 64, 64))
    x[1] = 1.0
    feats = extract_sequence_features(Tensor(x), ext).data
    zero = ext(Tensor(np.zeros((1, 3, 64, 64)))).data[0]
    one = ext(Tensor(np.ones((1, 3, 64, 64)))).data[0]
    assert not np.allclose(zero, one)
    for t in range(3):
        np.testing.assert_allclose(feats[t], zero, atol=1e-12)
        np.testing.assert_allclose(feats[3 + t], one, atol=1e-12)


def test_sequence_rejects_4d():
    ext = build_extractor(BackboneConfig("squeeze", 0.25, (64, 64)), Rng(0))
    with pytest.raises(DimensionError):
        extract_sequence_features(Tensor(np.zeros((2, 3, 64, 64))), ext)


def backbone_gradcheck(kind, width, size, batch, seed):
    """Finite-difference spot check on the input and a spread of parameter tensors."""
    rng = np.random.default_rng(seed)
    ext = build_extractor(BackboneConfig(kind, width, size), Rng(seed), dtype=np.float64)
    # zero biases leave exact zeros sitting on ReLU kinks; move off them
    for name, p in ext.named_parameters():
        if p.ndim == 1:
            p.data[:] = (1.0 if name.endswith("gamma") else 0.0) + rng.normal(0, 0.1, p.shape)
    x = Tensor(rng.random((batch, 3) + size), requires_grad=True)
    named = list(ext.named_parameters())
    picks = [named[i][1] for i in np.linspace(0, len(named) - 1, 5).astype(int)]
    r = rng.normal(size=(batch, 512))

    def loss(x, *params):
        return (ext(x) * r).sum()
    # With ~1e5 ReLU and max-pool units, a step of 1e-5 regularly pushes some unit
    # across a kink. The MobileNet stack normalises a few hundred values per
    # channel at its last stages, which makes it strongly curved, so it needs
    # an even smaller step.
    h = 1e-6 if kind == "squeeze" else 1e-8
    return gradcheck(loss, [x] + picks, h=h, max_coords=3, rng=rng)


SQUEEZE_SHAPES = [(0.05, (63, 63), 1), (0.05, (64, 64), 2), (0.1, (64, 70), 1),
                  (0.05, (71, 64), 2), (0.08, (80, 72), 1)]
MOBILE_SHAPES = [(0.05, (32, 32), 2), (0.05, (40, 40), 2), (0.1, (28, 28), 2),
                 (0.06, (36, 44), 2), (0.05, (48, 40), 2)]


@pytest.mark.parametrize("width,size,batch", SQUEEZE_SHAPES)
def test_squeeze_backbone_gradcheck(width, size, batch):
    assert max(backbone_gradcheck("squeeze", width, size, batch, 0)) < 1e-4


@pytest.mark.parametrize("width,size,batch", MOBILE_SHAPES)
def test_mobile_backbone_gradcheck(width, size, batch):
    assert max(backbone_gradcheck("mobile", width, size, batch, 1)) < 1e-4


def test_global_avg_pool_feature_is_mean():
    x = np.random.default_rng(0).normal(size=(2, 5, 3, 4))
    np.testing.assert_allclose(T.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)))
