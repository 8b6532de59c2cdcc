"""Model builders: structure, parameter counts, init determinism, forward."""

import numpy as np
import pytest

import fencepipe.tensor as T
from fencepipe.errors import ConfigError, DimensionError
from fencepipe.models import (
    ClassifierConfig,
    UNetConfig,
    build_classifier,
    build_unet,
    clone_model,
    forward,
    param_count,
)
from fencepipe.tensor import backward, grad_check

RNG = np.random.default_rng(77)


def test_micro_unet_param_count_frozen():
    # depth 1, filters 2, 1->1 channels, counted by hand layer by layer:
    # enc 20+38, bottleneck 76+148, up 34, dec 74+38, head 3 = 431
    m = build_unet(UNetConfig(in_channels=1, out_channels=1, depth=1, base_filters=2))
    assert param_count(m) == 431


def test_unet_layer_kind_sequence_depth1():
    m = build_unet(UNetConfig(depth=1, base_filters=2))
    kinds = [l.kind for l in m.layers]
    assert kinds == ["conv", "conv", "pool", "conv", "conv",
                     "upconv", "concat", "conv", "conv", "conv1x1"]
    assert m.layers[-1].activation == "sigmoid"
    assert all(l.activation == "relu" for l in m.layers if l.kind in ("conv", "upconv"))


def test_unet_forward_shape_and_range():
    m = build_unet(UNetConfig(depth=3, base_filters=8))
    out = forward(m, RNG.random((64, 32, 3)))
    assert out.data.shape == (64, 32, 1)
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


def test_unet_rejects_indivisible_input():
    m = build_unet(UNetConfig(depth=3, base_filters=8))
    with pytest.raises(DimensionError):
        forward(m, RNG.random((60, 64, 3)))
    with pytest.raises(DimensionError):
        forward(m, RNG.random((64, 64, 1)))


def test_unet_valid_padding_shrinks_with_cropped_skips():
    m = build_unet(UNetConfig(in_channels=1, depth=1, base_filters=2, padding="valid"))
    # 18 -> enc 14 -> pool 7 -> bottleneck 3 -> up 6 (skip cropped 14->6) -> dec 2
    out = forward(m, RNG.random((18, 18, 1)))
    assert out.data.shape == (2, 2, 1)


def test_he_init_is_seed_deterministic():
    a = build_unet(UNetConfig(depth=2, base_filters=4), seed=5)
    b = build_unet(UNetConfig(depth=2, base_filters=4), seed=5)
    c = build_unet(UNetConfig(depth=2, base_filters=4), seed=6)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_he_init_scale_matches_fan_in():
    m = build_unet(UNetConfig(depth=3, base_filters=16), seed=0)
    w = m.params["enc1a.w"].data  # [3,3,16,32], fan_in = 144
    assert w.std() == pytest.approx(np.sqrt(2.0 / 144), rel=0.15)
    assert np.all(m.params["enc1a.b"].data == 0.0)


def test_cnn_classifier_structure_and_output():
    cfg = ClassifierConfig(kind="cnn", input_size=16, blocks=2, base_filters=4)
    m = build_classifier(cfg, seed=0)
    kinds = [l.kind for l in m.layers]
    assert kinds == ["conv", "pool", "conv", "pool", "flatten", "dense"]
    out = forward(m, RNG.random((16, 16, 3)))
    assert out.data.shape == (2,)
    assert out.data.sum() == pytest.approx(1.0)


def test_residual_classifier_has_blocks_with_projection():
    cfg = ClassifierConfig(kind="residual", input_size=16, blocks=2, base_filters=4)
    m = build_classifier(cfg, seed=0)
    names = [l.name for l in m.layers]
    # stem aligns channels, so block 0 (4->4) skips the projection and
    # block 1 (4->8) needs one
    assert "res0_proj" not in names
    assert "res1_proj" in names
    add1 = next(l for l in m.layers if l.name == "res1_add")
    assert add1.kind == "add" and add1.activation == "relu"
    assert set(add1.inputs) == {"res1_c2", "res1_proj"}
    out = forward(m, RNG.random((16, 16, 3)))
    assert out.data.shape == (2,)


def test_residual_identity_skip_is_exact():
    # zero both convs of a block: the block must reduce to relu(identity)
    cfg = ClassifierConfig(kind="residual", input_size=8, blocks=1, base_filters=4)
    m = build_classifier(cfg, seed=3)
    m.params["res0_c1.w"].data[:] = 0.0
    m.params["res0_c2.w"].data[:] = 0.0
    m.params["res0_c1.b"].data[:] = 0.0
    m.params["res0_c2.b"].data[:] = 0.0
    x = RNG.random((8, 8, 3))
    outs = {}
    # run the graph manually up to the add layer
    cur = {"@input": T.Tensor(x)}
    for spec in m.layers:
        srcs = [cur[n] for n in spec.inputs]
        if spec.kind == "conv":
            y = T.conv2d(srcs[0], m.params[spec.name + ".w"], m.params[spec.name + ".b"])
        elif spec.kind == "add":
            y = T.add(srcs[0], srcs[1])
        elif spec.kind == "pool":
            break
        else:
            break
        if spec.activation != "none":
            y = T.activate(y, spec.activation)
        cur[spec.name] = y
        outs[spec.name] = y
    stem = outs["stem"].data
    assert np.allclose(outs["res0_add"].data, np.maximum(stem, 0.0))


def test_classifier_rejects_wrong_input_size():
    m = build_classifier(ClassifierConfig(kind="cnn", input_size=16, blocks=2))
    with pytest.raises(DimensionError):
        forward(m, RNG.random((32, 32, 3)))


def test_config_validation():
    with pytest.raises(ConfigError):
        build_unet(UNetConfig(depth=0))
    with pytest.raises(ConfigError):
        build_unet(UNetConfig(padding="reflect"))
    with pytest.raises(ConfigError):
        build_classifier(ClassifierConfig(kind="vit"))
    with pytest.raises(ConfigError):
        build_classifier(ClassifierConfig(kind="cnn", input_size=50, blocks=2))
    with pytest.raises(ConfigError):
        build_classifier(ClassifierConfig(kind="cnn", num_classes=1))


def test_clone_model_detaches_parameters():
    m = build_unet(UNetConfig(depth=1, base_filters=2), seed=0)
    c = clone_model(m)
    c.params["enc0a.w"].data += 1.0
    assert not np.array_equal(c.params["enc0a.w"].data, m.params["enc0a.w"].data)
    assert param_count(c) == param_count(m)


def test_full_micro_unet_gradient_check():
    # seeds chosen so no relu/pool kink sits within h of a crossing
    m = build_unet(UNetConfig(in_channels=1, out_channels=1, depth=1, base_filters=2), seed=5)
    rng = np.random.default_rng(77)
    img = rng.random((4, 4, 1))
    msk = (rng.random((4, 4, 1)) > 0.5).astype(float)
    names = sorted(m.params)
    err = grad_check(lambda *ps: T.soft_dice_loss(forward(m, img), msk),
                     [m.params[n] for n in names], h=1e-5)
    assert err <= 1e-5


def test_full_micro_classifier_gradient_check():
    cfg = ClassifierConfig(kind="residual", input_size=8, blocks=1, base_filters=2)
    m = build_classifier(cfg, seed=4)
    rng = np.random.default_rng(41)
    img = rng.random((8, 8, 3))
    y = np.eye(2)[1]
    names = sorted(m.params)
    err = grad_check(lambda *ps: T.cross_entropy_loss(forward(m, img), y),
                     [m.params[n] for n in names], h=1e-5)
    assert err <= 1e-5


def test_training_reduces_loss_smoke():
    m = build_unet(UNetConfig(in_channels=1, depth=1, base_filters=2), seed=1)
    img = RNG.random((8, 8, 1))
    msk = np.zeros((8, 8, 1))
    msk[2:6, 2:6] = 1.0
    loss0 = None
    for _ in range(30):
        loss = T.soft_dice_loss(forward(m, img), msk)
        if loss0 is None:
            loss0 = loss.item()
        backward(loss)
        for p in m.params.values():
            p.data -= 0.05 * p.grad
            p.grad = None
    assert loss.item() < loss0
