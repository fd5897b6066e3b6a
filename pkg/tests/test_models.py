# tests/test_models.py
import numpy as np
import pytest

from mrkd.autodiff.tensor import Tensor, no_grad
from mrkd.errors import ParameterError
from mrkd.models import ModelConfig, ModelFamily, build


def _batch(shape=(4, 3, 143, 64), seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


@pytest.mark.parametrize("family", list(ModelFamily))
def test_logits_shape_for_logmel_input(family):
    model = build(ModelConfig(family=family, stage_channels=(8, 16, 32), blocks_per_stage=1), seed=0)
    with no_grad():
        logits = model.logits(_batch())
    assert logits.shape == (4, 10)
    assert np.all(np.isfinite(logits.numpy()))


def test_single_channel_input():
    cfg = ModelConfig(family=ModelFamily.VGG_SMALL, stage_channels=(4, 8), blocks_per_stage=1, input_channels=1)
    with no_grad():
        logits = build(cfg, seed=3).logits(_batch((2, 1, 143, 84)))
    assert logits.shape == (2, 10)


def test_same_seed_gives_same_weights():
    cfg = ModelConfig(stage_channels=(4, 8), n_classes=5)
    a, b = build(cfg, seed=42), build(cfg, seed=42)
    for (name, x), y in zip(a.state_dict().items(), b.state_dict().values()):
        np.testing.assert_array_equal(x, y, err_msg=name)
    c = build(cfg, seed=43)
    assert not np.array_equal(a.state_dict()["param.head.weight"], c.state_dict()["param.head.weight"])


def test_zeroed_residual_branches_reduce_to_shortcut_path():
    model = build(ModelConfig(stage_channels=(4, 8, 8), blocks_per_stage=2, n_classes=6), seed=1)
    for block in model.blocks:
        for weight in block.branch_weights():
            weight.data[...] = 0.0
    model.eval()
    x = _batch((3, 3, 32, 16), seed=2)
    with no_grad():
        full = model.logits(x).numpy()
        shortcut = model.shortcut_forward(Tensor(x)).numpy()
    np.testing.assert_array_equal(full, shortcut)


def test_projection_only_where_shape_changes():
    model = build(ModelConfig(stage_channels=(4, 8), blocks_per_stage=2), seed=0)
    assert [block.projection is not None for block in model.blocks] == [False, False, True, False]


def test_default_resnet_is_under_a_million_parameters():
    model = build(ModelConfig(), seed=0)
    assert 0 < model.n_parameters() < 1_000_000


def test_training_mode_updates_running_statistics():
    model = build(ModelConfig(stage_channels=(4,), blocks_per_stage=1, n_classes=3), seed=0)
    before = {name: buf.copy() for name, buf in model.named_buffers()}
    model.train()
    model.logits(_batch((2, 3, 8, 8)))
    after = dict(model.named_buffers())
    assert any(not np.array_equal(before[name], after[name]) for name in before)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_classes": 1},
        {"stage_channels": ()},
        {"stage_channels": (4, 0)},
        {"blocks_per_stage": 0},
        {"input_channels": 2},
        {"family": "transformer"},
    ],
)
def test_invalid_config_is_rejected(kwargs):
    cfg = ModelConfig(**kwargs)
    assert cfg.violations()
    with pytest.raises(ParameterError):
        build(cfg, seed=0)


def test_violations_are_listed_together():
    cfg = ModelConfig(n_classes=0, blocks_per_stage=0)
    assert len(cfg.violations()) == 2
