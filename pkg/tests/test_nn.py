import numpy as np
import pytest

from cmjivnet import autodiff as ad
from cmjivnet import nn
from cmjivnet.autodiff import Tensor


def test_linear_shapes_and_bias():
    rng = np.random.default_rng(0)
    layer = nn.Linear(3, 5, rng)
    out = layer(Tensor(np.zeros((2, 3), dtype=np.float32)))
    assert out.data.shape == (2, 5)
    # zero input -> bias only, biases init to zero
    assert np.allclose(out.data, 0.0)


def test_named_parameters_are_unique_and_complete():
    rng = np.random.default_rng(0)

    class Toy(nn.Module):
        def __init__(self):
            super().__init__()
            self.a = nn.Linear(2, 2, rng)
            self.blocks = [nn.Linear(2, 2, rng), nn.Linear(2, 2, rng)]

    toy = Toy()
    names = list(dict(toy.named_parameters()))
    assert len(names) == len(set(names))
    assert len(names) == 6  # three Linears x (w, b)
    assert any("blocks.1" in n for n in names)


def test_state_dict_round_trip():
    rng = np.random.default_rng(1)
    m1 = nn.Linear(4, 3, rng)
    m2 = nn.Linear(4, 3, np.random.default_rng(2))
    assert not np.allclose(m1.w.data, m2.w.data)
    m2.load_state_dict(m1.state_dict())
    assert np.array_equal(m1.w.data, m2.w.data)
    assert np.array_equal(m1.b.data, m2.b.data)


def test_load_state_dict_rejects_missing_keys():
    rng = np.random.default_rng(1)
    m = nn.Linear(2, 2, rng)
    state = m.state_dict()
    state.pop("w")
    with pytest.raises(KeyError):
        m.load_state_dict(state)


def test_load_state_dict_rejects_extra_keys():
    rng = np.random.default_rng(1)
    m = nn.Linear(2, 2, rng)
    state = m.state_dict()
    state["bogus"] = np.zeros(1)
    with pytest.raises(KeyError):
        m.load_state_dict(state)


def test_batchnorm_train_vs_eval():
    rng = np.random.default_rng(2)
    bn = nn.BatchNorm2d(3)
    x = Tensor(rng.normal(loc=2.0, scale=3.0, size=(8, 3, 4, 4)).astype(np.float32))
    bn.train()
    out = bn(x).data
    # batch stats normalize each channel to ~zero mean unit variance
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    assert np.allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-2)

    # eval mode uses the running stats, deterministic for fixed input
    bn.eval()
    e1 = bn(x).data
    e2 = bn(x).data
    assert np.array_equal(e1, e2)


def test_batchnorm_running_stats_update_only_in_train():
    rng = np.random.default_rng(3)
    bn = nn.BatchNorm2d(2)
    x = Tensor(rng.normal(size=(4, 2, 3, 3)).astype(np.float32))
    before = {k: v.data.copy() for k, v in bn.named_buffers().items()}
    bn.eval()
    bn(x)
    for k, v in bn.named_buffers().items():
        assert np.array_equal(before[k], v.data), k
    bn.train()
    bn(x)
    changed = any(not np.array_equal(before[k], v.data)
                  for k, v in bn.named_buffers().items())
    assert changed


def test_conv2d_preserves_spatial_size():
    rng = np.random.default_rng(4)
    conv = nn.Conv2d(2, 5, rng)
    out = conv(Tensor(np.zeros((1, 2, 9, 9), dtype=np.float32)))
    assert out.data.shape == (1, 5, 9, 9)


def test_fan_in_uniform_bounds():
    rng = np.random.default_rng(5)
    t = nn.fan_in_uniform(rng, (100, 50), 100)
    bound = 1.0 / np.sqrt(100)
    assert t.data.min() >= -bound and t.data.max() <= bound
    assert t.requires_grad


def test_train_eval_propagates_to_children():
    rng = np.random.default_rng(6)

    class Wrap(nn.Module):
        def __init__(self):
            super().__init__()
            self.bn = nn.BatchNorm2d(1)

    w = Wrap()
    w.eval()
    assert not w.bn.training
    w.train()
    assert w.bn.training
