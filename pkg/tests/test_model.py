import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from poisson_retinex.model import count_params, forward, init_model, zero_heads


def hand_count(w):
    conv = lambda cin, cout, k: cin * cout * k * k + cout  # noqa: E731
    return (
        conv(3, w, 3)
        + conv(w, 2 * w, 3)
        + conv(2 * w, 4 * w, 3)
        + conv(4 * w, 8 * w, 3)
        + conv(8 * w, 4 * w, 3)  # up3
        + conv(8 * w, 4 * w, 3)  # fuse3
        + conv(4 * w, 2 * w, 3)  # up2
        + conv(4 * w, 2 * w, 3)  # fuse2
        + conv(2 * w, w, 3)  # up1
        + conv(2 * w, w, 3)  # fuse1
        + conv(w, 1, 1)
        + conv(w, 3, 1)
        + conv(w, 3, 1)
    )


def test_same_seed_same_params():
    a, b = init_model(7, 8), init_model(7, 8)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)


def test_different_seed_different_params():
    assert not torch.equal(init_model(1, 8).stem.weight, init_model(2, 8).stem.weight)


def test_first_layer_shape():
    net = init_model(0, 64)
    assert tuple(net.stem.weight.shape) == (64, 3, 3, 3)


def test_biases_start_at_zero():
    net = init_model(0, 8)
    assert all(torch.count_nonzero(m.bias) == 0 for m in net.children())


def test_width_validation():
    with pytest.raises(ValueError):
        init_model(0, 4)


def test_count_params():
    assert count_params(init_model(0, 64)) > count_params(init_model(0, 32))
    assert count_params(init_model(1, 16)) == count_params(init_model(2, 16))
    assert count_params(init_model(0, 8)) == hand_count(8)


def test_output_shapes():
    net = init_model(0, 8)
    L, R, N = forward(net, torch.rand(2, 3, 16, 16))
    assert L.shape == (2, 1, 16, 16) and R.shape == (2, 3, 16, 16) and N.shape == (2, 3, 16, 16)


def test_non_square_input():
    L, R, N = init_model(0, 8)(torch.rand(1, 3, 24, 40))
    assert L.shape[-2:] == (24, 40)


@pytest.mark.parametrize("shape", [(1, 3, 12, 16), (1, 1, 16, 16), (3, 16, 16)])
def test_bad_input(shape):
    with pytest.raises(ValueError):
        init_model(0, 8)(torch.rand(*shape))


def test_zero_heads_give_constant_maps():
    net = zero_heads(init_model(3, 8))
    L, R, N = net(torch.rand(1, 3, 8, 8))
    assert torch.all(L == 0.5) and torch.all(R == 0.5) and torch.all(N == 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_ranges_hold_for_arbitrary_inputs(seed, scale):
    g = torch.Generator().manual_seed(seed)
    y = (torch.randn(1, 3, 16, 16, generator=g) * scale).float()
    L, R, N = init_model(seed % 5, 8)(y)
    for t, lo in ((L, 0.0), (R, 0.0), (N, -1.0)):
        assert t.min() >= lo and t.max() <= 1.0


def test_batch_matches_per_item():
    net = init_model(0, 8, dtype=torch.float64)
    y = torch.rand(3, 3, 16, 16, dtype=torch.float64)
    batched = net(y)
    for i in range(3):
        single = net(y[i : i + 1])
        for a, b in zip(batched, single):
            assert torch.allclose(a[i : i + 1], b, atol=1e-12)


def test_softplus_noise_head_is_non_negative():
    net = init_model(0, 8, noise_activation="softplus")
    assert net(torch.rand(1, 3, 8, 8)).N.min() >= 0
    with pytest.raises(ValueError):
        init_model(0, 8, noise_activation="relu")


def test_forward_does_not_mutate_params():
    net = init_model(0, 8)
    before = {k: v.clone() for k, v in net.state_dict().items()}
    net(torch.rand(1, 3, 8, 8))
    assert all(torch.equal(before[k], v) for k, v in net.state_dict().items())


def test_init_independent_of_torch_global_rng():
    torch.manual_seed(123)
    a = init_model(5, 8).enc1.weight.clone()
    torch.manual_seed(999)
    assert torch.equal(a, init_model(5, 8).enc1.weight)
    assert torch.isfinite(a).all()


def test_zero_head_init_keeps_trunk_draws():
    a, b = init_model(4, 8), init_model(4, 8, head_init="zero")
    assert torch.equal(a.fuse1.weight, b.fuse1.weight)
    assert torch.count_nonzero(b.head_r.weight) == 0
    with pytest.raises(ValueError):
        init_model(0, 8, head_init="normal")
