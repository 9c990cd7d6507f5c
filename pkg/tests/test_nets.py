import numpy as np
import pytest

from preview_restore.errors import AdapterError, CheckpointError, ShapeError
from preview_restore.nets import (
    LEVELS,
    Attention,
    CompactEncoder,
    DenoiserNet,
    DualCrossAttnBlock,
    Linear,
    LowRankAdapter,
    ResBlock,
    adapter_parameters,
    adapter_scope,
    adapter_toggle,
    adapters_enabled,
    attach_adapters,
    dual_cross_attn,
    inject_residual,
    patchify,
)
from preview_restore.nets.adapter import adapted_linears
from preview_restore.tensor import Rng, Tensor, precision

TOLERANCE = 1e-4


def small_denoiser(rng=None, **overrides):
    kwargs = dict(image_size=8, channels=2, time_dim=4, num_classes=2, class_tokens=2, context_width=4, heads=1,
                  self_attn_levels=[1], lq_weights=[1.0, 1.0, 1.0], rng=rng or Rng(0))
    kwargs.update(overrides)
    return DenoiserNet(**kwargs)


def test_resblock_parameter_gradients(gradcheck):
    with precision(np.float64):
        block = ResBlock(2, 3, 4, Rng(0))
        x = Tensor(Rng(1).normal((2, 2, 4, 4)))
        weights = Tensor(Rng(2).normal((2, 3, 4, 4)))
        params = [block.conv1.weight, block.time_proj.weight, block.skip.proj.weight]
        error = gradcheck(lambda: (block(x, Tensor(Rng(3).normal((2, 4)))) * weights).sum(), params)
    assert error < TOLERANCE


def test_dual_cross_attention_block_gradients(gradcheck):
    with precision(np.float64):
        block = DualCrossAttnBlock(4, 6, 2, Rng(0), lq_weight=0.5)
        h = Tensor(Rng(1).normal((2, 4, 3, 3)), requires_grad=True)
        c_txt, c_lq = Tensor(Rng(2).normal((2, 2, 6))), Tensor(Rng(3).normal((2, 3, 6)), requires_grad=True)
        weights = Tensor(Rng(4).normal((2, 4, 3, 3)))
        params = [h, c_lq, block.self_attn.to_q.weight, block.lq_attn.to_v.weight, block.txt_attn.to_k.weight]
        error = gradcheck(lambda: (block(h, c_txt, c_lq) * weights).sum(), params)
    assert error < TOLERANCE


def test_compact_encoder_gradients(gradcheck):
    with precision(np.float64):
        encoder = CompactEncoder(8, 4, 4, 2, 1, 1, 1, 4, Rng(0))
        lq = Tensor(Rng(1).normal((2, 1, 8, 8)))
        weights = Tensor(Rng(2).normal((2, 2, 4)))
        params = [encoder.embed.weight, encoder.queries, encoder.norm.fc2.weight]
        error = gradcheck(lambda: (encoder(lq, np.array([3, 40])) * weights).sum(), params)
    assert error < TOLERANCE


def test_denoiser_gradients_through_residuals(gradcheck):
    with precision(np.float64):
        net = small_denoiser()
        z = Tensor(Rng(1).normal((2, 1, 8, 8)))
        c_lq = Tensor(Rng(2).normal((2, 2, 4)))
        residuals = [Tensor(Rng(3).fork(l).normal(shape), requires_grad=True)
                     for l, shape in enumerate(net.level_shapes(2))]
        params = residuals + [net.conv_in.weight, net.dec_attn[1].lq_attn.to_out.weight]
        gate = np.array([1.0, 0.5])
        error = gradcheck(lambda: net(z, [5, 9], [0, 2], c_lq, residuals, delta=gate).mean(), params)
    assert error < TOLERANCE


def test_encoder_token_count_is_fixed():
    encoder = CompactEncoder(24, 4, 8, 3, 1, 1, 1, 8, Rng(0))
    tokens = encoder(Tensor(np.zeros((5, 1, 24, 24))), 10)
    assert tokens.shape == (5, 3, 8)
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((1, 1, 16, 16))), 10)


def test_patchify_row_major_order():
    image = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
    patches = patchify(image, 2).data[0]
    np.testing.assert_array_equal(patches[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(patches[3], [10, 11, 14, 15])


def test_dual_cross_attention_skips_lq_branch_at_zero_weight():
    rng = Rng(0)
    txt, lq = Attention(4, 6, 4, 1, rng.fork("t")), Attention(4, 6, 4, 1, rng.fork("l"))
    f_in = Tensor(Rng(1).normal((1, 3, 4)))
    c_txt, c_lq = Tensor(Rng(2).normal((1, 2, 6))), Tensor(Rng(3).normal((1, 2, 6)))
    without = dual_cross_attn(f_in, c_txt, None, 1.0, txt, lq).data
    np.testing.assert_array_equal(dual_cross_attn(f_in, c_txt, c_lq, 0.0, txt, lq).data, without)
    assert not np.allclose(dual_cross_attn(f_in, c_txt, c_lq, 1.0, txt, lq).data, without)


def test_denoiser_output_shape_and_null_class():
    net = small_denoiser()
    eps = net(Tensor(np.zeros((3, 1, 8, 8))), 7, [0, 1, net.null_class])
    assert eps.shape == (3, 1, 8, 8)
    assert net.null_class == 2
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 1, 8, 8))), 7, 3)


def test_zero_delta_equals_no_residuals():
    net = small_denoiser()
    z = Tensor(Rng(1).normal((2, 1, 8, 8)))
    residuals = [Tensor(Rng(2).fork(l).normal(shape)) for l, shape in enumerate(net.level_shapes(2))]
    plain = net(z, 20, 0).data
    np.testing.assert_array_equal(net(z, 20, 0, residuals=residuals, delta=0.0).data, plain)
    np.testing.assert_array_equal(net(z, 20, 0, residuals=residuals, delta=np.zeros(2)).data, plain)
    assert not np.allclose(net(z, 20, 0, residuals=residuals, delta=1.0).data, plain)


def test_per_sample_delta_gates_each_image():
    net = small_denoiser()
    z = Tensor(Rng(1).normal((2, 1, 8, 8)))
    residuals = [Tensor(Rng(2).fork(l).normal(shape)) for l, shape in enumerate(net.level_shapes(2))]
    mixed = net(z, 20, 0, residuals=residuals, delta=np.array([0.0, 1.0])).data
    np.testing.assert_allclose(mixed[0], net(z, 20, 0).data[0], atol=1e-5)
    np.testing.assert_allclose(mixed[1], net(z, 20, 0, residuals=residuals, delta=1.0).data[1], atol=1e-5)


def test_inject_residual_checks_shapes():
    features = Tensor(np.zeros((2, 3, 4, 4)))
    with pytest.raises(ShapeError):
        inject_residual(features, Tensor(np.zeros((2, 3, 2, 2))), 1.0)
    with pytest.raises(ShapeError):
        inject_residual(features, Tensor(np.zeros((2, 3, 4, 4))), np.ones(3))


def test_fresh_adapters_leave_outputs_unchanged():
    net = small_denoiser()
    z = Tensor(Rng(1).normal((1, 1, 8, 8)))
    base = net(z, 30, 1).data
    attach_adapters(net, rank=2, scale=1.0, rng=Rng(5))
    with adapter_scope(net, True):
        np.testing.assert_array_equal(net(z, 30, 1).data, base)


def test_adapter_toggle_restores_base_weights_exactly():
    net = small_denoiser()
    attach_adapters(net, rank=2, scale=0.5, rng=Rng(5))
    for param in adapter_parameters(net):
        param.data = param.data + 0.1
    owner = adapted_linears(net)[0]
    base = owner.weight.data.copy()
    adapter_toggle(net, True)
    np.testing.assert_allclose(owner.effective_weight(), base + owner.adapter.delta(), atol=1e-6)
    adapter_toggle(net, False)
    np.testing.assert_array_equal(owner.effective_weight(), base)


def test_low_rank_delta_by_hand():
    with precision(np.float64):
        linear = Linear(2, 2, Rng(0))
        base = linear.weight.data.copy()
        adapter = LowRankAdapter(2, 2, rank=1, scale=1.0, rng=Rng(1))
        adapter.A.data = np.array([[1.0], [0.0]])
        adapter.B.data = np.array([[0.0, 1.0]])
        linear.adapter = adapter
        np.testing.assert_array_equal(linear.effective_weight(), base)
        adapter.enabled = True
        np.testing.assert_allclose(linear.effective_weight(), base + np.array([[0.0, 1.0], [0.0, 0.0]]))
        y = linear(Tensor(np.array([[1.0, 0.0]])))
        np.testing.assert_allclose(y.data, [base[0] + np.array([0.0, 1.0])])


def test_adapter_scope_restores_previous_state():
    net = small_denoiser()
    attach_adapters(net, rank=2, scale=1.0, rng=Rng(5))
    assert not adapters_enabled(net)
    with adapter_scope(net, True):
        assert adapters_enabled(net)
    assert not adapters_enabled(net)


def test_adapter_errors_without_adapters():
    net = small_denoiser()
    with pytest.raises(AdapterError):
        adapter_toggle(net, True)
    with pytest.raises(AdapterError):
        with adapter_scope(net, True):
            pass
    with adapter_scope(net, False):
        pass


def test_adapter_parameter_share_is_small(tiny_config):
    from preview_restore.bundle import build_nets

    config = tiny_config.with_values("nets", channels=32, context_width=64, time_dim=64, adapter_rank=4)
    nets = build_nets(config)
    base = nets.denoiser.parameter_count()
    nets.attach_previewer(4, 1.0, Rng(0))
    adapters = sum(p.data.size for p in adapter_parameters(nets.denoiser))
    assert adapters <= 0.05 * base


def test_state_dict_round_trip_and_strict_loading():
    net, other = small_denoiser(Rng(0)), small_denoiser(Rng(1))
    other.load_state_dict(net.state_dict())
    assert other.parameter_digest() == net.parameter_digest()
    state = net.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(CheckpointError):
        other.load_state_dict(state)


def test_parameter_digest_tracks_changes():
    net = small_denoiser()
    before = net.parameter_digest()
    net.conv_out.bias.data = net.conv_out.bias.data + 1.0
    assert net.parameter_digest() != before


def test_level_count():
    assert len(small_denoiser().level_shapes(1)) == LEVELS
