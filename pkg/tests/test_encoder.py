import numpy as np
import pytest
import torch

from core.errors import NoForwardPassError, NonFiniteFeaturesError
from encoder.transformer import (
    EncoderConfig, TransformerEncoder, encode, encode_backward, sinusoidal_positions,
)
from profiler.timing import OperationCounter
from signal_frontend.dsp import FeatureKind, FeatureSequence
from tests.conftest import GRAD_SEEDS, GRAD_TOLERANCE


def _encoder(seed=0, **kwargs) -> TransformerEncoder:
    torch.manual_seed(seed)
    config = EncoderConfig(**{"num_layers": 2, "model_dim": 8, "num_heads": 2, "ffn_dim": 16, **kwargs})
    return TransformerEncoder(config)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(model_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(num_layers=2, ils_layers=[3])


def test_output_shapes_and_taps():
    encoder = _encoder(num_layers=3, ils_layers=[1, 2], input_dim=5)
    out = encoder(torch.randn(2, 7, 5))
    assert out.top.shape == (2, 7, 8)
    assert sorted(out.taps) == [1, 2]
    assert out.layer(2).shape == (2, 7, 8)
    assert out.all_finite()
    assert sorted(encoder(torch.randn(1, 3, 5), taps=[3]).taps) == [3]


def test_attention_weights_are_kept_on_request():
    encoder = _encoder()
    out = encoder(torch.randn(1, 4, 8), keep_attention=True)
    assert len(out.attention) == 2
    assert out.attention[0].shape == (1, 2, 4, 4)
    assert torch.allclose(out.attention[0].sum(dim=-1), torch.ones(1, 2, 4))


def test_padding_does_not_change_real_frames():
    encoder = _encoder()
    x = torch.randn(1, 5, 8)
    alone = encoder(x).top
    padded_input = torch.cat([x, torch.randn(1, 3, 8)], dim=1)
    padding = torch.tensor([[False] * 5 + [True] * 3])
    padded = encoder(padded_input, padding).top[:, :5]
    assert torch.allclose(alone, padded, atol=1e-5)


def test_positions_break_permutation_symmetry():
    plain = _encoder(positional=False)
    x = torch.randn(1, 4, 8)
    perm = torch.tensor([2, 0, 3, 1])
    assert torch.allclose(plain(x).top[:, perm], plain(x[:, perm]).top, atol=1e-5)
    positional = _encoder(positional=True)
    assert not torch.allclose(positional(x).top[:, perm], positional(x[:, perm]).top, atol=1e-5)


def test_sinusoidal_table():
    table = sinusoidal_positions(3, 4)
    assert table.shape == (3, 4)
    assert torch.allclose(table[0], torch.tensor([0.0, 1.0, 0.0, 1.0]))


def test_non_finite_input_is_rejected():
    with pytest.raises(NonFiniteFeaturesError):
        _encoder()(torch.full((1, 2, 8), float("nan")))


def test_encode_feature_sequence():
    encoder = _encoder(input_dim=3)
    out = encode(FeatureSequence(np.ones((6, 3)), 40, FeatureKind.LATENT), encoder)
    assert out.top.shape == (1, 6, 8)


def test_operation_counts_grow_quadratically_with_length():
    counter = OperationCounter()
    torch.manual_seed(0)
    encoder = TransformerEncoder(EncoderConfig(num_layers=1, model_dim=8, num_heads=2, ffn_dim=16), counter)
    encoder(torch.randn(1, 10, 8))
    short = counter.get("attention_flops")
    counter.reset()
    encoder(torch.randn(1, 20, 8))
    assert counter.get("attention_flops") == 4 * short


def test_backward_needs_a_forward():
    with pytest.raises(NoForwardPassError):
        encode_backward(_encoder(), {"top": torch.zeros(1)})


@pytest.mark.parametrize("seed", GRAD_SEEDS)
def test_encoder_gradients(seed, gradient_check):
    encoder = _encoder(seed, ils_layers=[1], input_dim=6).double()
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(rng.normal(size=(2, 5, 6)), dtype=torch.float64).requires_grad_(True)
    padding = torch.tensor([[False] * 5, [False] * 3 + [True] * 2])
    with encoder.recording():
        out = encoder(x, padding)
    g_top = torch.as_tensor(rng.normal(size=tuple(out.top.shape)))
    g_tap = torch.as_tensor(rng.normal(size=tuple(out.taps[1].shape)))
    grads = encode_backward(encoder, {"top": g_top, 1: g_tap})

    def objective():
        o = encoder(x, padding)
        return (o.top * g_top).sum() + (o.taps[1] * g_tap).sum()

    names = list(grads.params)
    params = dict(encoder.named_parameters())
    worst = gradient_check(objective, [params[n] for n in names] + [x],
                           [grads.params[n] for n in names] + [grads.inputs], rng, coords=3)
    assert worst < GRAD_TOLERANCE


def test_single_frame_input():
    encoder = _encoder()
    out = encoder(torch.randn(2, 1, 8), keep_attention=True)
    assert out.top.shape == (2, 1, 8)
    assert out.all_finite()
    assert torch.allclose(out.attention[0], torch.ones(2, 2, 1, 1))


def test_top_is_layer_normalized():
    out = _encoder(num_layers=3)(torch.randn(4, 6, 8) * 5 + 2)
    assert torch.allclose(out.top.mean(dim=-1), torch.zeros(4, 6), atol=1e-5)
    assert torch.allclose(out.top.var(dim=-1, unbiased=False), torch.ones(4, 6), atol=1e-3)


def test_tapped_layer_loss_leaves_later_layers_untouched():
    encoder = _encoder(num_layers=3, ils_layers=[1]).double()
    x = torch.randn(2, 5, 8, dtype=torch.float64)
    with encoder.recording():
        out = encoder(x)
    grads = encode_backward(encoder, {1: torch.randn_like(out.taps[1])})
    later = [n for n in grads.params if n.startswith(("layers.1.", "layers.2.", "final_norm."))]
    assert later
    for name in later:
        assert torch.count_nonzero(grads.params[name]) == 0
    first = [grads.params[n] for n in grads.params if n.startswith("layers.0.")]
    assert any(torch.count_nonzero(g) > 0 for g in first)


def test_zero_upstream_gives_zero_gradients():
    encoder = _encoder(ils_layers=[1]).double()
    with encoder.recording():
        out = encoder(torch.randn(1, 4, 8, dtype=torch.float64))
    grads = encode_backward(encoder, {"top": torch.zeros_like(out.top), 1: torch.zeros_like(out.taps[1])})
    assert grads.params
    for grad in grads.params.values():
        assert torch.count_nonzero(grad) == 0
    assert not encoder.has_recording
