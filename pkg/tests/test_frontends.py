import numpy as np
import pytest
import torch

from core.config import load_run_config
from core.errors import FrameshiftMismatchError, InputTooShortError, LengthMismatchError, NoForwardPassError
from frontends.base import align_lengths, build_frontend, expected_frames
from frontends.downsampler import ConvGLUDownsampler, DownsamplerConfig, downsample
from frontends.waveform_encoder import (
    WaveformEncoder, WaveformEncoderConfig, conv_stack_lengths, waveform_encode,
)
from signal_frontend.dsp import FeatureKind, FeatureSequence, Waveform
from tests.conftest import GRAD_SEEDS, GRAD_TOLERANCE


def test_waveform_encoder_geometry():
    config = WaveformEncoderConfig.standard(8)
    assert config.receptive_field == 400
    assert config.output_length(16000) == 49
    assert conv_stack_lengths(config, 16000)[-1] == 49
    assert config.output_length(399) == 0


def test_waveform_encoder_stride_must_match_frameshift():
    with pytest.raises(ValueError):
        WaveformEncoderConfig(layers=WaveformEncoderConfig.standard(4).layers[:-1])


def test_waveform_encoder_output():
    torch.manual_seed(0)
    encoder = WaveformEncoder(WaveformEncoderConfig.standard(8))
    out = waveform_encode(Waveform(np.random.default_rng(0).normal(size=16000) * 0.1), encoder)
    assert out.frames.shape == (49, 8)
    assert out.frameshift_ms == 20 and out.kind is FeatureKind.LATENT


def test_waveform_encoder_rejects_short_input():
    encoder = WaveformEncoder(WaveformEncoderConfig.standard(4))
    with pytest.raises(InputTooShortError, match="receptive field"):
        encoder(torch.zeros(1, 399))


@pytest.mark.parametrize("frameshift, layers", [(20, 1), (40, 2), (80, 3)])
def test_downsampler_halves_per_layer(frameshift, layers):
    config = DownsamplerConfig(target_frameshift_ms=frameshift, input_dim=6, channels=4)
    assert config.num_layers == layers
    assert config.output_length(100) == 100 // (2 ** layers)
    module = ConvGLUDownsampler(config)
    out = module(torch.zeros(2, 100, 6))
    assert out.shape == (2, 100 // (2 ** layers), 4)
    assert module.output_lengths(torch.tensor([100, 37])).tolist() == [config.output_length(100),
                                                                       config.output_length(37)]


def test_downsampler_rejects_unknown_rates():
    with pytest.raises(ValueError):
        DownsamplerConfig(target_frameshift_ms=30)


def test_downsample_needs_base_rate_frames():
    module = ConvGLUDownsampler(DownsamplerConfig(40, input_dim=3, channels=2))
    out = downsample(FeatureSequence(np.ones((9, 3)), 10, FeatureKind.FBANK), module)
    assert out.frames.shape == (2, 2) and out.frameshift_ms == 40
    with pytest.raises(FrameshiftMismatchError):
        downsample(FeatureSequence(np.ones((9, 3)), 20, FeatureKind.FBANK), module)


def _gated_downsampler(gate_bias: float, kernel: int = 2, input_dim: int = 1) -> ConvGLUDownsampler:
    """Single-layer downsampler whose value channels copy the first frame of
    each window and whose gates are held at a constant"""
    module = ConvGLUDownsampler(DownsamplerConfig(20, input_dim=input_dim, channels=input_dim,
                                                  kernel=kernel)).double()
    conv = module.convs[0]
    with torch.no_grad():
        conv.weight.zero_()
        conv.bias.zero_()
        for c in range(input_dim):
            conv.weight[c, c, 0] = 1.0
        conv.bias[input_dim:] = gate_bias
    return module


def test_saturated_glu_passes_or_blocks_its_values():
    frames = torch.arange(8, dtype=torch.float64).view(1, 8, 1)
    opened = _gated_downsampler(50.0)(frames)
    assert torch.allclose(opened, frames[:, ::2], atol=1e-12)
    closed = _gated_downsampler(-50.0)(frames)
    assert torch.allclose(closed, torch.zeros_like(closed), atol=1e-12)
    half = _gated_downsampler(0.0)(frames)
    assert torch.allclose(half, 0.5 * frames[:, ::2])


def test_silence_encodes_to_zero():
    torch.manual_seed(0)
    waveform = WaveformEncoder(WaveformEncoderConfig.standard(4))
    assert torch.count_nonzero(waveform(torch.zeros(2, 1600))) == 0
    downsampler = ConvGLUDownsampler(DownsamplerConfig(40, input_dim=6, channels=4))
    assert torch.count_nonzero(downsampler(torch.zeros(2, 16, 6))) == 0


def test_pointwise_weight_gradient_is_the_sum_of_its_inputs():
    module = _gated_downsampler(50.0, kernel=1, input_dim=3)
    rng = np.random.default_rng(0)
    inputs = torch.as_tensor(rng.normal(size=(2, 8, 3)))
    with module.recording():
        out = module(inputs)
    grads = module.param_gradients(torch.ones_like(out))
    expected = inputs[:, ::2, :].sum(dim=(0, 1))
    weight_grad = grads.params["convs.0.weight"]
    for c in range(3):
        assert torch.allclose(weight_grad[c, :, 0], expected)
    assert torch.allclose(grads.params["convs.0.bias"][:3], torch.full((3,), 8.0, dtype=torch.float64))


def test_build_frontend_from_config():
    fbank = build_frontend(load_run_config(None, {"frontend": {"frameshift_ms": 80}, "encoder": {"model_dim": 32},
                                                  "finetune": {"guard_policy": "skip"}}))
    assert isinstance(fbank, ConvGLUDownsampler)
    assert (fbank.frameshift_ms, fbank.output_dim) == (80, 32)
    waveform = build_frontend(load_run_config(None, {"frontend": {"kind": "waveform", "conv_channels": 16},
                                                     "masking": {"placement": "post"}}))
    assert isinstance(waveform, WaveformEncoder)
    assert waveform.output_dim == 16


def test_expected_frames():
    assert expected_frames(16000, "waveform", 20) == 49
    assert expected_frames(16000, "fbank", 20) == 49
    assert expected_frames(16000, "fbank", 40) == 24
    assert expected_frames(16000, "fbank", 80) == 12
    assert expected_frames(100, "fbank", 20) == 0


def test_align_lengths():
    feats, labels = align_lengths(np.zeros((50, 2)), np.zeros(49))
    assert len(feats) == len(labels) == 49
    with pytest.raises(LengthMismatchError):
        align_lengths(np.zeros((50, 2)), np.zeros(47))


def test_gradients_need_a_recorded_forward():
    module = ConvGLUDownsampler(DownsamplerConfig(20, input_dim=2, channels=2))
    with pytest.raises(NoForwardPassError):
        module.param_gradients(torch.zeros(1, 1, 2))
    with torch.no_grad():
        module(torch.zeros(1, 4, 2))
    assert not module.has_recording
    with torch.no_grad(), module.recording():
        module(torch.zeros(1, 4, 2))
    assert not module.has_recording


def test_recording_is_opt_in_and_released_after_backward():
    module = ConvGLUDownsampler(DownsamplerConfig(20, input_dim=2, channels=2))
    module(torch.ones(1, 4, 2))
    assert not module.has_recording
    with module.recording():
        out = module(torch.ones(1, 4, 2))
    assert module.has_recording
    module(torch.ones(1, 4, 2))
    assert module._recorded_outputs[0] is out
    module.param_gradients(torch.ones_like(out))
    assert not module.has_recording
    with pytest.raises(NoForwardPassError):
        module.param_gradients(torch.ones_like(out))

    with module.recording():
        out = module(torch.ones(1, 4, 2))
    first = module.param_gradients(torch.ones_like(out), retain_graph=True)
    again = module.param_gradients(torch.ones_like(out))
    for name, grad in first.params.items():
        assert torch.equal(grad, again.params[name])
    assert not module.has_recording


def _module_gradient_check(module, inputs, gradient_check, rng):
    module = module.double()
    inputs = inputs.double().requires_grad_(True)
    with module.recording():
        out = module(inputs)
    upstream = torch.as_tensor(rng.normal(size=tuple(out.shape)))
    grads = module.param_gradients(upstream)
    assert grads.is_finite()

    def objective():
        return (module(inputs) * upstream).sum()

    names = list(grads.params)
    params = dict(module.named_parameters())
    tensors = [params[n] for n in names] + [inputs]
    return gradient_check(objective, tensors, [grads.params[n] for n in names] + [grads.inputs], rng, coords=3)


@pytest.mark.parametrize("seed", GRAD_SEEDS)
def test_downsampler_gradients(seed, gradient_check):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    module = ConvGLUDownsampler(DownsamplerConfig(40, input_dim=6, channels=4))
    inputs = torch.as_tensor(rng.normal(size=(2, 13, 6)))
    assert _module_gradient_check(module, inputs, gradient_check, rng) < GRAD_TOLERANCE


@pytest.mark.parametrize("seed", GRAD_SEEDS)
def test_waveform_encoder_gradients(seed, gradient_check):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    module = WaveformEncoder(WaveformEncoderConfig.standard(4))
    inputs = torch.as_tensor(rng.normal(size=(1, 800)) * 0.1)
    assert _module_gradient_check(module, inputs, gradient_check, rng) < GRAD_TOLERANCE
