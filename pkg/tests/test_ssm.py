"""
Unit tests for the selective SSM layers, the RSAL autoencoder and checkpoints.
"""

import copy
import json
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from acmamba.core.exceptions import CorruptHeader, DimMismatch, EmptySequence, MissingFile, NonPositiveDelta
from acmamba.core.gradients import AdamWState, adamw_step, backward
from acmamba.core.ssm import (
    SCAN_CHUNK,
    RsalAutoencoder,
    RsalBlock,
    SelectiveSSM,
    autoencoder_forward,
    calibrate_scales,
    discretize,
    load_checkpoint,
    rsal_forward,
    save_checkpoint,
    ssm_scan,
)
from acmamba.core.training import MaskVector, consensus_losses


def _ssm(channels=3, state=2, seed=0, dtype=torch.float64) -> SelectiveSSM:
    layer = SelectiveSSM(channels, state, dtype=dtype)
    layer.reset_parameters(torch.Generator().manual_seed(seed))
    return layer


def _block(in_dim=3, inner=4, out_dim=2, state=2, seed=0) -> RsalBlock:
    block = RsalBlock(in_dim, inner, out_dim, state, dtype=torch.float64)
    block.reset_parameters(torch.Generator().manual_seed(seed))
    return block


@pytest.mark.unit
class TestDiscretize:
    """Test cases for zero-order hold discretization."""

    def test_closed_form(self):
        """a=-1, b=1, delta=ln 2 gives (0.5, 0.5)."""
        abar, bbar = discretize(-1.0, 1.0, math.log(2.0))
        assert float(abar) == pytest.approx(0.5, abs=1e-10)
        assert float(bbar) == pytest.approx(0.5, abs=1e-10)

    def test_small_delta(self):
        """delta=1e-9 gives abar ~ 1 and bbar ~ delta * b."""
        abar, bbar = discretize(-1.0, 1.0, 1e-9)
        assert float(abar) == pytest.approx(1.0, abs=1e-8)
        assert float(bbar) == pytest.approx(1e-9, rel=1e-6)

    def test_vanishing_a(self):
        """As a -> 0, bbar -> delta * b."""
        _, bbar = discretize(-1e-12, 2.0, 0.1)
        assert float(bbar) == pytest.approx(0.2, abs=1e-8)

    @pytest.mark.parametrize("delta", [0.0, -0.1])
    def test_non_positive_delta(self, delta):
        """delta must be strictly positive."""
        with pytest.raises(NonPositiveDelta):
            discretize(-1.0, 1.0, delta)

    def test_stability(self):
        """Negative a and positive delta keep |abar| < 1."""
        a = -torch.rand(50, dtype=torch.float64) * 10 - 1e-3
        delta = torch.rand(50, dtype=torch.float64) + 1e-3
        abar, _ = discretize(a, torch.ones(50, dtype=torch.float64), delta)
        assert (abar.abs() < 1).all()


@pytest.mark.unit
class TestSsmScan:
    """Test cases for the selective scan."""

    def test_zero_input_zero_output(self):
        """A zero sequence scans to zeros."""
        out = ssm_scan(_ssm(), torch.zeros(5, 3, dtype=torch.float64))
        assert torch.equal(out, torch.zeros(5, 3, dtype=torch.float64))

    def test_single_step_unroll(self):
        """T=1: y = <C_1, Bbar_1> x_1 + x_1 per channel."""
        layer = _ssm()
        x = torch.tensor([[0.3, -0.2, 0.5]], dtype=torch.float64)
        with torch.no_grad():
            B = x[0] @ layer.W_B.T
            C = x[0] @ layer.W_C.T
            delta = F.softplus(x[0] @ layer.W_delta.T + layer.b_delta)
            _, bbar = discretize(layer.A, B.unsqueeze(0), delta.unsqueeze(-1))
            expected = (bbar @ C) * x[0] + x[0]
            out = ssm_scan(layer, x)
        torch.testing.assert_close(out[0], expected)

    def test_zero_input_projection_is_residual(self):
        """W_B = 0 kills the state and leaves the residual."""
        layer = _ssm()
        with torch.no_grad():
            layer.W_B.zero_()
        x = torch.randn(6, 3, dtype=torch.float64)
        with torch.no_grad():
            torch.testing.assert_close(ssm_scan(layer, x), x)

    def test_backward_direction_reverses(self):
        """The backward scan equals the forward scan of the reversed sequence, reversed."""
        layer = _ssm()
        x = torch.randn(5, 3, dtype=torch.float64)
        with torch.no_grad():
            torch.testing.assert_close(ssm_scan(layer, x, "backward"), ssm_scan(layer, x.flip(0)).flip(0))

    def test_empty_sequence(self):
        """T=0 is rejected."""
        with pytest.raises(EmptySequence):
            ssm_scan(_ssm(), torch.zeros(0, 3, dtype=torch.float64))

    def test_state_matrix_negative(self):
        """Initialized A is strictly negative, A[d, n] = -(n + 1)."""
        layer = _ssm(channels=2, state=3)
        torch.testing.assert_close(layer.A, -torch.tensor([[1.0, 2.0, 3.0]] * 2, dtype=torch.float64))

    def test_long_sequence_shape(self):
        """Output length equals input length for long sequences."""
        layer = _ssm()
        with torch.no_grad():
            assert ssm_scan(layer, torch.randn(257, 3, dtype=torch.float64)).shape == (257, 3)

    def test_chunked_scan_matches_stepwise_recurrence(self):
        """Across chunk boundaries, outputs and gradients equal a per-step reference."""
        layer = _ssm(channels=3, state=2, seed=4)
        x = torch.randn(2 * SCAN_CHUNK + 5, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(8))

        def stepwise(u):
            B, C = u @ layer.W_B.T, u @ layer.W_C.T
            delta = F.softplus(u @ layer.W_delta.T + layer.b_delta)
            h = torch.zeros(3, 2, dtype=u.dtype)
            out = []
            for t in range(u.shape[0]):
                abar, bbar = discretize(layer.A, B[t].unsqueeze(0), delta[t].unsqueeze(-1))
                h = abar * h + bbar * u[t].unsqueeze(-1)
                out.append(h @ C[t])
            return torch.stack(out) + u

        expected = stepwise(x)
        expected_grads = torch.autograd.grad(expected.sum(), list(layer.parameters()))
        actual = ssm_scan(layer, x)
        actual_grads = torch.autograd.grad(actual.sum(), list(layer.parameters()))
        torch.testing.assert_close(actual, expected)
        for a, e in zip(actual_grads, expected_grads):
            torch.testing.assert_close(a, e)


@pytest.mark.unit
class TestRsalBlock:
    """Test cases for the bidirectional RSAL block."""

    def test_zero_input_zero_output(self):
        """Zero in, zero out."""
        with torch.no_grad():
            out = rsal_forward(_block(), torch.zeros(4, 3, dtype=torch.float64))
        assert torch.equal(out, torch.zeros(4, 2, dtype=torch.float64))

    def test_bidirectional_symmetry(self):
        """Reversing the input and swapping scan weights reverses the output."""
        block = _block()
        mirrored = copy.deepcopy(block)
        mirrored.forward_ssm.load_state_dict(block.backward_ssm.state_dict())
        mirrored.backward_ssm.load_state_dict(block.forward_ssm.state_dict())
        with torch.no_grad():
            mirrored.conv.weight.copy_(block.conv.weight.flip(-1))
            x = torch.randn(5, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
            torch.testing.assert_close(mirrored(x.flip(0)), block(x).flip(0))

    def test_saturated_gate(self):
        """With a large positive z the gate acts as multiplication by z."""
        block = _block()
        with torch.no_grad():
            block.in_proj_z.weight.fill_(10.0)
            x = torch.rand(4, 3, dtype=torch.float64) + 0.5
            z = block.in_proj_z(x)
            inner = F.silu(block.conv(block.in_proj_x(x).T.unsqueeze(0)).squeeze(0).T)
            y = ssm_scan(block.forward_ssm, inner) + ssm_scan(block.backward_ssm, inner, "backward")
            expected = block.out_proj(y * z)
            torch.testing.assert_close(block(x), expected, rtol=1e-6, atol=1e-8)

    def test_dim_mismatch(self):
        """Input width must equal in_dim."""
        with pytest.raises(DimMismatch):
            _block()(torch.zeros(4, 5, dtype=torch.float64))


@pytest.mark.unit
class TestAutoencoder:
    """Test cases for the two-encoder autoencoder."""

    def test_zero_sequence_reconstructs_to_zero(self):
        """Zero sequences reconstruct to zeros on both paths."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, dtype=torch.float64, seed=0)
        with torch.no_grad():
            for path in ("original", "masked"):
                assert torch.equal(autoencoder_forward(model, torch.zeros(3, 4, dtype=torch.float64), path),
                                   torch.zeros(3, 4, dtype=torch.float64))

    @pytest.mark.parametrize("length", [1, 2, 7])
    def test_shape_contract(self, length):
        """Output shape equals input shape."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=0)
        with torch.no_grad():
            assert model(torch.rand(length, 4)).shape == (length, 4)

    def test_paths_use_different_encoders(self):
        """Original and masked paths differ for the same input."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, dtype=torch.float64, seed=0)
        x = torch.rand(5, 4, dtype=torch.float64)
        with torch.no_grad():
            assert not torch.allclose(model(x, "original"), model(x, "masked"))

    def test_dim_mismatch(self):
        """The band count must match."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=0)
        with pytest.raises(DimMismatch):
            model(torch.zeros(3, 5))

    def test_seeded_initialization(self):
        """The same seed gives identical parameters; seed None leaves the model uninitialized."""
        a = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=9)
        b = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        assert not RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=None).initialized

    @pytest.mark.slow
    def test_overfits_a_repeated_vector(self):
        """After 500 steps on a repeated vector the reconstruction is within 1e-2 per band."""
        torch.manual_seed(0)
        v = torch.tensor([0.2, 0.5, 0.9, 0.4, 0.1])
        seq = v.repeat(4, 1)
        model = RsalAutoencoder(5, hidden_dim=16, state_dim=4, seed=0)
        state = AdamWState(model, lr=1e-2, weight_decay=0.0)
        for _ in range(500):
            loss = ((model(seq) - seq) ** 2).mean()
            adamw_step(model, backward(loss, model), state)
        with torch.no_grad():
            assert (model(seq) - seq).abs().max() < 1e-2


@pytest.mark.unit
class TestCalibrateScales:
    """Test cases for data-dependent initialization."""

    def test_scales_and_decoder_offset(self):
        """Encoders reach unit RMS around their offset and the decoder starts near the sample mean."""
        model = RsalAutoencoder(5, hidden_dim=12, state_dim=3, dtype=torch.float64, seed=2)
        sample = np.random.default_rng(3).uniform(0.2, 0.8, size=(40, 5))
        calibrate_scales(model, sample)
        seq = torch.as_tensor(sample)
        mean = seq.mean(dim=0)
        with torch.no_grad():
            for encoder in (model.encoder, model.masked_encoder):
                varying = encoder(seq) - encoder.out_proj.bias
                assert varying.pow(2).mean().sqrt().item() == pytest.approx(1.0, rel=1e-9)
                assert encoder.in_proj_x(seq).pow(2).mean().sqrt().item() == pytest.approx(1.0, rel=1e-9)
            torch.testing.assert_close(model.decoder.out_proj.bias, mean)
            deviation = (model(seq) - mean).pow(2).mean().sqrt().item()
            spread = (seq - mean).pow(2).mean().sqrt().item()
        assert deviation == pytest.approx(0.1 * spread, rel=1e-9)

    def test_zero_sample_leaves_weights(self):
        """A sample with no signal leaves every weight and only zeroes the decoder offset."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, dtype=torch.float64, seed=5)
        before = copy.deepcopy(model.state_dict())
        calibrate_scales(model, np.zeros((7, 4)))
        for name, value in model.state_dict().items():
            if name == "decoder.out_proj.bias":
                assert torch.equal(value, torch.zeros_like(value))
            else:
                assert torch.equal(value, before[name])

    def test_requires_initialized_model(self):
        """Calibration needs seeded parameters to rescale."""
        with pytest.raises(ValueError):
            calibrate_scales(RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=None), np.ones((3, 4)))

    def test_sample_width_must_match(self):
        """The sample must have one column per band."""
        with pytest.raises(DimMismatch):
            calibrate_scales(RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=0), np.ones((3, 5)))


@pytest.mark.unit
class TestGradientCheck:
    """Reverse-mode gradients against central finite differences."""

    @pytest.fixture
    def tiny_problem(self):
        model = RsalAutoencoder(4, hidden_dim=4, state_dim=2, dtype=torch.float64, seed=11)
        with torch.no_grad():
            model.decoder.out_proj.bias.copy_(torch.tensor([0.7, -0.4, 0.9, -0.6], dtype=torch.float64))
        seq = torch.rand(3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(2)) + 0.1
        mask = MaskVector(np.array([1, 0, 1], dtype=np.uint8))

        # central differences are only valid away from the kink of the norm at zero
        target = seq * torch.as_tensor(mask.keep, dtype=seq.dtype).unsqueeze(-1)
        with torch.no_grad():
            for path, inputs in (("original", seq), ("masked", target)):
                residuals = torch.linalg.vector_norm(target - model(inputs, path), dim=1)
                assert residuals.min() > 0.1
        return model, seq, mask

    @pytest.mark.parametrize("which", [0, 1])
    def test_every_parameter_matches_finite_differences(self, tiny_problem, which):
        """Gradients of L_ori and L_mask match central differences within 1e-3 relative."""
        model, seq, mask = tiny_problem
        loss = consensus_losses(model, seq, mask, 2.0)[which]
        analytic = backward(loss, model).values

        step = 1e-5
        numeric = torch.zeros_like(analytic)
        offset = 0
        with torch.no_grad():
            for _, p in model.named_parameters():
                flat = p.view(-1)
                for i in range(flat.numel()):
                    original = flat[i].item()
                    flat[i] = original + step
                    plus = consensus_losses(model, seq, mask, 2.0)[which].item()
                    flat[i] = original - step
                    minus = consensus_losses(model, seq, mask, 2.0)[which].item()
                    flat[i] = original
                    numeric[offset + i] = (plus - minus) / (2 * step)
                offset += flat.numel()

        error = (analytic - numeric).abs()
        scale = torch.maximum(analytic.abs(), numeric.abs())
        assert (error <= 1e-3 * scale + 1e-7).all()

    def test_original_loss_leaves_masked_encoder_untouched(self, tiny_problem):
        """Only L_ori evaluated: every masked-encoder gradient entry is exactly zero."""
        model, seq, mask = tiny_problem
        grad = backward(consensus_losses(model, seq, mask, 2.0)[0], model)
        for name in grad.slices:
            if name.startswith("masked_encoder."):
                assert torch.equal(grad.part(name), torch.zeros_like(grad.part(name)))

    def test_zero_input_zero_gradients(self):
        """0.5 * ||out||^2 on zero input has zero gradient everywhere."""
        model = RsalAutoencoder(4, hidden_dim=4, state_dim=2, dtype=torch.float64, seed=1)
        out = model(torch.zeros(3, 4, dtype=torch.float64))
        grad = backward(0.5 * (out ** 2).sum(), model)
        assert torch.equal(grad.values, torch.zeros_like(grad.values))


@pytest.mark.unit
class TestCheckpoint:
    """Test cases for checkpoint save/load."""

    def test_round_trip(self, tmp_path):
        """A loaded model reproduces the saved model's outputs."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=3)
        manifest = save_checkpoint(model, tmp_path / "model.json")
        loaded = load_checkpoint(manifest)
        x = torch.rand(5, 4)
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))
        assert loaded.initialized
        assert (tmp_path / "model.bin").stat().st_size == 4 * sum(p.numel() for p in model.parameters())

    def test_manifest_lists_parameters_in_order(self, tmp_path):
        """The manifest records every parameter with shape and offset."""
        model = RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=3)
        manifest = json.loads(save_checkpoint(model, tmp_path / "model.json").read_text())
        assert [e["name"] for e in manifest["parameters"]] == [n for n, _ in model.named_parameters()]
        assert manifest["format_version"] == "1.0"

    def test_incompatible_version(self, tmp_path):
        """A different major format version is rejected."""
        path = save_checkpoint(RsalAutoencoder(4, hidden_dim=6, state_dim=2, seed=3), tmp_path / "model.json")
        manifest = json.loads(path.read_text())
        manifest["format_version"] = "2.0"
        path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptHeader):
            load_checkpoint(path)

    def test_missing_checkpoint(self, tmp_path):
        """Loading a missing manifest raises MissingFile."""
        with pytest.raises(MissingFile):
            load_checkpoint(tmp_path / "absent.json")
