"""
Selective state space layers and the RSAL autoencoder.

All modules operate on a single sequence of shape (T, features). The scan
discretizes a chunk of steps at once and then runs the recurrence step by
step; with gradients enabled, chunks of long sequences are recomputed in the
backward pass instead of being kept in memory.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from packaging import version
from torch.utils.checkpoint import checkpoint

from acmamba.core.exceptions import CorruptHeader, DimMismatch, EmptySequence, MissingFile, NonPositiveDelta
from acmamba.models.config import EncoderPath

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "acmamba-checkpoint"
CHECKPOINT_VERSION = "1.0"
SMALL_STEP = 1e-6
# short memory: the slowest state forgets within about ten steps
DT_RANGE = (1e-1, 1.0)
CONTEXT_GAIN = 0.1
CONV_SIDE_BOUND = 0.1
SCAN_CHUNK = 256
RMS_FLOOR = 1e-12
OUTPUT_INIT_RMS = 0.1

Scalar = Union[float, torch.Tensor]
PathLike = Union[str, Path]


def discretize(a: Scalar, b: Scalar, delta: Scalar) -> Tuple[torch.Tensor, torch.Tensor]:
    """Zero-order hold discretization, elementwise.

    abar = exp(delta * a); bbar = (exp(delta * a) - 1) / (delta * a) * delta * b,
    with the series 1 + x/2 for the ratio when |delta * a| < 1e-6.

    Args:
        a: Negative state coefficient(s)
        b: Input coefficient(s)
        delta: Strictly positive step size(s)

    Returns:
        Tuple of (abar, bbar) broadcast over the inputs
    """
    a, b, delta = (x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64) for x in (a, b, delta))
    if bool((delta <= 0).any()):
        raise NonPositiveDelta("Discretization step delta must be strictly positive")
    x = delta * a
    small = x.abs() < SMALL_STEP
    safe_x = torch.where(small, torch.full_like(x, -1.0), x)
    ratio = torch.where(small, 1.0 + 0.5 * x, torch.expm1(safe_x) / safe_x)
    return torch.exp(x), ratio * delta * b


def _uniform(tensor: torch.Tensor, bound: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(torch.empty(tensor.shape, dtype=tensor.dtype).uniform_(-bound, bound, generator=generator))


class SelectiveSSM(nn.Module):
    """Diagonal selective SSM over D channels with state size N.

    B_t = W_B u_t, C_t = W_C u_t and delta_t = softplus(W_delta u_t + b_delta)
    are computed from the full input vector u_t; A = -exp(A_log) stays negative.
    """

    def __init__(self, channel_dim: int, state_dim: int = 16, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.channel_dim = channel_dim
        self.state_dim = state_dim
        factory = {"dtype": dtype}

        self.A_log = nn.Parameter(torch.empty(channel_dim, state_dim, **factory))
        self.W_B = nn.Parameter(torch.empty(state_dim, channel_dim, **factory))
        self.W_C = nn.Parameter(torch.empty(state_dim, channel_dim, **factory))
        self.W_delta = nn.Parameter(torch.empty(channel_dim, channel_dim, **factory))
        self.b_delta = nn.Parameter(torch.empty(channel_dim, **factory))

    def reset_parameters(self, generator: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.channel_dim)
        with torch.no_grad():
            # A[d, n] = -(n + 1)
            self.A_log.copy_(torch.log(torch.arange(1, self.state_dim + 1, dtype=self.A_log.dtype)).expand_as(self.A_log))
            _uniform(self.W_B, bound, generator)
            # the state readout starts small so each step is dominated by the residual
            _uniform(self.W_C, CONTEXT_GAIN * bound, generator)
            _uniform(self.W_delta, bound, generator)
            # softplus(b_delta) log-uniform in DT_RANGE
            u = torch.empty(self.channel_dim, dtype=torch.float64).uniform_(generator=generator)
            dt = torch.exp(u * (math.log(DT_RANGE[1]) - math.log(DT_RANGE[0])) + math.log(DT_RANGE[0]))
            self.b_delta.copy_((dt + torch.log(-torch.expm1(-dt))).to(self.b_delta.dtype))

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.A_log)

    def forward(self, seq: torch.Tensor, reverse: bool = False) -> torch.Tensor:
        if seq.shape[0] == 0:
            raise EmptySequence("Cannot scan an empty sequence")
        if seq.shape[-1] != self.channel_dim:
            raise DimMismatch(f"SSM expects {self.channel_dim} channels, got {seq.shape[-1]}")
        u = seq.flip(0) if reverse else seq

        B = u @ self.W_B.T                                   # (T, N)
        C = u @ self.W_C.T                                   # (T, N)
        delta = F.softplus(u @ self.W_delta.T + self.b_delta)  # (T, D)

        h = torch.zeros(self.channel_dim, self.state_dim, dtype=u.dtype)
        recompute = torch.is_grad_enabled() and u.shape[0] > SCAN_CHUNK
        outputs = []
        for start in range(0, u.shape[0], SCAN_CHUNK):
            piece = (u[start:start + SCAN_CHUNK], B[start:start + SCAN_CHUNK],
                     C[start:start + SCAN_CHUNK], delta[start:start + SCAN_CHUNK], h)
            if recompute:
                y, h = checkpoint(self._scan_chunk, *piece, use_reentrant=False)
            else:
                y, h = self._scan_chunk(*piece)
            outputs.append(y)
        y = torch.cat(outputs) + u
        return y.flip(0) if reverse else y

    def _scan_chunk(self, u: torch.Tensor, B: torch.Tensor, C: torch.Tensor, delta: torch.Tensor,
                    h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """State readouts <C_t, h_t> for L steps starting from state h, plus the final state."""
        abar, bbar = discretize(self.A, B.unsqueeze(1), delta.unsqueeze(-1))  # (L, D, N)
        drive = bbar * u.unsqueeze(-1)
        readouts = []
        for decay, push, c in zip(abar.unbind(0), drive.unbind(0), C.unbind(0)):
            h = torch.addcmul(push, decay, h)
            readouts.append(h @ c)
        return torch.stack(readouts), h


def ssm_scan(params: SelectiveSSM, seq: torch.Tensor, direction: str = "forward") -> torch.Tensor:
    """Run one selective scan over a (T, D) sequence in the given direction."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction}")
    return params(seq, reverse=direction == "backward")


class RsalBlock(nn.Module):
    """Bidirectional regional spectral attribute learning block.

    x, z = W_in_x s, W_in_z s; x' = SiLU(depthwise_conv(x));
    Y = scan_fwd(x') + scan_bwd(x'); out = W_out (Y * SiLU(z)) + b_out.
    """

    def __init__(self, in_dim: int, inner_dim: int, out_dim: int, state_dim: int = 16,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.in_dim = in_dim
        self.inner_dim = inner_dim
        self.out_dim = out_dim
        factory = {"dtype": dtype}

        self.in_proj_x = nn.Linear(in_dim, inner_dim, bias=False, **factory)
        self.in_proj_z = nn.Linear(in_dim, inner_dim, bias=False, **factory)
        self.conv = nn.Conv1d(inner_dim, inner_dim, kernel_size=3, padding=1, groups=inner_dim, bias=False, **factory)
        self.forward_ssm = SelectiveSSM(inner_dim, state_dim, dtype=dtype)
        self.backward_ssm = SelectiveSSM(inner_dim, state_dim, dtype=dtype)
        self.out_proj = nn.Linear(inner_dim, out_dim, bias=True, **factory)

    def reset_parameters(self, generator: torch.Generator) -> None:
        _uniform(self.in_proj_x.weight, 1.0 / math.sqrt(self.in_dim), generator)
        _uniform(self.in_proj_z.weight, 1.0 / math.sqrt(self.in_dim), generator)
        # close to identity: neighbours in a region sequence and in a pixel row differ
        _uniform(self.conv.weight, CONV_SIDE_BOUND, generator)
        with torch.no_grad():
            self.conv.weight[:, 0, 1] += 1.0
        self.forward_ssm.reset_parameters(generator)
        self.backward_ssm.reset_parameters(generator)
        _uniform(self.out_proj.weight, 1.0 / math.sqrt(self.inner_dim), generator)
        with torch.no_grad():
            self.out_proj.bias.zero_()

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        if seq.ndim != 2 or seq.shape[-1] != self.in_dim:
            raise DimMismatch(f"RSAL block expects (T, {self.in_dim}), got {tuple(seq.shape)}")
        if seq.shape[0] == 0:
            raise EmptySequence("Cannot run an RSAL block over an empty sequence")
        x = self.in_proj_x(seq)
        z = self.in_proj_z(seq)
        x = F.silu(self.conv(x.T.unsqueeze(0)).squeeze(0).T)
        y = ssm_scan(self.forward_ssm, x, "forward") + ssm_scan(self.backward_ssm, x, "backward")
        return self.out_proj(y * F.silu(z))


def rsal_forward(block: RsalBlock, seq: torch.Tensor) -> torch.Tensor:
    return block(seq)


class RsalAutoencoder(nn.Module):
    """Two encoders (original and masked path) sharing one decoder.

    Encoders map C -> D -> D and the decoder maps D -> D -> C; each is a single
    RSAL block.
    """

    def __init__(self, bands: int, hidden_dim: int = 256, state_dim: int = 16,
                 dtype: torch.dtype = torch.float32, seed: Optional[int] = 0):
        """Build the autoencoder.

        Args:
            bands: Spectral channels C
            hidden_dim: Encoder width D
            state_dim: SSM state size N
            dtype: Parameter precision
            seed: Initialization seed; None leaves parameters unset (e.g. before loading a checkpoint)
        """
        super().__init__()
        self.bands = bands
        self.hidden_dim = hidden_dim
        self.state_dim = state_dim
        self.encoder = RsalBlock(bands, hidden_dim, hidden_dim, state_dim, dtype=dtype)
        self.masked_encoder = RsalBlock(bands, hidden_dim, hidden_dim, state_dim, dtype=dtype)
        self.decoder = RsalBlock(hidden_dim, hidden_dim, bands, state_dim, dtype=dtype)
        self.initialized = False
        if seed is not None:
            self.reset_parameters(seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.out_proj.weight.dtype

    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        for block in (self.encoder, self.masked_encoder, self.decoder):
            block.reset_parameters(generator)
        self.initialized = True

    def zero_parameters(self) -> None:
        """Set every parameter to zero (A = -1, delta = softplus(0))."""
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        self.initialized = True

    def forward(self, seq: torch.Tensor, path: str = EncoderPath.ORIGINAL) -> torch.Tensor:
        if seq.ndim != 2 or seq.shape[-1] != self.bands:
            raise DimMismatch(f"Autoencoder expects (T, {self.bands}), got {tuple(seq.shape)}")
        if path == EncoderPath.ORIGINAL:
            encoded = self.encoder(seq)
        elif path == EncoderPath.MASKED:
            encoded = self.masked_encoder(seq)
        else:
            raise ValueError(f"Unknown encoder path: {path}")
        return self.decoder(encoded)

    def reconstruct(self, values: np.ndarray, path: str = EncoderPath.ORIGINAL) -> np.ndarray:
        """Inference helper: numpy (T, C) in, numpy (T, C) reconstruction out."""
        with torch.no_grad():
            seq = torch.as_tensor(np.asarray(values), dtype=self.dtype)
            return self(seq, path).detach().cpu().numpy().astype(np.float64)


def autoencoder_forward(model: RsalAutoencoder, seq: torch.Tensor, path: str = EncoderPath.ORIGINAL) -> torch.Tensor:
    """D(E(seq)) for the original path, D(E_hat(seq)) for the masked path."""
    return model(seq, path)


def _rms(values: torch.Tensor) -> float:
    return float(values.pow(2).mean().sqrt())


def _scale_to(weight: torch.Tensor, activations: torch.Tensor, target: float) -> None:
    rms = _rms(activations)
    if rms > RMS_FLOOR and target > RMS_FLOOR:
        weight.mul_(target / rms)


def _calibrate_block(block: RsalBlock, seq: torch.Tensor, target: float) -> None:
    for proj in (block.in_proj_x, block.in_proj_z):
        _scale_to(proj.weight, proj(seq), 1.0)
    _scale_to(block.out_proj.weight, block(seq) - block.out_proj.bias, target)


def calibrate_scales(model: RsalAutoencoder, values: np.ndarray, output_rms: float = OUTPUT_INIT_RMS) -> None:
    """Data-dependent initialization from a sample sequence.

    Input projections of every block are rescaled to unit RMS pre-activations
    and both encoders to unit RMS output. The decoder starts at the sample
    mean, with a random part of ``output_rms`` times the sample's spread.
    Layers whose activations vanish on the sample are left as they are.

    Args:
        model: Freshly initialized autoencoder
        values: (T, C) sample, normally the region means in scan order
        output_rms: Initial decoder deviation relative to the sample spread
    """
    if not model.initialized:
        raise ValueError("Initialize the model before calibrating it")
    with torch.no_grad():
        seq = torch.as_tensor(np.asarray(values), dtype=model.dtype)
        if seq.ndim != 2 or seq.shape[-1] != model.bands:
            raise DimMismatch(f"Calibration sample must be (T, {model.bands}), got {tuple(seq.shape)}")
        if seq.shape[0] == 0:
            raise EmptySequence("Cannot calibrate on an empty sequence")
        for encoder in (model.encoder, model.masked_encoder):
            _calibrate_block(encoder, seq, 1.0)
        mean = seq.mean(dim=0)
        _calibrate_block(model.decoder, model.encoder(seq), output_rms * _rms(seq - mean))
        model.decoder.out_proj.bias.copy_(mean)
    logger.debug(f"Calibrated initial scales on {seq.shape[0]} samples")


def _manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path if path.suffix == ".json" else path.with_suffix(".json")


def save_checkpoint(model: RsalAutoencoder, path: PathLike, metadata: Optional[Dict] = None) -> Path:
    """Write a JSON manifest and a little-endian f32 payload next to it.

    Returns:
        Path: The manifest path
    """
    manifest_path = _manifest_path(path)
    payload_path = manifest_path.with_suffix(".bin")
    entries, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        data = p.detach().cpu().numpy().astype("<f4").ravel()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "count": int(data.size)})
        chunks.append(data)
        offset += int(data.size)

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "bands": model.bands,
        "hidden_dim": model.hidden_dim,
        "state_dim": model.state_dim,
        "dtype": "f32",
        "payload": payload_path.name,
        "parameters": entries,
        "metadata": metadata or {},
    }
    payload_path.write_bytes(np.concatenate(chunks).tobytes() if chunks else b"")
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"Saved checkpoint with {offset} parameters to {manifest_path}")
    return manifest_path


def load_checkpoint(path: PathLike, dtype: torch.dtype = torch.float32) -> RsalAutoencoder:
    """Rebuild a model from save_checkpoint output."""
    manifest_path = _manifest_path(path)
    if not manifest_path.is_file():
        raise MissingFile(f"Checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CorruptHeader(f"{manifest_path}: not an acmamba checkpoint")
    found = version.parse(str(manifest.get("format_version", "0")))
    if found.major != version.parse(CHECKPOINT_VERSION).major:
        raise CorruptHeader(f"{manifest_path}: unsupported checkpoint version {found}")

    payload_path = manifest_path.with_name(manifest["payload"])
    if not payload_path.is_file():
        raise MissingFile(f"Checkpoint payload not found: {payload_path}")
    payload = np.frombuffer(payload_path.read_bytes(), dtype="<f4")

    model = RsalAutoencoder(manifest["bands"], manifest["hidden_dim"], manifest["state_dim"], dtype=dtype, seed=None)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for entry in manifest["parameters"]:
            if entry["name"] not in params:
                raise CorruptHeader(f"{manifest_path}: unknown parameter {entry['name']}")
            target = params[entry["name"]]
            if list(target.shape) != entry["shape"]:
                raise CorruptHeader(f"{manifest_path}: shape mismatch for {entry['name']}")
            data = payload[entry["offset"]:entry["offset"] + entry["count"]]
            if data.size != entry["count"]:
                raise CorruptHeader(f"{manifest_path}: payload too short for {entry['name']}")
            target.copy_(torch.from_numpy(data.astype(np.float64)).reshape(target.shape).to(dtype))
    model.initialized = True
    return model
