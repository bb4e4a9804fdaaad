"""
Flat gradient vectors, conflict calibration and the AdamW step.

Gradients are flattened in the canonical ``named_parameters()`` order so the
two loss paths can be compared and combined as plain vectors.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from acmamba.core.exceptions import LengthMismatch, NoTape, ShapeMismatch

logger = logging.getLogger(__name__)

Parameters = Union[nn.Module, Sequence[nn.Parameter]]


def _named_parameters(params: Parameters) -> List[Tuple[str, nn.Parameter]]:
    if isinstance(params, nn.Module):
        return list(params.named_parameters())
    return [(str(i), p) for i, p in enumerate(params)]


@dataclass(frozen=True)
class GradientVector:
    """A flat gradient with the slice each named parameter occupies."""

    values: torch.Tensor
    slices: Dict[str, slice]

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ShapeMismatch(f"Gradient vector must be 1-D, got shape {tuple(self.values.shape)}")

    def __len__(self) -> int:
        return int(self.values.numel())

    @classmethod
    def from_values(cls, values: Iterable[float], dtype: torch.dtype = torch.float64) -> "GradientVector":
        flat = torch.tensor(np.asarray(values, dtype=np.float64), dtype=dtype).reshape(-1)
        return cls(flat, {"values": slice(0, flat.numel())})

    def with_values(self, values: torch.Tensor) -> "GradientVector":
        return GradientVector(values, self.slices)

    def part(self, name: str) -> torch.Tensor:
        return self.values[self.slices[name]]

    def norm(self) -> float:
        return float(torch.linalg.vector_norm(self.values.double()))

    def dot(self, other: "GradientVector") -> float:
        _check_lengths(self, other)
        return float(torch.dot(self.values.double(), other.values.double()))

    def __add__(self, other: "GradientVector") -> "GradientVector":
        _check_lengths(self, other)
        return self.with_values(self.values + other.values.to(self.values.dtype))

    def assign_to(self, params: Parameters) -> None:
        """Write this vector into ``p.grad`` of every parameter."""
        named = _named_parameters(params)
        total = sum(p.numel() for _, p in named)
        if total != len(self):
            raise ShapeMismatch(f"Gradient has {len(self)} entries but parameters hold {total}")
        offset = 0
        for _, p in named:
            n = p.numel()
            p.grad = self.values[offset:offset + n].detach().to(p.dtype).reshape(p.shape).clone()
            offset += n


def _check_lengths(a: GradientVector, b: GradientVector) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"Gradient lengths differ: {len(a)} vs {len(b)}")


def _assemble(named: List[Tuple[str, nn.Parameter]], grads: Sequence[Optional[torch.Tensor]]) -> GradientVector:
    pieces, slices, offset = [], {}, 0
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        pieces.append(g.detach().reshape(-1))
        slices[name] = slice(offset, offset + p.numel())
        offset += p.numel()
    values = torch.cat(pieces) if pieces else torch.zeros(0, dtype=torch.float64)
    return GradientVector(values, slices)


def backward(loss: torch.Tensor, params: Parameters, retain_graph: bool = False) -> GradientVector:
    """Reverse-mode gradient of a scalar loss with respect to every parameter.

    Parameters the loss does not depend on receive exact zeros.

    Raises:
        NoTape: If the loss was not computed with autograd recording
    """
    if not torch.is_tensor(loss) or loss.grad_fn is None or not loss.requires_grad:
        raise NoTape("Loss has no recorded computation; run the forward pass with gradients enabled")
    named = _named_parameters(params)
    grads = torch.autograd.grad(loss, [p for _, p in named], retain_graph=retain_graph, allow_unused=True)
    return _assemble(named, grads)


def flatten_gradients(params: Parameters) -> GradientVector:
    """Collect the ``.grad`` fields already stored on the parameters."""
    named = _named_parameters(params)
    return _assemble(named, [p.grad for _, p in named])


def calibrate_gradients(
    g_ori: GradientVector,
    g_mask: GradientVector,
    rng: np.random.Generator,
    primary: Optional[str] = None,
) -> Tuple[GradientVector, float, bool]:
    """Combine the two path gradients, removing their conflict if they disagree.

    When the angle between them exceeds pi/2, one gradient is chosen as the
    primary (uniformly at random unless ``primary`` is "ori" or "mask") and
    the other is projected onto the primary's orthogonal complement.

    Returns:
        Tuple of (combined gradient, angle theta in [0, pi], whether projection was applied)
    """
    _check_lengths(g_ori, g_mask)
    norm_ori, norm_mask = g_ori.norm(), g_mask.norm()
    if norm_ori == 0.0 or norm_mask == 0.0:
        return g_ori + g_mask, math.pi / 2, False

    dot = g_ori.dot(g_mask)
    theta = float(np.arccos(np.clip(dot / (norm_ori * norm_mask), -1.0, 1.0)))
    if dot >= 0.0:
        return g_ori + g_mask, theta, False

    if primary is None:
        primary = "ori" if rng.integers(2) == 0 else "mask"
    if primary not in ("ori", "mask"):
        raise ValueError(f"primary must be 'ori' or 'mask', got {primary}")
    p, s = (g_ori, g_mask) if primary == "ori" else (g_mask, g_ori)

    p64, s64 = p.values.double(), s.values.double()
    projected = s64 - (torch.dot(s64, p64) / torch.dot(p64, p64)) * p64
    combined = p.with_values(p.values + projected.to(p.values.dtype))
    logger.debug(f"Gradient conflict at theta={theta:.4f}; primary={primary}")
    return combined, theta, True


class AdamWState:
    """Moment estimates and step counter of a decoupled-weight-decay Adam."""

    def __init__(self, params: Parameters, lr: float = 5e-4, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.named = _named_parameters(params)
        self.optimizer = torch.optim.AdamW(
            [p for _, p in self.named], lr=lr, betas=betas, eps=eps, weight_decay=weight_decay
        )

    @property
    def n_params(self) -> int:
        return sum(p.numel() for _, p in self.named)

    @property
    def step_count(self) -> int:
        steps = [float(s["step"]) for s in self.optimizer.state.values() if "step" in s]
        return int(max(steps)) if steps else 0


def adamw_step(params: Parameters, grad: GradientVector, state: AdamWState) -> None:
    """Apply one AdamW update in place using ``grad`` as the gradient."""
    named = _named_parameters(params)
    if [id(p) for _, p in named] != [id(p) for _, p in state.named]:
        raise ShapeMismatch("Optimizer state was built for a different parameter set")
    if len(grad) != state.n_params:
        raise ShapeMismatch(f"Gradient has {len(grad)} entries but the model has {state.n_params} parameters")
    grad.assign_to([p for _, p in named])
    state.optimizer.step()
