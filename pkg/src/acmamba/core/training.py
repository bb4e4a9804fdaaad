"""
Consensus training of the RSAL autoencoder.

Each epoch draws one representative sequence over all regions, masks the
hardest regions, evaluates the original and masked paths against the masked
sequence, calibrates their gradients and takes a single AdamW step.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
import torch

from acmamba.core.cube import HsiCube
from acmamba.core.exceptions import DimMismatch, ShapeMismatch
from acmamba.core.gradients import AdamWState, adamw_step, backward, calibrate_gradients
from acmamba.core.segmentation import (
    AttributeRepository,
    RegionMap,
    RegionSequence,
    build_repository,
    draw_representative,
    identity_region_map,
    mean_sequence,
)
from acmamba.core.ssm import RsalAutoencoder, calibrate_scales
from acmamba.models.config import EncoderPath, MaskStrategy, SamplingMode, TrainConfig
from acmamba.models.reports import EpochReport, LossReport

logger = logging.getLogger(__name__)

SAMPLING_EPS = 1e-8

EpochCallback = Callable[[EpochReport], None]


def torch_dtype(name: str) -> torch.dtype:
    return torch.float64 if name == "float64" else torch.float32


def mask_count(eta: float, n_regions: int) -> int:
    """round(eta * N_r), halves rounded up."""
    return int(np.floor(eta * n_regions + 0.5))


@dataclass(frozen=True, eq=False)
class MaskVector:
    """Binary keep vector aligned to the scan order (1 keep, 0 masked)."""

    keep: np.ndarray

    @property
    def n_masked(self) -> int:
        return int((self.keep == 0).sum())

    def __len__(self) -> int:
        return self.keep.shape[0]


@dataclass
class DifficultyTracker:
    """Running sum of unmasked reconstruction errors per scan position."""

    cumulative: np.ndarray
    epoch: int = 0

    @classmethod
    def zeros(cls, n_regions: int) -> "DifficultyTracker":
        return cls(np.zeros(n_regions))

    def __len__(self) -> int:
        return self.cumulative.shape[0]

    def update(self, errors: np.ndarray) -> None:
        errors = np.asarray(errors, dtype=np.float64)
        if errors.shape != self.cumulative.shape:
            raise ShapeMismatch(f"Expected {len(self)} region errors, got shape {errors.shape}")
        if (errors < 0).any():
            raise ValueError("Region errors must be nonnegative")
        self.cumulative = self.cumulative + errors
        self.epoch += 1


def generate_mask(
    tracker: DifficultyTracker,
    eta: float,
    rng: np.random.Generator,
    strategy: MaskStrategy = MaskStrategy.DIFFICULTY,
) -> MaskVector:
    """Mask round(eta * N_r) regions, sampled without replacement.

    With the difficulty strategy the sampling weight of a region is its
    accumulated error plus 1e-8; the random strategy samples uniformly.
    """
    n_regions = len(tracker)
    keep = np.ones(n_regions, dtype=np.uint8)
    m = mask_count(eta, n_regions)
    if m == 0:
        return MaskVector(keep)

    p = None
    if strategy == MaskStrategy.DIFFICULTY:
        weights = tracker.cumulative + SAMPLING_EPS
        p = weights / weights.sum()
    keep[rng.choice(n_regions, size=m, replace=False, p=p)] = 0
    return MaskVector(keep)


def _as_tensor(seq: Union[RegionSequence, np.ndarray, torch.Tensor], dtype: torch.dtype) -> torch.Tensor:
    if isinstance(seq, RegionSequence):
        seq = seq.values
    return torch.as_tensor(np.asarray(seq) if not torch.is_tensor(seq) else seq, dtype=dtype)


def consensus_losses(
    model: RsalAutoencoder,
    seq: Union[RegionSequence, np.ndarray, torch.Tensor],
    mask: MaskVector,
    k: float = 2.0,
    with_masked_path: bool = True,
) -> Tuple[torch.Tensor, torch.Tensor, np.ndarray]:
    """Both path losses against the masked sequence, plus unmasked region errors.

    Returns:
        Tuple of (L_ori, L_mask, per-region errors ||x_i - D(E(x))_i||_k);
        L_mask is a constant zero when ``with_masked_path`` is False
    """
    x = _as_tensor(seq, model.dtype)
    if x.ndim != 2 or x.shape[1] != model.bands:
        raise DimMismatch(f"Sequence must be (T, {model.bands}), got {tuple(x.shape)}")
    if len(mask) != x.shape[0]:
        raise ShapeMismatch(f"Mask length {len(mask)} does not match sequence length {x.shape[0]}")

    keep = torch.as_tensor(mask.keep, dtype=x.dtype).unsqueeze(-1)
    target = keep * x

    recon_ori = model(x, EncoderPath.ORIGINAL)
    loss_ori = torch.linalg.vector_norm(target - recon_ori, ord=k, dim=1).mean()
    if with_masked_path:
        recon_mask = model(target, EncoderPath.MASKED)
        loss_mask = torch.linalg.vector_norm(target - recon_mask, ord=k, dim=1).mean()
    else:
        loss_mask = torch.zeros((), dtype=x.dtype)

    with torch.no_grad():
        region_errors = torch.linalg.vector_norm(x - recon_ori, ord=k, dim=1)
    return loss_ori, loss_mask, region_errors.cpu().numpy().astype(np.float64)


def _training_repository(
    cube: HsiCube, region_map: RegionMap, repo: AttributeRepository, cfg: TrainConfig
) -> AttributeRepository:
    if cfg.sampling == SamplingMode.DENSE:
        logger.info(f"Dense sampling: training on all {cube.n_pixels} pixels")
        return build_repository(cube, identity_region_map(cube.height, cube.width))
    if repo.region_map is not region_map and not np.array_equal(repo.region_map.region_of, region_map.region_of):
        raise DimMismatch("Attribute repository was built from a different region map")
    return repo


def initialize_model(repo: AttributeRepository, cfg: TrainConfig) -> RsalAutoencoder:
    """Seeded autoencoder with its scales calibrated on the region means."""
    model = RsalAutoencoder(
        repo.bands, cfg.hidden_dim, cfg.state_dim, dtype=torch_dtype(cfg.dtype), seed=cfg.seed
    )
    calibrate_scales(model, mean_sequence(repo).values)
    return model


def train(
    cube: HsiCube,
    region_map: RegionMap,
    repo: AttributeRepository,
    cfg: TrainConfig,
    on_epoch: Optional[EpochCallback] = None,
) -> Tuple[RsalAutoencoder, LossReport]:
    """Train the autoencoder with difficulty-aware masking and gradient calibration.

    Args:
        cube: Normalized cube (used directly in dense sampling mode)
        region_map: Segmentation of the cube
        repo: Attribute repository built from ``cube`` and ``region_map``
        cfg: Training hyperparameters
        on_epoch: Optional callback receiving each EpochReport

    Returns:
        Tuple of (trained model, per-epoch LossReport)
    """
    repo = _training_repository(cube, region_map, repo, cfg)
    rng = np.random.default_rng(cfg.seed)
    model = initialize_model(repo, cfg)
    optimizer = AdamWState(
        model, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps, weight_decay=cfg.weight_decay
    )
    tracker = DifficultyTracker.zeros(repo.n_regions)
    eta = cfg.eta if cfg.consensus else 0.0
    history = LossReport()

    logger.info(
        f"Training for {cfg.epochs} epochs on {repo.n_regions} regions x {repo.bands} bands "
        f"(consensus={cfg.consensus}, mask={MaskStrategy(cfg.mask_strategy).value}, eta={eta})"
    )
    for epoch in range(cfg.epochs):
        seq = draw_representative(repo, cfg.beta_max, rng)
        mask = generate_mask(tracker, eta, rng, cfg.mask_strategy)
        loss_ori, loss_mask, region_errors = consensus_losses(
            model, seq, mask, cfg.k, with_masked_path=cfg.consensus
        )

        g_ori = backward(loss_ori, model)
        if cfg.consensus:
            g_mask = backward(loss_mask, model)
            combined, theta, applied = calibrate_gradients(g_ori, g_mask, rng)
        else:
            combined, theta, applied = g_ori, 0.0, False
        adamw_step(model, combined, optimizer)
        tracker.update(region_errors)

        report = EpochReport(
            epoch=epoch,
            loss_ori=float(loss_ori.detach()),
            loss_mask=float(loss_mask.detach()),
            theta=theta,
            applied=applied,
            n_masked=mask.n_masked,
            region_errors=region_errors.tolist(),
        )
        history.append(report)
        logger.debug(
            f"epoch {epoch}: L_ori={report.loss_ori:.6f} L_mask={report.loss_mask:.6f} "
            f"theta={theta:.4f} applied={applied}"
        )
        if on_epoch is not None:
            on_epoch(report)

    if history.epochs:
        logger.info(f"Training done: final L_ori={history.final.loss_ori:.6f} L_mask={history.final.loss_mask:.6f}")
    return model, history
