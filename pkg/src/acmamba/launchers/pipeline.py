"""
Pipeline stage runners used by the acmamba CLI.

Each run_* function loads its inputs from the run's output directory (or the
configured paths), executes one stage inside ``stage(name)`` and writes its
artefacts back.
"""

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from acmamba.core.container import load_cube, load_mask, load_score_map, save_cube, save_mask, save_score_map
from acmamba.core.cube import GroundTruthMask, HsiCube, normalize
from acmamba.core.detection import DetectionMap, detail_map, fuse, holistic_map, rx_baseline
from acmamba.core.evaluation import RocCurve, bench, roc_curve
from acmamba.core.exceptions import DegenerateSegmentation, MissingFile, PipelineStageError, SingleClassLabels
from acmamba.core.segmentation import (
    AttributeRepository,
    RegionMap,
    build_repository,
    load_region_map,
    save_region_map,
    segment_regions,
)
from acmamba.core.ssm import RsalAutoencoder, load_checkpoint, save_checkpoint
from acmamba.core.synthetic import synth_scene
from acmamba.core.training import torch_dtype, train
from acmamba.models.config import RunConfig, SamplingMode, TrainConfig
from acmamba.models.reports import BenchReport, LossReport
from acmamba.utils.exports import (
    ABLATION_HEADER,
    SWEEP_HEADER,
    save_preview,
    write_bench_json,
    write_loss_csv,
    write_roc_csv,
    write_rows_csv,
)
from acmamba.utils.verbose import print_epoch

logger = logging.getLogger(__name__)

SWEEP_PARAMS = {"psi": "psi", "beta": "beta_max", "eta": "eta"}
ABLATION_VARIANTS = {
    "full": {},
    "no_dam": {"mask_strategy": "random"},
    "no_cls": {"consensus": False},
    "dense": {"sampling": "dense"},
}


def load_run_config(config_path: str) -> RunConfig:
    """Load a run configuration from a YAML file.

    Args:
        config_path: Path to the configuration file

    Returns:
        RunConfig: Validated configuration object
    """
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path, "r") as f:
        config_dict = yaml.safe_load(f) or {}

    try:
        return RunConfig.model_validate(config_dict)
    except Exception as e:
        logger.error(f"Invalid configuration: {e}")
        raise ValueError(f"Invalid configuration: {e}")


def apply_overrides(
    config: RunConfig,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    assignments: Sequence[str] = (),
) -> RunConfig:
    """Layer command-line flags over a loaded configuration.

    Args:
        config: Configuration from defaults or a file
        seed: Seed for both scene synthesis and training
        output_dir: Output directory
        assignments: ``section.key=value`` strings; values are parsed as YAML scalars

    Returns:
        RunConfig: Revalidated configuration
    """
    data = config.model_dump(mode="json")
    if seed is not None:
        data["scene"]["seed"] = seed
        data["train"]["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep or not key:
            raise ValueError(f"Override must look like section.key=value, got '{assignment}'")
        target = data
        *parents, leaf = key.strip().split(".")
        for part in parents:
            if not isinstance(target.get(part), dict):
                raise ValueError(f"Unknown configuration section '{part}' in '{assignment}'")
            target = target[part]
        target[leaf] = yaml.safe_load(raw)
    try:
        return RunConfig.model_validate(data)
    except Exception as e:
        raise ValueError(f"Invalid configuration: {e}")


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any exception escaping the block with the stage name."""
    logger.info(f"Stage '{name}' started")
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        raise PipelineStageError(name, e) from e
    logger.info(f"Stage '{name}' finished")


@dataclass(frozen=True)
class RunPaths:
    """Artefact locations of one run."""

    output_dir: Path
    cube: Path
    mask: Path

    @classmethod
    def from_config(cls, config: RunConfig) -> "RunPaths":
        out = Path(config.output_dir)
        return cls(
            output_dir=out,
            cube=Path(config.cube_path) if config.cube_path else out / "cube.hsc",
            mask=Path(config.mask_path) if config.mask_path else out / "mask.hsc",
        )

    @property
    def regions(self) -> Path:
        return self.output_dir / "regions.hsc"

    @property
    def model(self) -> Path:
        return self.output_dir / "model.json"

    @property
    def detection(self) -> Path:
        return self.output_dir / "detection.hsc"

    @property
    def rx(self) -> Path:
        return self.output_dir / "rx.hsc"

    @property
    def roc(self) -> Path:
        return self.output_dir / "roc.csv"

    @property
    def loss(self) -> Path:
        return self.output_dir / "loss_report.csv"

    @property
    def bench(self) -> Path:
        return self.output_dir / "bench.json"

    @property
    def sweep(self) -> Path:
        return self.output_dir / "sweep.csv"

    @property
    def ablation(self) -> Path:
        return self.output_dir / "ablation.csv"

    def ensure(self) -> "RunPaths":
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self


@dataclass
class RunOutcome:
    """Everything one segment-train-detect pass produced."""

    region_map: RegionMap
    repo: AttributeRepository
    model: RsalAutoencoder
    history: LossReport
    detection: DetectionMap
    bench: BenchReport
    auc: Optional[float] = None
    roc: Optional[RocCurve] = None


def safe_auc(scores: np.ndarray, mask: GroundTruthMask) -> Tuple[float, Optional[RocCurve]]:
    """AUC that degrades to 0.5 with a warning on single-class labels."""
    if np.ptp(scores) == 0:
        logger.warning("All detection scores are tied; the ROC is the diagonal")
    try:
        curve = roc_curve(scores, mask)
    except SingleClassLabels as e:
        logger.warning(f"{e}; reporting AUC 0.5")
        return 0.5, None
    return curve.auc, curve


def _require_mask(paths: RunPaths) -> GroundTruthMask:
    if not paths.mask.is_file():
        raise MissingFile(f"Ground truth mask not found: {paths.mask}")
    return load_mask(paths.mask)


def _load_normalized_cube(paths: RunPaths) -> HsiCube:
    return normalize(load_cube(paths.cube))


def _scene_inputs(config: RunConfig, paths: RunPaths) -> Tuple[HsiCube, Optional[GroundTruthMask]]:
    """Load the cube (synthesizing the configured scene if no cube exists yet) and the mask if evaluating."""
    if not paths.cube.is_file() and config.cube_path is None:
        logger.info(f"No cube at {paths.cube}; synthesizing the configured scene")
        run_synth(config)
    cube = _load_normalized_cube(paths)
    mask = _require_mask(paths) if config.evaluate else None
    return cube, mask


def segment_cube(cube: HsiCube, config: RunConfig) -> RegionMap:
    target = config.train.n_regions_target(cube.height, cube.width)
    region_map = segment_regions(cube, target, config.segmentation.compactness, config.segmentation.iters)
    if config.train.sampling == SamplingMode.REGION and region_map.n_regions < config.segmentation.min_regions:
        raise DegenerateSegmentation(
            f"Segmentation produced {region_map.n_regions} regions; at least "
            f"{config.segmentation.min_regions} are required"
        )
    return region_map


def detect(
    model: RsalAutoencoder,
    cube: HsiCube,
    region_map: RegionMap,
    repo: AttributeRepository,
    config: RunConfig,
) -> DetectionMap:
    """Fused holistic x detail map."""
    det = config.detection
    holistic = holistic_map(model, repo, region_map, det.full_covariance)
    detail = detail_map(model, cube, det.k, det.encoder, det.chunk_length)
    return fuse(holistic, detail, threshold=det.threshold)


def fit_and_detect(cube: HsiCube, config: RunConfig, mask: Optional[GroundTruthMask] = None) -> RunOutcome:
    """Segment, train and detect on an already normalized cube, timing train and detect."""
    with stage("segment"):
        region_map = segment_cube(cube, config)
        repo = build_repository(cube, region_map)

    def train_stage() -> Tuple[RsalAutoencoder, LossReport]:
        with stage("train"):
            return train(cube, region_map, repo, config.train, on_epoch=print_epoch)

    def detect_stage(trained: Tuple[RsalAutoencoder, LossReport]) -> DetectionMap:
        with stage("detect"):
            return detect(trained[0], cube, region_map, repo, config)

    samples = cube.n_pixels if config.train.sampling == SamplingMode.DENSE else region_map.n_regions
    report, (model, history), detection = bench(
        train_stage, detect_stage, samples, region_map.n_regions, cube.n_pixels, config.bench_repetitions
    )
    outcome = RunOutcome(
        region_map=region_map, repo=repo, model=model, history=history, detection=detection, bench=report
    )
    if mask is not None:
        with stage("eval"):
            outcome.auc, outcome.roc = safe_auc(outcome.detection.scores, mask)
    return outcome


def run_synth(config: RunConfig) -> Dict[str, Any]:
    """Synthesize the configured scene and write cube.hsc and mask.hsc."""
    paths = RunPaths.from_config(config).ensure()
    with stage("synth"):
        cube, mask = synth_scene(config.scene)
        save_cube(cube, paths.cube)
        save_mask(mask, paths.mask)
    summary = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "anomaly_pixels": mask.anomaly_count,
        "anomaly_fraction": mask.anomaly_fraction,
        "cube": str(paths.cube),
        "mask": str(paths.mask),
    }
    logger.info(f"Synthesized {cube.height}x{cube.width}x{cube.bands} scene with {mask.anomaly_count} anomaly pixels")
    return summary


def run_segment(config: RunConfig) -> RegionMap:
    """Segment the cube and write regions.hsc with its scan-order sidecar."""
    paths = RunPaths.from_config(config).ensure()
    with stage("segment"):
        cube = _load_normalized_cube(paths)
        region_map = segment_cube(cube, config)
        save_region_map(region_map, paths.regions)
    return region_map


def _load_or_segment(cube: HsiCube, config: RunConfig, paths: RunPaths) -> RegionMap:
    if paths.regions.is_file():
        region_map = load_region_map(paths.regions)
        if (region_map.height, region_map.width) == (cube.height, cube.width):
            return region_map
        logger.warning(f"{paths.regions} does not match the cube size; segmenting again")
    region_map = segment_cube(cube, config)
    save_region_map(region_map, paths.regions)
    return region_map


def run_train(config: RunConfig) -> Tuple[RsalAutoencoder, LossReport]:
    """Train on the cube and write the checkpoint and loss_report.csv."""
    paths = RunPaths.from_config(config).ensure()
    with stage("train"):
        cube = _load_normalized_cube(paths)
        region_map = _load_or_segment(cube, config, paths)
        repo = build_repository(cube, region_map)
        model, history = train(cube, region_map, repo, config.train, on_epoch=print_epoch)
        save_checkpoint(model, paths.model, metadata={"n_regions": region_map.n_regions})
        write_loss_csv(history, paths.loss)
    return model, history


def run_detect(config: RunConfig, preview: bool = False) -> DetectionMap:
    """Score the cube with a saved model and write detection.hsc."""
    paths = RunPaths.from_config(config).ensure()
    with stage("detect"):
        cube = _load_normalized_cube(paths)
        if not paths.regions.is_file():
            raise MissingFile(f"Region map not found: {paths.regions}")
        region_map = load_region_map(paths.regions)
        model = load_checkpoint(paths.model, dtype=torch_dtype(config.train.dtype))
        repo = build_repository(cube, region_map)
        detection = detect(model, cube, region_map, repo, config)
        save_score_map(detection.scores, paths.detection)
        if preview:
            save_preview(detection.scores, paths.detection.with_suffix(".png"))
    return detection


def run_eval(config: RunConfig, map_path: Optional[str] = None) -> float:
    """AUC of a saved score map against the mask; writes roc.csv."""
    paths = RunPaths.from_config(config).ensure()
    with stage("eval"):
        scores = load_score_map(map_path or paths.detection)
        mask = _require_mask(paths)
        value, curve = safe_auc(scores, mask)
        if curve is not None:
            write_roc_csv(curve, paths.roc)
    logger.info(f"AUC = {value:.6f}")
    return value


def run_rx(config: RunConfig, preview: bool = False) -> Tuple[DetectionMap, Optional[float]]:
    """Global RX baseline map, scored against the mask when one is available."""
    paths = RunPaths.from_config(config).ensure()
    with stage("rx"):
        cube = _load_normalized_cube(paths)
        detection = rx_baseline(cube)
        save_score_map(detection.scores, paths.rx)
        if preview:
            save_preview(detection.scores, paths.rx.with_suffix(".png"))
        value = None
        if config.evaluate:
            value, _ = safe_auc(detection.scores, _require_mask(paths))
    return detection, value


def run_pipeline(config: RunConfig, preview: bool = False) -> RunOutcome:
    """Segment, train, detect and evaluate, writing every artefact."""
    paths = RunPaths.from_config(config).ensure()
    with stage("load"):
        cube, mask = _scene_inputs(config, paths)

    outcome = fit_and_detect(cube, config, mask)

    with stage("export"):
        save_region_map(outcome.region_map, paths.regions)
        save_checkpoint(outcome.model, paths.model, metadata={"n_regions": outcome.region_map.n_regions})
        write_loss_csv(outcome.history, paths.loss)
        save_score_map(outcome.detection.scores, paths.detection)
        write_bench_json(outcome.bench, paths.bench)
        if outcome.roc is not None:
            write_roc_csv(outcome.roc, paths.roc)
        if preview:
            save_preview(outcome.detection.scores, paths.detection.with_suffix(".png"))
    return outcome


def _with_train(config: RunConfig, **updates) -> RunConfig:
    train_cfg = TrainConfig.model_validate({**config.train.model_dump(), **updates})
    return config.model_copy(update={"train": train_cfg})


def run_sweep(config: RunConfig, param: str, values: Sequence[float]) -> List[List]:
    """One full run per value of psi, beta or eta; writes sweep.csv."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"Unknown sweep parameter '{param}'; choose from {sorted(SWEEP_PARAMS)}")
    if not values:
        raise ValueError("Sweep needs at least one value")
    paths = RunPaths.from_config(config).ensure()
    with stage("load"):
        cube, mask = _scene_inputs(config.model_copy(update={"evaluate": True}), paths)

    rows = []
    for value in values:
        logger.info(f"Sweep {param}={value}")
        outcome = fit_and_detect(cube, _with_train(config, **{SWEEP_PARAMS[param]: value}), mask)
        rows.append([param, value, outcome.auc, outcome.bench.train_seconds])
    write_rows_csv(paths.sweep, SWEEP_HEADER, rows)
    return rows


def run_ablation(config: RunConfig, variants: Optional[Sequence[str]] = None) -> List[List]:
    """Train the component variants on the same scene; writes ablation.csv."""
    variants = list(variants or ABLATION_VARIANTS)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"Unknown ablation variant(s) {unknown}; choose from {list(ABLATION_VARIANTS)}")
    paths = RunPaths.from_config(config).ensure()
    with stage("load"):
        cube, mask = _scene_inputs(config.model_copy(update={"evaluate": True}), paths)

    rows = []
    for variant in variants:
        logger.info(f"Ablation variant '{variant}'")
        outcome = fit_and_detect(cube, _with_train(config, **ABLATION_VARIANTS[variant]), mask)
        rows.append([variant, outcome.auc, outcome.bench.train_seconds, outcome.region_map.n_regions])
    write_rows_csv(paths.ablation, ABLATION_HEADER, rows)
    return rows
